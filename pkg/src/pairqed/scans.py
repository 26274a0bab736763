"""Scan drivers behind the command-line presets.

Each observable maps an :class:`Experiment` to named columns and one row per
grid point.  Points are independent, so they are evaluated through a thread
pool and collected in grid order.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    DETECTION_RATE_CONSTANT,
    SolverError,
    correlation_numerator,
    g2_zero,
    photon_number,
    steady_state,
)
from .ensemble import (
    PumpingParams,
    ThermalParams,
    imperfect_rate,
    mixture_g2,
    thermal_correlation,
    thermal_rate,
)
from .lattice import SiteDifference, phase_from_sites
from .models import REFERENCE, SystemParams, build_model, mhz, reference_params

TWO_PI = 2 * np.pi

AXES = ("phi", "sites", "detuning", "tau", "point")
OBSERVABLES = (
    "rate", "g2", "g2_tau", "rate_temperatures", "rate_single_pair", "rate_breakdown", "baseline",
)


@dataclass(frozen=True)
class Experiment:
    observable: str
    axis: str
    params: SystemParams
    grid: tuple[float, ...] = ()
    sites: tuple[tuple[int, int], ...] = ()
    thermal: ThermalParams | None = None
    pumping: PumpingParams | None = None
    temperatures: tuple[float, ...] = ()
    ideal: bool = False
    rate_constant: float = DETECTION_RATE_CONSTANT
    threads: int = 1
    name: str = "custom"
    notes: tuple[str, ...] = ()

    def replace(self, **kw) -> Experiment:
        return dataclasses.replace(self, **kw)

    @property
    def points(self) -> list:
        if self.axis == "sites":
            return list(self.sites)
        return list(self.grid)


@dataclass
class ScanResult:
    columns: list[str]
    rows: list[list]
    errors: list[str | None]
    metadata: dict = field(default_factory=dict)

    @property
    def failure_fraction(self) -> float:
        return sum(e is not None for e in self.errors) / max(len(self.errors), 1)


def _s4_thermal(order: int = 32, independent: bool = False) -> ThermalParams:
    return ThermalParams(REFERENCE.fit_tau, REFERENCE.fit_atom_offset, order, independent)


def _imperfections(exp: Experiment):
    thermal = exp.thermal or _s4_thermal()
    pumping = exp.pumping or PumpingParams(REFERENCE.fit_eta)
    return thermal, pumping


def _at(exp: Experiment, point) -> SystemParams:
    p = exp.params
    if exp.axis == "phi":
        return p.replace(phi=float(point))
    if exp.axis == "sites":
        return p.replace(phi=phase_from_sites(SiteDifference(*point)))
    if exp.axis == "detuning":
        return p.replace(delta_c=float(point), delta_a=(float(point),) * p.n_atoms)
    return p


def _rate_columns(exp, p):
    R = exp.rate_constant
    out = [thermal_rate(p, None, R)]
    if not exp.ideal:
        thermal, pumping = _imperfections(exp)
        out.append(thermal_rate(p, thermal, R))
        out.append(imperfect_rate(p, thermal, pumping, R))
    return out


def _g2_columns(exp, p):
    out = [g2_zero(steady_state(build_model(p)))]
    if not exp.ideal:
        out.append(_imperfect_g2(exp, p, None)[0])
    return out


def _imperfect_g2(exp, p, taus):
    thermal, pumping = _imperfections(exp)
    comps = []
    n2, G2 = thermal_correlation(p, thermal, taus)
    if p.n_atoms == 2:
        eta = pumping.eta
        n1, G1 = thermal_correlation(p.with_atoms(1), thermal, taus)
        comps = [(eta**2, n2, G2), (2 * eta * (1 - eta), n1, G1)]
    else:
        comps = [(pumping.eta, n2, G2)]
    return mixture_g2(comps, taus).values


def _row(exp: Experiment, point) -> list:
    p = _at(exp, point)
    obs = exp.observable
    if obs == "rate":
        return _rate_columns(exp, p)
    if obs == "g2":
        return _g2_columns(exp, p)
    if obs == "rate_temperatures":
        base = exp.thermal or ThermalParams(0.0)
        return [
            thermal_rate(p, dataclasses.replace(base, tau=t, base_detuning=-t), exp.rate_constant)
            for t in exp.temperatures
        ]
    if obs == "rate_single_pair":
        thermal, pumping = (None, None) if exp.ideal else _imperfections(exp)
        single = p.with_atoms(1)
        pair = p.with_atoms(2).replace(phi=0.0)
        return [
            imperfect_rate(single, thermal, pumping, exp.rate_constant),
            imperfect_rate(pair, thermal, pumping, exp.rate_constant),
        ]
    if obs == "rate_breakdown":
        R = exp.rate_constant
        thermal, pumping = _imperfections(exp)
        indep = dataclasses.replace(thermal, independent=True, quad_order=min(thermal.quad_order, 16))
        single = p.with_atoms(1)
        return [
            thermal_rate(p, None, R),
            thermal_rate(p, thermal, R),
            imperfect_rate(p, thermal, pumping, R),
            thermal_rate(p, indep, R),
            imperfect_rate(p, indep, pumping, R),
            imperfect_rate(single, thermal, pumping, R),
        ]
    if obs == "baseline":
        thermal, pumping = _imperfections(exp)
        single = p.with_atoms(1)
        return [
            thermal_rate(single, None, exp.rate_constant),
            imperfect_rate(single, thermal, pumping, exp.rate_constant),
        ]
    raise ValueError(f"observable {obs!r} has no per-point row")


def columns_for(exp: Experiment) -> list[str]:
    axis_cols = {
        "phi": ["phi_rad"],
        "sites": ["dnx", "dny", "phi_rad"],
        "detuning": ["detuning_hz"],
        "tau": ["tau_s"],
        "point": [],
    }[exp.axis]
    obs = exp.observable
    if obs == "rate":
        vals = ["rate_hz_ideal"] + ([] if exp.ideal else ["rate_hz_thermal", "rate_hz_thermal_pumping"])
    elif obs == "g2":
        vals = ["g2_0_ideal"] + ([] if exp.ideal else ["g2_0_thermal_pumping"])
    elif obs == "g2_tau":
        vals = ["g2_ideal"] + ([] if exp.ideal else ["g2_thermal_pumping"])
    elif obs == "rate_temperatures":
        vals = [f"rate_hz_tau_{t / TWO_PI / 1e6:g}MHz" for t in exp.temperatures]
    elif obs == "rate_single_pair":
        vals = ["rate_hz_single", "rate_hz_pair_phi0"]
    elif obs == "rate_breakdown":
        vals = [
            "rate_hz_ideal", "rate_hz_thermal", "rate_hz_thermal_pumping",
            "rate_hz_thermal_indep", "rate_hz_thermal_indep_pumping", "rate_hz_single_atom",
        ]
    elif obs == "baseline":
        vals = ["rate_hz_ideal", "rate_hz_imperfect"]
    else:
        raise ValueError(f"unknown observable {obs!r}")
    return axis_cols + vals


def _axis_values(exp: Experiment, point) -> list:
    if exp.axis == "sites":
        return [int(point[0]), int(point[1]), phase_from_sites(SiteDifference(*point))]
    if exp.axis == "detuning":
        return [float(point) / TWO_PI]
    if exp.axis == "point":
        return []
    return [float(point)]


def _tau_scan(exp: Experiment) -> ScanResult:
    taus = np.asarray(exp.grid, float)
    cols = columns_for(exp)
    errors: list[str | None] = [None] * len(taus)
    try:
        model = build_model(exp.params)
        rho = steady_state(model)
        n = photon_number(rho)
        ideal = correlation_numerator(model, rho, taus) / n**2
        series = [ideal]
        if not exp.ideal:
            series.append(_imperfect_g2(exp, exp.params, taus))
        rows = [[t] + [s[i] for s in series] for i, t in enumerate(taus)]
    except (SolverError, ValueError) as exc:
        rows = [[t] + [float("nan")] * (len(cols) - 1) for t in taus]
        errors = [str(exc)] * len(taus)
    return ScanResult(cols, rows, errors)


def run(exp: Experiment) -> ScanResult:
    """Evaluate every grid point; failures become NaN rows with a message."""
    if exp.observable == "g2_tau":
        return _tau_scan(exp)
    cols = columns_for(exp)
    n_val = len(cols) - len(_axis_values(exp, exp.points[0]))

    def point(pt):
        try:
            return _row(exp, pt), None
        except (SolverError, ValueError, np.linalg.LinAlgError) as exc:
            return [float("nan")] * n_val, f"{type(exc).__name__}: {exc}"

    if exp.threads > 1:
        with ThreadPoolExecutor(exp.threads) as ex:
            results = list(ex.map(point, exp.points))
    else:
        results = [point(pt) for pt in exp.points]
    rows = [_axis_values(exp, pt) + vals for pt, (vals, _) in zip(exp.points, results)]
    return ScanResult(cols, rows, [e for _, e in results])


def _phi_grid(n: int = 49) -> tuple[float, ...]:
    return tuple(TWO_PI * k / n for k in range(n))


def preset(name: str, n_max: int = 6) -> Experiment:
    """Experiment definition for a named preset."""
    fig3 = reference_params(2, n_max=n_max)
    tau_grid = tuple(np.linspace(0.0, 400e-9, 401))
    det_grid = tuple(mhz(x) for x in np.round(np.arange(-20.0, 20.0001, 0.2), 10))
    thermal = _s4_thermal()
    pumping = PumpingParams(REFERENCE.fit_eta)
    presets = {
        "fig3a": Experiment("rate", "phi", fig3, _phi_grid(), thermal=thermal, pumping=pumping),
        "fig3b": Experiment("g2", "phi", fig3, _phi_grid(), thermal=thermal, pumping=pumping),
        "fig4b": Experiment("g2_tau", "tau", fig3.replace(phi=np.pi), tau_grid,
                            thermal=thermal, pumping=pumping),
        "fig4c": Experiment("g2_tau", "tau", fig3.replace(phi=0.0), tau_grid,
                            thermal=thermal, pumping=pumping),
        "figS3": Experiment(
            "rate_temperatures", "detuning",
            reference_params(1, omega=REFERENCE.omega_thermal_scan, n_max=n_max), det_grid,
            temperatures=tuple(mhz(t) for t in (0.0, 1.0, 2.5, 5.0, 7.5)),
        ),
        "figS4": Experiment(
            "rate_single_pair", "detuning", reference_params(2, omega=REFERENCE.omega_detuning_scan, n_max=n_max),
            det_grid, thermal=thermal, pumping=pumping,
        ),
        "figS5": Experiment("rate_breakdown", "phi", fig3, _phi_grid(), thermal=thermal, pumping=pumping),
        "single_atom_baseline": Experiment(
            "baseline", "point", reference_params(1, n_max=n_max), (0.0,), thermal=thermal, pumping=pumping,
        ),
    }
    if name not in presets:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(sorted(presets))}")
    return presets[name].replace(name=name)


PRESETS = (
    "fig3a", "fig3b", "fig4b", "fig4c", "figS3", "figS4", "figS5", "single_atom_baseline",
)
