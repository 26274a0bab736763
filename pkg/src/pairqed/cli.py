"""``simulate`` command: run a named preset or a key-value config, write CSV.

Config files are flat ``key = value`` lines with dotted section keys::

    preset = fig3a          # optional starting point
    run.n_max = 4
    run.ideal = true
    scan.axis = phi         # phi | sites | detuning | tau | point
    scan.start = 0
    scan.stop = 3.141592653589793
    scan.num = 25
    params.omega_mhz = 0.92

Frequencies in ``params.*`` and ``thermal.*`` are quoted in MHz and multiplied
by 2 pi unless ``units.includes_2pi = false``.
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import DETECTION_RATE_CONSTANT, KAPPA_OC_RATE_CONSTANT
from .ensemble import PumpingParams, ThermalParams
from .models import SystemParams, mhz, reference_params
from .scans import AXES, OBSERVABLES, PRESETS, Experiment, ScanResult, preset, run

EXIT_CONFIG = 2
EXIT_SOLVER = 3

TWO_PI = 2 * np.pi


class ConfigError(ValueError):
    pass


_BOOL = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}

_KEYS = {
    "preset", "observable",
    "run.n_max", "run.ideal", "run.threads", "run.seed", "run.rate_constant",
    "units.includes_2pi",
    "params.n_atoms", "params.g_mhz", "params.kappa_mhz", "params.kappa_oc_mhz",
    "params.gamma_mhz", "params.omega_mhz", "params.delta_c_mhz", "params.delta_a_mhz",
    "params.phi",
    "thermal.tau_mhz", "thermal.offset_mhz", "thermal.quad_order", "thermal.independent",
    "thermal.taus_mhz",
    "pumping.eta",
    "scan.axis", "scan.start", "scan.stop", "scan.num", "scan.endpoint", "scan.values",
    "scan.sites",
    "output.path",
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, tuple[str, int]]:
    """Parse ``key = value`` lines into ``{key: (value, line_number)}``."""
    entries: dict[str, tuple[str, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in entries:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        entries[key] = (value, lineno)
    return entries


class _Reader:
    def __init__(self, entries, source):
        self.entries = entries
        self.source = source

    def get(self, key, conv, default=None):
        if key not in self.entries:
            return default
        value, lineno = self.entries[key]
        try:
            return conv(value)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"{self.source}:{lineno}: bad value for {key}: {value!r} ({exc})") from None


def _bool(s: str) -> bool:
    return _BOOL[s.lower()]


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.replace(";", ",").split(",") if x.strip())


def _sites(s: str) -> tuple[tuple[int, int], ...]:
    out = []
    for item in s.split(";"):
        if item.strip():
            a, b = item.split(",")
            out.append((int(a), int(b)))
    return tuple(out)


def build_experiment(entries, source="<config>", n_max=None, ideal=None, threads=None):
    """Turn parsed config entries (plus CLI overrides) into an :class:`Experiment`."""
    r = _Reader(entries, source)
    name = r.get("preset", str)
    nm = n_max if n_max is not None else r.get("run.n_max", int, 6)
    if nm < 1:
        raise ConfigError("run.n_max must be >= 1")
    if name is not None:
        try:
            exp = preset(name, n_max=nm)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from None
    else:
        exp = Experiment("rate", "phi", reference_params(2, n_max=nm))
    exp = exp.replace(notes=exp.notes + (f"config={source}",))

    two_pi = r.get("units.includes_2pi", _bool, True)

    def f(x):
        return mhz(float(x), two_pi)

    p = exp.params
    n_atoms = r.get("params.n_atoms", int, p.n_atoms)
    delta_a = r.get("params.delta_a_mhz", lambda s: tuple(f(v) for v in _floats(s)), None)
    if delta_a is None:
        delta_a = (p.delta_a[0],) * n_atoms
    elif len(delta_a) == 1:
        delta_a = delta_a * n_atoms
    try:
        p = SystemParams(
            g=r.get("params.g_mhz", f, p.g),
            kappa=r.get("params.kappa_mhz", f, p.kappa),
            gamma=r.get("params.gamma_mhz", f, p.gamma),
            kappa_oc=r.get("params.kappa_oc_mhz", f, p.kappa_oc),
            omega_drive=r.get("params.omega_mhz", f, p.omega_drive),
            delta_c=r.get("params.delta_c_mhz", f, p.delta_c),
            delta_a=delta_a,
            phi=r.get("params.phi", float, p.phi),
            n_max=nm,
        )
    except ValueError as exc:
        raise ConfigError(f"invalid parameters: {exc}") from None

    thermal = exp.thermal
    if any(k.startswith("thermal.") and k != "thermal.taus_mhz" for k in entries):
        base = thermal or ThermalParams(0.0)
        try:
            thermal = ThermalParams(
                tau=r.get("thermal.tau_mhz", f, base.tau),
                base_detuning=r.get("thermal.offset_mhz", f, base.base_detuning),
                quad_order=r.get("thermal.quad_order", int, base.quad_order),
                independent=r.get("thermal.independent", _bool, base.independent),
            )
        except ValueError as exc:
            raise ConfigError(f"invalid thermal parameters: {exc}") from None
    temperatures = r.get("thermal.taus_mhz", lambda s: tuple(f(v) for v in _floats(s)), exp.temperatures)
    pumping = exp.pumping
    eta = r.get("pumping.eta", float)
    if eta is not None:
        try:
            pumping = PumpingParams(eta)
        except ValueError as exc:
            raise ConfigError(f"invalid pumping parameters: {exc}") from None

    observable = r.get("observable", str, exp.observable)
    if observable not in OBSERVABLES:
        raise ConfigError(f"unknown observable {observable!r}")
    axis = r.get("scan.axis", str, exp.axis)
    if axis not in AXES:
        raise ConfigError(f"unknown scan axis {axis!r}; choose from {', '.join(AXES)}")
    grid, sites = exp.grid, exp.sites
    if any(k in entries for k in ("scan.start", "scan.stop", "scan.num")):
        start = r.get("scan.start", float)
        stop = r.get("scan.stop", float)
        num = r.get("scan.num", int)
        if start is None or stop is None or num is None:
            raise ConfigError("scan.start, scan.stop and scan.num must be given together")
        endpoint = r.get("scan.endpoint", _bool, True)
        grid = tuple(np.linspace(start, stop, num, endpoint=endpoint))
        if axis == "detuning":
            grid = tuple(f(v) for v in grid)
    if "scan.values" in entries:
        grid = r.get("scan.values", _floats)
        if axis == "detuning":
            grid = tuple(f(v) for v in grid)
    if "scan.sites" in entries:
        sites = r.get("scan.sites", _sites)
        axis = "sites"
    rate_name = r.get("run.rate_constant", str, "detection")
    rate = {"detection": DETECTION_RATE_CONSTANT, "kappa_oc": KAPPA_OC_RATE_CONSTANT}.get(rate_name)
    if rate is None:
        raise ConfigError(f"run.rate_constant must be 'detection' or 'kappa_oc', got {rate_name!r}")

    exp = exp.replace(
        params=p, thermal=thermal, pumping=pumping, temperatures=temperatures,
        observable=observable, axis=axis, grid=grid, sites=sites, rate_constant=rate,
        ideal=ideal if ideal else r.get("run.ideal", _bool, exp.ideal),
        threads=threads if threads is not None else r.get("run.threads", int, exp.threads),
    )
    validate(exp)
    return exp, r.get("output.path", str), r.get("run.seed", int, 0)


def validate(exp: Experiment):
    pts = exp.points
    if not pts:
        raise ConfigError(f"scan grid for axis {exp.axis!r} is empty")
    if exp.axis == "sites":
        for s in pts:
            if tuple(s) == (0, 0):
                raise ConfigError("site difference (0, 0) is not a valid pair")
    else:
        g = np.asarray(pts, float)
        if np.any(np.diff(g) <= 0):
            raise ConfigError(f"scan grid for axis {exp.axis!r} must be strictly ascending")
        if exp.axis == "tau" and g[0] < 0:
            raise ConfigError("delay grid must start at or after 0")
    if exp.observable == "g2_tau" and exp.axis != "tau":
        raise ConfigError("observable g2_tau needs scan.axis = tau")
    if exp.axis == "tau" and exp.observable != "g2_tau":
        raise ConfigError("scan.axis = tau is only valid for observable g2_tau")
    if exp.observable == "rate_temperatures" and not exp.temperatures:
        raise ConfigError("observable rate_temperatures needs thermal.taus_mhz")
    if exp.threads < 1:
        raise ConfigError("run.threads must be >= 1")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "nan" if np.isnan(v) else repr(v)


def metadata(exp: Experiment, seed: int) -> list[tuple[str, str]]:
    p = exp.params
    hz = lambda w: f"{w / TWO_PI!r} Hz ({w!r} rad/s)"  # noqa: E731
    meta = [
        ("generator", f"pairqed {__version__}"),
        ("preset", exp.name),
        ("observable", exp.observable),
        ("axis", exp.axis),
        ("n_atoms", str(p.n_atoms)),
        ("n_max", str(p.n_max)),
        ("g", hz(p.g)),
        ("kappa", hz(p.kappa)),
        ("kappa_oc", "none" if p.kappa_oc is None else hz(p.kappa_oc)),
        ("gamma", hz(p.gamma)),
        ("omega_drive", hz(p.omega_drive)),
        ("delta_c", hz(p.delta_c)),
        ("delta_a", ", ".join(hz(d) for d in p.delta_a)),
        ("phi", f"{p.phi!r} rad"),
        ("rate_constant", f"{exp.rate_constant!r} 1/s"),
        ("ideal_only", str(exp.ideal).lower()),
        ("seed", str(seed)),
    ]
    if exp.thermal is not None and not exp.ideal:
        t = exp.thermal
        meta += [
            ("thermal_tau", hz(t.tau)),
            ("thermal_offset", hz(t.offset)),
            ("quad_order", str(t.quad_order)),
            ("thermal_detuning_model", "independent" if t.independent else "common"),
        ]
    if exp.temperatures:
        meta.append(("temperatures", ", ".join(hz(t) for t in exp.temperatures)))
    if exp.pumping is not None and not exp.ideal:
        meta.append(("pumping_eta", repr(exp.pumping.eta)))
    if exp.observable in ("g2", "g2_tau") and not exp.ideal:
        meta.append(("g2_mixture_model", "incoherent pooling of G2 over thermal nodes and pumping outcomes"))
    if exp.observable == "rate_breakdown":
        meta.append(("independent_quad_order", str(min((exp.thermal or ThermalParams(0)).quad_order, 16))))
    for note in exp.notes:
        meta.append(("note", note))
    meta.append(("units", "rates in Hz (photons/s), phases in rad, times in s, detunings in Hz"))
    return meta


def to_csv(result: ScanResult, meta) -> str:
    buf = io.StringIO()
    for k, v in meta:
        buf.write(f"# {k}: {v}\n")
    cols = list(result.columns)
    has_err = any(e is not None for e in result.errors)
    if has_err:
        cols.append("error")
    buf.write(",".join(cols) + "\n")
    for row, err in zip(result.rows, result.errors):
        cells = [_fmt(v) for v in row]
        if has_err:
            cells.append("" if err is None else '"' + err.replace('"', "'") + '"')
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()


def execute(exp: Experiment, seed: int = 0) -> tuple[str, ScanResult]:
    result = run(exp)
    return to_csv(result, metadata(exp, seed)), result


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="simulate",
        description="Reproduce photon-rate and g2 curves of a cavity-coupled atom pair as CSV.",
    )
    ap.add_argument("preset", nargs="?", help=f"one of: {', '.join(PRESETS)}")
    ap.add_argument("--config", type=Path, help="key = value configuration file")
    ap.add_argument("--out", type=Path, help="output CSV (default: stdout)")
    ap.add_argument("--n-max", type=int, dest="n_max", help="photon-number truncation")
    ap.add_argument("--ideal", action="store_true", help="skip thermal and pumping imperfections")
    ap.add_argument("--threads", type=int, help="scan points evaluated concurrently")
    ap.add_argument("--seed", type=int, help="recorded in the metadata block")
    args = ap.parse_args(argv)

    if (args.preset is None) == (args.config is None):
        print("simulate: give exactly one of a preset name or --config", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.config is not None:
            try:
                text = args.config.read_text(encoding="utf-8")
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}") from None
            entries = parse_config_text(text, str(args.config))
            source = str(args.config)
        else:
            entries = {"preset": (args.preset, 0)}
            source = f"preset:{args.preset}"
        exp, out_path, seed = build_experiment(
            entries, source, n_max=args.n_max, ideal=args.ideal, threads=args.threads
        )
    except ConfigError as exc:
        print(f"simulate: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        seed = args.seed
    out = args.out or (Path(out_path) if out_path else None)

    text, result = execute(exp, seed)
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    failed = result.failure_fraction
    if failed > 0:
        print(f"simulate: {failed:.0%} of scan points failed", file=sys.stderr)
    return EXIT_SOLVER if failed > 0.1 else 0


if __name__ == "__main__":
    sys.exit(main())
