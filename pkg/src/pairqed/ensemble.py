"""Thermal averaging over light-shifted detunings and imperfect optical pumping.

A thermal atom sees its transition shifted by ``tau r^2`` with the weight
``(4/sqrt(pi)) r^2 exp(-r^2)`` on ``r >= 0``.  Substituting ``u = r^2`` turns
this into ``(2/sqrt(pi)) u^(1/2) exp(-u) du``, which generalized
Gauss-Laguerre quadrature with exponent 1/2 integrates exactly for
polynomial observables.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.special import roots_genlaguerre

from .dynamics import (
    DETECTION_RATE_CONSTANT,
    CorrelationSeries,
    correlation_numerator,
    photon_number,
    steady_state,
)
from .models import SystemParams, build_model


class QuadratureConvergenceError(RuntimeError):
    def __init__(self, coarse: float, fine: float, rtol: float):
        self.coarse, self.fine = coarse, fine
        super().__init__(
            f"thermal average not converged: {coarse!r} vs {fine!r} "
            f"after doubling the node count (rtol {rtol:g})"
        )


@dataclass(frozen=True)
class ThermalParams:
    """Boltzmann spread of the atomic detuning.

    tau : temperature parameter in rad/s.
    base_detuning : trap-bottom atom offset from the cavity, ``Delta_a - Delta_c``
        in rad/s.  ``None`` applies the default prescription of a trap-bottom
        atom blue detuned from the cavity by ``tau``.
    quad_order : quadrature nodes per atom.
    independent : draw each atom's detuning separately instead of sharing one.
    """

    tau: float
    base_detuning: float | None = None
    quad_order: int = 32
    independent: bool = False

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("temperature parameter tau must be non-negative")
        if self.quad_order < 8:
            raise ValueError("quad_order must be at least 8")

    @property
    def offset(self) -> float:
        return -self.tau if self.base_detuning is None else self.base_detuning


@dataclass(frozen=True)
class PumpingParams:
    eta: float

    def __post_init__(self):
        if not 0 <= self.eta <= 1:
            raise ValueError("pumping efficiency eta must lie in [0, 1]")


@lru_cache(maxsize=None)
def quadrature_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes ``u`` and weights for the thermal measure, weights summing to 1."""
    u, w = roots_genlaguerre(order, 0.5)
    w = w * 2 / np.sqrt(np.pi)
    u.flags.writeable = False
    w.flags.writeable = False
    return u, w


def _average(f: Callable[[float], float], base: float, tau: float, order: int) -> float:
    if tau == 0:
        return float(f(base))
    u, w = quadrature_rule(order)
    vals = np.array([f(base + tau * ui) for ui in u], dtype=float)
    return float(w @ vals)


def thermal_average(
    f: Callable[[float], float],
    thermal: ThermalParams,
    base_detuning: float | None = None,
    check: bool = False,
    rtol: float = 1e-4,
) -> float:
    """(4/sqrt(pi)) int_0^inf f(base + tau r^2) r^2 exp(-r^2) dr.

    ``base_detuning`` overrides ``thermal.offset``.  With ``check=True`` the
    result is recomputed at twice the node count and
    :class:`QuadratureConvergenceError` is raised if the two differ by more
    than ``rtol`` relative.
    """
    base = thermal.offset if base_detuning is None else base_detuning
    coarse = _average(f, base, thermal.tau, thermal.quad_order)
    if check and thermal.tau > 0:
        fine = _average(f, base, thermal.tau, 2 * thermal.quad_order)
        if abs(fine - coarse) > rtol * max(abs(fine), 1e-300):
            raise QuadratureConvergenceError(coarse, fine, rtol)
    return coarse


def thermal_average_pair(
    f: Callable[[float, float], float], thermal: ThermalParams, base_detuning: float | None = None
) -> float:
    """Average of ``f(d1, d2)`` over independent thermal detunings of two atoms."""
    base = thermal.offset if base_detuning is None else base_detuning
    if thermal.tau == 0:
        return float(f(base, base))
    u, w = quadrature_rule(thermal.quad_order)
    d = base + thermal.tau * u
    vals = np.array([[f(d1, d2) for d2 in d] for d1 in d], dtype=float)
    return float(w @ vals @ w)


def _map(fn, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def _node_detunings(params: SystemParams, thermal: ThermalParams | None):
    """(weight, atom-detuning tuple) pairs covering the thermal distribution.

    Atom detunings are measured from the laser: ``delta_c + offset + tau u``.
    """
    if thermal is None or thermal.tau == 0:
        off = 0.0 if thermal is None else thermal.offset
        return [(1.0, tuple(d + off for d in params.delta_a))]
    u, w = quadrature_rule(thermal.quad_order)
    base = np.array(params.delta_a) + thermal.offset
    if params.n_atoms == 1 or not thermal.independent:
        return [(wi, tuple(base + thermal.tau * ui)) for ui, wi in zip(u, w)]
    return [
        (wi * wj, (base[0] + thermal.tau * ui, base[1] + thermal.tau * uj))
        for ui, wi in zip(u, w)
        for uj, wj in zip(u, w)
    ]


def thermal_rate(
    params: SystemParams,
    thermal: ThermalParams | None,
    out_rate: float = DETECTION_RATE_CONSTANT,
    threads: int = 1,
) -> float:
    """Thermally averaged emission rate (photons/s) for one or two atoms.

    ``params.delta_a`` is the detuning the atoms would have without the thermal
    offset; each node adds ``thermal.offset + tau u``.  With ``thermal=None``
    the rate of ``params`` itself is returned.
    """
    nodes = _node_detunings(params, thermal)

    def one(node):
        return photon_number(steady_state(build_model(params.replace(delta_a=node[1]))))

    n = _map(one, nodes, threads)
    return out_rate * float(np.dot([w for w, _ in nodes], n))


def thermal_correlation(
    params: SystemParams,
    thermal: ThermalParams | None,
    taus: Sequence[float] | None = None,
    threads: int = 1,
) -> tuple[float, np.ndarray]:
    """Pooled <a^+ a> and unnormalized G2 over the thermal distribution.

    ``taus=None`` returns the equal-time numerator <a^+ a^+ a a> only, as a
    length-1 array.
    """
    nodes = _node_detunings(params, thermal)
    grid = [0.0] if taus is None else taus

    def one(node):
        model = build_model(params.replace(delta_a=node[1]))
        rho = steady_state(model)
        return photon_number(rho), correlation_numerator(model, rho, grid)

    res = _map(one, nodes, threads)
    w = np.array([w for w, _ in nodes])
    n = float(w @ np.array([r[0] for r in res]))
    G = w @ np.array([r[1] for r in res])
    return n, G


def spectrum_with_temperature(
    params: SystemParams,
    thermal: ThermalParams,
    detuning_grid: Sequence[float],
    out_rate: float = DETECTION_RATE_CONSTANT,
    threads: int = 1,
) -> np.ndarray:
    """Thermally averaged emission rate versus laser-cavity detuning.

    For each grid value ``d`` the cavity detuning is ``d`` and a trap-bottom
    atom sits at ``d + thermal.offset``; by default the offset is ``-tau``,
    i.e. the trap-bottom atom is blue of the cavity by ``tau``.
    """
    grid = np.asarray(detuning_grid, dtype=float)

    def point(d):
        p = params.replace(delta_c=d, delta_a=(d,) * params.n_atoms)
        return thermal_rate(p, thermal, out_rate)

    return np.array(_map(point, grid, threads))


def mixture_rate(r2_full: float, r1: float, pumping: PumpingParams) -> float:
    """eta^2 R2' + 2 eta (1 - eta) R1; the pair with no pumped atom emits nothing."""
    if r2_full < 0 or r1 < 0:
        raise ValueError("rates must be non-negative")
    eta = pumping.eta
    return eta**2 * r2_full + 2 * eta * (1 - eta) * r1


def mixture_g2(components, taus=None) -> CorrelationSeries:
    """Pool incoherent components given as ``(probability, rate, G2)`` triples.

    ``rate`` and ``G2`` must share units (e.g. <a^+ a> and the unnormalized
    correlation from :func:`pairqed.dynamics.correlation_numerator`).  The
    result is ``sum p G2 / (sum p R)^2``.  This treats the emitters in the
    mixture as statistically independent realizations; the resulting series
    carries ``metadata['mixture_model'] = 'incoherent'``.
    """
    comps = [(float(p), float(r), np.atleast_1d(np.asarray(G, dtype=float))) for p, r, G in components]
    if not comps:
        raise ValueError("no components to mix")
    total_p = sum(p for p, _, _ in comps)
    if total_p > 1 + 1e-12 or any(p < 0 for p, _, _ in comps):
        raise ValueError("component probabilities must be non-negative and sum to <= 1")
    R = sum(p * r for p, r, _ in comps)
    if R <= 0:
        raise ValueError("mixed rate vanishes")
    G = sum(p * g for p, _, g in comps)
    if taus is None:
        taus = np.zeros(len(G)) if len(G) == 1 else np.arange(len(G), dtype=float)
    return CorrelationSeries(taus, G / R**2, G, R, {"mixture_model": "incoherent"})


def imperfect_rate(
    params: SystemParams,
    thermal: ThermalParams | None,
    pumping: PumpingParams | None,
    out_rate: float = DETECTION_RATE_CONSTANT,
    threads: int = 1,
) -> float:
    """Emission rate with thermal averaging and pumping failures.

    For two atoms the pumped-pair rate is mixed with single-atom emission; for
    one atom the rate is simply scaled by ``eta``.
    """
    r_full = thermal_rate(params, thermal, out_rate, threads)
    if pumping is None:
        return r_full
    if params.n_atoms == 1:
        return pumping.eta * r_full
    r1 = thermal_rate(params.with_atoms(1), thermal, out_rate, threads)
    return mixture_rate(r_full, r1, pumping)
