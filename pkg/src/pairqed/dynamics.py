"""Lindblad generator, steady states, time evolution and photon correlations.

Dissipators use the convention ``rate * (2 C rho C^+ - C^+C rho - rho C^+C)``
so a cavity channel ``(kappa, a)`` damps the field amplitude at ``kappa`` and
the intensity at ``2 kappa``.  Density matrices are vectorized column-major,
``vec(A X B) = (B^T kron A) vec(X)``.
"""

from __future__ import annotations

import warnings
from dataclasses import InitVar, dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg as la
from scipy.integrate import solve_ivp

from .operators import LayoutMismatchError, Operator, SpaceLayout, annihilation, expectation

#: Detected photons per second per intracavity photon, in s^-1.
DETECTION_RATE_CONSTANT = 30.4e6
#: Alternative constant 2 kappa_OC with kappa_OC = 2 pi x 2.4 MHz.
KAPPA_OC_RATE_CONSTANT = 2 * (2 * np.pi * 2.4e6)


class SolverError(RuntimeError):
    """Numerical failure in a steady-state or propagation routine."""


class NonUniqueSteadyStateError(SolverError):
    def __init__(self, dimension: int):
        self.dimension = dimension
        super().__init__(
            f"non-unique steady state: null space of the Liouvillian has dimension {dimension}"
        )


class StepSizeError(SolverError):
    """Adaptive integrator step size underflowed."""


class NoFieldError(ValueError):
    """Correlation requested for a state with no photons in the cavity."""


def vec(m: np.ndarray) -> np.ndarray:
    return np.asarray(m).reshape(-1, order="F")


def unvec(v: np.ndarray, dim: int) -> np.ndarray:
    return np.asarray(v).reshape(dim, dim, order="F")


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian, unit-trace, positive semidefinite state on a layout.

    Validation runs on construction unless ``check=False``.
    """

    layout: SpaceLayout
    matrix: np.ndarray = field(repr=False)
    check: InitVar[bool] = True

    def __post_init__(self, check):
        m = np.array(self.matrix, dtype=complex)
        if m.shape != (self.layout.dim, self.layout.dim):
            raise LayoutMismatchError(f"state shape {m.shape} vs layout dim {self.layout.dim}")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)
        if check:
            self.validate()

    def validate(self, herm_tol=1e-9, trace_tol=1e-9, eig_tol=1e-8):
        m = self.matrix
        if np.abs(m - m.conj().T).max() > herm_tol:
            raise ValueError("density matrix is not Hermitian")
        tr = np.trace(m)
        if abs(tr - 1) > trace_tol:
            raise ValueError(f"density matrix trace {tr} differs from 1")
        lam = np.linalg.eigvalsh((m + m.conj().T) / 2).min()
        if lam < -eig_tol:
            raise ValueError(f"density matrix has negative eigenvalue {lam:.3e}")

    @classmethod
    def from_ket(cls, layout: SpaceLayout, psi) -> DensityMatrix:
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(layout, np.outer(psi, psi.conj()))

    @classmethod
    def basis(cls, layout: SpaceLayout, n: int = 0, atoms: str | None = None) -> DensityMatrix:
        """Pure bare state ``|n, atoms>``; atoms default to all ground."""
        if atoms is None:
            atoms = "g" * layout.n_atoms
        psi = np.zeros(layout.dim)
        psi[layout.index(n, atoms)] = 1.0
        return cls.from_ket(layout, psi)

    def expect(self, op: Operator) -> complex:
        return expectation(op, self)

    def distance(self, other: DensityMatrix) -> float:
        return float(np.linalg.norm(self.matrix - other.matrix))


@dataclass(frozen=True, eq=False)
class LindbladModel:
    """Hamiltonian (rad/s) plus unscaled jump operators with explicit rates."""

    hamiltonian: Operator
    channels: tuple[tuple[float, Operator], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple((float(r), c) for r, c in self.channels))
        if not self.hamiltonian.is_hermitian(1e-10):
            raise ValueError("Hamiltonian is not Hermitian")
        for rate, jump in self.channels:
            if rate < 0:
                raise ValueError(f"negative channel rate {rate}")
            if jump.layout != self.hamiltonian.layout:
                raise LayoutMismatchError("jump operator layout differs from Hamiltonian layout")

    @property
    def layout(self) -> SpaceLayout:
        return self.hamiltonian.layout

    @property
    def min_rate(self) -> float:
        rates = [r for r, _ in self.channels if r > 0]
        if not rates:
            raise ValueError("model has no dissipative channel")
        return min(rates)

    @cached_property
    def superoperator(self) -> np.ndarray:
        d = self.layout.dim
        eye = np.eye(d)
        H = self.hamiltonian.matrix
        L = -1j * (np.kron(eye, H) - np.kron(H.T, eye))
        for rate, jump in self.channels:
            if rate == 0:
                continue
            C = jump.matrix
            CdC = C.conj().T @ C
            L += rate * (2 * np.kron(C.conj(), C) - np.kron(eye, CdC) - np.kron(CdC.T, eye))
        L.flags.writeable = False
        return L


def liouvillian(model: LindbladModel) -> np.ndarray:
    """Dense generator with ``d/dt vec(rho) = L vec(rho)``."""
    return model.superoperator


def null_space_dimension(L: np.ndarray, rtol: float = 1e-10) -> tuple[int, np.ndarray]:
    """Numerical null-space dimension of ``L`` and the corresponding right vectors."""
    _, s, vh = la.svd(L)
    small = s <= rtol * s[0]
    return int(small.sum()), vh[small].conj().T


def _to_state(layout: SpaceLayout, x: np.ndarray) -> DensityMatrix:
    rho = unvec(x, layout.dim)
    rho = (rho + rho.conj().T) / 2
    rho = rho / np.trace(rho).real
    return DensityMatrix(layout, rho)


def _check_residual(L: np.ndarray, rho: DensityMatrix):
    res = np.linalg.norm(L @ vec(rho.matrix))
    if res > 1e-10 * np.linalg.norm(L):
        raise SolverError(f"steady-state residual {res:.3e} exceeds tolerance")


def steady_state(model: LindbladModel, method: str = "solve") -> DensityMatrix:
    """Unique fixed point of the Lindblad generator.

    ``method="solve"`` replaces one row of ``L x = 0`` by the trace condition;
    ``method="nullspace"`` takes the SVD null vector and raises
    :class:`NonUniqueSteadyStateError` if more than one exists.  The linear
    solve falls back to the SVD route when the system is ill-conditioned, so
    degeneracy is reported by either method.
    """
    L = model.superoperator
    layout = model.layout
    d = layout.dim
    if method == "nullspace":
        return _steady_state_svd(L, layout)
    if method != "solve":
        raise ValueError(f"unknown steady-state method {method!r}")
    s = np.abs(L).max() or 1.0
    M = np.array(L)
    M[0, :] = s * vec(np.eye(d))
    b = np.zeros(d * d, dtype=complex)
    b[0] = s
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", la.LinAlgWarning)
            x = la.solve(M, b)
        rho = _to_state(layout, x)
        _check_residual(L, rho)
    except (la.LinAlgError, la.LinAlgWarning, ValueError, SolverError):
        return _steady_state_svd(L, layout)
    return rho


def _steady_state_svd(L: np.ndarray, layout: SpaceLayout) -> DensityMatrix:
    dim, vs = null_space_dimension(L)
    if dim == 0:
        raise SolverError("Liouvillian has no null vector")
    if dim > 1:
        raise NonUniqueSteadyStateError(dim)
    x = vs[:, 0]
    tr = vec(np.eye(layout.dim)) @ x
    if abs(tr) < 1e-12:
        raise SolverError("null vector has vanishing trace")
    try:
        rho = _to_state(layout, x / tr)
    except ValueError as exc:
        raise SolverError(str(exc)) from exc
    _check_residual(L, rho)
    return rho


class _PropagatorCache:
    """exp(L dt) reused across time steps equal to within ``rtol``."""

    def __init__(self, L: np.ndarray, rtol: float = 1e-10):
        self.L = L
        self.rtol = rtol
        self._steps: list[float] = []
        self._props: list[np.ndarray] = []

    def __call__(self, dt: float) -> np.ndarray:
        for t, P in zip(self._steps, self._props):
            if abs(t - dt) <= self.rtol * max(abs(t), abs(dt)):
                return P
        P = la.expm(self.L * dt)
        self._steps.append(dt)
        self._props.append(P)
        return P


def _check_grid(t_grid) -> np.ndarray:
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("time grid must be a non-empty 1-D sequence")
    if t[0] < 0 or np.any(np.diff(t) < 0):
        raise ValueError("time grid must be non-negative and ascending")
    return t


def _propagate(L: np.ndarray, x0: np.ndarray, t: np.ndarray, t0: float = 0.0) -> list[np.ndarray]:
    cache = _PropagatorCache(L)
    out = []
    x, last = x0, t0
    for ti in t:
        dt = ti - last
        if dt > 0:
            x = cache(dt) @ x
        out.append(x)
        last = ti
    return out


def evolve(
    model: LindbladModel,
    rho0: DensityMatrix,
    t_grid: Sequence[float],
    method: str = "expm",
    rtol: float = 1e-10,
    atol: float = 1e-12,
) -> list[DensityMatrix]:
    """States at each time in ``t_grid`` (ascending, starting at or after 0).

    ``method="expm"`` applies exact propagators exp(L dt) (scaling and
    squaring); ``method="ode"`` integrates with an adaptive Dormand-Prince
    8(5,3) scheme at the given tolerances.
    """
    if rho0.layout != model.layout:
        raise LayoutMismatchError("initial state and model layouts differ")
    t = _check_grid(t_grid)
    L = model.superoperator
    d = model.layout.dim
    x0 = vec(rho0.matrix)
    if method == "expm":
        xs = _propagate(L, x0, t)
    elif method == "ode":
        if t[-1] == 0:
            xs = [x0] * len(t)
        else:
            sol = solve_ivp(
                lambda _, y: L @ y, (0.0, t[-1]), x0, method="DOP853",
                t_eval=t, rtol=rtol, atol=atol,
            )
            if sol.status != 0:
                raise StepSizeError(sol.message)
            xs = list(sol.y.T)
    else:
        raise ValueError(f"unknown evolution method {method!r}")
    states = []
    for ti, x in zip(t, xs):
        m = unvec(x, d)
        if ti == 0 and method == "expm":
            states.append(rho0)
            continue
        try:
            states.append(DensityMatrix(model.layout, (m + m.conj().T) / 2))
        except ValueError as exc:
            raise SolverError(f"state at t={ti:g} s is invalid: {exc}") from exc
    return states


def photon_number(rho: DensityMatrix) -> float:
    a = annihilation(rho.layout)
    return expectation(a.dag() @ a, rho).real


def emission_rate(rho: DensityMatrix, out_rate: float = DETECTION_RATE_CONSTANT) -> float:
    """Photons per second leaving the output coupler: ``out_rate * <a^+ a>``."""
    return out_rate * photon_number(rho)


def g2_zero(rho: DensityMatrix) -> float:
    """Equal-time <a^+ a^+ a a> / <a^+ a>^2."""
    a = annihilation(rho.layout)
    n = photon_number(rho)
    if n <= 1e-14:
        raise NoFieldError("no steady-state field: <a^+ a> vanishes")
    ad = a.dag()
    return expectation(ad @ ad @ a @ a, rho).real / n**2


@dataclass(frozen=True, eq=False)
class CorrelationSeries:
    """Normalized g2 on a delay grid.

    ``unnormalized`` holds Tr[a^+ a exp(L tau)(a rho a^+)] and ``photon_number``
    the steady-state <a^+ a>, so series can be pooled into mixtures.
    """

    taus: np.ndarray
    values: np.ndarray
    unnormalized: np.ndarray | None = None
    photon_number: float | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "taus", np.asarray(self.taus, dtype=float))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.taus.shape != self.values.shape:
            raise ValueError("taus and values differ in length")


def correlation_numerator(model: LindbladModel, rho: DensityMatrix, taus) -> np.ndarray:
    """Unnormalized G2(tau) via the quantum regression theorem."""
    t = _check_grid(taus)
    a = annihilation(model.layout).matrix
    n_op = a.conj().T @ a
    d = model.layout.dim
    x0 = vec(a @ rho.matrix @ a.conj().T)
    xs = _propagate(model.superoperator, x0, t)
    # Tr(N X) = sum_ij N_ji X_ij = vec(N^T) . vec(X)
    nt = vec(n_op.T)
    return np.array([np.real(nt @ x) for x in xs])


def g2_of_tau(model: LindbladModel, rho: DensityMatrix, taus) -> CorrelationSeries:
    """g2(tau) = G2(tau) / <a^+ a>^2 for the steady state ``rho``."""
    n = photon_number(rho)
    if n <= 1e-14:
        raise NoFieldError("no steady-state field: <a^+ a> vanishes")
    G = correlation_numerator(model, rho, taus)
    return CorrelationSeries(np.asarray(taus, float), G / n**2, G, n)
