"""Operators on the truncated cavity (x) atoms Hilbert space.

Factor order is fixed: cavity Fock space first, then atom 1, atom 2, ...
Each atom is a two-level system with basis (|g>, |e>), so index 0 is the
ground state.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import reduce

import numpy as np


class LayoutMismatchError(ValueError):
    """Raised when operators built on different layouts are combined."""


@dataclass(frozen=True)
class SpaceLayout:
    """Truncated joint space: Fock states 0..n_max times ``n_atoms`` qubits."""

    n_max: int
    n_atoms: int

    def __post_init__(self):
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ValueError(f"n_max must be an integer >= 1, got {self.n_max!r}")
        if int(self.n_atoms) != self.n_atoms or self.n_atoms < 0:
            raise ValueError(f"n_atoms must be a non-negative integer, got {self.n_atoms!r}")

    @property
    def cavity_dim(self) -> int:
        return self.n_max + 1

    @property
    def dim(self) -> int:
        return self.cavity_dim * 2**self.n_atoms

    def index(self, n: int, atoms: str = "") -> int:
        """Basis index of ``|n, atoms>``; ``atoms`` is a string like ``"ge"``."""
        if len(atoms) != self.n_atoms or set(atoms) - {"g", "e"}:
            raise ValueError(f"atom label {atoms!r} does not fit {self.n_atoms} atoms")
        if not 0 <= n <= self.n_max:
            raise ValueError(f"photon number {n} outside 0..{self.n_max}")
        bits = 0
        for c in atoms:
            bits = 2 * bits + (c == "e")
        return n * 2**self.n_atoms + bits

    def labels(self) -> list[str]:
        """Bare-basis labels in matrix order, e.g. ``'|1,eg>'``."""
        out = []
        for n in range(self.cavity_dim):
            for combo in itertools.product("ge", repeat=self.n_atoms):
                out.append(f"|{n},{''.join(combo)}>" if combo else f"|{n}>")
        return out

    def excitations(self) -> np.ndarray:
        """Total excitation number (photons + excited atoms) of each basis state."""
        n = np.repeat(np.arange(self.cavity_dim), 2**self.n_atoms)
        atoms = np.array([bin(b).count("1") for b in range(2**self.n_atoms)])
        return n + np.tile(atoms, self.cavity_dim)


@dataclass(frozen=True, eq=False)
class Operator:
    """Dense complex matrix tied to a :class:`SpaceLayout`.

    Supports ``+``, ``-``, ``@`` (operator product) and scalar ``*``.
    The stored array is read-only.
    """

    layout: SpaceLayout
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.shape != (self.layout.dim, self.layout.dim):
            raise LayoutMismatchError(
                f"matrix shape {m.shape} does not match layout dimension {self.layout.dim}"
            )
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    def _check(self, other: Operator):
        if not isinstance(other, Operator):
            return NotImplemented
        if other.layout != self.layout:
            raise LayoutMismatchError(f"{self.layout} vs {other.layout}")
        return None

    def dag(self) -> Operator:
        return Operator(self.layout, self.matrix.conj().T)

    def __add__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return Operator(self.layout, self.matrix + other.matrix)

    def __sub__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return Operator(self.layout, self.matrix - other.matrix)

    def __matmul__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return Operator(self.layout, self.matrix @ other.matrix)

    def __mul__(self, c):
        if not np.isscalar(c):
            return NotImplemented
        return Operator(self.layout, c * self.matrix)

    __rmul__ = __mul__

    def __neg__(self):
        return Operator(self.layout, -self.matrix)

    def __eq__(self, other):
        return (
            isinstance(other, Operator)
            and other.layout == self.layout
            and np.array_equal(other.matrix, self.matrix)
        )

    __hash__ = None

    def is_hermitian(self, rtol: float = 1e-10) -> bool:
        scale = max(np.linalg.norm(self.matrix), 1.0)
        return np.linalg.norm(self.matrix - self.matrix.conj().T) <= rtol * scale


def _kron_all(factors):
    return reduce(np.kron, factors)


def _embed(layout: SpaceLayout, cavity: np.ndarray, atom_ops: dict[int, np.ndarray]) -> Operator:
    factors = [cavity] + [atom_ops.get(k, np.eye(2)) for k in range(layout.n_atoms)]
    return Operator(layout, _kron_all(factors))


def identity(layout: SpaceLayout) -> Operator:
    return Operator(layout, np.eye(layout.dim))


def annihilation(layout: SpaceLayout) -> Operator:
    """Cavity lowering operator, a|n> = sqrt(n)|n-1>, identity on the atoms."""
    a = np.diag(np.sqrt(np.arange(1, layout.cavity_dim)), k=1)
    return _embed(layout, a, {})


def atomic_lowering(layout: SpaceLayout, which_atom: int) -> Operator:
    """sigma^- = |g><e| acting on atom ``which_atom`` (0-based)."""
    if not 0 <= which_atom < layout.n_atoms:
        raise IndexError(f"atom index {which_atom} out of range for {layout.n_atoms} atoms")
    sm = np.array([[0.0, 1.0], [0.0, 0.0]])
    return _embed(layout, np.eye(layout.cavity_dim), {which_atom: sm})


def number(layout: SpaceLayout) -> Operator:
    a = annihilation(layout)
    return a.dag() @ a


def excited_projector(layout: SpaceLayout, which_atom: int) -> Operator:
    s = atomic_lowering(layout, which_atom)
    return s.dag() @ s


def total_excitation(layout: SpaceLayout) -> Operator:
    return Operator(layout, np.diag(layout.excitations().astype(float)))


def swap_atoms(layout: SpaceLayout, i: int = 0, j: int = 1) -> Operator:
    """Permutation operator exchanging atoms ``i`` and ``j``."""
    if layout.n_atoms < 2:
        raise IndexError("swap needs at least two atoms")
    na = layout.n_atoms
    perm = np.empty(layout.dim, dtype=int)
    for idx in range(layout.dim):
        n, bits = divmod(idx, 2**na)
        b = [(bits >> (na - 1 - k)) & 1 for k in range(na)]
        b[i], b[j] = b[j], b[i]
        perm[idx] = n * 2**na + int("".join(map(str, b)), 2)
    m = np.zeros((layout.dim, layout.dim))
    m[perm, np.arange(layout.dim)] = 1.0
    return Operator(layout, m)


def adjoint(A: Operator) -> Operator:
    return A.dag()


def multiply(A: Operator, B: Operator) -> Operator:
    return A @ B


def add(A: Operator, B: Operator) -> Operator:
    return A + B


def scale(A: Operator, c: complex) -> Operator:
    return c * A


def commutator(A: Operator, B: Operator) -> Operator:
    return A @ B - B @ A


def expectation(A: Operator, rho) -> complex:
    """Tr(A rho). ``rho`` may be a density-matrix object or a bare array."""
    layout = getattr(rho, "layout", None)
    if layout is not None and layout != A.layout:
        raise LayoutMismatchError(f"{A.layout} vs {layout}")
    m = getattr(rho, "matrix", rho)
    # Tr(A rho) without forming the product
    return complex(np.einsum("ij,ji->", A.matrix, m))
