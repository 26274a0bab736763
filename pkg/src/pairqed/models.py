"""Driven Jaynes-Cummings / two-atom Tavis-Cummings models and cavity numbers.

All frequencies are angular (rad/s).  Detunings follow ``H = -Delta_c a^+a -
Delta_a sigma^+ sigma^-`` in the frame of the driving laser, so ``Delta`` is
laser frequency minus mode frequency.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy import constants as const

from .dynamics import LindbladModel
from .operators import (
    Operator,
    SpaceLayout,
    annihilation,
    atomic_lowering,
    swap_atoms,
)

TWO_PI = 2 * np.pi

#: Transition dipole of the 87Rb |F=2,mF=2> -> |F'=3,mF=3> cycling transition
#: in C m (Steck, "Rubidium 87 D Line Data").
RB87_CYCLING_DIPOLE = 2.534e-29
#: 87Rb D2 line frequency in Hz.
RB87_D2_FREQUENCY = 384.230484468e12


def mhz(value: float, includes_2pi: bool = True) -> float:
    """Convert a frequency quoted in MHz to rad/s.

    With ``includes_2pi`` the quoted number is an ordinary frequency (the
    ``2 pi x 7.6 MHz`` style) and is multiplied by 2 pi; otherwise it is
    already an angular frequency in units of 10^6 rad/s.
    """
    return value * 1e6 * (TWO_PI if includes_2pi else 1.0)


@dataclass(frozen=True)
class SystemParams:
    """Physical parameters of the driven atom(s)-cavity system, in rad/s."""

    g: float
    kappa: float
    gamma: float
    omega_drive: float = 0.0
    delta_c: float = 0.0
    delta_a: tuple[float, ...] = (0.0,)
    phi: float = 0.0
    n_max: int = 6
    kappa_oc: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "delta_a", tuple(float(d) for d in np.atleast_1d(self.delta_a)))
        if self.g < 0:
            raise ValueError("coupling g must be non-negative")
        if self.kappa <= 0 or self.gamma <= 0:
            raise ValueError("kappa and gamma must be positive")
        if self.kappa_oc is not None and not 0 <= self.kappa_oc <= self.kappa:
            raise ValueError("kappa_oc must lie in [0, kappa]")
        if self.n_atoms not in (1, 2):
            raise ValueError(f"delta_a must have one entry per atom (1 or 2), got {self.n_atoms}")

    @property
    def n_atoms(self) -> int:
        return len(self.delta_a)

    @property
    def layout(self) -> SpaceLayout:
        return SpaceLayout(self.n_max, self.n_atoms)

    def replace(self, **changes) -> SystemParams:
        return dataclasses.replace(self, **changes)

    def with_atoms(self, n_atoms: int) -> SystemParams:
        """Same parameters with ``n_atoms`` atoms sharing atom 1's detuning."""
        return self.replace(delta_a=(self.delta_a[0],) * n_atoms)

    def cooperativity(self) -> float:
        return cooperativity(self.g, self.kappa, self.gamma)


@dataclass(frozen=True)
class ParameterSet:
    """Named physical constants used to build presets (rad/s)."""

    g: float = mhz(7.6)
    kappa: float = mhz(2.8)
    kappa_oc: float = mhz(2.4)
    gamma: float = mhz(3.0)
    #: Drive of the phase scans, read as 2 pi x 920 kHz.
    omega_phase_scan: float = mhz(0.92)
    omega_thermal_scan: float = mhz(0.2)
    omega_detuning_scan: float = mhz(0.3)
    #: Trap-bottom atom minus cavity offset from the single-atom fit, as
    #: (Delta_a - Delta_c); negative means the atom is blue of the cavity.
    fit_atom_offset: float = -mhz(2.89)
    fit_tau: float = mhz(2.28)
    fit_eta: float = 0.87
    #: Coupling expected from the cavity geometry and the cycling dipole.
    g_design: float = mhz(7.8)


REFERENCE = ParameterSet()


def reference_params(
    n_atoms: int = 2,
    phi: float = 0.0,
    omega: float | None = None,
    n_max: int = 6,
    omega_includes_2pi: bool = True,
) -> SystemParams:
    """Resonant parameters of the phase scans (g, kappa, gamma = 2pi x 7.6, 2.8, 3.0 MHz).

    The drive is quoted as "920 kHz"; by default it is taken as
    2 pi x 920 kHz, matching the 2 pi convention used elsewhere.  Pass
    ``omega_includes_2pi=False`` to read it as 0.92e6 rad/s.
    """
    if omega is None:
        omega = mhz(0.92, includes_2pi=omega_includes_2pi)
    return SystemParams(
        g=REFERENCE.g, kappa=REFERENCE.kappa, gamma=REFERENCE.gamma, kappa_oc=REFERENCE.kappa_oc,
        omega_drive=omega, delta_a=(0.0,) * n_atoms, phi=phi, n_max=n_max,
    )


def _jc_terms(params: SystemParams):
    layout = params.layout
    a = annihilation(layout)
    sms = [atomic_lowering(layout, k) for k in range(params.n_atoms)]
    H = -params.delta_c * (a.dag() @ a)
    for d, s in zip(params.delta_a, sms):
        H = H - d * (s.dag() @ s)
    S = sms[0]
    for s in sms[1:]:
        S = S + s
    H = H + params.g * (S.dag() @ a + a.dag() @ S)
    return layout, a, sms, H


def _channels(params: SystemParams, a: Operator, sms):
    return [(params.gamma, s) for s in sms] + [(params.kappa, a)]


def build_single_atom(params: SystemParams) -> LindbladModel:
    """Driven Jaynes-Cummings model with the atom pumped transversally.

    H = -Dc a^+a - Da s^+s + g(a s^+ + a^+ s) + (Omega/2)(s^+ + s)
    """
    if params.n_atoms != 1:
        raise ValueError("build_single_atom needs exactly one atom")
    _, a, sms, H = _jc_terms(params)
    s = sms[0]
    H = H + (params.omega_drive / 2) * (s + s.dag())
    return LindbladModel(H, _channels(params, a, sms))


def build_two_atom(params: SystemParams) -> LindbladModel:
    """Two atoms with the relative phase ``phi`` carried by atom 2's drive."""
    if params.n_atoms != 2:
        raise ValueError("build_two_atom needs exactly two atoms")
    _, a, sms, H = _jc_terms(params)
    s1, s2 = sms
    ph = np.exp(1j * params.phi)
    drive = s1.dag() + s1 + ph * s2.dag() + np.conj(ph) * s2
    H = H + (params.omega_drive / 2) * drive
    return LindbladModel(H, _channels(params, a, sms))


def build_model(params: SystemParams) -> LindbladModel:
    if params.n_atoms == 1:
        return build_single_atom(params)
    return build_two_atom(params)


def cavity_driven_single_atom(params: SystemParams, pump_amplitude: float) -> LindbladModel:
    """Single atom in a cavity pumped through a mirror: drive ``pump (a + a^+)``.

    The transverse atom drive ``omega_drive`` is ignored.
    """
    if params.n_atoms != 1:
        raise ValueError("cavity_driven_single_atom needs exactly one atom")
    _, a, sms, H = _jc_terms(params)
    H = H + pump_amplitude * (a + a.dag())
    return LindbladModel(H, _channels(params, a, sms))


@dataclass(frozen=True)
class ExcitationSpectrum:
    """Eigen-decomposition of one excitation manifold of the bare ladder.

    ``vectors[:, k]`` is the eigenvector of ``energies[k]`` in the bare basis
    ``labels``.  ``parity`` is the atom-exchange eigenvalue (+1/-1) for two
    atoms, ``None`` otherwise.
    """

    energies: np.ndarray
    vectors: np.ndarray
    labels: list[str]
    parity: np.ndarray | None = field(default=None)

    def weight(self, k: int, label: str) -> float:
        return float(abs(self.vectors[self.labels.index(label), k]) ** 2)


def _fix_phase(v: np.ndarray) -> np.ndarray:
    k = np.argmax(np.abs(v) > np.abs(v).max() - 1e-12)
    return v * np.exp(-1j * np.angle(v[k]))


def excitation_spectrum(params: SystemParams, n_excitations: int) -> ExcitationSpectrum:
    """Drive-free resonant spectrum in the manifold with ``n_excitations`` quanta.

    Detunings and drive in ``params`` are ignored.  Energies are relative to
    ``n_excitations * hbar * omega``.  Degenerate levels of two atoms are split
    into exchange-symmetric and antisymmetric combinations.
    """
    if n_excitations < 1:
        raise ValueError("manifold needs at least one excitation")
    if n_excitations > params.n_max:
        raise ValueError(
            f"{n_excitations}-excitation manifold exceeds the truncation n_max={params.n_max}"
        )
    bare = params.replace(delta_c=0.0, delta_a=(0.0,) * params.n_atoms, omega_drive=0.0)
    layout, _, _, H = _jc_terms(bare)
    idx = np.flatnonzero(layout.excitations() == n_excitations)
    labels = [layout.labels()[i] for i in idx]
    block = H.matrix[np.ix_(idx, idx)]
    w, v = np.linalg.eigh(block)
    parity = None
    if params.n_atoms == 2:
        P = swap_atoms(layout).matrix[np.ix_(idx, idx)]
        parity = np.empty(len(w))
        tol = 1e-9 * max(params.g, 1.0)
        start = 0
        while start < len(w):
            stop = start + 1
            while stop < len(w) and abs(w[stop] - w[start]) < tol:
                stop += 1
            sub = v[:, start:stop]
            pw, pv = np.linalg.eigh(sub.conj().T @ P @ sub)
            v[:, start:stop] = sub @ pv
            parity[start:stop] = np.round(pw)
            start = stop
    v = np.column_stack([_fix_phase(v[:, k]) for k in range(v.shape[1])])
    return ExcitationSpectrum(w, v, labels, parity)


def cooperativity(g: float, kappa: float, gamma: float) -> float:
    """C = g^2 / (2 kappa gamma) with field and polarization decay rates."""
    return g**2 / (2 * kappa * gamma)


@dataclass(frozen=True)
class CavitySpec:
    """Mirror and geometry data of a Fabry-Perot cavity (metres and seconds, ppm for T)."""

    length: float = 498e-6
    waist: float = 30e-6
    finesse: float = 55_000
    t_oc: float = 100.0
    t_2: float = 4.0
    wavelength: float = 780.24e-9
    gamma: float = mhz(3.0)
    dipole_moment: float | None = RB87_CYCLING_DIPOLE
    transition_frequency: float | None = TWO_PI * RB87_D2_FREQUENCY
    #: Coupling used for the cooperativity; defaults to the computed g.
    g: float | None = None

    def __post_init__(self):
        for name in ("length", "waist", "finesse", "t_oc", "t_2", "wavelength", "gamma"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if (self.t_oc + self.t_2) * 1e-6 > self.round_trip_loss:
            raise ValueError(
                f"mirror transmissions {self.t_oc + self.t_2:g} ppm exceed the "
                f"round-trip loss 2 pi / F = {self.round_trip_loss * 1e6:.1f} ppm"
            )

    @property
    def round_trip_loss(self) -> float:
        return TWO_PI / self.finesse


@dataclass(frozen=True)
class CavityDerived:
    fsr: float  # Hz
    kappa: float  # rad/s, field decay
    kappa_oc: float  # rad/s
    cooperativity: float
    g_expected: float | None  # rad/s
    mode_volume: float  # m^3


def derive_cavity_params(cavity: CavitySpec) -> CavityDerived:
    """FSR, field decay rates, mode volume, expected g and cooperativity.

    The intensity linewidth is FSR/F, so the field decay rate is
    kappa = 2 pi FSR / (2 F).  The output-coupler share scales with
    T_OC relative to the total round-trip loss 2 pi / F.
    """
    fsr = const.c / (2 * cavity.length)
    kappa = TWO_PI * fsr / (2 * cavity.finesse)
    kappa_oc = kappa * cavity.t_oc * 1e-6 / cavity.round_trip_loss
    volume = np.pi / 4 * cavity.waist**2 * cavity.length
    g_exp = None
    if cavity.dipole_moment is not None and cavity.transition_frequency is not None:
        g_exp = float(
            np.sqrt(cavity.transition_frequency / (2 * const.epsilon_0 * volume * const.hbar))
            * cavity.dipole_moment
        )
    g = cavity.g if cavity.g is not None else g_exp
    C = cooperativity(g, kappa, cavity.gamma) if g is not None else float("nan")
    return CavityDerived(fsr, kappa, kappa_oc, C, g_exp, volume)

