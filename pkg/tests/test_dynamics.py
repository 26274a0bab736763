import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pairqed.dynamics import (
    KAPPA_OC_RATE_CONSTANT,
    DensityMatrix,
    LindbladModel,
    NoFieldError,
    NonUniqueSteadyStateError,
    correlation_numerator,
    emission_rate,
    evolve,
    g2_of_tau,
    g2_zero,
    liouvillian,
    photon_number,
    steady_state,
    vec,
)
from pairqed.models import (
    SystemParams,
    build_model,
    build_single_atom,
    build_two_atom,
    cavity_driven_single_atom,
    mhz,
    reference_params,
)
from pairqed.operators import Operator, SpaceLayout, annihilation, atomic_lowering, number

KAPPA = mhz(2.8)


def empty_cavity(n_max=4, kappa=KAPPA):
    lay = SpaceLayout(n_max, 0)
    return LindbladModel(Operator(lay, np.zeros((lay.dim, lay.dim))), [(kappa, annihilation(lay))])


def test_zero_model_has_zero_generator():
    lay = SpaceLayout(2, 1)
    L = liouvillian(LindbladModel(Operator(lay, np.zeros((lay.dim,) * 2))))
    assert np.abs(L).max() == 0


def random_model(seed, n_max, n_atoms):
    rng = np.random.default_rng(seed)
    lay = SpaceLayout(n_max, n_atoms)
    X = rng.normal(size=(lay.dim,) * 2) + 1j * rng.normal(size=(lay.dim,) * 2)
    H = Operator(lay, (X + X.conj().T) * 1e6)
    chans = [(rng.uniform(0, 1e7), annihilation(lay))]
    chans += [(rng.uniform(0, 1e7), atomic_lowering(lay, k)) for k in range(n_atoms)]
    return LindbladModel(H, chans)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 2))
def test_trace_preservation_left_null_vector(seed, n_max, n_atoms):
    L = liouvillian(random_model(seed, n_max, n_atoms))
    d = int(np.sqrt(L.shape[0]))
    left = vec(np.eye(d)).conj() @ L
    assert np.linalg.norm(left) <= 1e-12 * np.linalg.norm(L)


def test_damped_cavity_population_closed_form():
    model = empty_cavity()
    rho0 = DensityMatrix.basis(model.layout, 1)
    t = np.linspace(0, 5 / KAPPA, 11)
    n = [photon_number(r) for r in evolve(model, rho0, t)]
    np.testing.assert_allclose(n, np.exp(-2 * KAPPA * t), atol=1e-6)
    n_ode = [photon_number(r) for r in evolve(model, rho0, t, method="ode")]
    np.testing.assert_allclose(n_ode, np.exp(-2 * KAPPA * t), atol=1e-6)


def test_evolve_at_time_zero_returns_initial_state():
    model = build_single_atom(reference_params(1, n_max=3))
    rho0 = DensityMatrix.basis(model.layout, 1, "e")
    out = evolve(model, rho0, [0.0])
    assert out[0] is rho0


def test_evolve_rejects_bad_grid():
    model = empty_cavity()
    with pytest.raises(ValueError):
        evolve(model, DensityMatrix.basis(model.layout), [1e-9, 0.0])


def test_steady_state_is_fixed_point_of_evolution(single_params):
    model = build_single_atom(single_params)
    rho = steady_state(model)
    out = evolve(model, rho, np.linspace(0, 10 / KAPPA, 6))
    assert max(rho.distance(r) for r in out) <= 1e-8


def test_evolution_stays_physical(pair_params):
    model = build_two_atom(pair_params.replace(phi=1.1, omega_drive=mhz(3.0)))
    rng = np.random.default_rng(3)
    X = rng.normal(size=(model.layout.dim,) * 2) + 1j * rng.normal(size=(model.layout.dim,) * 2)
    rho0 = DensityMatrix(model.layout, X @ X.conj().T / np.trace(X @ X.conj().T).real)
    for r in evolve(model, rho0, np.linspace(0, 2e-7, 9)):
        m = r.matrix
        assert np.abs(m - m.conj().T).max() < 1e-9
        assert abs(np.trace(m) - 1) < 1e-9
        assert np.linalg.eigvalsh(m).min() > -1e-8


def test_undriven_steady_state_is_ground(pair_params):
    model = build_two_atom(pair_params.replace(omega_drive=0.0))
    rho = steady_state(model)
    ground = DensityMatrix.basis(model.layout)
    assert rho.distance(ground) < 1e-10


def test_degenerate_null_space_is_reported():
    # no drive, no atomic decay: the antisymmetric state |0,A> is dark and stationary
    lay = SpaceLayout(2, 2)
    p = reference_params(2, n_max=2).replace(omega_drive=0.0)
    m = build_two_atom(p)
    model = LindbladModel(m.hamiltonian, [(p.kappa, annihilation(lay))])
    with pytest.raises(NonUniqueSteadyStateError) as exc:
        steady_state(model, method="nullspace")
    # populations and coherences of {|0,gg>, |0,A>}
    assert exc.value.dimension == 4
    with pytest.raises(NonUniqueSteadyStateError):
        steady_state(model)


@pytest.mark.parametrize("n_atoms,phi", [(1, 0.0), (2, 0.0), (2, np.pi), (2, 2.0)])
def test_solve_null_space_and_long_time_agree(n_atoms, phi):
    model = build_model(reference_params(n_atoms, phi=phi, n_max=4))
    a = steady_state(model)
    b = steady_state(model, method="nullspace")
    T = 30 / model.min_rate
    c = evolve(model, DensityMatrix.basis(model.layout), [T])[-1]
    assert a.distance(b) <= 1e-8
    assert a.distance(c) <= 1e-8
    L = liouvillian(model)
    assert np.linalg.norm(L @ vec(a.matrix)) <= 1e-10 * np.linalg.norm(L)


def test_weak_drive_matches_linear_response():
    # linearized Heisenberg equations at resonance:
    # sigma = -i (Omega/2) kappa / (kappa gamma + g^2), alpha = -i g sigma / kappa
    p = reference_params(1, omega=mhz(0.01), n_max=3)
    rho = steady_state(build_single_atom(p))
    sigma = 0.5 * p.omega_drive * p.kappa / (p.kappa * p.gamma + p.g**2)
    pe = rho.expect(atomic_lowering(p.layout, 0).dag() @ atomic_lowering(p.layout, 0)).real
    assert pe == pytest.approx(sigma**2, rel=1e-3)
    assert photon_number(rho) == pytest.approx((p.g * sigma / p.kappa) ** 2, rel=1e-3)


def test_emission_rate_constants():
    lay = SpaceLayout(3, 0)
    vac = DensityMatrix.basis(lay)
    assert emission_rate(vac) == 0
    # <a^+ a> = 1e-3 as a mixture of |0> and |1>
    rho = DensityMatrix(lay, np.diag([1 - 1e-3, 1e-3, 0, 0]))
    assert emission_rate(rho) == pytest.approx(30.4e3)
    assert KAPPA_OC_RATE_CONSTANT == pytest.approx(30.159e6, rel=1e-4)
    assert abs(KAPPA_OC_RATE_CONSTANT / 30.4e6 - 1) < 0.01


def test_g2_coherent_cavity_drive():
    p = SystemParams(g=0.0, kappa=KAPPA, gamma=mhz(3.0), delta_a=(0.0,), n_max=8)
    model = cavity_driven_single_atom(p, 0.2 * KAPPA)
    rho = steady_state(model)
    taus = np.linspace(0, 200e-9, 21)
    g2 = g2_of_tau(model, rho, taus)
    np.testing.assert_allclose(g2.values, 1.0, atol=1e-6)


@pytest.mark.parametrize("phi", [0.0, np.pi])
def test_g2_factorizes_at_long_delay(phi, pair_params):
    p = pair_params.replace(phi=phi)
    model = build_two_atom(p)
    rho = steady_state(model)
    tau = 20 * max(1 / p.kappa, 1 / p.gamma)
    g2 = g2_of_tau(model, rho, [0.0, tau])
    assert abs(g2.values[-1] - 1) < 1e-3
    assert g2.values[0] == pytest.approx(g2_zero(rho), rel=1e-10)
    assert np.all(g2.values > -1e-6)


def test_g2_bunching_and_revival_at_out_of_phase(pair_params):
    p = pair_params.replace(phi=np.pi)
    model = build_two_atom(p)
    rho = steady_state(model)
    taus = np.linspace(0, 120e-9, 241)
    g2 = g2_of_tau(model, rho, taus).values
    assert g2[0] > 20
    peaks = [k for k in range(1, len(g2) - 1) if g2[k] > g2[k - 1] and g2[k] >= g2[k + 1]]
    period = 2 * np.pi / (2 * np.sqrt(2) * p.g)
    assert taus[peaks[0]] == pytest.approx(period, rel=0.15)


def test_g2_needs_field(single_params):
    model = build_single_atom(single_params.replace(omega_drive=0.0))
    rho = steady_state(model)
    with pytest.raises(NoFieldError, match="no steady-state field"):
        g2_of_tau(model, rho, [0.0])
    with pytest.raises(NoFieldError):
        g2_zero(rho)


def test_correlation_numerator_matches_direct_moment(pair_params):
    model = build_two_atom(pair_params.replace(phi=0.7))
    rho = steady_state(model)
    a = annihilation(model.layout)
    direct = rho.expect(a.dag() @ a.dag() @ a @ a).real
    assert correlation_numerator(model, rho, [0.0])[0] == pytest.approx(direct, rel=1e-12)


def test_density_matrix_validation():
    lay = SpaceLayout(1, 0)
    with pytest.raises(ValueError):
        DensityMatrix(lay, np.diag([0.5, 0.4]))
    with pytest.raises(ValueError):
        DensityMatrix(lay, np.diag([1.5, -0.5]))
    with pytest.raises(ValueError):
        DensityMatrix(lay, np.array([[0.5, 0.5], [0.0, 0.5]]))


def test_model_validation():
    lay = SpaceLayout(1, 1)
    with pytest.raises(ValueError):
        LindbladModel(Operator(lay, np.triu(np.ones((4, 4)))))
    with pytest.raises(ValueError):
        LindbladModel(number(lay), [(-1.0, annihilation(lay))])
