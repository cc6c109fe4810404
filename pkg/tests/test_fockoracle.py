import math

import numpy as np
import pytest

from noiseavalanche import fockoracle as fo
from noiseavalanche import moments
from noiseavalanche import montecarlo as mc
from noiseavalanche.errors import CutoffTailTooLarge, DimensionTooLarge, PositivityViolation
from noiseavalanche.model import ChainSpec, InitialState, TimeGrid, coupling_matrix


def test_single_mode_ladder():
    ops = fo.build_operators(fo.FockBasis(1, 1))
    assert np.array_equal(ops.a[0].toarray(), [[0, 1], [0, 0]])


def test_number_operator_diagonal():
    basis = fo.FockBasis(2, 4)
    ops = fo.build_operators(basis)
    for j in range(2):
        num = (ops.adag[j] @ ops.a[j]).toarray()
        assert np.allclose(num, np.diag(basis.occupations[:, j]))


def test_commutator_defect_only_on_cutoff():
    basis = fo.FockBasis(1, 5, total=False)
    ops = fo.build_operators(basis)
    comm = (ops.a[0] @ ops.adag[0] - ops.adag[0] @ ops.a[0]).toarray()
    defect = comm - np.eye(basis.dim)
    assert np.allclose(defect[:-1], 0)
    assert not np.allclose(defect[-1], 0)


def test_hop_is_exact_in_total_basis():
    basis = fo.FockBasis(3, 4)
    ops = fo.build_operators(basis)
    hop = fo._hop(basis, 0, 1).toarray()
    assert np.allclose(hop, (ops.adag[0] @ ops.a[1]).toarray())


def test_single_photon_rabi():
    basis = fo.FockBasis(2, 1)
    v, grid = 1.3, TimeGrid(2.0, 40)
    psi0, _ = fo.product_state(basis, [0, 0], fock_modes=(0,))
    traj = fo.evolve_schrodinger(basis, np.full((40, 1), v), psi0, grid)
    n, _, _ = fo.state_expectations(traj, basis)
    assert np.allclose(n[:, 1], np.sin(v * grid.times) ** 2, atol=1e-12)


def test_uncoupled_state_unchanged():
    basis = fo.FockBasis(2, 8)
    psi0, _ = fo.product_state(basis, [0.5, 0.5])
    traj = fo.evolve_schrodinger(basis, np.zeros((5, 1)), psi0, TimeGrid(1.0, 5))
    assert np.allclose(traj[-1], psi0)


def test_random_couplings_conserve_norm_and_photons(rng):
    basis = fo.FockBasis(3, 8)
    psi0, _ = fo.product_state(basis, [0.7, 0.2j, 0], fock_modes=(2,))
    c = rng.normal(size=(30, 2)) * 3 + 1j * rng.normal(size=(30, 2)) * 3
    traj = fo.evolve_schrodinger(basis, c, psi0, TimeGrid(1.0, 30))
    norms = np.sum(np.abs(traj) ** 2, axis=1)
    n, _, _ = fo.state_expectations(traj, basis)
    assert np.max(np.abs(norms - 1)) < 1e-8
    assert np.max(np.abs(n.sum(1) - n[0].sum())) < 1e-8


def test_cutoff_tail_aborts():
    basis = fo.FockBasis(2, 3, total=False)
    psi0, tail = fo.product_state(basis, [1.5, 0])
    assert tail > 1e-2
    with pytest.raises(CutoffTailTooLarge):
        fo.evolve_schrodinger(basis, np.ones((4, 1)), psi0, TimeGrid(1.0, 4))


@pytest.mark.parametrize(
    "state, n, g2",
    [("one", 1.0, 0.0), ("two", 2.0, 0.5)],
)
def test_fock_statistics(state, n, g2):
    basis = fo.FockBasis(1, 4)
    psi = np.zeros(basis.dim, complex)
    psi[basis.index[(1,) if state == "one" else (2,)]] = 1
    nn, G, g = fo.expectations(psi, basis)
    assert nn[0] == pytest.approx(n)
    if g2 == 0:
        assert G[0] == 0 and g[0] == 0
    else:
        assert g[0] == pytest.approx(g2)


def test_truncated_coherent_statistics():
    alpha = 0.9
    basis = fo.FockBasis(1, max(8, math.ceil(8 * alpha**2)) + 6)
    psi, _ = fo.product_state(basis, [alpha])
    _, _, g = fo.expectations(fo.DensityMatrix.pure(psi), basis)
    assert g[0] == pytest.approx(1.0, abs=1e-4)


def test_density_checks():
    rho = np.diag([0.6, 0.5, -0.1]).astype(complex)
    with pytest.raises(PositivityViolation):
        fo.DensityMatrix(rho).check()


def test_lindblad_trivial_without_noise():
    spec = ChainSpec(2, [0.0], [0.0], [0.0])
    basis = fo.FockBasis(2, 4)
    psi, _ = fo.product_state(basis, [0.6, 0.3])
    rho0 = fo.DensityMatrix.pure(psi)
    traj = fo.evolve_lindblad(spec, rho0, TimeGrid(1.0, 5), basis)
    assert np.allclose(traj[-1], rho0.rho, atol=1e-12)


def test_lindblad_size_limit():
    spec = ChainSpec.uniform(4, 1.0)
    basis = fo.FockBasis(4, 2)
    with pytest.raises(DimensionTooLarge):
        fo.evolve_lindblad(spec, fo.DensityMatrix(np.eye(basis.dim) / basis.dim), TimeGrid(1.0, 2), basis)


def test_lindblad_jump_near_three():
    spec = ChainSpec(2, [0.0], [1.0], [1.0])
    basis = fo.FockBasis(2, 6)
    psi, _ = fo.product_state(basis, [1.0, 0])
    traj = fo.evolve_lindblad(spec, fo.DensityMatrix.pure(psi), TimeGrid(1e-3, 1), basis)
    _, _, g2 = fo.density_expectations(traj[-1], basis)
    assert g2[1] == pytest.approx(3.0, abs=0.02)


def test_lindblad_matches_second_order_moments():
    spec = ChainSpec(2, [1.5], [1.0], [0.0])
    basis = fo.FockBasis(2, 10)
    init = InitialState([0.8, 0.0])
    psi, _ = fo.product_state(basis, init.coherent_amplitudes)
    grid = TimeGrid(2.0, 20)
    traj = fo.evolve_lindblad(spec, fo.DensityMatrix.pure(psi), grid, basis)
    ops = fo.build_operators(basis)
    system = moments.build_two_mode_second(spec)
    ref = moments.integrate(system, moments.init_moments(system, init), grid)
    for cre, ann in [((0,), (0,)), ((0,), (1,))]:
        op = (ops.adag[cre[0]] @ ops.a[ann[0]]).toarray()
        got = np.einsum("ij,tji->t", op, traj)
        assert np.max(np.abs(got - ref.column(cre, ann))) < 1e-6


def test_lindblad_trace_and_photons_conserved():
    spec = ChainSpec(3, [0.5, 0.0], [1.0, 0.6], [0.3, 0.0])
    basis = fo.FockBasis(3, 6)
    psi, _ = fo.product_state(basis, [0.7, 0, 0], fock_modes=(2,))
    traj = fo.evolve_lindblad(spec, fo.DensityMatrix.pure(psi), TimeGrid(2.0, 10), basis)
    tr = np.trace(traj, axis1=1, axis2=2).real
    n, _, _ = fo.density_expectations(traj, basis)
    assert np.max(np.abs(tr - 1)) < 1e-8
    assert np.max(np.abs(n.sum(1) - n[0].sum())) < 1e-8


def test_closed_form_observables_match_schrodinger(rng):
    basis = fo.FockBasis(3, 10)
    init = InitialState([0.7, 0.0, 0.0], fock_mode=2)
    grid = TimeGrid(1.0, 30)
    noise = mc.NoiseSpec([0.0, 0.0], 3.0, 1.0, grid.dt)
    psi0, _ = fo.product_state(basis, init.coherent_amplitudes, (2,))
    for k in range(3):
        beta, s = mc.run_realization(noise, init, grid, k, base_seed=9)
        n_cf, G_cf = mc.observables_of_realization(beta, s)
        c = mc.sample_couplings(noise, mc.realization_rng(9, k), grid.n_steps)
        traj = fo.evolve_schrodinger(basis, c, psi0, grid)
        n, G, _ = fo.state_expectations(traj, basis)
        assert np.max(np.abs(n - n_cf)) < 1e-6
        assert np.max(np.abs(G - G_cf)) < 1e-6


def averaged_channel(basis, gamma, dt, points=12):
    """Exact noise average of one interval of circular noise, as a superoperator."""
    sigma = math.sqrt(gamma / dt)  # circular noise with rate gamma in the master convention
    x, w = np.polynomial.hermite_e.hermegauss(points)
    w = w / w.sum()
    d = basis.dim
    chan = np.zeros((d * d, d * d), complex)
    for xi, wi in zip(x, w):
        for yi, wj in zip(x, w):
            h = fo.many_body_hamiltonian(basis, [sigma * (xi + 1j * yi)]).toarray()
            e, u = np.linalg.eigh(h)
            step = (u * np.exp(-1j * e * dt)) @ u.conj().T
            chan += wi * wj * np.kron(step, step.conj())
    return chan


def test_ensemble_average_converges_to_master_equation():
    gamma, t = 1.0, 0.5
    basis = fo.FockBasis(2, 4)
    psi, _ = fo.product_state(basis, [0.6, 0.0])
    rho0 = np.outer(psi, psi.conj())
    spec = ChainSpec(2, [0.0], [gamma], [0.0])
    exact = fo.evolve_lindblad(spec, fo.DensityMatrix(rho0), TimeGrid(t, 1), basis)[-1]
    errors = []
    for steps in (10, 20, 40):
        chan = averaged_channel(basis, gamma, t / steps)
        rho = (np.linalg.matrix_power(chan, steps) @ rho0.reshape(-1)).reshape(basis.dim, basis.dim)
        errors.append(np.max(np.abs(rho - exact)))
    ratios = np.array(errors[:-1]) / np.array(errors[1:])
    assert np.all(np.abs(ratios - 2.0) < 0.2), ratios
