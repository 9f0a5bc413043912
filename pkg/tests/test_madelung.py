import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qhjb.evolve import GaussianPacket, HarmonicGroundState, PlaneWave, Potential, ProductOfTwo, evolve, initial_state
from qhjb.lattice import ComplexField, Grid, ScalarField, gradient, integrate
from qhjb.madelung import (Frames, MaskInvariantError, PhaseUndefinedError, continuity_residual, density,
                           erode, hj_residual, madelung, phase, phase_gradient, phase_history, quantum_potential,
                           reconstruct_phase, support_mask, velocity_field)

PERIODIC = Grid.line(512, 16.0, boundary="periodic")


def _site(g, x):
    return int(np.argmin(np.abs(g.axis(0) - x)))


def test_density_examples():
    g = Grid.line(64, 8.0, boundary="periodic")
    rho = density(initial_state(PlaneWave(2 * np.pi / 8.0), g))
    assert np.allclose(rho.values, 1 / 8.0)
    gs = density(initial_state(HarmonicGroundState(), PERIODIC))
    x = PERIODIC.axis(0)
    assert np.allclose(gs.values, np.exp(-x ** 2) / np.sqrt(np.pi), atol=1e-12)
    assert integrate(gs) == pytest.approx(1.0, abs=1e-12)


def test_velocity_examples():
    g = Grid.line(256, 2 * np.pi * 4, boundary="periodic")
    v = velocity_field(initial_state(PlaneWave(1.0), g))
    # every link of e^{ix} carries exactly h, so the link-based velocity is exact
    assert np.allclose(v.values, 1.0, atol=1e-12)
    assert np.max(np.abs(velocity_field(initial_state(HarmonicGroundState(), PERIODIC)).values)) == 0.0
    packet = velocity_field(initial_state(GaussianPacket(0.0, 1.0, 1.5), PERIODIC))
    assert packet.values[0][_site(PERIODIC, 0.0)] == pytest.approx(1.5, rel=1e-3)


def test_plane_wave_phase_is_linear():
    g = Grid.line(512, 2 * np.pi * 8, boundary="periodic")
    psi = initial_state(PlaneWave(1.0), g)
    S = phase(psi, reference=(0,)).values
    x = g.axis(0)
    assert np.allclose(S - S[0], x - x[0], atol=1e-8)


def test_real_positive_psi_has_constant_phase():
    S = phase(initial_state(HarmonicGroundState(), PERIODIC)).values
    assert np.ptp(S[support_mask(np.abs(initial_state(HarmonicGroundState(), PERIODIC).values) ** 2)]) == 0.0


def test_product_state_phase_is_separable():
    g = Grid.square(64, 12.0, boundary="periodic")
    psi = initial_state(ProductOfTwo(GaussianPacket(0.5, 1.2, 2 * np.pi / 12 * 2),
                                     GaussianPacket(-0.5, 1.0, -2 * np.pi / 12)), g)
    rec = reconstruct_phase(psi)
    S = rec.phase.values
    cross = S[1:, 1:] - S[1:, :-1] - S[:-1, 1:] + S[:-1, :-1]
    inner = rec.mask[1:, 1:] & rec.mask[:-1, :-1] & rec.mask[1:, :-1] & rec.mask[:-1, 1:]
    assert np.max(np.abs(cross[inner])) <= 1e-8
    assert rec.vortex_plaquettes == 0


def test_vortex_is_flagged():
    # clamped: on a torus the net winding must vanish, so the seam would add antivortices
    g = Grid.square(32, 8.0, boundary="clamped")
    x, y = g.coords()
    psi = ComplexField(g, (x + 0.1 + 1j * (y + 0.1)) * np.exp(-(x ** 2 + y ** 2) / 4))
    rec = reconstruct_phase(psi, reference=(4, 16))
    assert rec.vortex_plaquettes == 1
    assert abs(rec.winding.sum()) == 1


def test_winding_plane_wave_on_ring_has_no_seam():
    g = Grid.line(128, 16.0, boundary="periodic")
    psi = initial_state(PlaneWave(2 * np.pi / 16 * 3), g)
    rec = reconstruct_phase(psi)
    assert rec.slope[0] == pytest.approx(2 * np.pi / 16 * 3, abs=1e-12)
    grad = phase_gradient(g, rec.phase.values, rec.slope).values[0]
    assert np.allclose(grad, 2 * np.pi / 16 * 3, atol=1e-10)


def test_disconnected_support_is_rejected():
    g = Grid.line(128, 16.0, boundary="clamped")
    x = g.axis(0)
    psi = ComplexField(g, np.exp(-(x - 4) ** 2) + np.exp(-(x + 4) ** 2))
    with pytest.raises(PhaseUndefinedError):
        phase(psi)
    rec = reconstruct_phase(psi, restrict_to_component=True)
    assert rec.components == 2
    assert rec.mask.sum() < support_mask(np.abs(psi.values) ** 2).sum()


@settings(max_examples=20, deadline=None)
@given(st.floats(-2, 2), st.floats(0.6, 1.5), st.floats(-2, 2))
def test_phase_gradient_matches_velocity(center, width, k):
    psi = initial_state(GaussianPacket(center, width, k), PERIODIC)
    fields = madelung(psi)
    inner = erode(fields.mask, PERIODIC)
    v = velocity_field(psi, mask=fields.mask).values[0]
    assert np.max(np.abs(gradient(fields.S).values[0] - v)[inner]) <= 1e-8


def test_quantum_potential_examples():
    x = PERIODIC.axis(0)
    gs = ScalarField(PERIODIC, np.exp(-x ** 2) / np.sqrt(np.pi))
    gauss = ScalarField(PERIODIC, np.exp(-x ** 2 / 2) / np.sqrt(2 * np.pi))
    i0, i1 = _site(PERIODIC, 0.0), _site(PERIODIC, 1.0)
    for form in ("sqrt", "log_grad", "log_laplacian", "third"):
        q = quantum_potential(gs, form).values
        assert q[i0] == pytest.approx(0.5, abs=2e-3)
        assert q[i1] == pytest.approx(0.0, abs=2e-3)
        assert quantum_potential(gauss, form).values[i0] == pytest.approx(0.25, abs=1e-3)
        assert np.max(np.abs(quantum_potential(ScalarField(PERIODIC, np.full(512, 1 / 16.0)), form).values)) < 1e-12


def test_third_form_is_mean_of_log_forms():
    x = PERIODIC.axis(0)
    rho = ScalarField(PERIODIC, np.exp(-x ** 2 / 2 + 0.3 * np.sin(x)))
    q = {f: quantum_potential(rho, f).values for f in ("log_grad", "log_laplacian", "third")}
    assert np.max(np.abs(q["third"] - 0.5 * (q["log_grad"] + q["log_laplacian"]))) < 1e-12


def test_q_forms_converge_at_second_order():
    from qhjb.acceptance import q_form_disagreement
    gaps = [q_form_disagreement("gaussian", n, 128) for n in (128, 256, 512)]
    orders = np.log2(np.array(gaps[:-1]) / np.array(gaps[1:]))
    assert np.all((orders > 1.9) & (orders < 2.1))


def test_non_positive_density_in_mask_is_fatal():
    g = Grid.line(16, 4.0)
    rho = ScalarField(g, np.linspace(-1, 1, 16))
    with pytest.raises(MaskInvariantError):
        quantum_potential(rho, "sqrt", mask=np.ones(16, dtype=bool))
    with pytest.raises(ValueError):
        quantum_potential(rho, "cubic")


def test_ground_state_residuals_and_order():
    hj = []
    for n, dt in ((128, 0.02), (256, 0.01)):
        g = Grid.line(n, 16.0, boundary="periodic")
        psi = initial_state(HarmonicGroundState(lattice_eigenstate=True), g)
        traj = evolve(psi, Potential.harmonic(), 5 * dt, dt, 1)
        hj.append(hj_residual(traj, 4).masked_max)
        assert continuity_residual(traj, 4).masked_max < 1e-10
    assert 3.5 < hj[0] / hj[1] < 4.5


def test_plane_wave_continuity_vanishes():
    g = Grid.line(128, 16.0, boundary="periodic")
    traj = evolve(initial_state(PlaneWave(2 * np.pi / 16 * 3), g), Potential.free(), 0.03, 0.01, 1)
    assert continuity_residual(traj, 1).masked_max < 1e-10


def test_manufactured_pair_residual_scales_with_h_and_dt():
    # exact classical free-flow pair with the quantum potential of its Gaussian added to V
    res = []
    for n, dt in ((256, 0.02), (512, 0.01)):
        g = Grid.line(n, 24.0, boundary="periodic")
        x = g.axis(0)
        S, rho = [], []
        p = 0.5
        for t in (-dt, 0.0, dt):
            S.append(p * x - p * p * t / 2)
            rho.append(np.exp(-(x - p * t) ** 2 / 2) / np.sqrt(2 * np.pi))
        masks = [support_mask(r) for r in rho]
        fr = Frames(g, tuple(S), tuple(rho), dt, erode(np.logical_and.reduce(masks), g))
        q_exact = 0.25 - (x ** 2) / 8
        res.append(hj_residual(fr, V=-q_exact).masked_max)
        assert continuity_residual(fr).masked_max < 5 * (g.spacing[0] ** 2 + dt ** 2)
    assert res[1] < res[0] / 3


def test_residual_rejects_trajectory_ends():
    g = Grid.line(64, 16.0, boundary="periodic")
    traj = evolve(initial_state(HarmonicGroundState(), g), Potential.harmonic(), 0.02, 0.01, 1)
    with pytest.raises(ValueError):
        hj_residual(traj, 0)
    with pytest.raises(ValueError):
        continuity_residual(traj, 2)


def test_phase_history_is_time_continuous():
    g = Grid.line(256, 16.0, boundary="periodic")
    psi = initial_state(HarmonicGroundState(lattice_eigenstate=True), g)
    traj = evolve(psi, Potential.harmonic(), 20.0, 0.1, 10)
    phases, masks, _ = phase_history(traj)
    centre = _site(g, 0.0)
    values = np.array([p[centre] for p in phases])
    # the phase keeps decreasing past -pi instead of wrapping
    assert values[-1] < -np.pi
    assert np.all(np.diff(values) < 0)
