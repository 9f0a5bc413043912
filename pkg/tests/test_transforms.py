import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from qhjb.evolve import GaussianPacket, HarmonicGroundState, Potential, evolve, initial_state
from qhjb.lattice import Grid, ScalarField
from qhjb.madelung import Frames, continuity_residual, hj_residual, support_mask
from qhjb.transforms import (FORWARD, RETRO, TransformSpec, classical_transform, density_flow,
                             fokker_planck_residual, free_flow_frames, half_q_duality_check,
                             harmonic_flow_frames, hj_like, mirrored_case, nelson_average,
                             nelson_residuals, transform_frames, transform_phase,
                             transformed_hj_residual, untransform_frames)

GRID = Grid.line(256, 16.0, boundary="periodic")


@pytest.fixture(scope="module")
def packet_frames():
    psi = initial_state(GaussianPacket(-1.0, 1.0, 1.0), GRID)
    traj = evolve(psi, Potential.harmonic(), 0.2, 0.01, 1)
    return Frames.from_trajectory(traj, 10)


def test_spec_validation():
    with pytest.raises(ValueError):
        TransformSpec("sideways", 1.0)
    with pytest.raises(ValueError):
        TransformSpec(FORWARD, 0.0)
    spec = TransformSpec(FORWARD, 0.5)
    assert spec.signed_k == 0.5 and spec.inverse().signed_k == -0.5
    assert spec.derivative_kind == "retrocausal"
    assert spec.inverse().derivative_kind == "forwardCausal"


def test_transform_adds_half_k_log_rho():
    x = GRID.axis(0)
    rho = ScalarField(GRID, np.exp(-x ** 2) / np.sqrt(np.pi))
    S = ScalarField(GRID, 0.3 * x)
    out = transform_phase(S, rho, TransformSpec(RETRO, 2.0)).values
    mask = support_mask(rho)
    assert np.allclose(out[mask], (0.3 * x + np.log(np.sqrt(np.pi)) + x ** 2)[mask], atol=1e-12)
    assert np.all(out[~mask] == 0.0)


@settings(max_examples=40, deadline=None)
@given(S=arrays(float, 64, elements=st.floats(-50, 50)),
       logr=arrays(float, 64, elements=st.floats(-10, 0)),
       k=st.floats(0.01, 5.0), forward=st.booleans())
def test_round_trip_restores_phase(S, logr, k, forward):
    g = Grid.line(64, 8.0, boundary="periodic")
    rho = np.exp(logr)
    fr = Frames(g, (S, S, S), (rho, rho, rho), 0.1, np.ones(64, bool))
    spec = TransformSpec(FORWARD if forward else RETRO, k)
    back = untransform_frames(transform_frames(fr, spec))
    for a in back.S:
        assert np.max(np.abs(a - S)) <= 1e-12 * max(1.0, np.max(np.abs(S)) + k * 10)


def test_forward_and_retro_fokker_planck_sum_to_twice_continuity(packet_frames):
    fwd = fokker_planck_residual(transform_frames(packet_frames, TransformSpec(FORWARD, 1.0)),
                                 TransformSpec(FORWARD, 1.0))
    ret = fokker_planck_residual(transform_frames(packet_frames, TransformSpec(RETRO, 1.0)),
                                 TransformSpec(RETRO, 1.0))
    cont = continuity_residual(packet_frames)
    gap = np.where(cont.mask, fwd.residual.values + ret.residual.values - 2 * cont.residual.values, 0)
    assert np.max(np.abs(gap)) <= 1e-10


def test_log_form_transformed_hj_tracks_untransformed(packet_frames):
    V = Potential.harmonic()
    base = hj_residual(packet_frames, V=V, q_form="log_laplacian").masked_max
    for spec in (TransformSpec(FORWARD, 1.0), TransformSpec(RETRO, 1.0)):
        tf = transform_frames(packet_frames, spec)
        r = transformed_hj_residual(tf, spec, V=V, q_form="log_laplacian").masked_max
        assert r <= 10 * base + 1e-12


def test_transformed_residual_accepts_trajectory():
    traj = evolve(initial_state(HarmonicGroundState(lattice_eigenstate=True), GRID), Potential.harmonic(),
                  0.03, 0.01, 1)
    spec = TransformSpec(FORWARD, 1.0)
    r = transformed_hj_residual(traj, spec, index=1, q_form="log_laplacian")
    via_frames = transformed_hj_residual(transform_frames(Frames.from_trajectory(traj, 1), spec), spec,
                                         V=traj.potential, q_form="log_laplacian")
    assert r.masked_max == via_frames.masked_max
    assert r.masked_max <= 10 * hj_residual(traj, 1, q_form="log_laplacian").masked_max


def test_nelson_average_recovers_phase(packet_frames):
    f = transform_frames(packet_frames, TransformSpec(FORWARD, 1.0))
    r = transform_frames(packet_frames, TransformSpec(RETRO, 1.0))
    avg = nelson_average(f, r)
    for a, b in zip(avg.S, packet_frames.S):
        m = packet_frames.mask
        assert np.max(np.abs(a - b)[m]) <= 1e-12
    reports = nelson_residuals(r, f, V=Potential.harmonic())
    direct = continuity_residual(packet_frames).masked_max
    assert reports["continuity"].masked_max == pytest.approx(direct, rel=1e-9)


def test_nelson_rejects_bad_pairs(packet_frames):
    f = transform_frames(packet_frames, TransformSpec(FORWARD, 1.0))
    f2 = transform_frames(packet_frames, TransformSpec(FORWARD, 1.0))
    r2 = transform_frames(packet_frames, TransformSpec(RETRO, 2.0))
    with pytest.raises(ValueError):
        nelson_average(f, f2)
    with pytest.raises(ValueError):
        nelson_average(f, r2)
    plain = transform_frames(packet_frames, TransformSpec(RETRO, 1.0))
    plain.spec = None
    with pytest.raises(ValueError):
        nelson_average(f, plain)


def test_diffusing_free_flow_obeys_fokker_planck():
    g = Grid.line(1024, 60.0, boundary="clamped")
    for D in (0.5, -0.5):
        fr = free_flow_frames(g, 0.5, 0.005, momentum=0.25, width=3.0, diffusion=D)
        r = density_flow(fr, D)
        assert np.max(np.abs(r[fr.mask])) < 1e-5
        wrong = density_flow(fr, -D)
        assert np.max(np.abs(wrong[fr.mask])) > 1e-4


def test_harmonic_flow_is_classical():
    g = Grid.line(1024, 20.0, boundary="clamped")
    fr = harmonic_flow_frames(g, 0.4, 0.002, omega=1.0, width=1.0)
    V = Potential.harmonic()
    assert np.max(np.abs(hj_like(fr, V, 0.0, 0.0, "sqrt")[fr.mask])) < 1e-4
    assert np.max(np.abs(density_flow(fr, 0.0)[fr.mask])) < 1e-4
    with pytest.raises(ValueError):
        harmonic_flow_frames(g, 1.6, 0.002)


def test_classical_cases_three_and_four():
    g = Grid.line(512, 40.0, boundary="clamped")
    fr = free_flow_frames(g, 0.5, 0.01, momentum=0.25, width=3.0)
    for case in (3, 4):
        res = classical_transform(fr, case)
        for name in ("targetHJ", "targetDensity", "targetAcceleration"):
            assert res.reports[name].masked_max <= 1e-5, (case, name)
    mirror = mirrored_case(fr, 3)
    direct = classical_transform(fr, 4)
    for a, b in zip(mirror.frames.S, direct.frames.S):
        assert np.array_equal(a, b)


def test_classical_case_arguments():
    fr = free_flow_frames(Grid.line(128, 40.0, boundary="clamped"), 0.5, 0.01)
    with pytest.raises(ValueError):
        classical_transform(fr, 5)
    with pytest.raises(ValueError):
        classical_transform(fr, 3, k=-1.0)
    with pytest.raises(ValueError):
        free_flow_frames(Grid.square(16, 4.0), 0.5, 0.01)
    with pytest.raises(ValueError):
        free_flow_frames(Grid.line(64, 8.0), 0.0, 0.1, width=0.1, diffusion=-1.0)


def test_half_q_bookkeeping_on_ground_state():
    g = Grid.line(512, 16.0, boundary="periodic")
    traj = evolve(initial_state(HarmonicGroundState(lattice_eigenstate=True), g), Potential.harmonic(),
                  0.03, 0.01, 1)
    rep = half_q_duality_check(traj, index=1)
    d = rep.to_dict()
    # the reverse-transformed classical residual equals -Q for a quantum state
    assert d["classicalOverQ"] == pytest.approx(1.0, abs=0.05)
    plain = hj_residual(traj, 1, q_form="log_laplacian").masked_max
    assert rep.reports["fullQ_HJ"].masked_max <= 10 * plain
    assert rep.reports["halfQ_HJ"].masked_l2 == pytest.approx(d["maskedQ"]["l2"], rel=0.05)
    assert rep.reports["continuity"].masked_max < 1e-8
