import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qhjb.evolve import (GaussianPacket, HarmonicGroundState, PlaneWave, Potential, ProductOfTwo, energy,
                         evolve, hamiltonian, initial_state, initial_state_from_dict, step)
from qhjb.lattice import ComplexField, Grid
from qhjb.madelung import density


def test_potential_values_and_round_trip():
    g = Grid.line(16, 4.0)
    h = Potential.harmonic(mass=2.0, omega=0.5)
    assert np.allclose(h.values(g), 0.5 * 2.0 * 0.25 * g.axis(0) ** 2)
    assert Potential.from_dict(h.to_dict()) == h
    pair = Potential.coupled_pair(Potential.harmonic(), 0.3)
    assert Potential.from_dict(pair.to_dict()) == pair
    with pytest.raises(ValueError):
        pair.values(g)
    with pytest.raises(ValueError):
        Potential("spring")


def test_initial_states_are_normalized():
    g = Grid.line(128, 16.0, boundary="periodic")
    for spec in (GaussianPacket(1.0, 0.7, 2.0), HarmonicGroundState(), PlaneWave(2 * np.pi / 16 * 3)):
        assert initial_state(spec, g).norm() == pytest.approx(1.0, abs=1e-13)
    g2 = Grid.square(32, 8.0, boundary="periodic")
    prod = initial_state(ProductOfTwo(GaussianPacket(0.0, 1.0), GaussianPacket(1.0, 0.5)), g2)
    assert prod.norm() == pytest.approx(1.0, abs=1e-13)


def test_incommensurate_plane_wave_rejected():
    with pytest.raises(ValueError):
        initial_state(PlaneWave(1.0), Grid.line(64, 16.0, boundary="periodic"))


def test_initial_state_from_dict():
    assert initial_state_from_dict({"kind": "gaussianPacket", "center": 1.0}) == GaussianPacket(center=1.0)
    with pytest.raises(ValueError):
        initial_state_from_dict({"kind": "soliton"})


def test_plane_wave_phase_matches_discrete_dispersion():
    # oracle: e^{ikx} is an eigenvector of the lattice Hamiltonian; the Cayley step
    # multiplies it by exp(-2i atan(E dt / 2 hbar)) with E = hbar^2 sin^2(kh) / (2 m h^2)
    g = Grid.line(64, 16.0, boundary="periodic")
    k = 2 * np.pi / 16.0 * 5
    h = g.spacing[0]
    psi = initial_state(PlaneWave(k), g)
    dt = 0.05
    out = step(psi, Potential.free(), dt)
    E = np.sin(k * h) ** 2 / (2 * h * h)
    assert np.allclose(out.values, psi.values * np.exp(-2j * np.arctan(E * dt / 2)), atol=1e-13)


@settings(max_examples=15, deadline=None)
@given(st.floats(-3, 3), st.floats(0.5, 2.0), st.floats(-2, 2), st.floats(0.001, 0.05))
def test_norm_is_conserved(center, width, k, dt):
    g = Grid.line(128, 20.0, boundary="clamped")
    psi = initial_state(GaussianPacket(center, width, k), g)
    out = evolve(psi, Potential.harmonic(), 10 * dt, dt, 5)
    assert max(abs(n - 1.0) for n in out.norms) < 1e-10


def test_backward_step_inverts_forward_step():
    g = Grid.line(128, 16.0, boundary="periodic")
    psi = initial_state(GaussianPacket(0.5, 1.0, 1.0), g)
    there = step(psi, Potential.harmonic(), 0.02)
    back = step(there, Potential.harmonic(), -0.02)
    assert np.allclose(back.values, psi.values, atol=1e-12)


def test_lattice_ground_state_is_stationary():
    g = Grid.line(256, 16.0, boundary="periodic")
    psi = initial_state(HarmonicGroundState(lattice_eigenstate=True), g)
    traj = evolve(psi, Potential.harmonic(), 2.0, 0.01, 50)
    drift = np.max(np.abs(density(traj.psis[-1]).values - density(psi).values))
    assert drift < 1e-12
    # close to the analytic ground state energy hbar omega / 2
    assert energy(psi, Potential.harmonic()) == pytest.approx(0.5, abs=1e-3)


def test_lattice_ground_state_is_reproducible():
    g = Grid.line(128, 16.0, boundary="periodic")
    a = initial_state(HarmonicGroundState(lattice_eigenstate=True), g)
    b = initial_state(HarmonicGroundState(lattice_eigenstate=True), g)
    assert a.values.tobytes() == b.values.tobytes()


def test_hamiltonian_is_hermitian_2d():
    g = Grid.square(16, 4.0)
    H = hamiltonian(g, Potential.coupled_pair(Potential.harmonic(), 0.2))
    assert abs(H - H.conj().T).max() < 1e-12


def test_two_dimensional_norm_and_manifest():
    g = Grid.square(32, 8.0, boundary="periodic")
    psi = initial_state(GaussianPacket((0.5, -0.5), (1.0, 1.0), (0.0, 0.0)), g)
    traj = evolve(psi, Potential.coupled_pair(Potential.harmonic(), 0.1), 0.5, 0.05, 5)
    assert len(traj) == 3
    assert max(abs(n - 1) for n in traj.norms) < 1e-10
    man = traj.manifest()
    assert man["grid"]["points"] == [32, 32] and man["snapshotTimes"][-1] == pytest.approx(0.5)


def test_evolve_argument_checks():
    g = Grid.line(16, 4.0)
    psi = ComplexField(g, np.ones(16))
    with pytest.raises(ValueError):
        evolve(psi, Potential.free(), 1.0, 0.0)
    with pytest.raises(ValueError):
        evolve(psi, Potential.free(), -1.0, 0.1)


def test_analytic_ground_state_profile():
    g = Grid.line(256, 16.0, boundary="periodic", origin=-8.0)
    rho = np.abs(initial_state(HarmonicGroundState(), g).values) ** 2
    i0 = int(np.argmin(np.abs(g.axis(0))))
    i1 = int(np.argmin(np.abs(g.axis(0) - 1.0)))
    assert rho[i0] / rho[i1] == pytest.approx(np.e, abs=1e-10)


def test_ground_state_phase_advance():
    g = Grid.line(512, 16.0, boundary="periodic")
    psi = initial_state(HarmonicGroundState(lattice_eigenstate=True), g)
    dt = 0.01
    out = step(psi, Potential.harmonic(), dt)
    i = int(np.argmax(np.abs(psi.values)))
    advance = np.angle(out.values[i] / psi.values[i])
    # oracle: the Cayley step rotates an eigenstate by -2 atan(E dt / 2); E is the lattice
    # ground energy, which approaches hbar omega / 2 as h -> 0
    E = energy(psi, Potential.harmonic())
    assert advance == pytest.approx(-2 * np.arctan(E * dt / 2), abs=1e-12)
    assert advance == pytest.approx(-0.5 * dt, rel=1e-3)
    assert np.max(np.abs(np.abs(out.values) ** 2 - np.abs(psi.values) ** 2)) < 1e-8


def test_zero_horizon_and_energy_drift():
    g = Grid.line(128, 16.0, boundary="periodic")
    psi = initial_state(GaussianPacket(1.0, 0.8, 0.5), g)
    assert len(evolve(psi, Potential.harmonic(), 0.0, 0.1)) == 1
    traj = evolve(psi, Potential.harmonic(), 10.0, 0.01, 100)
    e = [energy(p, Potential.harmonic()) for p in traj.psis]
    assert max(abs(x - e[0]) for x in e) <= 1e-6 * abs(e[0])


def test_time_reversal_over_many_steps():
    g = Grid.line(128, 16.0, boundary="clamped")
    psi0 = initial_state(GaussianPacket(-1.0, 0.8, 1.5), g)
    psi = psi0
    for _ in range(200):
        psi = step(psi, Potential.harmonic(), 0.01)
    for _ in range(200):
        psi = step(psi, Potential.harmonic(), -0.01)
    assert np.max(np.abs(psi.values - psi0.values)) < 1e-8


def test_second_order_in_time_on_coherent_state():
    g = Grid.line(256, 16.0, boundary="periodic")
    psi = initial_state(GaussianPacket(1.0, np.sqrt(0.5), 0.0), g)
    T = 1.0
    ref = evolve(psi, Potential.harmonic(), T, 0.1 / 64, 10_000).psis[-1].values
    errs = [np.max(np.abs(evolve(psi, Potential.harmonic(), T, dt, 10_000).psis[-1].values - ref))
            for dt in (0.1, 0.05)]
    assert 3.5 <= errs[0] / errs[1] <= 4.5


def _split_step_free(psi0: np.ndarray, x: np.ndarray, T: float, steps: int) -> np.ndarray:
    # independent reference: exact free propagation in Fourier space
    k = 2 * np.pi * np.fft.fftfreq(x.size, d=x[1] - x[0])
    return np.fft.ifft(np.exp(-0.5j * k ** 2 * T) * np.fft.fft(psi0))


def test_free_packet_width_against_split_step_reference():
    g = Grid.line(2048, 64.0, boundary="periodic")
    x = g.axis(0)
    sigma, t = 1.0, 2.0
    psi = initial_state(GaussianPacket(0.0, sigma, 0.0), g)
    ours = np.abs(evolve(psi, Potential.free(), t, 0.002, 10_000).psis[-1].values) ** 2
    ref = np.abs(_split_step_free(psi.values, x, t, 1)) ** 2

    def width2(r):
        r = r / r.sum()
        return float(np.sum(r * x ** 2) - np.sum(r * x) ** 2)

    golden = width2(ref)
    assert golden == pytest.approx(sigma ** 2 + (t / (2 * sigma)) ** 2, rel=1e-6)
    assert width2(ours) == pytest.approx(golden, rel=1e-3)
