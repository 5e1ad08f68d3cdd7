import math

import numpy as np
import pytest

from tdse_stability.potentials import ConstantPotential, DriftProfile, inverse_power_regularized, moving_bump
from tdse_stability.propagator import (
    EvolutionError,
    EvolutionState,
    evolve,
    free_propagate_exact,
    propagate,
    step_count,
    strang_step,
)
from tdse_stability.spectral import (
    FREQUENCY,
    POSITION,
    BandWindow,
    KineticOperator,
    WaveFunction,
    band_project,
    gaussian,
    inner,
    make_grid,
    norm_l2,
    normalized,
    plane_wave,
    transform,
)

ZERO = ConstantPotential(0.0)
BUMP = moving_bump(0.1, 2.0, DriftProfile("arctan_drift", (0.5,)))


@pytest.fixture(scope="module")
def grid():
    return make_grid(1, 256, 40.0)


@pytest.fixture(scope="module")
def packet(grid):
    return gaussian(grid, -3.0, 1.5, 1.0)


def max_diff(a, b):
    return np.max(np.abs(transform(a, POSITION).amplitudes - transform(b, POSITION).amplitudes))


class TestFreeExact:
    def test_zero_time_identity(self, grid, packet):
        K = KineticOperator(grid, 1.0, 0.5)
        assert max_diff(free_propagate_exact(packet, K, 0.0), packet) < 1e-15

    def test_unit_mode_phase(self):
        g = make_grid(1, 32, 2 * math.pi)
        K = KineticOperator(g, 1.0, 0.5)
        pw = plane_wave(g, 1)
        out = free_propagate_exact(pw, K, math.pi)
        np.testing.assert_allclose(out.amplitudes, -pw.amplitudes, atol=1e-14)

    @pytest.mark.parametrize("theta", [0.5, 1.0, 1.7])
    def test_unitary(self, grid, packet, theta):
        K = KineticOperator(grid, theta, 0.8)
        assert norm_l2(free_propagate_exact(packet, K, 3.3)) == pytest.approx(norm_l2(packet), rel=1e-13)

    @pytest.mark.parametrize("t", [0.5, 2.0, 4.0])
    def test_gaussian_spreading(self, t):
        # position variance of a free Gaussian: w^2/2 + t^2 / (2 m^2 w^2)
        g = make_grid(1, 1024, 120.0)
        w, m = 1.0, 0.5
        K = KineticOperator(g, 1.0, m)
        u = free_propagate_exact(gaussian(g, 0.0, w), K, t).amplitudes
        x = g.coords[0]
        var = np.sum(x * x * np.abs(u) ** 2) * g.cell_volume
        assert var == pytest.approx(w * w / 2 + t * t / (2 * m * m * w * w), abs=1e-8)

    def test_frequency_representation_preserved(self, grid, packet):
        K = KineticOperator(grid, 1.0, 0.5)
        hat = transform(packet, FREQUENCY)
        assert free_propagate_exact(hat, K, 1.0).representation == FREQUENCY


class TestStrangStep:
    def test_free_step_matches_exact(self, grid, packet):
        K = KineticOperator(grid, 1.3, 0.5)
        st = strang_step(EvolutionState(0.0, packet, 0.01), K, ZERO)
        assert st.time == pytest.approx(0.01) and st.step_count == 1
        assert max_diff(st.state, free_propagate_exact(packet, K, 0.01)) < 1e-14

    def test_local_error_third_order(self, grid, packet):
        # Richardson oracle: two half steps vs one full step differ by O(dt^3)
        V = inverse_power_regularized(0.5, 1.0, 1.0)
        K = KineticOperator(grid, 1.0, 0.5)
        diffs = []
        for dt in (0.04, 0.02, 0.01):
            full = strang_step(EvolutionState(0.0, packet, dt), K, V).state
            h = strang_step(strang_step(EvolutionState(0.0, packet, dt / 2), K, V), K, V).state
            diffs.append(max_diff(full, h))
        ratios = [diffs[i] / diffs[i + 1] for i in range(2)]
        for r in ratios:
            assert r == pytest.approx(8.0, rel=0.1)

    def test_rejects_nonpositive_dt(self, packet):
        with pytest.raises(ValueError):
            EvolutionState(0.0, packet, 0.0)

    def test_fused_loop_equals_step_loop(self, grid, packet):
        K = KineticOperator(grid, 1.0, 0.5)
        st = EvolutionState(0.0, packet, 0.01)
        for _ in range(20):
            st = strang_step(st, K, BUMP)
        fused = propagate(packet, K, BUMP, 0.0, 0.2, 0.01)
        assert max_diff(st.state, fused) < 1e-13


class TestEvolve:
    def test_zero_duration_identity(self, grid, packet):
        K = KineticOperator(grid, 1.0, 0.5)
        tr = evolve(packet, K, BUMP, 1.0, 1.0, 0.01, observer=lambda t, u: t)
        assert tr.rows == [1.0] and tr.steps == 0
        assert max_diff(tr.final, packet) == 0.0

    def test_composition(self, grid, packet):
        K = KineticOperator(grid, 1.0, 0.5)
        whole = propagate(packet, K, BUMP, 0.0, 2.0, 0.01)
        mid = propagate(packet, K, BUMP, 0.0, 0.7, 0.01)
        split = propagate(mid, K, BUMP, 0.7, 2.0, 0.01)
        assert max_diff(whole, split) <= 1e-12

    def test_sampling_independent_of_stride(self, grid, packet):
        K = KineticOperator(grid, 1.0, 0.5)
        a = evolve(packet, K, BUMP, 0.0, 1.0, 0.01, sample_stride=1, observer=lambda t, u: u)
        b = evolve(packet, K, BUMP, 0.0, 1.0, 0.01, sample_stride=7, observer=lambda t, u: u)
        assert len(a.times) == 101
        assert b.times[-1] == pytest.approx(1.0) and len(b.times) == 16
        assert max_diff(a.final, b.final) < 1e-13

    def test_time_reversal(self, grid, packet):
        # static real V: conj . U(T) . conj = U(T)^-1, so the round trip is the identity
        V = inverse_power_regularized(0.5, 1.0, 1.0)
        K = KineticOperator(grid, 1.0, 0.5)
        u = propagate(packet, K, V, 0.0, 3.0, 0.005)
        back = propagate(WaveFunction(grid, u.amplitudes.conj()), K, V, 0.0, 3.0, 0.005)
        assert np.max(np.abs(back.amplitudes.conj() - packet.amplitudes)) <= 1e-10

    def test_unitarity_long_run(self, grid):
        K = KineticOperator(grid, 1.0, 0.5)
        phi = normalized(band_project(gaussian(grid, -5.0, 2.0, 1.5), BandWindow(0.5, 3.0)))
        norms = []
        evolve(phi, K, BUMP, 0.0, 10.0, 1e-3, sample_stride=500, observer=lambda t, u: norms.append(norm_l2(u)))
        assert len(norms) == 21
        assert max(abs(n - 1.0) for n in norms) <= 1e-11

    @pytest.mark.parametrize("theta", [0.5, 0.75, 1.0, 1.5])
    def test_free_evolve_matches_exact(self, grid, packet, theta):
        K = KineticOperator(grid, theta, 0.5)
        u = propagate(packet, K, ZERO, 0.0, 2.0, 0.01)
        assert max_diff(u, free_propagate_exact(packet, K, 2.0)) <= 1e-12

    def test_second_order_convergence(self, grid, packet):
        K = KineticOperator(grid, 1.0, 0.5)
        finals = [propagate(packet, K, BUMP, 0.0, 2.0, dt) for dt in (0.02, 0.01, 0.005)]
        d1, d2 = norm_l2(WaveFunction(grid, finals[0].amplitudes - finals[1].amplitudes)), \
            norm_l2(WaveFunction(grid, finals[1].amplitudes - finals[2].amplitudes))
        assert math.log2(d1 / d2) == pytest.approx(2.0, abs=0.1)

    def test_nonfinite_state_raises(self, grid, packet):
        K = KineticOperator(grid, 1.0, 0.5)
        V = inverse_power_regularized(1e300, 50.0, 1e-10)
        with pytest.raises(FloatingPointError):
            propagate(packet, K, V, 0.0, 0.1, 0.01)

    def test_nonfinite_initial_state(self, grid, packet):
        K = KineticOperator(grid, 1.0, 0.5)
        bad = packet.amplitudes.copy()
        bad[3] = np.nan
        with pytest.raises(EvolutionError):
            evolve(WaveFunction(grid, bad), K, ZERO, 0.0, 0.1, 0.01)

    def test_expectation_of_constant_potential_is_phase(self, grid, packet):
        K = KineticOperator(grid, 1.0, 0.5)
        u0 = propagate(packet, K, ZERO, 0.0, 1.0, 0.01)
        u1 = propagate(packet, K, ConstantPotential(0.3), 0.0, 1.0, 0.01)
        assert inner(u0, u1) == pytest.approx(np.exp(-0.3j) * inner(u0, u0), abs=1e-12)


class TestStepCount:
    def test_exact(self):
        assert step_count(0.0, 50.0, 1e-3) == 50000
        assert step_count(0.3, 0.3, 0.1) == 0

    @pytest.mark.parametrize("args", [(0.0, 1.0, 0.3), (1.0, 0.0, 0.1)])
    def test_rejects(self, args):
        with pytest.raises(ValueError):
            step_count(*args)
