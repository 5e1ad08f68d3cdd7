import math

import numpy as np
import pytest
from scipy import integrate, optimize

from tdse_stability.potentials import (
    ConstantPotential,
    DriftProfile,
    boundary_ratio,
    decaying_envelope,
    dt_eval_on_grid,
    eval_on_grid,
    inverse_power_regularized,
    moving_bump,
)
from tdse_stability.spectral import make_grid

ARCTAN = DriftProfile("arctan_drift", (0.5,))


def bump_1d(A=0.1, q=1.0, drift=ARCTAN):
    return moving_bump(A, q, drift)


def models_with_tails():
    return [
        bump_1d(),
        bump_1d(0.3, 2.0, DriftProfile("arctan_drift", (-1.2,), offset=(0.7,))),
        moving_bump(0.2, 1.5, DriftProfile("arctan_drift", (0.3, -0.4))),
        decaying_envelope(inverse_power_regularized(1.0, 0.5, 1.0), 0.7),
        decaying_envelope(bump_1d(), 0.4),
        ConstantPotential(0.3),
    ]


class TestDrift:
    def test_arctan_tail_vs_quadrature(self):
        d = DriftProfile("arctan_drift", (0.8,))
        for T in (0.0, 1.0, 7.5):
            ref, _ = integrate.quad(d.speed, T, np.inf, epsabs=1e-13)
            assert d.drift_tail(T) == pytest.approx(ref, rel=1e-9)
        assert d.drift_tail(0.0) == pytest.approx(0.8 * math.pi / 2)

    def test_velocity_is_derivative_of_position(self):
        for d in (DriftProfile("arctan_drift", (0.3, 1.0)), DriftProfile("periodic", (0.5,), omega=2.0)):
            h = 1e-5
            for t in (0.0, 0.7, 3.0):
                fd = (d.position(t + h) - d.position(t - h)) / (2 * h)
                np.testing.assert_allclose(fd, d.velocity_at(t), atol=1e-9)

    def test_constant_and_periodic_tails(self):
        assert DriftProfile("constant", (1.0,)).drift_tail(0.0) == 0.0
        assert math.isinf(DriftProfile("periodic", (1.0,)).drift_tail(0.0))

    def test_rejects(self):
        with pytest.raises(ValueError):
            DriftProfile("linear", (1.0,))
        with pytest.raises(ValueError):
            DriftProfile("arctan_drift", (1.0,), offset=(0.0, 0.0))


class TestMovingBump:
    def test_constant_drift_is_static(self):
        V = bump_1d(drift=DriftProfile("constant", (1.0,)))
        assert V.is_static
        assert V.sup_dt(3.0) == 0.0 and V.tail_integral(0.0) == 0.0

    def test_gradient_sup_vs_scalar_maximization(self):
        # oracle: bounded maximization of |V0'(y)| = 2 A y / (1 + y^2)^2
        A = 0.1
        res = optimize.minimize_scalar(lambda y: -2 * A * y / (1 + y * y) ** 2, bounds=(0, 5),
                                       method="bounded", options={"xatol": 1e-12})
        assert res.x == pytest.approx(1 / math.sqrt(3), abs=1e-6)
        assert bump_1d(A, 1.0).gradient_sup == pytest.approx(-res.fun, rel=1e-12)

    @pytest.mark.parametrize("q", [0.5, 1.0, 2.0, 3.5])
    def test_gradient_sup_dense_scan(self, q):
        y = np.linspace(0, 6, 600001)
        scan = np.max(2 * 0.3 * q * y * (1 + y * y) ** (-q - 1))
        V = bump_1d(0.3, q)
        assert V.gradient_sup >= scan
        assert V.gradient_sup == pytest.approx(scan, rel=1e-9)

    def test_value_formula(self):
        V = bump_1d(0.1, 1.0)
        x = np.array([-1.0, 0.0, 2.0])
        t = 1.0
        c = 0.5 * math.atan(t)
        np.testing.assert_allclose(V.value(t, x), 0.1 / (1 + (x + c) ** 2), rtol=1e-15)

    def test_tail_is_gradient_times_drift_tail(self):
        V = bump_1d()
        assert V.tail_integral(2.0) == pytest.approx(V.gradient_sup * ARCTAN.drift_tail(2.0), rel=1e-15)

    def test_lattice_shift(self):
        # offset that is a whole number of grid cells: the field is a pure roll
        g = make_grid(1, 256, 40.0)
        shift = 7 * g.spacing
        V1 = moving_bump(0.1, 2.0, DriftProfile("constant", (0.0,)))
        V2 = moving_bump(0.1, 2.0, DriftProfile("constant", (0.0,), offset=(shift,)))
        f1, f2 = eval_on_grid(V1, 0.0, g), eval_on_grid(V2, 0.0, g)
        np.testing.assert_allclose(f2[:-7], f1[7:], rtol=1e-13)

    def test_wrong_coordinate_count(self):
        with pytest.raises(ValueError):
            bump_1d().value(0.0, np.zeros(3), np.zeros(3))

    @pytest.mark.parametrize("A, q", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0)])
    def test_rejects(self, A, q):
        with pytest.raises(ValueError):
            moving_bump(A, q, ARCTAN)

    def test_two_dimensional_sup_dt_dominates_grid(self):
        V = moving_bump(0.2, 1.5, DriftProfile("arctan_drift", (0.3, -0.4)))
        g = make_grid(2, 128, 20.0)
        for t in (0.0, 0.5, 2.0):
            assert V.sup_dt(t) >= np.max(np.abs(dt_eval_on_grid(V, t, g)))


class TestInversePower:
    def test_center_value(self):
        V = inverse_power_regularized(1.0, 0.5, 1.0)
        assert V.value(0.0, np.array(0.0)) == 1.0

    def test_static(self):
        V = inverse_power_regularized(2.0, 0.7, 0.3, dim=2)
        assert V.sup_dt(1.0) == 0.0 and V.tail_integral(0.0) == 0.0 and V.is_static

    def test_grid_max_at_origin(self):
        V = inverse_power_regularized(2.0, 0.7, 0.3)
        g = make_grid(1, 64, 10.0)
        assert eval_on_grid(V, 0.0, g).max() == pytest.approx(2.0 * 0.3**-0.7, rel=1e-15)
        assert V.sup_value == pytest.approx(2.0 * 0.3**-0.7)

    @pytest.mark.parametrize("eps", [0.0, -1.0])
    def test_rejects_singular(self, eps):
        with pytest.raises(ValueError):
            inverse_power_regularized(1.0, 0.5, eps)


class TestEnvelope:
    def test_static_base_tail_vs_quadrature(self):
        base = inverse_power_regularized(1.0, 0.5, 1.0)
        V = decaying_envelope(base, 0.7)
        for T in (0.0, 2.0):
            ref, _ = integrate.quad(V.sup_dt, T, np.inf, epsabs=1e-13)
            assert V.tail_integral(T) == pytest.approx(ref, rel=1e-9)
            assert V.tail_integral(T) == pytest.approx(base.sup_value * math.exp(-0.7 * T), rel=1e-14)

    def test_large_rate_dominant_term(self):
        base = ConstantPotential(0.4)
        V = decaying_envelope(base, 1e6, s=1.0)
        assert V.sup_dt(1.0) == pytest.approx(1e6 * 0.4)

    def test_value_at_start(self):
        base = bump_1d()
        V = decaying_envelope(base, 0.3, s=2.0)
        x = np.linspace(-3, 3, 11)
        np.testing.assert_array_equal(V.value(2.0, x), base.value(2.0, x))

    def test_rejects(self):
        with pytest.raises(ValueError):
            decaying_envelope(ConstantPotential(1.0), 0.0)


class TestGridEvaluation:
    def test_static_bit_identical(self):
        g = make_grid(1, 64, 10.0)
        V = inverse_power_regularized(1.0, 0.5, 1.0)
        np.testing.assert_array_equal(eval_on_grid(V, 0.0, g), eval_on_grid(V, 17.0, g))

    @pytest.mark.parametrize("V", models_with_tails()[:2] + models_with_tails()[3:5],
                             ids=["bump", "bump_offset", "env_static", "env_bump"])
    def test_dt_vs_central_difference(self, V):
        g = make_grid(1, 128, 20.0)
        h = 1e-4
        for t in (0.0, 0.8, 3.0):
            fd = (eval_on_grid(V, t + h, g) - eval_on_grid(V, t - h, g)) / (2 * h)
            assert np.max(np.abs(fd - dt_eval_on_grid(V, t, g))) <= 1e-6

    def test_nonfinite_raises(self):
        g = make_grid(1, 16, 4.0)
        with pytest.raises(FloatingPointError):
            eval_on_grid(inverse_power_regularized(1e300, 50.0, 1e-10), 0.0, g)

    def test_boundary_ratio(self):
        g = make_grid(1, 1024, 80.0)
        assert boundary_ratio(moving_bump(0.1, 2.0, ARCTAN), 0.0, g) < 1e-6
        assert boundary_ratio(moving_bump(0.1, 1.0, ARCTAN), 0.0, g) > 1e-6


class TestTails:
    @pytest.mark.parametrize("V", models_with_tails(), ids=lambda m: m.kind)
    def test_tail_dominates_window_quadrature(self, V):
        for T in (0.0, 1.0, 5.0):
            window, _ = integrate.quad(V.sup_dt, T, T + 50, limit=200, epsabs=1e-13)
            assert window <= V.tail_integral(T) + 1e-10

    @pytest.mark.parametrize("V", models_with_tails(), ids=lambda m: m.kind)
    def test_tail_nonincreasing_nonnegative(self, V):
        tails = [V.tail_integral(T) for T in np.linspace(0, 30, 31)]
        assert all(x >= 0 for x in tails)
        assert all(b <= a for a, b in zip(tails, tails[1:]))
