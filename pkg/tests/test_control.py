import math

import numpy as np
import pytest

from occlusion_orbit.control import (
    BetaGrid,
    ControllerConfig,
    epsilon_max,
    epsilon_root,
    lambda_max,
    lambda_root,
    lyapunov_v2,
    min_gain,
    saturate,
    sinc,
    steering_control,
    tune_beta_grid,
    v2_dot,
    versinc,
)
from occlusion_orbit.guidance import vector_field
from occlusion_orbit.orbit import orbit_sample
from occlusion_orbit.sim import linear_schedule, static_schedule

SMALL = BetaGrid(60, 5.0, 72, 144)


def grid_max(fn, lo=0.0, hi=100.0, step=1e-6, chunk=5_000_000):
    best = -np.inf
    n = int(round((hi - lo) / step)) + 1
    for start in range(0, n, chunk):
        x = lo + step * np.arange(start, min(n, start + chunk))
        best = max(best, float(fn(x).max()))
    return best


class TestConstants:
    def test_epsilon(self):
        assert epsilon_max() == pytest.approx(0.31483, abs=1e-4)
        x = epsilon_root()
        assert abs(x * math.atan(x) - 1) < 1e-12

    def test_lambda(self):
        assert lambda_max() == pytest.approx(0.41195, abs=1e-4)
        x = lambda_root()
        assert abs(x * math.atan(x) - 0.5) < 1e-12

    def test_grid_oracles(self):
        assert grid_max(lambda x: np.arctan(x) ** 2 / (1 + x * x)) == pytest.approx(epsilon_max(), abs=1e-10)
        assert grid_max(lambda x: np.arctan(x) / (1 + x * x)) == pytest.approx(lambda_max(), abs=1e-10)

    def test_min_gain(self):
        assert min_gain(20, 0.025) == pytest.approx(0.0638, abs=1e-4)
        assert min_gain(40, 0.025) == pytest.approx(2 * min_gain(20, 0.025))
        assert min_gain(20, 0.05) == pytest.approx(2 * min_gain(20, 0.025))
        assert min_gain(20, 1e-15) < 1e-14


class TestSeries:
    @pytest.mark.parametrize("x", [0.0, 1e-5, -3e-5, 9.99e-5, 1e-4, 0.3, -2.0, math.pi])
    def test_continuous_across_threshold(self, x):
        if x == 0:
            assert versinc(x) == 0.0 and sinc(x) == 1.0
            return
        assert versinc(x) == pytest.approx(2 * math.sin(x / 2) ** 2 / x, rel=1e-12)
        assert sinc(x) == pytest.approx(math.sin(x) / x, rel=1e-12)


class TestSteering:
    cfg = ControllerConfig(0.05, 2.0, 20 / 15)

    def test_on_field_on_orbit(self):
        s = linear_schedule((0, 0), (3, 4), 60.0, 1.0, 20.0, (0, 5))
        smp = orbit_sample(s, 1.0)
        q = np.zeros(3)
        q[:2] = smp.g + smp.R * np.array([math.cos(0.8), math.sin(0.8)])
        f = vector_field(q, 1.0, s, 20.0, 0.05)
        q[2] = f.psi_d
        out = steering_control(q, 1.0, s, self.cfg, 20.0)
        assert out.psi_err == 0.0
        assert out.u_raw == pytest.approx(f.psi_d_dot, abs=1e-15)

    def test_aligned_off_orbit(self):
        s = linear_schedule((0, 0), (3, 4), 60.0, 1.0, 20.0, (0, 5))
        q = np.array([90.0, 10.0, 0.0])
        f = vector_field(q, 2.0, s, 20.0, 0.05)
        q[2] = f.psi_d
        out = steering_control(q, 2.0, s, self.cfg, 20.0)
        z = 0.05 * f.r_err
        expected = f.psi_d_dot + f.u_theta * (2 * 0.05 / math.pi) * math.atan(z) / (1 + z * z)
        assert out.u_raw == pytest.approx(expected, rel=1e-12)

    def test_saturation(self):
        s = static_schedule((0, 0), 50, 20, (0, 10))
        q = np.array([50.0, 0.0, math.pi / 2 + math.pi])
        out = steering_control(q, 0.0, s, ControllerConfig(0.05, 100.0, 20 / 15), 20.0)
        assert abs(out.psi_err) == pytest.approx(math.pi)
        assert abs(out.u) == pytest.approx(20 / 15)
        assert abs(out.u_raw) > 20 / 15

    def test_heading_error_shorter_arc(self, rng):
        s = linear_schedule((0, 0), (3, 4), 60.0, 1.0, 20.0, (0, 5))
        for _ in range(200):
            q = np.array([*rng.uniform(-200, 200, 2), rng.uniform(-10, 10)])
            out = steering_control(q, rng.uniform(0, 5), s, self.cfg, 20.0)
            assert -math.pi < out.psi_err <= math.pi
            assert abs(out.u) <= self.cfg.u_psi_max

    def test_saturate_idempotent(self, rng):
        x = rng.uniform(-5, 5, 100)
        assert np.array_equal(saturate(saturate(x, 1.3), 1.3), saturate(x, 1.3))

    def test_u_lyap_bound(self, rng):
        s = linear_schedule((0, 0), (3, 4), 60.0, 2.0, 20.0, (0, 5))
        for _ in range(500):
            q = np.array([*rng.uniform(-300, 300, 2), rng.uniform(-math.pi, math.pi)])
            out = steering_control(q, rng.uniform(0, 5), s, self.cfg, 20.0)
            assert abs(out.u_lyap) < 20.0 * 0.05 * (2 / math.pi) * lambda_max()

    def test_config_checks(self):
        with pytest.raises(ValueError):
            ControllerConfig(0.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            ControllerConfig(0.1, 1.0, 1.0, tau_inner=1.5)
        assert ControllerConfig.for_vehicle(20, 50, 0.025, 20).u_psi_max == pytest.approx(0.4)


def sweep(R, n=200):
    r = np.linspace(-5 * R, 5 * R, n)
    p = np.linspace(-math.pi, math.pi, n)
    Rg, Pg = np.meshgrid(r, p, indexing="ij")
    keep = ~((Rg == 0) & (Pg == 0))
    return Rg[keep], Pg[keep]


class TestLyapunov:
    def test_origin(self):
        assert lyapunov_v2(0.0, 0.0, 0.1) == 0.0
        assert v2_dot(0.0, 0.0, 0.1, 1.0, 20, 5, 1) == 0.0

    def test_negative_above_min_gain(self, rng):
        for _ in range(5):
            v, v_g, beta = 20.0, rng.uniform(0, 10), rng.uniform(0.005, 0.2)
            rd = rng.uniform(-1, 1) * (v - v_g) * 0.95
            r, p = sweep(100.0, 201)  # odd count puts the origin on the grid
            assert np.all(v2_dot(r, p, beta, 1.01 * min_gain(v, beta), v, v_g, rd) < 0)

    def test_half_min_gain_still_negative(self):
        # the bound is conservative: the worst case needs k below ~0.128 min_gain
        v, beta = 20.0, 0.05
        r, p = sweep(100.0, 401)
        assert np.all(v2_dot(r, p, beta, 0.5 * min_gain(v, beta), v, 0.0, 0.0) < 0)

    def test_tightness_probe(self):
        v, beta = 20.0, 0.05
        r, p = sweep(100.0, 401)
        vd = v2_dot(r, p, beta, 0.1 * min_gain(v, beta), v, 0.0, 0.0)
        pos = vd >= 0
        assert pos.any()
        assert np.all(np.abs(p[pos]) > math.pi / 2)


class TestTuneBeta:
    def test_reported_max_reproduced_by_controller(self):
        rep = tune_beta_grid(20, 5, 85.9, 1.3, 0.025, 1.0, 0.4, SMALL)
        # rebuild the argmax state, POI heading along +x, and evaluate the controller there
        s = linear_schedule((0, 0), (5, 0), 85.9, 1.3, 20.0, (0, 1))
        q = np.array([rep.r * math.cos(rep.theta_rel), rep.r * math.sin(rep.theta_rel), 0.0])
        q[2] = vector_field(q, 0.0, s, 20.0, 0.025).psi_d + rep.psi_err
        out = steering_control(q, 0.0, s, ControllerConfig(0.025, 1.0, 0.4), 20.0)
        assert abs(out.feedforward + out.u_lyap) == pytest.approx(rep.max_turn_rate, rel=1e-9)
        assert rep.passed

    def test_static_decomposition(self):
        # with a static POI and fixed radius only the u_θ·sinc part of u_lyap remains, largest at ψ̃ = 0
        R, v, beta = 60.0, 20.0, 0.05
        rep = tune_beta_grid(v, 0.0, R, 0.0, beta, 1.0, 10.0, SMALL)
        s = static_schedule((0, 0), R, v, (0, 1))
        best = 0.0
        for r in np.linspace(R, 5 * R, SMALL.n_r):
            f = vector_field((r, 0.0), 0.0, s, v, beta)
            z = beta * (r - R)
            best = max(best, abs(f.psi_d_dot + f.u_theta * beta * (2 / math.pi) * math.atan(z) / (1 + z * z)))
        assert rep.max_turn_rate == pytest.approx(best, rel=1e-12)
        assert rep.psi_err == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("params", [(20, 5, 85.9, 1.3, 0.025), (20, 0, 50, 0, 0.05), (15, 3, 40, -2, 0.1)])
    def test_doubling_beta_not_smaller(self, params):
        v, v_g, R, rd, beta = params
        a = tune_beta_grid(v, v_g, R, rd, beta, 1.0, 1.0, SMALL).max_turn_rate
        b = tune_beta_grid(v, v_g, R, rd, 2 * beta, 1.0, 1.0, SMALL).max_turn_rate
        assert b >= a

    def test_large_beta_fails(self):
        rep = tune_beta_grid(20, 5, 85.9, 1.3, 0.5, 1.0, 0.4, SMALL)
        assert not rep.passed
        d = rep.to_dict()
        assert set(d) == {"max_turn_rate", "argmax", "u_psi_max", "pass", "inputs", "grid"}
