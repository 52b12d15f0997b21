from __future__ import annotations

import numpy as np
import scipy.sparse.linalg as spla
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_structure
from hyperqm.fe_core import Constant, HighFidelityModel, LoadCase, Sinusoidal, uniform_transverse_load
from hyperqm.time_integrator import NewmarkParams, NewtonDivergence, Trajectory, energy_audit, integrate


class Oscillator:
    """``m a + c v + k x + k3 x^3 = f(t)`` with the integrator interface."""

    homogeneity = 2
    is_reduced = False

    def __init__(self, m=1.0, c=0.0, k=1.0, k3=0.0, force=None):
        self.m, self.c, self.k, self.k3 = m, c, k, k3
        self.force = force or (lambda t: 0.0)

    def residual(self, x, v, a, t=0.0):
        return self.m * a + self.c * v + self.k * x + self.k3 * x**3 - self.force(t)

    def residual_and_jacobians(self, x, v, a, t=0.0):
        J = lambda s: np.atleast_2d(s)
        return self.residual(x, v, a, t), (J(self.k + 3 * self.k3 * x[0] ** 2), J(self.c), J(self.m))

    def kinetic_energy(self, x, v):
        return 0.5 * self.m * float(v[0] ** 2)

    def potential_energy(self, x):
        return float(0.5 * self.k * x[0] ** 2 + 0.25 * self.k3 * x[0] ** 4)

    def dissipation(self, x, v):
        return 0.5 * self.c * float(v[0] ** 2)

    def external_power(self, x, v, t):
        return float(v[0] * self.force(t))


def dense_newmark(M, C, force_and_tangent, fext, dt, n_steps, x0, v0, tol=1e-13):
    """Displacement-form average-acceleration reference with dense algebra."""
    x, v = np.array(x0, float), np.array(v0, float)
    f, _ = force_and_tangent(x)
    a = np.linalg.solve(M, fext(0.0) + f - C @ v)
    X = [x.copy()]
    for k in range(1, n_steps + 1):
        t = k * dt
        xn = x.copy()
        for _ in range(50):
            an = 4 / dt**2 * (xn - x - dt * v) - a
            vn = v + dt / 2 * (a + an)
            f, K = force_and_tangent(xn)
            r = M @ an + C @ vn - f - fext(t)
            if np.linalg.norm(r) <= tol * max(np.linalg.norm(fext(t)), np.linalg.norm(M @ an), 1e-300):
                break
            # K is the stiffness, the derivative of -f
            xn = xn - np.linalg.solve(4 / dt**2 * M + 2 / dt * C + K, r)
        x, v, a = xn, vn, an
        X.append(x.copy())
    return np.array(X)


class TestNewmarkParams:
    def test_defaults(self):
        p = NewmarkParams(0.1)
        assert (p.gamma, p.beta) == (0.5, 0.25)

    @pytest.mark.parametrize("kw", [dict(dt=0.0), dict(dt=1.0, gamma=0.4), dict(dt=1.0, beta=0.1), dict(dt=1.0, output_stride=0)])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            NewmarkParams(**kw)


class TestLinearOscillator:
    def test_discrete_phase_and_amplitude(self):
        w = 2.0
        dt = 2 * np.pi / w / 40
        tr = integrate(Oscillator(k=w * w), NewmarkParams(dt), 100 * 40 * dt, [1.0], [0.0])
        # average acceleration maps the circle onto itself with this rotation angle
        h = (w * dt / 2) ** 2
        phi = np.arccos((1 - h) / (1 + h))
        n = np.arange(len(tr.t))
        np.testing.assert_allclose(tr.x[:, 0], np.cos(n * phi), atol=1e-10)
        amp = np.hypot(tr.x[:, 0], tr.v[:, 0] / w)
        np.testing.assert_allclose(amp, 1.0, rtol=1e-10)

    def test_energy_exact_for_linear_conservative(self):
        tr = integrate(Oscillator(k=4.0), NewmarkParams(0.05), 20.0, [0.3], [0.7])
        led = energy_audit(tr, Oscillator(k=4.0))
        assert led.max_balance <= 1e-12

    def test_zero_state_stays_zero(self):
        s = make_structure(8)
        tr = integrate(HighFidelityModel(s), NewmarkParams(1e-5), 1e-3, np.zeros(s.n), np.zeros(s.n))
        assert np.all(tr.x == 0) and np.all(tr.v == 0) and np.all(tr.a == 0)

    def test_output_stride(self):
        tr = integrate(Oscillator(), NewmarkParams(0.1, output_stride=5), 2.0, [1.0], [0.0])
        np.testing.assert_allclose(tr.t, np.arange(0, 2.01, 0.5))

    def test_static_load_holds_static_solution(self):
        osc = Oscillator(k=3.0, force=lambda t: 6.0)
        tr = integrate(osc, NewmarkParams(0.1), 5.0, [2.0], [0.0])
        np.testing.assert_allclose(tr.x[:, 0], 2.0, rtol=1e-14)
        np.testing.assert_allclose(tr.a[:, 0], 0.0, atol=1e-14)


class TestNonlinear:
    def test_duffing_energy_second_order(self):
        osc = Oscillator(k=1.0, k3=5.0)
        b = []
        for dt in (0.02, 0.01):
            tr = integrate(osc, NewmarkParams(dt, newton_tol=1e-13), 20.0, [0.8], [0.0])
            b.append(energy_audit(tr, osc).max_balance)
        assert 3.5 < b[0] / b[1] < 4.5

    def test_damped_energy_decreases(self):
        """Release from a static deflection of about one thickness."""
        s = make_structure(10, alpha=300.0)
        m = HighFidelityModel(s)
        F = uniform_transverse_load(s, 1e5)
        x0 = np.zeros(s.n)
        for _ in range(30):
            f, K = s.force_and_tangent(x0)
            x0 -= spla.spsolve(K.tocsc(), -f - F)
        assert np.linalg.norm(s.internal_force(x0) + F) <= 1e-9 * np.linalg.norm(F)
        assert x0[s.mesh.dof_map[5, 1]] > 0.5 * s.kernel.thickness
        tr = integrate(m, NewmarkParams(2e-6), 2e-3, x0, np.zeros(s.n))
        led = energy_audit(tr, m)
        assert np.all(np.diff(led.total) <= 0.0)
        assert led.total[-1] < 0.7 * led.total[0]
        assert led.max_balance <= 1e-3
        half = energy_audit(integrate(m, NewmarkParams(1e-6), 2e-3, x0, np.zeros(s.n)), m)
        assert 3.5 < led.max_balance / half.max_balance < 4.5

    def test_against_dense_reference(self):
        s = make_structure(10, alpha=20.0, beta=1e-6)
        lc = LoadCase(uniform_transverse_load(s, 2e5), Sinusoidal(1.0, 5000.0))
        m = HighFidelityModel(s, lc)
        dt, n = 2e-5, 150
        tr = integrate(m, NewmarkParams(dt, newton_tol=1e-12), n * dt, np.zeros(s.n), np.zeros(s.n))
        ref = dense_newmark(
            s.mass().toarray(), s.damping().toarray(),
            lambda x: (s.internal_force(x), s.tangent(x).toarray()),
            lc, dt, n, np.zeros(s.n), np.zeros(s.n),
        )
        err = np.linalg.norm(tr.x - ref, axis=1).max() / np.linalg.norm(ref, axis=1).max()
        assert err <= 1e-9
        assert np.abs(ref).max() > 0.5 * s.kernel.thickness

    def test_effective_jacobian_fd(self, rng):
        s = make_structure(6)
        m = HighFidelityModel(s)
        x = rng.normal(size=s.n) * 1e-4
        v = rng.normal(size=s.n)
        a = rng.normal(size=s.n)
        dt, gamma, beta = 1e-5, 0.5, 0.25
        _, (Jx, Jv, Ja) = m.residual_and_jacobians(x, v, a)
        Jeff = (Ja + gamma * dt * Jv + beta * dt * dt * Jx).toarray()
        d = rng.normal(size=s.n)
        h = 1e-3 * np.linalg.norm(a) / np.linalg.norm(d)
        rp = m.residual(x + beta * dt * dt * h * d, v + gamma * dt * h * d, a + h * d)
        rm = m.residual(x - beta * dt * dt * h * d, v - gamma * dt * h * d, a - h * d)
        fd = (rp - rm) / (2 * h)
        assert np.linalg.norm(fd - Jeff @ d) <= 1e-6 * np.linalg.norm(Jeff @ d)

    def test_divergence_reported(self):
        class Broken(Oscillator):
            def residual_and_jacobians(self, x, v, a, t=0.0):
                r, J = super().residual_and_jacobians(x, v, a, t)
                return r + (np.nan if t > 0.25 else 0.0), J

        with pytest.raises(NewtonDivergence) as exc:
            integrate(Broken(), NewmarkParams(0.1), 1.0, [1.0], [0.0])
        assert exc.value.step == 3


@given(st.floats(0.1, 10.0), st.floats(0.01, 0.5))
@settings(max_examples=25, deadline=None)
def test_forced_linear_balance_closes_to_quadrature(k, dt):
    """For a linear system the audit error is pure quadrature error of the work integral."""
    osc = Oscillator(k=k, force=Constant(1.0))
    tr = integrate(osc, NewmarkParams(dt), 40 * dt, [0.0], [0.0])
    assert energy_audit(tr, osc).max_balance <= 1e-10


class TestTrajectoryIO:
    def test_npz_round_trip(self, tmp_path):
        tr = integrate(Oscillator(), NewmarkParams(0.1), 1.0, [1.0], [0.5])
        tr.save(tmp_path / "t.npz")
        back = Trajectory.load(tmp_path / "t.npz")
        for name in ("t", "x", "v", "a", "newton_iterations"):
            np.testing.assert_array_equal(getattr(back, name), getattr(tr, name))
        assert back.reduced is False

    def test_csv(self, tmp_path):
        tr = integrate(Oscillator(), NewmarkParams(0.1), 1.0, [1.0], [0.5])
        tr.to_csv(tmp_path / "t.csv", header=["w"])
        rows = np.loadtxt(tmp_path / "t.csv", delimiter=",", skiprows=1)
        np.testing.assert_array_equal(rows[:, 0], tr.t)
        np.testing.assert_array_equal(rows[:, 1], tr.x[:, 0])
