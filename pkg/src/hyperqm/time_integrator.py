"""Implicit Newmark integration with Newton iterations, and energy auditing.

Any system exposing ``residual(x, v, a, t)``,
``residual_and_jacobians(x, v, a, t) -> (r, (Jx, Jv, Ja))`` and the energy
methods ``kinetic_energy``, ``potential_energy``, ``dissipation`` and
``external_power`` can be integrated and audited: the high-fidelity model,
full reduced models and hyper-reduced models alike.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

logger = logging.getLogger(__name__)


class NewtonDivergence(RuntimeError):
    def __init__(self, step: int, residual: float, message: str = "Newton iterations did not converge"):
        super().__init__(f"{message} at step {step} (residual {residual:.3e})")
        self.step = step
        self.residual = residual


@dataclass(frozen=True)
class NewmarkParams:
    dt: float
    gamma: float = 0.5
    beta: float = 0.25
    newton_tol: float = 1e-9
    max_newton: int = 20
    output_stride: int = 1

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.gamma < 0.5 or self.beta < 0.25 * (0.5 + self.gamma) ** 2:
            raise ValueError("Newmark parameters are not unconditionally stable")
        if self.output_stride < 1:
            raise ValueError("output_stride must be >= 1")


@dataclass
class Trajectory:
    """States stored every ``output_stride`` steps.

    ``reduced`` marks trajectories in reduced coordinates.
    """

    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    a: np.ndarray
    reduced: bool = False
    newton_iterations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __len__(self):
        return len(self.t)

    def save(self, path):
        np.savez(path, t=self.t, x=self.x, v=self.v, a=self.a, reduced=self.reduced, newton_iterations=self.newton_iterations)

    @classmethod
    def load(cls, path) -> Trajectory:
        with np.load(path) as z:
            return cls(z["t"], z["x"], z["v"], z["a"], bool(z["reduced"]), z["newton_iterations"])

    def to_csv(self, path, columns=None, values=None, header=None):
        """Write ``t`` and selected columns of ``values`` (defaults to ``x``)."""
        values = self.x if values is None else values
        cols = range(values.shape[1]) if columns is None else columns
        names = header or [f"x{c}" for c in cols]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *names])
            for i, t in enumerate(self.t):
                w.writerow([repr(float(t)), *(repr(float(values[i, c])) for c in cols)])


def _solve(J, r):
    if sp.issparse(J):
        return spla.spsolve(sp.csc_matrix(J), r)
    return np.linalg.solve(J, r)


def initial_acceleration(system, x0, v0, t0=0.0, tol=1e-12, max_iter=5):
    """Solve ``r(x0, v0, a, t0) = 0`` for ``a``; the residual is affine in ``a``."""
    a = np.zeros_like(np.asarray(x0, dtype=float))
    r, (_, _, Ja) = system.residual_and_jacobians(x0, v0, a, t0)
    r0 = np.linalg.norm(r)
    for _ in range(max_iter):
        if np.linalg.norm(r) <= tol * r0 or r0 == 0.0:
            break
        a = a - _solve(Ja, r)
        r, (_, _, Ja) = system.residual_and_jacobians(x0, v0, a, t0)
    return a


def integrate(system, params: NewmarkParams, t_end: float, x0, v0, t0: float = 0.0, a0=None, reduced=None) -> Trajectory:
    """Integrate from ``t0`` to ``t_end`` with constant step ``params.dt``.

    Each step solves for the new acceleration by Newton iteration on the
    residual with the effective Jacobian ``Ja + gamma dt Jv + beta dt^2 Jx``.
    A step converges when the residual drops below ``newton_tol`` times the
    residual at the predictor.  Fine meshes have a round-off floor above that
    level, so a step is also accepted once the residual has fallen below
    ``sqrt(newton_tol)`` times the predictor residual and stopped decreasing.
    """
    dt, gamma, beta = params.dt, params.gamma, params.beta
    n_steps = int(round((t_end - t0) / dt))
    x = np.array(x0, dtype=float)
    v = np.array(v0, dtype=float)
    a = initial_acceleration(system, x, v, t0) if a0 is None else np.array(a0, dtype=float)
    if reduced is None:
        reduced = getattr(system, "is_reduced", False)

    n_out = n_steps // params.output_stride + 1
    T = np.empty(n_out)
    X = np.empty((n_out, x.size))
    Vs = np.empty((n_out, x.size))
    A = np.empty((n_out, x.size))
    iters = np.zeros(n_out, dtype=int)
    T[0], X[0], Vs[0], A[0] = t0, x, v, a
    out = 1
    for k in range(1, n_steps + 1):
        t = t0 + k * dt
        x_pred = x + dt * v + dt * dt * (0.5 - beta) * a
        v_pred = v + dt * (1.0 - gamma) * a
        a_new = a.copy()
        r0 = None
        r_prev = np.inf
        converged = False
        for it in range(params.max_newton + 1):
            xn = x_pred + beta * dt * dt * a_new
            vn = v_pred + gamma * dt * a_new
            r, (Jx, Jv, Ja) = system.residual_and_jacobians(xn, vn, a_new, t)
            rn = np.linalg.norm(r)
            if not np.isfinite(rn):
                break
            if r0 is None:
                r0 = rn
            if rn <= params.newton_tol * r0 or rn == 0.0:
                converged = True
                break
            # round-off floor: no further progress once well below the start
            if rn >= 0.5 * r_prev and rn <= np.sqrt(params.newton_tol) * r0:
                converged = True
                break
            if it == params.max_newton:
                break
            r_prev = rn
            Jeff = Ja + (gamma * dt) * Jv + (beta * dt * dt) * Jx
            a_new = a_new - _solve(Jeff, r)
        if not converged:
            raise NewtonDivergence(k, float(rn))
        x, v, a = xn, vn, a_new
        if k % params.output_stride == 0:
            T[out], X[out], Vs[out], A[out] = t, x, v, a
            iters[out] = it
            out += 1
    return Trajectory(T[:out], X[:out], Vs[:out], A[:out], reduced=reduced, newton_iterations=iters[:out])


@dataclass
class EnergyLedger:
    """Energy accounting along a trajectory.

    ``balance = (T + V) - (T0 + V0) - W_ext + W_dis`` is cumulative; its
    normalised maximum is the structure-preservation figure of merit.
    """

    t: np.ndarray
    kinetic: np.ndarray
    potential: np.ndarray
    external_work: np.ndarray
    dissipated: np.ndarray
    balance: np.ndarray
    homogeneity: int

    @property
    def total(self) -> np.ndarray:
        return self.kinetic + self.potential

    @property
    def peak_energy(self) -> float:
        return float(max(np.max(np.abs(self.total)), np.max(np.abs(self.external_work)), np.finfo(float).tiny))

    @property
    def max_balance(self) -> float:
        return float(np.max(np.abs(self.balance)) / self.peak_energy)

    @property
    def final_balance(self) -> float:
        return float(abs(self.balance[-1]) / self.peak_energy)

    @property
    def step_balance(self) -> np.ndarray:
        return np.diff(self.balance) / self.peak_energy


def energy_audit(trajectory: Trajectory, system) -> EnergyLedger:
    """Kinetic, potential, external work and dissipation along ``trajectory``.

    Energies use the same element set and weights as ``system``; the work
    and dissipation integrals use the trapezoidal rule, so the trajectory
    should be stored at every step.
    """
    t = trajectory.t
    n = len(t)
    T = np.empty(n)
    V = np.empty(n)
    P = np.empty(n)
    D = np.empty(n)
    for i in range(n):
        x, v = trajectory.x[i], trajectory.v[i]
        T[i] = system.kinetic_energy(x, v)
        V[i] = system.potential_energy(x)
        P[i] = system.external_power(x, v, t[i])
        D[i] = system.dissipation(x, v)
    d = system.homogeneity
    dt = np.diff(t)
    W_ext = np.concatenate([[0.0], np.cumsum(0.5 * dt * (P[1:] + P[:-1]))])
    W_dis = np.concatenate([[0.0], np.cumsum(0.5 * dt * d * (D[1:] + D[:-1]))])
    balance = (T + V) - (T[0] + V[0]) - W_ext + W_dis
    return EnergyLedger(t, T, V, W_ext, W_dis, balance, d)
