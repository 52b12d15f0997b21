"""Training of element samplings for hyper-reduced models.

Training runs in three stages.  Full snapshots ``(u, ud, udd)`` are mapped to
reduced triples ``(q, qd, qdd)`` by nonlinear least squares on the mapping
(skipped when the snapshots come from a reduced run).  Each triple then
contributes ``m`` rows of the matrix ``G`` whose column ``e`` holds the
projected element quantity ``P_e^T h_e``; ``b = G 1`` is the exact element
sum.  Finally a sparse non-negative ``xi`` with ``||G xi - b|| <= tau ||b||``
is found with an active-set solver, and its support is the reduced mesh.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

logger = logging.getLogger(__name__)

MAX_RECOVERY_ITER = 200
# pivots below this fraction of the largest are treated as zero
PIVOT_TOL = 1e-12
MAX_CONDITION = 1e12


class RecoveryError(RuntimeError):
    def __init__(self, message, q=None, residual=None):
        super().__init__(message)
        self.q = q
        self.residual = residual


class NnlsStall(RuntimeError):
    def __init__(self, rho: float):
        super().__init__(f"sparse NNLS stalled with relative residual {rho:.3e}: no element improves the fit")
        self.rho = rho


# -- recovery of reduced coordinates ------------------------------------------


def recover_q(mapping, u, max_iter: int = MAX_RECOVERY_ITER) -> np.ndarray:
    """Reduced coordinates ``q`` minimising ``||Gamma(q) - u||``.

    A linear basis gives the ordinary least-squares solution.  For a
    quadratic manifold, Gauss-Newton with Levenberg-Marquardt damping is used,
    started from the linear projection onto ``Phi``.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (mapping.n,):
        raise ValueError(f"expected a vector of length {mapping.n}, got shape {u.shape}")
    Phi = mapping.Phi
    q = np.linalg.lstsq(Phi, u, rcond=None)[0]
    if mapping.is_linear:
        return q
    un = np.linalg.norm(u)
    if un == 0.0:
        return np.zeros(mapping.size)

    # the gradient scales with the basis; normalise by its 2-norm
    gtol = 1e-10 * un * np.linalg.norm(Phi, 2)
    r = mapping.eval(q) - u
    cost = r @ r
    J = mapping.tangent(q)
    lam = 1e-6 * np.trace(J.T @ J) / mapping.size
    eye = np.eye(mapping.size)
    for _ in range(max_iter):
        g = J.T @ r
        if np.linalg.norm(g) <= gtol:
            return q
        step = np.linalg.solve(J.T @ J + lam * eye, -g)
        q_try = q + step
        r_try = mapping.eval(q_try) - u
        cost_try = r_try @ r_try
        small = np.linalg.norm(step) <= 1e-12 * max(np.linalg.norm(q), np.finfo(float).tiny)
        if cost_try < cost:
            q, r, cost = q_try, r_try, cost_try
            J = mapping.tangent(q)
            lam /= 10.0
        else:
            lam *= 10.0
        if small:
            return q
    raise RecoveryError(
        f"reduced coordinate recovery did not converge in {max_iter} iterations "
        f"(relative residual {np.sqrt(cost) / un:.3e})",
        q=q,
        residual=np.sqrt(cost) / un,
    )


def _tangent_solver(mapping, q):
    P = mapping.tangent(q)
    Q, R = np.linalg.qr(P)
    d = np.abs(np.diag(R))
    cond = np.inf if d.min() == 0.0 else d.max() / d.min()
    if cond > MAX_CONDITION:
        raise RecoveryError(f"tangent basis is rank deficient (condition estimate {cond:.3e})", q=q)
    return lambda y: sla.solve_triangular(R, Q.T @ y)


def recover_qdot(mapping, q, ud) -> np.ndarray:
    """Least-squares ``qd`` with ``P(q) qd ~ ud``."""
    return _tangent_solver(mapping, q)(np.asarray(ud, dtype=float))


def recover_qddot(mapping, q, qd, udd) -> np.ndarray:
    """Least-squares ``qdd`` with ``P(q) qdd ~ udd - Omega:(qd x qd)``."""
    return _tangent_solver(mapping, q)(np.asarray(udd, dtype=float) - mapping.curvature(qd))


def recover_state(mapping, u, ud, udd):
    """Recover ``(q, qd, qdd)`` with one factorisation of the tangent."""
    q = recover_q(mapping, u)
    solve = _tangent_solver(mapping, q)
    qd = solve(np.asarray(ud, dtype=float))
    qdd = solve(np.asarray(udd, dtype=float) - mapping.curvature(qd))
    return q, qd, qdd


# -- training set ---------------------------------------------------------------


@dataclass
class TrainingSet:
    """Reduced training triples, with the full snapshots they came from.

    ``u``, ``ud`` and ``udd`` are ``None`` when the triples were taken
    directly from a reduced trajectory.
    """

    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray
    residuals: np.ndarray
    u: np.ndarray | None = None
    ud: np.ndarray | None = None
    udd: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.t)
        if not (len(self.q) == len(self.qd) == len(self.qdd) == len(self.residuals) == n):
            raise ValueError("training arrays have inconsistent lengths")
        if not np.all(np.isfinite(self.residuals)):
            raise ValueError("non-finite recovery residual")

    @property
    def size(self) -> int:
        return len(self.t)


def snapshot_indices(count: int, n_t: int) -> np.ndarray:
    """``n_t`` indices spread uniformly over stored states, excluding the first.

    The initial state is excluded because it is usually the rest state and
    contributes nothing to the fit.
    """
    if count < 2:
        raise ValueError("need at least two stored states")
    n_t = min(n_t, count - 1)
    return np.unique(np.round(np.linspace(0, count - 1, n_t + 1)[1:]).astype(np.int64))


def training_set(mapping, trajectory, n_t: int = 200) -> TrainingSet:
    """Uniformly subsample ``trajectory`` and recover reduced triples.

    Reduced trajectories (``trajectory.reduced``) already live on the mapping
    and are used directly.
    """
    idx = snapshot_indices(len(trajectory.t), n_t)
    t = trajectory.t[idx]
    if trajectory.reduced:
        if trajectory.x.shape[1] != mapping.size:
            raise ValueError("reduced trajectory does not match the mapping size")
        return TrainingSet(t, trajectory.x[idx].copy(), trajectory.v[idx].copy(), trajectory.a[idx].copy(), np.zeros(len(idx)))
    U, Ud, Udd = trajectory.x[idx], trajectory.v[idx], trajectory.a[idx]
    m = mapping.size
    Q = np.empty((len(idx), m))
    Qd = np.empty_like(Q)
    Qdd = np.empty_like(Q)
    res = np.empty(len(idx))
    for i in range(len(idx)):
        Q[i], Qd[i], Qdd[i] = recover_state(mapping, U[i], Ud[i], Udd[i])
        un = np.linalg.norm(U[i])
        res[i] = 0.0 if un == 0.0 else np.linalg.norm(mapping.eval(Q[i]) - U[i]) / un
    return TrainingSet(t, Q, Qd, Qdd, res, U.copy(), Ud.copy(), Udd.copy())


def assemble_G_b(model, training: TrainingSet):
    """Stack the per-element projected quantities of every training triple.

    Row block ``i`` (``m`` rows) of ``G`` holds ``P_e(q_i)^T h_e`` in column
    ``e``; ``b = G 1``.
    """
    m = model.dim
    ne = model.structure.n_elements
    G = np.empty((m * training.size, ne))
    for i in range(training.size):
        G[i * m:(i + 1) * m] = model.element_contributions(training.q[i], training.qd[i], training.qdd[i]).T
    return G, G @ np.ones(ne)


# -- sparse NNLS ---------------------------------------------------------------


def _pivoted_lstsq(A, b):
    """Least squares by column-pivoted QR; dependent columns get zero."""
    Q, R, piv = sla.qr(A, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > PIVOT_TOL * d[0])) if d.size and d[0] > 0 else 0
    x = np.zeros(A.shape[1])
    if rank:
        x[piv[:rank]] = sla.solve_triangular(R[:rank, :rank], Q[:, :rank].T @ b)
    return x


@dataclass
class ReducedMesh:
    """Sampled elements and their positive weights."""

    elements: np.ndarray
    weights: np.ndarray
    n_elements: int
    tau: float
    rho: float
    history: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.elements = np.asarray(self.elements, dtype=np.int64)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.elements.shape != self.weights.shape:
            raise ValueError("elements and weights differ in length")
        if np.any(self.weights <= 0.0):
            raise ValueError("reduced-mesh weights must be strictly positive")
        if len(np.unique(self.elements)) != len(self.elements):
            raise ValueError("duplicate element in reduced mesh")
        if len(self.elements) and (self.elements.min() < 0 or self.elements.max() >= self.n_elements):
            raise ValueError("element id out of range")

    def __len__(self):
        return len(self.elements)

    @property
    def fraction(self) -> float:
        return len(self) / self.n_elements

    def dense_weights(self) -> np.ndarray:
        xi = np.zeros(self.n_elements)
        xi[self.elements] = self.weights
        return xi

    def save(self, path):
        lines = [
            "reduced-mesh 1",
            f"n_elements {self.n_elements}",
            f"size {len(self)}",
            f"tau {self.tau:.17g}",
            f"rho {self.rho:.17g}",
            f"provenance {self.metadata.get('provenance', '-')}",
        ]
        for key in sorted(self.metadata):
            if key != "provenance":
                lines.append(f"meta {key} {self.metadata[key]}")
        lines.append("elements")
        lines += [f"{e} {w:.17g}" for e, w in zip(self.elements, self.weights)]
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> ReducedMesh:
        with open(path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
        if not lines or not lines[0].startswith("reduced-mesh"):
            raise ValueError(f"{path}: not a reduced-mesh file")
        head = {}
        meta = {}
        k = 1
        while lines[k] != "elements":
            key, _, value = lines[k].partition(" ")
            if key == "meta":
                mk, _, mv = value.partition(" ")
                meta[mk] = mv
            else:
                head[key] = value
            k += 1
        rows = [ln.split() for ln in lines[k + 1:]]
        if len(rows) != int(head["size"]):
            raise ValueError(f"{path}: expected {head['size']} elements, found {len(rows)}")
        if head.get("provenance", "-") != "-":
            meta["provenance"] = head["provenance"]
        return cls(
            np.array([int(r[0]) for r in rows], dtype=np.int64),
            np.array([float(r[1]) for r in rows]),
            int(head["n_elements"]),
            float(head["tau"]),
            float(head["rho"]),
            metadata=meta,
        )


def sparse_nnls(G, b, tau: float, max_outer: int | None = None) -> ReducedMesh:
    """Sparse non-negative ``xi`` with ``||G xi - b|| <= tau ||b||``.

    Lawson-Hanson active-set iteration stopped as soon as the tolerance is
    met.  Each outer iteration activates the element with the largest
    gradient ``mu = G^T (b - G xi)`` (lowest index on ties); the inner loop
    solves the least-squares problem on the active set and backtracks along
    ``xi -> zeta`` while any active entry of ``zeta`` is non-positive.
    """
    G = np.asarray(G, dtype=float)
    b = np.asarray(b, dtype=float)
    ne = G.shape[1]
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    bn = np.linalg.norm(b)
    if bn == 0.0:
        return ReducedMesh(np.zeros(0, np.int64), np.zeros(0), ne, tau, 0.0, [0.0])
    max_outer = 3 * ne if max_outer is None else max_outer

    xi = np.zeros(ne)
    active = np.zeros(ne, dtype=bool)
    blocked = np.zeros(ne, dtype=bool)
    r = b.copy()
    history = [1.0]
    outer = 0
    # at least one outer iteration runs, so tau = 1 still selects an element
    while outer == 0 or np.linalg.norm(r) > tau * bn:
        if active.all():
            logger.warning("sparse NNLS selected every element (relative residual %.3e)", history[-1])
            break
        if outer == max_outer:
            raise NnlsStall(history[-1])
        outer += 1
        mu = G.T @ r
        mu[active | blocked] = -np.inf
        e = int(np.argmax(mu))
        if not mu[e] > 0.0:
            raise NnlsStall(history[-1])
        active[e] = True
        first = True
        while True:
            E = np.flatnonzero(active)
            zeta = _pivoted_lstsq(G[:, E], b)
            if np.all(zeta > 0.0):
                xi[:] = 0.0
                xi[E] = zeta
                break
            xE = xi[E]
            neg = np.flatnonzero(zeta <= 0.0)
            ratios = xE[neg] / (xE[neg] - zeta[neg])
            eta = ratios.min()
            xE = xE + eta * (zeta - xE)
            drop = xE <= 1e-15 * np.abs(xE).max()
            drop[neg[np.argmin(ratios)]] = True
            if first and eta == 0.0 and drop[np.searchsorted(E, e)]:
                # round-off made the new element useless; try another one
                blocked[e] = True
            xi[:] = 0.0
            xi[E] = np.where(drop, 0.0, xE)
            active[E[drop]] = False
            first = False
            if not active.any():
                break
        r = b - G @ xi
        rho = np.linalg.norm(r) / bn
        if rho < history[-1]:
            blocked[:] = False
        history.append(rho)
    E = np.flatnonzero(xi > 0.0)
    return ReducedMesh(E, xi[E], ne, tau, float(np.linalg.norm(b - G @ xi) / bn), history)


# -- training driver ---------------------------------------------------------------


def mapping_hash(mapping) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mapping.Phi, dtype="<f8").tobytes())
    if mapping.Omega is not None:
        h.update(np.ascontiguousarray(mapping.Omega, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def train(model, trajectory, n_t: int = 200, tau: float = 0.01, training: TrainingSet | None = None) -> ReducedMesh:
    """Train a reduced mesh for ``model`` from a stored trajectory."""
    if training is None:
        training = training_set(model.mapping, trajectory, n_t)
    G, b = assemble_G_b(model, training)
    mesh = sparse_nnls(G, b, tau)
    mhash = mapping_hash(model.mapping)
    terms = model.terms.label()
    prov = hashlib.sha256(f"{mhash}|{tau!r}|{n_t}|{terms}".encode()).hexdigest()[:16]
    mesh.metadata.update(
        provenance=prov,
        mapping=mhash,
        n_t=training.size,
        terms=terms,
        source="reduced" if trajectory is not None and trajectory.reduced else "full",
    )
    return mesh
