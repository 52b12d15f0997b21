"""Linear reduction bases and the quadratic manifold.

The quadratic manifold maps reduced coordinates ``q`` (length ``M``) to

    u = Phi q + 0.5 * Omega : (q x q)

with ``Phi`` the vibration modes and ``Omega[:, i, j]`` the static modal
derivatives.  Both mapping types expose the same methods (``eval``,
``tangent``, ``curvature``, ``restrict``) so downstream code treats them
uniformly; :class:`LinearBasis` simply has no quadratic part.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

logger = logging.getLogger(__name__)

# below this size the dense symmetric solver is used
_DENSE_EIG_LIMIT = 64


class BasisError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class LinearBasis:
    V: np.ndarray

    def __post_init__(self):
        V = np.asarray(self.V, dtype=float)
        if V.ndim != 2:
            raise ValueError("basis must be an (n, m) matrix")
        object.__setattr__(self, "V", V)

    is_linear = True

    @property
    def n(self) -> int:
        return self.V.shape[0]

    @property
    def size(self) -> int:
        return self.V.shape[1]

    @property
    def Phi(self) -> np.ndarray:
        return self.V

    Omega = None

    def _check(self, q):
        q = np.asarray(q, dtype=float)
        if q.shape != (self.size,):
            raise ValueError(f"expected reduced vector of length {self.size}, got shape {q.shape}")
        return q

    def eval(self, q) -> np.ndarray:
        return self.V @ self._check(q)

    def tangent(self, q) -> np.ndarray:
        self._check(q)
        return self.V

    def curvature(self, qd) -> np.ndarray:
        self._check(qd)
        return np.zeros(self.n)

    def restrict(self, edofs: np.ndarray):
        """Rows of the mapping at element DOFs; index ``n`` is a zero row."""
        Vp = np.vstack([self.V, np.zeros((1, self.size))])
        return Vp[edofs], None


@dataclass(frozen=True, eq=False)
class QuadraticManifold:
    Phi: np.ndarray
    Omega: np.ndarray

    def __post_init__(self):
        Phi = np.asarray(self.Phi, dtype=float)
        Omega = np.asarray(self.Omega, dtype=float)
        n, M = Phi.shape
        if Omega.shape != (n, M, M):
            raise ValueError(f"Omega must have shape {(n, M, M)}, got {Omega.shape}")
        object.__setattr__(self, "Phi", Phi)
        object.__setattr__(self, "Omega", Omega)

    is_linear = False

    @property
    def n(self) -> int:
        return self.Phi.shape[0]

    @property
    def size(self) -> int:
        return self.Phi.shape[1]

    def _check(self, q):
        q = np.asarray(q, dtype=float)
        if q.shape != (self.size,):
            raise ValueError(f"expected reduced vector of length {self.size}, got shape {q.shape}")
        return q

    def eval(self, q) -> np.ndarray:
        q = self._check(q)
        return self.Phi @ q + 0.5 * (self.Omega @ q) @ q

    def tangent(self, q) -> np.ndarray:
        # valid because Omega is symmetric in its last two indices
        return self.Phi + self.Omega @ self._check(q)

    def curvature(self, qd) -> np.ndarray:
        """Second derivative of the mapping contracted twice with ``qd``."""
        qd = self._check(qd)
        return (self.Omega @ qd) @ qd

    def restrict(self, edofs: np.ndarray):
        n, M = self.Phi.shape
        Pp = np.vstack([self.Phi, np.zeros((1, M))])
        Op = np.concatenate([self.Omega, np.zeros((1, M, M))])
        return Pp[edofs], Op[edofs]


def _fix_signs(V):
    """Make the first entry of near-maximal magnitude in each column positive.

    Near-ties (symmetric modes) are resolved by position, not by round-off.
    """
    A = np.abs(V)
    idx = np.argmax(A >= (1.0 - 1e-6) * A.max(axis=0), axis=0)
    return V * np.sign(V[idx, np.arange(V.shape[1])])


def map_eval(mapping, q):
    return mapping.eval(q)


def map_tangent(mapping, q):
    return mapping.tangent(q)


def map_curvature_contraction(mapping, qd):
    return mapping.curvature(qd)


def vibration_modes(M, K0, count: int):
    """Lowest ``count`` eigenpairs of ``K0 phi = omega^2 M phi``.

    Returns angular frequencies (ascending) and mass-normalised modes with a
    deterministic sign (first entry of largest magnitude positive).
    """
    n = M.shape[0]
    if count < 1 or count > n:
        raise BasisError(f"requested {count} modes from a system with {n} DOFs")
    if n <= _DENSE_EIG_LIMIT or count >= n - 1:
        Md = M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)
        Kd = K0.toarray() if sp.issparse(K0) else np.asarray(K0, dtype=float)
        lam, phi = sla.eigh(Kd, Md, subset_by_index=[0, count - 1])
    else:
        M = sp.csc_matrix(M)
        K0 = sp.csc_matrix(K0)
        v0 = np.ones(n)
        v0 /= np.sqrt(v0 @ (M @ v0))
        try:
            lam, phi = spla.eigsh(K0, k=count, M=M, sigma=0.0, which="LM", v0=v0)
        except spla.ArpackNoConvergence as exc:
            raise BasisError(f"eigen-solver did not converge: {exc}") from exc
        order = np.argsort(lam)
        lam, phi = lam[order], phi[:, order]
    # rigid-body modes come out as tiny negatives
    scale = np.finfo(float).eps * 1e3 * abs(K0.diagonal()).max() / abs(M.diagonal()).max()
    if np.any(lam < -scale):
        raise BasisError("negative eigenvalue; the stiffness matrix is not positive semi-definite")
    lam = np.maximum(lam, 0.0)
    Mphi = M @ phi
    phi = phi / np.sqrt(np.einsum("ij,ij->j", phi, Mphi))
    return np.sqrt(lam), _fix_signs(phi)


def _directional_tangent_derivative(structure, phi, step):
    return (structure.tangent(step * phi) - structure.tangent(-step * phi)) / (2.0 * step)


def static_modal_derivatives(structure, Phi, step=None, check=True) -> np.ndarray:
    """Static modal derivatives of every mode pair by differencing the tangent.

    ``theta_ij = -K0^{-1} (dK(eps phi_j)/deps) phi_i`` is evaluated with a
    central difference of step ``1e-4 * span / max|phi_j|``; the result is
    symmetrised in ``(i, j)``.  With ``check`` the step is halved once and the
    two estimates compared.
    """
    Phi = np.asarray(Phi, dtype=float)
    n, M = Phi.shape
    span = float(np.ptp(structure.mesh.nodes, axis=0).max())
    try:
        solve = spla.factorized(sp.csc_matrix(structure.stiffness0()))
    except RuntimeError as exc:
        raise BasisError(f"singular K0: {exc}") from exc
    dK = []
    for j in range(M):
        h = step if step is not None else 1e-4 * span / np.abs(Phi[:, j]).max()
        D = _directional_tangent_derivative(structure, Phi[:, j], h)
        if check:
            D2 = _directional_tangent_derivative(structure, Phi[:, j], 0.5 * h)
            scale = max(abs(D).max(), np.finfo(float).tiny)
            if abs(D - D2).max() > 1e-6 * scale:
                logger.warning("modal derivative step for mode %d not converged (rel. change %.2e)", j, abs(D - D2).max() / scale)
            D = D2
        dK.append(D)
    Omega = np.zeros((n, M, M))
    for i in range(M):
        for j in range(i, M):
            rhs = 0.5 * (dK[j] @ Phi[:, i] + dK[i] @ Phi[:, j])
            theta = -solve(rhs)
            if not np.all(np.isfinite(theta)):
                raise BasisError("singular K0: modal derivative is not finite")
            Omega[:, i, j] = theta
            Omega[:, j, i] = theta
    return Omega


def quadratic_manifold(structure, count: int) -> tuple[np.ndarray, QuadraticManifold]:
    freqs, Phi = vibration_modes(structure.mass(), structure.stiffness0(), count)
    return freqs, QuadraticManifold(Phi, static_modal_derivatives(structure, Phi))


def pod_basis(snapshots, m: int, rtol: float | None = None) -> LinearBasis:
    """First ``m`` left singular vectors of the ``(n, n_s)`` snapshot matrix."""
    X = np.asarray(snapshots, dtype=float)
    if X.ndim != 2:
        raise ValueError("snapshots must be an (n, n_s) matrix")
    if X.shape[1] < m:
        raise BasisError(f"need at least {m} snapshots, got {X.shape[1]}")
    U, s, _ = np.linalg.svd(X, full_matrices=False)
    if rtol is None:
        rtol = max(X.shape) * np.finfo(float).eps
    rank = int(np.sum(s > rtol * (s[0] if s.size else 0.0)))
    if rank < m:
        raise BasisError(f"snapshot matrix has rank {rank} < {m}")
    return LinearBasis(_fix_signs(U[:, :m]))
