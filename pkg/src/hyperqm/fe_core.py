"""Geometrically nonlinear plane-frame finite elements.

Each node carries three DOFs: axial displacement ``u``, transverse
displacement ``w`` and rotation ``theta``.  The element uses linear axial
and cubic Hermite transverse interpolation with the von Karman membrane
strain ``eps = u' + 0.5 * w'**2`` and curvature ``kappa = w''``.

Sign convention follows the equations of motion

    M u'' + C u' - f(u) = f_ext(t)

so the internal force is ``f = -dV/du`` and the tangent stiffness is
``K = -df/du`` (the Hessian of the strain energy).

Element quantities are evaluated in batches: an :class:`ElementBatch`
holds the precomputed geometric data for any subset of elements and all
kernel evaluations are vectorised over that subset.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

# DOFs per node and per element
NDOF_NODE = 3
NDOF_ELEM = 6

_AXIAL = np.array([0, 3])
_BEND = np.array([1, 2, 4, 5])

# Gauss rules on [0, 1]
_GAUSS2 = (np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)]), np.array([0.5, 0.5]))
_GAUSS3 = (
    np.array([0.5 - 0.5 * np.sqrt(0.6), 0.5, 0.5 + 0.5 * np.sqrt(0.6)]),
    np.array([5.0, 8.0, 5.0]) / 18.0,
)


class MeshError(ValueError):
    pass


class AssemblyError(RuntimeError):
    """Raised when an element produces unusable output during assembly."""

    def __init__(self, message: str, element: int | None = None):
        super().__init__(message if element is None else f"element {element}: {message}")
        self.element = element


# --------------------------------------------------------------------------
# Mesh
# --------------------------------------------------------------------------


@dataclass
class Mesh:
    """Nodes, two-node connectivity and DOF numbering with eliminated supports.

    ``dof_map[node, k]`` is the global index of local DOF ``k`` of ``node`` or
    ``-1`` when that DOF is constrained.
    """

    nodes: np.ndarray
    elements: np.ndarray
    fixed_dofs: frozenset = frozenset()
    dof_map: np.ndarray = field(init=False)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float).reshape(-1, 2)
        self.elements = np.asarray(self.elements, dtype=np.int64).reshape(-1, 2)
        self.fixed_dofs = frozenset(int(d) for d in self.fixed_dofs)
        n_nodes = len(self.nodes)
        if len(self.elements) == 0:
            raise MeshError("mesh has no elements")
        if self.elements.min() < 0 or self.elements.max() >= n_nodes:
            raise MeshError("element references a node that does not exist")
        same = np.flatnonzero(self.elements[:, 0] == self.elements[:, 1])
        if same.size:
            raise MeshError(f"element {same[0]} connects a node to itself")
        bad = [d for d in self.fixed_dofs if not 0 <= d < NDOF_NODE * n_nodes]
        if bad:
            raise MeshError(f"fixed DOF {bad[0]} out of range")
        lengths = np.linalg.norm(np.diff(self.nodes[self.elements], axis=1)[:, 0], axis=1)
        if np.any(lengths <= 0.0):
            raise MeshError(f"element {int(np.argmin(lengths))} has zero length")

        free = np.ones(NDOF_NODE * n_nodes, dtype=bool)
        free[list(self.fixed_dofs)] = False
        dof_map = np.full(NDOF_NODE * n_nodes, -1, dtype=np.int64)
        dof_map[free] = np.arange(free.sum())
        self.dof_map = dof_map.reshape(n_nodes, NDOF_NODE)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_dofs(self) -> int:
        return NDOF_NODE * self.n_nodes - len(self.fixed_dofs)

    def element_dofs(self) -> np.ndarray:
        """(n_e, 6) global DOF indices per element; constrained DOFs are ``-1``."""
        return self.dof_map[self.elements].reshape(-1, NDOF_ELEM)

    def lengths(self) -> np.ndarray:
        return np.linalg.norm(self.nodes[self.elements[:, 1]] - self.nodes[self.elements[:, 0]], axis=1)

    def directions(self) -> np.ndarray:
        d = self.nodes[self.elements[:, 1]] - self.nodes[self.elements[:, 0]]
        return d / np.linalg.norm(d, axis=1)[:, None]


SUPPORTS = {
    "free": (),
    "roller": (1,),
    "pinned": (0, 1),
    "clamped": (0, 1, 2),
}


def strip_mesh(length: float, n_elements: int, left: str = "pinned", right: str = "pinned") -> Mesh:
    """Straight strip along x with end supports ``free``, ``roller``, ``pinned`` or ``clamped``."""
    if n_elements < 1:
        raise MeshError("need at least one element")
    for name in (left, right):
        if name not in SUPPORTS:
            raise MeshError(f"unknown support {name!r}; expected one of {sorted(SUPPORTS)}")
    x = np.linspace(0.0, length, n_elements + 1)
    nodes = np.column_stack([x, np.zeros_like(x)])
    elements = np.column_stack([np.arange(n_elements), np.arange(1, n_elements + 1)])
    fixed = [NDOF_NODE * 0 + k for k in SUPPORTS[left]]
    fixed += [NDOF_NODE * n_elements + k for k in SUPPORTS[right]]
    return Mesh(nodes, elements, frozenset(fixed))


# --------------------------------------------------------------------------
# Element kernel
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class VonKarmanBeam:
    """Material and section data for the von Karman plane-frame element.

    The section is a plate strip in cylindrical bending, so the effective
    modulus is ``E / (1 - nu**2)``.  Damping is Rayleigh,
    ``C_e = alpha * M_e + beta * K_e(0)``.  Setting ``nonlinear=False`` drops
    the ``0.5 * w'**2`` term and gives a linear Euler-Bernoulli frame.
    """

    E: float
    nu: float
    rho: float
    thickness: float
    width: float = 1.0
    alpha: float = 0.0
    beta: float = 0.0
    nonlinear: bool = True

    @property
    def modulus(self) -> float:
        return self.E / (1.0 - self.nu**2)

    @property
    def area(self) -> float:
        return self.width * self.thickness

    @property
    def inertia(self) -> float:
        return self.width * self.thickness**3 / 12.0

    def prepare(self, lengths, directions=None, ids=None) -> ElementBatch:
        return ElementBatch.build(self, lengths, directions, ids)


def _hermite_slope(xi, L):
    """d/dx of the Hermite functions for (w1, th1, w2, th2)."""
    one = np.ones_like(L)
    return np.stack(
        [(-6 * xi + 6 * xi**2) / L, (1 - 4 * xi + 3 * xi**2) * one, (6 * xi - 6 * xi**2) / L, (-2 * xi + 3 * xi**2) * one],
        axis=-1,
    )


def _hermite_curvature(xi, L):
    return np.stack([(-6 + 12 * xi) / L**2, (-4 + 6 * xi) / L, (6 - 12 * xi) / L**2, (-2 + 6 * xi) / L], axis=-1)


@dataclass(frozen=True, eq=False)
class ElementBatch:
    """Precomputed data for a set of elements; evaluation is pure and vectorised."""

    ids: np.ndarray
    lengths: np.ndarray
    rotation: np.ndarray | None  # (k, 6, 6) local <- global, None when all aligned with x
    EA: float
    nonlinear: bool
    axial_B: np.ndarray  # (k, 6)
    slope_G: np.ndarray  # (ngp, k, 6) membrane Gauss points
    weights_m: np.ndarray  # (ngp, k) = w_g * L
    K_bend: np.ndarray  # (k, 6, 6) bending stiffness, local frame
    M_local: np.ndarray
    mass: np.ndarray  # (k, 6, 6) global frame
    stiffness0: np.ndarray
    damping: np.ndarray
    kernel: VonKarmanBeam

    @classmethod
    def build(cls, kernel: VonKarmanBeam, lengths, directions=None, ids=None) -> ElementBatch:
        L = np.asarray(lengths, dtype=float).reshape(-1)
        k = L.size
        ids = np.arange(k) if ids is None else np.asarray(ids, dtype=np.int64)
        EA = kernel.modulus * kernel.area
        EI = kernel.modulus * kernel.inertia
        rhoA = kernel.rho * kernel.area

        axial_B = np.zeros((k, NDOF_ELEM))
        axial_B[:, 0] = -1.0 / L
        axial_B[:, 3] = 1.0 / L

        xg, wg = _GAUSS2
        slope_G = np.zeros((len(xg), k, NDOF_ELEM))
        for g, xi in enumerate(xg):
            slope_G[g][:, _BEND] = _hermite_slope(xi, L)
        weights_m = wg[:, None] * L[None, :]

        K_bend = np.zeros((k, NDOF_ELEM, NDOF_ELEM))
        xb, wb = _GAUSS3
        for xi, w in zip(xb, wb):
            H = np.zeros((k, NDOF_ELEM))
            H[:, _BEND] = _hermite_curvature(xi, L)
            K_bend += EI * w * np.einsum("k,ka,kb->kab", L, H, H)
        K_lin = K_bend + EA * np.einsum("k,ka,kb->kab", L, axial_B, axial_B)

        M = np.zeros((k, NDOF_ELEM, NDOF_ELEM))
        Ma = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
        M[:, _AXIAL[:, None], _AXIAL[None, :]] = rhoA * L[:, None, None] * Ma
        l1, l2 = L, L**2
        Mb = np.stack(
            [
                np.stack([156 * np.ones_like(L), 22 * l1, 54 * np.ones_like(L), -13 * l1], -1),
                np.stack([22 * l1, 4 * l2, 13 * l1, -3 * l2], -1),
                np.stack([54 * np.ones_like(L), 13 * l1, 156 * np.ones_like(L), -22 * l1], -1),
                np.stack([-13 * l1, -3 * l2, -22 * l1, 4 * l2], -1),
            ],
            axis=1,
        )
        M[:, _BEND[:, None], _BEND[None, :]] = (rhoA * L / 420.0)[:, None, None] * Mb

        rotation = None
        if directions is not None:
            d = np.asarray(directions, dtype=float).reshape(-1, 2)
            if not (np.all(d[:, 0] == 1.0) and np.all(d[:, 1] == 0.0)):
                c, s = d[:, 0], d[:, 1]
                R = np.zeros((k, NDOF_ELEM, NDOF_ELEM))
                for o in (0, 3):
                    R[:, o, o] = c
                    R[:, o, o + 1] = s
                    R[:, o + 1, o] = -s
                    R[:, o + 1, o + 1] = c
                    R[:, o + 2, o + 2] = 1.0
                rotation = R

        def to_global(A):
            if rotation is None:
                return A.copy()
            B = np.einsum("kia,kij,kjb->kab", rotation, A, rotation)
            return 0.5 * (B + np.swapaxes(B, 1, 2))

        mass = to_global(M)
        stiffness0 = to_global(K_lin)
        damping = kernel.alpha * mass + kernel.beta * stiffness0
        return cls(
            ids=ids,
            lengths=L,
            rotation=rotation,
            EA=EA,
            nonlinear=kernel.nonlinear,
            axial_B=axial_B,
            slope_G=slope_G,
            weights_m=weights_m,
            K_bend=K_bend,
            M_local=M,
            mass=mass,
            stiffness0=stiffness0,
            damping=damping,
            kernel=kernel,
        )

    def __len__(self):
        return self.lengths.size

    def subset(self, idx) -> ElementBatch:
        idx = np.asarray(idx, dtype=np.int64)
        return ElementBatch(
            ids=self.ids[idx],
            lengths=self.lengths[idx],
            rotation=None if self.rotation is None else self.rotation[idx],
            EA=self.EA,
            nonlinear=self.nonlinear,
            axial_B=self.axial_B[idx],
            slope_G=self.slope_G[:, idx],
            weights_m=self.weights_m[:, idx],
            K_bend=self.K_bend[idx],
            M_local=self.M_local[idx],
            mass=self.mass[idx],
            stiffness0=self.stiffness0[idx],
            damping=self.damping[idx],
            kernel=self.kernel,
        )

    # -- kernel evaluations ------------------------------------------------

    def _local(self, ue):
        if self.rotation is not None:
            ue = np.einsum("kab,kb->ka", self.rotation, ue)
        return ue

    def _deformation(self, ue):
        """Local displacements with the first node's translation removed.

        Strains are invariant to rigid translation; removing it first keeps
        large nodal displacements from cancelling in the element sums.
        """
        d = np.array(self._local(np.asarray(ue, dtype=float)), dtype=float)
        d[:, 3] -= d[:, 0]
        d[:, 4] -= d[:, 1]
        d[:, :2] = 0.0
        return d

    def _nonlinear_terms(self, d):
        """Membrane strain and its gradient at the membrane Gauss points."""
        axial = np.einsum("ka,ka->k", self.axial_B, d)
        if not self.nonlinear:
            return axial[None, :], np.broadcast_to(self.axial_B, self.slope_G.shape), None
        s = np.einsum("gka,ka->gk", self.slope_G, d)
        eps = axial[None, :] + 0.5 * s * s
        deps = self.axial_B[None, :, :] + s[..., None] * self.slope_G
        return eps, deps, s

    def natural_transform(self) -> np.ndarray:
        """(k, 6, 6) map from global element displacements to bending deformation.

        Removes the rigid translation and the chord rotation ``(w2 - w1)/L`` in
        the local frame; the bending stiffness annihilates both, so
        ``K_bend @ (T @ ue)`` equals ``K_bend @ local(ue)`` exactly.  Applying
        ``T`` to mapping rows ahead of time keeps fine-mesh bending forces
        free of cancellation.
        """
        k = len(self)
        T = np.zeros((k, NDOF_ELEM, NDOF_ELEM))
        invL = 1.0 / self.lengths
        for r in (2, 5):
            T[:, r, r] = 1.0
            T[:, r, 1] = invL
            T[:, r, 4] = -invL
        if self.rotation is not None:
            T = T @ self.rotation
        return T

    def strain_energy(self, ue) -> np.ndarray:
        """V_e for each element, shape (k,)."""
        d = self._deformation(ue)
        eps, _, _ = self._nonlinear_terms(d)
        bend = 0.5 * np.einsum("ka,kab,kb->k", d, self.K_bend, d)
        return bend + 0.5 * self.EA * np.sum(self.weights_m * eps**2, axis=0)

    def internal_force(self, ue) -> np.ndarray:
        return self.force_and_tangent(ue, tangent=False)[0]

    def tangent(self, ue) -> np.ndarray:
        return self.force_and_tangent(ue)[1]

    def force_and_tangent(self, ue, tangent=True, bending=None):
        """Return ``(f_e, K_e)`` in the global frame; ``f_e = -dV_e/du_e``.

        ``bending`` optionally supplies ``natural_transform() @ ue`` computed
        by the caller with less round-off.
        """
        d = self._deformation(ue)
        eps, deps, s = self._nonlinear_terms(d)
        N = self.EA * self.weights_m * eps  # (g, k)
        db = d if bending is None else bending
        f = -np.einsum("kab,kb->ka", self.K_bend, db) - np.einsum("gk,gka->ka", N, deps)
        K = None
        if tangent:
            K = self.K_bend + self.EA * np.einsum("gk,gka,gkb->kab", self.weights_m, deps, deps)
            if s is not None:
                K = K + np.einsum("gk,gka,gkb->kab", N, self.slope_G, self.slope_G)
            K = 0.5 * (K + np.swapaxes(K, 1, 2))
            if self.rotation is not None:
                K = np.einsum("kia,kij,kjb->kab", self.rotation, K, self.rotation)
                K = 0.5 * (K + np.swapaxes(K, 1, 2))
        if self.rotation is not None:
            f = np.einsum("kia,ki->ka", self.rotation, f)
        return f, K

    def kinetic_energy(self, ve) -> np.ndarray:
        return 0.5 * np.einsum("ka,kab,kb->k", ve, self.mass, ve)

    def dissipation(self, ve) -> np.ndarray:
        """Rayleigh dissipation functional ``D_e = 0.5 ve^T C_e ve`` (degree 2)."""
        return 0.5 * np.einsum("ka,kab,kb->k", ve, self.damping, ve)


# --------------------------------------------------------------------------
# Assembled structure
# --------------------------------------------------------------------------


class Structure:
    """Mesh plus kernel with cached scatter/gather maps and sparse patterns."""

    homogeneity = 2  # Rayleigh damping

    def __init__(self, mesh: Mesh, kernel: VonKarmanBeam):
        self.mesh = mesh
        self.kernel = kernel
        self.n = mesh.n_dofs
        self.n_elements = mesh.n_elements
        edofs = mesh.element_dofs()
        # constrained DOFs gather from a padded zero slot at index n
        self.edofs = np.where(edofs < 0, self.n, edofs)
        self.batch = kernel.prepare(mesh.lengths(), mesh.directions())

        rows = np.repeat(self.edofs[:, :, None], NDOF_ELEM, axis=2)
        cols = np.repeat(self.edofs[:, None, :], NDOF_ELEM, axis=1)
        keep = (rows < self.n) & (cols < self.n)
        self._keep = keep
        pattern = sp.coo_matrix(
            (np.ones(keep.sum()), (rows[keep], cols[keep])), shape=(self.n, self.n)
        ).tocsr()
        pattern.sum_duplicates()
        pattern.sort_indices()
        self._indptr = pattern.indptr
        self._indices = pattern.indices
        # position of every kept element entry in the CSR data array
        r, c = rows[keep].astype(np.int64), cols[keep].astype(np.int64)
        key_rows = np.repeat(np.arange(self.n, dtype=np.int64), np.diff(pattern.indptr))
        pos = np.searchsorted(key_rows * self.n + pattern.indices, r * self.n + c)
        self._pos = pos
        self._nnz = pattern.nnz
        self._mass = None
        self._stiffness0 = None
        self._damping = None

    # -- gather / scatter --------------------------------------------------

    def gather(self, u, ids=None) -> np.ndarray:
        """Element-local values ``(k, 6)``; constrained DOFs read as zero."""
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != self.n:
            raise ValueError(f"expected a vector of length {self.n}, got {u.shape[-1]}")
        padded = np.concatenate([u, np.zeros(u.shape[:-1] + (1,))], axis=-1)
        edofs = self.edofs if ids is None else self.edofs[ids]
        return padded[..., edofs]

    def scatter(self, fe, ids=None) -> np.ndarray:
        edofs = self.edofs if ids is None else self.edofs[ids]
        out = np.bincount(edofs.ravel(), weights=np.asarray(fe).ravel(), minlength=self.n + 1)
        return out[: self.n]

    def assemble_matrix(self, Ke) -> sp.csr_matrix:
        data = np.bincount(self._pos, weights=np.asarray(Ke)[self._keep], minlength=self._nnz)
        return sp.csr_matrix((data, self._indices.copy(), self._indptr.copy()), shape=(self.n, self.n))

    def _check(self, arr, what):
        if not np.all(np.isfinite(arr)):
            axes = tuple(range(1, arr.ndim))
            bad = np.flatnonzero(~np.all(np.isfinite(arr), axis=axes))[0]
            raise AssemblyError(f"non-finite {what}", element=int(self.batch.ids[bad]))

    # -- assembled operators -----------------------------------------------

    def mass(self) -> sp.csr_matrix:
        if self._mass is None:
            Me = self.batch.mass
            self._check(Me, "mass matrix")
            eig = np.linalg.eigvalsh(Me)
            if np.any(eig[:, 0] <= 0.0):
                bad = int(np.flatnonzero(eig[:, 0] <= 0.0)[0])
                raise AssemblyError("element mass matrix is not positive definite", element=bad)
            self._mass = self.assemble_matrix(Me)
        return self._mass

    def stiffness0(self) -> sp.csr_matrix:
        if self._stiffness0 is None:
            self._stiffness0 = self.assemble_matrix(self.batch.stiffness0)
        return self._stiffness0

    def damping(self) -> sp.csr_matrix:
        if self._damping is None:
            self._damping = self.assemble_matrix(self.batch.damping)
        return self._damping

    def internal_force(self, u) -> np.ndarray:
        fe, _ = self.batch.force_and_tangent(self.gather(u), tangent=False)
        self._check(fe, "internal force")
        return self.scatter(fe)

    def tangent(self, u) -> sp.csr_matrix:
        return self.force_and_tangent(u)[1]

    def force_and_tangent(self, u):
        fe, Ke = self.batch.force_and_tangent(self.gather(u))
        self._check(fe, "internal force")
        self._check(Ke, "tangent stiffness")
        return self.scatter(fe), self.assemble_matrix(Ke)

    def strain_energy(self, u) -> float:
        return float(np.sum(self.batch.strain_energy(self.gather(u))))

    def kinetic_energy(self, v) -> float:
        return float(np.sum(self.batch.kinetic_energy(self.gather(v))))

    def dissipation(self, v) -> float:
        return float(np.sum(self.batch.dissipation(self.gather(v))))


def assemble_mass(mesh: Mesh, kernel: VonKarmanBeam) -> sp.csr_matrix:
    return Structure(mesh, kernel).mass()


def assemble_internal_force(mesh: Mesh, kernel: VonKarmanBeam, u) -> np.ndarray:
    return Structure(mesh, kernel).internal_force(u)


def assemble_tangent(mesh: Mesh, kernel: VonKarmanBeam, u) -> sp.csr_matrix:
    return Structure(mesh, kernel).tangent(u)


def element_state(mesh: Mesh, u, ud, e: int):
    """Gather ``(u_e, ud_e)`` for element ``e``; constrained DOFs read as 0."""
    if not 0 <= e < mesh.n_elements:
        raise IndexError(f"element {e} out of range")
    dofs = mesh.element_dofs()[e]
    u = np.asarray(u, dtype=float)
    ud = np.asarray(ud, dtype=float)
    ue = np.where(dofs >= 0, u[np.maximum(dofs, 0)], 0.0)
    ve = np.where(dofs >= 0, ud[np.maximum(dofs, 0)], 0.0)
    return ue, ve


# --------------------------------------------------------------------------
# Loads
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Sinusoidal:
    amplitude: float
    omega: float

    def __call__(self, t: float) -> float:
        return self.amplitude * np.sin(self.omega * t)


@dataclass(frozen=True)
class SinSquaredPulse:
    """``A sin^2(omega t)`` on ``[0, pi/omega)``, zero afterwards."""

    A: float
    omega: float

    def __call__(self, t: float) -> float:
        if t < 0.0 or t >= np.pi / self.omega:
            return 0.0
        return self.A * np.sin(self.omega * t) ** 2


@dataclass(frozen=True)
class Constant:
    value: float = 1.0

    def __call__(self, t: float) -> float:
        return self.value


@dataclass(frozen=True, eq=False)
class LoadCase:
    l: np.ndarray
    p: Sinusoidal | SinSquaredPulse | Constant
    conservative: bool = False

    def __call__(self, t: float) -> np.ndarray:
        return external_force(self, t)


def external_force(loadcase: LoadCase, t: float) -> np.ndarray:
    if t < 0:
        raise ValueError("time must be non-negative")
    return loadcase.p(t) * loadcase.l


def uniform_transverse_load(structure: Structure, pressure: float) -> np.ndarray:
    """Consistent nodal load vector for a pressure acting normal to each element.

    The force per unit length is ``pressure * width``.
    """
    mesh = structure.mesh
    q = pressure * structure.kernel.width
    L = mesh.lengths()
    fl = np.zeros((mesh.n_elements, NDOF_ELEM))
    fl[:, 1] = fl[:, 4] = q * L / 2.0
    fl[:, 2] = q * L**2 / 12.0
    fl[:, 5] = -q * L**2 / 12.0
    R = structure.batch.rotation
    if R is not None:
        fl = np.einsum("kia,ki->ka", R, fl)
    return structure.scatter(fl)


def point_load(structure: Structure, node: int, local_dof: int, value: float) -> np.ndarray:
    l = np.zeros(structure.n)
    g = structure.mesh.dof_map[node, local_dof]
    if g < 0:
        raise ValueError(f"DOF {local_dof} of node {node} is constrained")
    l[g] = value
    return l


# --------------------------------------------------------------------------
# High-fidelity system
# --------------------------------------------------------------------------


class HighFidelityModel:
    """Full equations of motion ``M a + C v - f(x) - f_ext(t) = 0``.

    Exposes the residual/Jacobian/energy interface consumed by the time
    integrator; Jacobians are sparse.
    """

    homogeneity = 2
    is_reduced = False

    def __init__(self, structure: Structure, loadcase: LoadCase | None = None):
        self.structure = structure
        self.loadcase = loadcase
        self.dim = structure.n
        self.M = structure.mass()
        self.C = structure.damping()

    def load_factor(self, t):
        return 0.0 if self.loadcase is None else self.loadcase.p(t)

    def _fext(self, t):
        return np.zeros(self.dim) if self.loadcase is None else external_force(self.loadcase, t)

    def residual(self, x, v, a, t=0.0) -> np.ndarray:
        return self.M @ a + self.C @ v - self.structure.internal_force(x) - self._fext(t)

    def residual_and_jacobians(self, x, v, a, t=0.0):
        f, K = self.structure.force_and_tangent(x)
        r = self.M @ a + self.C @ v - f - self._fext(t)
        return r, (K, self.C, self.M)

    def kinetic_energy(self, x, v) -> float:
        return 0.5 * float(v @ (self.M @ v))

    def potential_energy(self, x) -> float:
        return self.structure.strain_energy(x)

    def dissipation(self, x, v) -> float:
        return 0.5 * float(v @ (self.C @ v))

    def external_power(self, x, v, t) -> float:
        return float(v @ self._fext(t))

    def lift(self, x, v=None, a=None):
        return x, v, a
