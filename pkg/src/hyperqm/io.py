"""File formats for meshes, bases, matrices and trajectories.

Basis container (``.hqmb``), all integers and floats little-endian::

    magic    8 bytes   b"HQMBASIS"
    version  uint32    1
    kind     uint32    0 = linear basis, 1 = quadratic manifold
    n        uint64    number of rows (DOFs)
    M        uint64    number of columns (reduced coordinates)
    Phi      n*M float64, row-major
    Omega    (kind 1 only) M(M+1)/2 slabs of n float64, one per pair
             i <= j in the order (0,0), (0,1), ..., (0,M-1), (1,1), ...

Meshes and trajectories are stored as ``.npz`` archives; matrices are
exported in Matrix Market format for cross-checks with other tools.
"""

from __future__ import annotations

import struct

import numpy as np
import scipy.io
import scipy.sparse as sp

from .fe_core import Mesh
from .reduction_basis import LinearBasis, QuadraticManifold

MAGIC = b"HQMBASIS"
_HEADER = struct.Struct("<8sIIQQ")


def write_basis(path, mapping) -> None:
    n, M = mapping.Phi.shape
    kind = 0 if mapping.is_linear else 1
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, 1, kind, n, M))
        fh.write(np.ascontiguousarray(mapping.Phi, dtype="<f8").tobytes())
        if kind:
            for i, j in zip(*np.triu_indices(M)):
                fh.write(np.ascontiguousarray(mapping.Omega[:, i, j], dtype="<f8").tobytes())


def read_basis(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated basis file")
    magic, version, kind, n, M = _HEADER.unpack_from(data)
    if magic != MAGIC or version != 1:
        raise ValueError(f"{path}: not a version-1 basis container")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    n_slabs = M * (M + 1) // 2 if kind == 1 else 0
    if body.size != n * M + n_slabs * n:
        raise ValueError(f"{path}: expected {n * M + n_slabs * n} values, found {body.size}")
    Phi = body[: n * M].reshape(n, M).astype(float)
    if kind == 0:
        return LinearBasis(Phi)
    Omega = np.empty((n, M, M))
    slabs = body[n * M:].reshape(n_slabs, n)
    for s, (i, j) in enumerate(zip(*np.triu_indices(M))):
        Omega[:, i, j] = slabs[s]
        Omega[:, j, i] = slabs[s]
    return QuadraticManifold(Phi, Omega)


def export_matrix(path, A, comment: str = "") -> None:
    """Matrix Market export; sparse symmetric matrices keep their pattern."""
    if sp.issparse(A):
        A = sp.coo_matrix(A)
    scipy.io.mmwrite(str(path), A, comment=comment, precision=17)


def import_matrix(path):
    return scipy.io.mmread(str(path))


def save_mesh(path, mesh: Mesh) -> None:
    np.savez(path, nodes=mesh.nodes, elements=mesh.elements, fixed_dofs=np.array(sorted(mesh.fixed_dofs), dtype=np.int64))


def load_mesh(path) -> Mesh:
    with np.load(path) as z:
        return Mesh(z["nodes"], z["elements"], frozenset(z["fixed_dofs"].tolist()))
