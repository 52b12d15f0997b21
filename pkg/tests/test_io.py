from __future__ import annotations

import struct

import numpy as np
import pytest
import scipy.sparse as sp

from conftest import make_structure
from hyperqm import io
from hyperqm.reduction_basis import LinearBasis, QuadraticManifold


def manifold(rng, n=7, M=3):
    Om = rng.normal(size=(n, M, M))
    return QuadraticManifold(rng.normal(size=(n, M)), Om + Om.transpose(0, 2, 1))


def test_basis_round_trip_is_bit_exact(tmp_path, rng):
    qm = manifold(rng)
    io.write_basis(tmp_path / "b.hqmb", qm)
    back = io.read_basis(tmp_path / "b.hqmb")
    assert isinstance(back, QuadraticManifold)
    np.testing.assert_array_equal(back.Phi, qm.Phi)
    np.testing.assert_array_equal(back.Omega, qm.Omega)


def test_basis_layout(tmp_path, rng):
    """Header, row-major Phi, then upper-triangle slabs."""
    qm = manifold(rng, n=4, M=2)
    io.write_basis(tmp_path / "b.hqmb", qm)
    data = (tmp_path / "b.hqmb").read_bytes()
    assert struct.unpack_from("<8sIIQQ", data) == (b"HQMBASIS", 1, 1, 4, 2)
    body = np.frombuffer(data[32:], dtype="<f8")
    np.testing.assert_array_equal(body[:8], qm.Phi.ravel())
    np.testing.assert_array_equal(body[8:12], qm.Omega[:, 0, 0])
    np.testing.assert_array_equal(body[12:16], qm.Omega[:, 0, 1])
    np.testing.assert_array_equal(body[16:20], qm.Omega[:, 1, 1])
    assert body.size == 20


def test_linear_basis(tmp_path, rng):
    V = rng.normal(size=(5, 2))
    io.write_basis(tmp_path / "v.hqmb", LinearBasis(V))
    back = io.read_basis(tmp_path / "v.hqmb")
    assert back.is_linear
    np.testing.assert_array_equal(back.V, V)


@pytest.mark.parametrize("corrupt", [lambda d: d[:20], lambda d: b"XXXXXXXX" + d[8:], lambda d: d[:-8]])
def test_basis_rejects_bad_files(tmp_path, rng, corrupt):
    io.write_basis(tmp_path / "b.hqmb", manifold(rng))
    (tmp_path / "b.hqmb").write_bytes(corrupt((tmp_path / "b.hqmb").read_bytes()))
    with pytest.raises(ValueError):
        io.read_basis(tmp_path / "b.hqmb")


def test_matrix_market(tmp_path):
    s = make_structure(6)
    K = s.stiffness0()
    io.export_matrix(tmp_path / "k.mtx", K, "stiffness")
    back = sp.csr_matrix(io.import_matrix(tmp_path / "k.mtx"))
    assert abs(back - K).max() == 0.0
    io.export_matrix(tmp_path / "d.mtx", np.arange(6.0).reshape(3, 2) / 7)
    np.testing.assert_array_equal(io.import_matrix(tmp_path / "d.mtx"), np.arange(6.0).reshape(3, 2) / 7)


def test_mesh_round_trip(tmp_path):
    mesh = make_structure(9, left="clamped", right="free").mesh
    io.save_mesh(tmp_path / "m.npz", mesh)
    back = io.load_mesh(tmp_path / "m.npz")
    np.testing.assert_array_equal(back.nodes, mesh.nodes)
    np.testing.assert_array_equal(back.elements, mesh.elements)
    assert back.fixed_dofs == mesh.fixed_dofs
