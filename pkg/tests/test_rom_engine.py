from __future__ import annotations

from types import SimpleNamespace

import numpy as np
import pytest

from conftest import make_structure
from hyperqm.fe_core import LoadCase, Sinusoidal, Structure, VonKarmanBeam, strip_mesh, uniform_transverse_load
from hyperqm.reduction_basis import LinearBasis, QuadraticManifold, quadratic_manifold
from hyperqm.rom_engine import (
    ALL_TERMS,
    INTERNAL_ONLY,
    ReducedModel,
    ReducedState,
    TermSelection,
    UntrainedModelError,
    hyper_force,
    lift,
    reduced_operators,
    reduced_residual,
)
from hyperqm.time_integrator import NewmarkParams, integrate


def damped_structure(n_elements=10):
    return make_structure(n_elements, alpha=30.0, beta=2e-6)


def manifold_model(n_elements=10, M=2, terms=ALL_TERMS):
    s = damped_structure(n_elements)
    w, qm = quadratic_manifold(s, M)
    lc = LoadCase(uniform_transverse_load(s, 1e4), Sinusoidal(1.0, w[0]))
    return ReducedModel(s, qm, lc, terms=terms), w


def random_state(rng, m, scale=2e-5):
    return ReducedState(rng.normal(size=m) * scale, rng.normal(size=m) * scale * 1e4, rng.normal(size=m) * scale * 1e8, 1e-4)


def dense_residual(model: ReducedModel, st: ReducedState):
    """Residual from assembled global matrices and vectors, no element loop."""
    s = model.structure
    mp = model.mapping
    u = mp.eval(st.q)
    P = mp.tangent(st.q)
    ud = P @ st.qd
    udd = P @ st.qdd + mp.curvature(st.qd)
    fext = model.loadcase(st.t) if model.loadcase is not None else 0.0
    return P.T @ (s.mass() @ udd + s.damping() @ ud - s.internal_force(u) - fext)


def fd_jacobian(fun, x, h):
    return np.column_stack([(fun(x + h * e) - fun(x - h * e)) / (2 * h) for e in np.eye(x.size)])


class TestResidual:
    def test_zero_state_no_load(self):
        s = make_structure(6)
        _, qm = quadratic_manifold(s, 2)
        model = ReducedModel(s, qm)
        np.testing.assert_array_equal(model.residual(np.zeros(2), np.zeros(2), np.zeros(2)), 0.0)

    def test_linear_full_sampling(self, rng):
        s = damped_structure(8)
        V = np.linalg.qr(rng.normal(size=(s.n, 3)))[0]
        lc = LoadCase(rng.normal(size=s.n), Sinusoidal(2.0, 100.0))
        model = ReducedModel(s, LinearBasis(V), lc)
        q, qd, qdd = rng.normal(size=3) * 1e-5, rng.normal(size=3), rng.normal(size=3) * 1e3
        t = 3e-3
        expected = V.T @ (s.mass() @ (V @ qdd) + s.damping() @ (V @ qd) - s.internal_force(V @ q) - lc(t))
        np.testing.assert_allclose(model.residual(q, qd, qdd, t), expected, rtol=1e-12, atol=1e-12 * np.abs(expected).max())

    def test_tiny_model_dense_oracle(self, rng):
        s = Structure(strip_mesh(0.01, 1, "free", "free"), VonKarmanBeam(70e9, 0.33, 2700, 1e-3, 0.02, 10.0, 1e-6))
        assert s.n == 6
        Phi = rng.normal(size=(6, 2))
        Om = rng.normal(size=(6, 2, 2)) * 10
        qm = QuadraticManifold(Phi, 0.5 * (Om + Om.transpose(0, 2, 1)))
        model = ReducedModel(s, qm, LoadCase(rng.normal(size=6), Sinusoidal(1.0, 50.0)))
        for _ in range(5):
            st = random_state(rng, 2, 1e-4)
            r = reduced_residual(model, st)
            ref = dense_residual(model, st)
            np.testing.assert_allclose(r, ref, rtol=1e-12, atol=1e-12 * np.abs(ref).max())

    @pytest.mark.parametrize("terms", [ALL_TERMS, INTERNAL_ONLY, TermSelection(True, False, True)])
    def test_term_selection_does_not_change_full_residual(self, rng, terms):
        model, _ = manifold_model(10, terms=terms)
        st = random_state(rng, 2)
        ref = dense_residual(model, st)
        np.testing.assert_allclose(reduced_residual(model, st), ref, rtol=1e-9, atol=1e-9 * np.abs(ref).max())

    def test_linear_degeneration_ecsw_equals_eecsw(self, rng):
        s = damped_structure(12)
        V = np.linalg.qr(rng.normal(size=(s.n, 2)))[0]
        lc = LoadCase(rng.normal(size=s.n), Sinusoidal(1.0, 30.0))
        sampling = SimpleNamespace(elements=np.array([1, 4, 9]), weights=np.array([2.0, 3.5, 1.25]))
        ecsw = ReducedModel(s, LinearBasis(V), lc, sampling)
        eecsw = ReducedModel(s, QuadraticManifold(V, np.zeros((s.n, 2, 2))), lc, sampling)
        for _ in range(5):
            st = random_state(rng, 2, 1e-4)
            a, b = reduced_residual(ecsw, st), reduced_residual(eecsw, st)
            assert np.linalg.norm(a - b) <= 1e-12 * np.linalg.norm(a)


class TestOperators:
    def test_reduced_mass_is_identity_at_rest(self):
        model, _ = manifold_model(20)
        Mr, _, _ = reduced_operators(model, ReducedState(np.zeros(2), np.zeros(2), np.zeros(2)))
        np.testing.assert_allclose(Mr, np.eye(2), atol=1e-10)

    def test_convective_part_vanishes_at_rest(self, rng):
        model, _ = manifold_model(10)
        q = rng.normal(size=2) * 1e-5
        _, Cr, _ = reduced_operators(model, ReducedState(q, np.zeros(2), np.zeros(2)))
        P = model.mapping.tangent(q)
        np.testing.assert_allclose(Cr, P.T @ model.structure.damping() @ P, rtol=1e-10, atol=1e-10 * np.abs(Cr).max())

    def test_operators_reproduce_residual(self, rng):
        # r = M_r qdd + C_r qd - P^T f - P^T f_ext
        model, _ = manifold_model(10)
        st = random_state(rng, 2)
        Mr, Cr, _ = reduced_operators(model, st)
        P = model.mapping.tangent(st.q)
        f = model.structure.internal_force(model.mapping.eval(st.q))
        expected = Mr @ st.qdd + Cr @ st.qd - P.T @ (f + model.loadcase(st.t))
        r = reduced_residual(model, st)
        np.testing.assert_allclose(r, expected, rtol=1e-9, atol=1e-9 * np.abs(r).max())


def jacobian_errors(model, st):
    _, (Jq, Jqd, Jqdd) = model.residual_and_jacobians(st.q, st.qd, st.qdd, st.t)
    # residual is polynomial (degree <= 2) in qd and qdd: central differences are exact
    fqd = fd_jacobian(lambda x: model.residual(st.q, x, st.qdd, st.t), st.qd, 1.0)
    fqdd = fd_jacobian(lambda x: model.residual(st.q, st.qd, x, st.t), st.qdd, 1.0)
    scale = max(np.abs(st.q).max(), 1e-12)
    errs_q = []
    for h in (1e-3, 3e-4, 1e-4):
        fq = fd_jacobian(lambda x: model.residual(x, st.qd, st.qdd, st.t), st.q, h * scale)
        errs_q.append(np.linalg.norm(fq - Jq) / np.linalg.norm(Jq))
    rel = lambda a, b: np.linalg.norm(a - b) / np.linalg.norm(b)  # noqa: E731
    return min(errs_q), rel(fqd, Jqd), rel(fqdd, Jqdd)


class TestJacobians:
    @pytest.mark.parametrize("terms", [ALL_TERMS, INTERNAL_ONLY])
    def test_manifold_jacobians(self, rng, terms):
        model, _ = manifold_model(10, terms=terms)
        for _ in range(5):
            assert max(jacobian_errors(model, random_state(rng, 2))) <= 1e-5

    def test_hyper_jacobians(self, rng):
        model, _ = manifold_model(10)
        hyper = model.with_sampling(SimpleNamespace(elements=np.array([0, 5, 7]), weights=np.array([3.0, 4.0, 3.0])))
        for _ in range(5):
            assert max(jacobian_errors(hyper, random_state(rng, 2))) <= 1e-5


class TestLift:
    def test_rest(self, rng):
        model, _ = manifold_model(6)
        q = rng.normal(size=2) * 1e-5
        u, ud, udd = lift(model, ReducedState(q, np.zeros(2), np.zeros(2)))
        np.testing.assert_allclose(u, model.mapping.eval(q))
        assert not ud.any() and not udd.any()

    def test_linear(self, rng):
        s = make_structure(5)
        V = rng.normal(size=(s.n, 2))
        model = ReducedModel(s, LinearBasis(V))
        st = random_state(rng, 2)
        for got, x in zip(lift(model, st), (st.q, st.qd, st.qdd)):
            np.testing.assert_allclose(got, V @ x)

    def test_lifted_velocity_is_time_derivative(self):
        model, w = manifold_model(20)
        dt = 2 * np.pi / w[0] / 2000
        tr = integrate(model.with_load(LoadCase(model.loadcase.l * 20, model.loadcase.p)), NewmarkParams(dt), 1000 * dt, np.zeros(2), np.zeros(2))
        U = np.array([model.mapping.eval(q) for q in tr.x])
        Ud = np.array([model.mapping.tangent(q) @ qd for q, qd in zip(tr.x, tr.v)])
        fd = (U[2:] - U[:-2]) / (2 * dt)
        assert np.abs(fd - Ud[1:-1]).max() <= 1e-4 * np.abs(Ud).max()


class TestHyper:
    def test_all_elements_unit_weights(self, rng):
        model, _ = manifold_model(8)
        ne = model.structure.n_elements
        full = model.with_sampling(SimpleNamespace(elements=np.arange(ne), weights=np.ones(ne)))
        st = random_state(rng, 2)
        np.testing.assert_allclose(hyper_force(full, st), model.hyper_force(st.q, st.qd, st.qdd), rtol=1e-13)
        np.testing.assert_allclose(full.residual(st.q, st.qd, st.qdd, st.t), model.residual(st.q, st.qd, st.qdd, st.t), rtol=1e-12)

    def test_single_element_mesh(self, rng):
        s = make_structure(1, "clamped", "free")
        _, qm = quadratic_manifold(s, 2)
        model = ReducedModel(s, qm)
        hyper = model.with_sampling(SimpleNamespace(elements=np.array([0]), weights=np.array([1.0])))
        st = random_state(rng, 2)
        np.testing.assert_allclose(hyper_force(hyper, st), model.hyper_force(st.q, st.qd, st.qdd), rtol=1e-13)

    def test_empty_mesh(self):
        model, _ = manifold_model(4)
        with pytest.raises(UntrainedModelError):
            model.with_sampling(SimpleNamespace(elements=np.array([], dtype=int), weights=np.array([])))

    def test_gather_counter(self, rng):
        for ne in (10, 40):
            model, _ = manifold_model(ne)
            hyper = model.with_sampling(SimpleNamespace(elements=np.array([1, 3, 7]), weights=np.ones(3)))
            st = random_state(rng, 2)
            hyper.gather_count = 0
            hyper.residual_and_jacobians(st.q, st.qd, st.qdd, st.t)
            assert hyper.gather_count == 3 * 6

    def test_element_contributions_sum_to_full(self, rng):
        model, _ = manifold_model(9)
        st = random_state(rng, 2)
        c = model.element_contributions(st.q, st.qd, st.qdd)
        assert c.shape == (9, 2)
        np.testing.assert_allclose(c.sum(axis=0), model.hyper_force(st.q, st.qd, st.qdd), rtol=1e-12)


class TestTermSelection:
    def test_parse(self):
        assert TermSelection.parse("all") == ALL_TERMS
        assert TermSelection.parse("internal") == INTERNAL_ONLY
        assert TermSelection.parse("inertial+internal") == TermSelection(True, False, True)
        with pytest.raises(ValueError):
            TermSelection.parse("gravity")

    def test_label_round_trip(self):
        t = TermSelection(True, False, True)
        assert TermSelection.parse(t.label()) == t


class TestEnergies:
    def test_kinetic_energy_is_reduced_mass_form(self, rng):
        model, _ = manifold_model(10)
        st = random_state(rng, 2)
        Mr, _, _ = reduced_operators(model, st)
        assert model.kinetic_energy(st.q, st.qd) == pytest.approx(0.5 * st.qd @ Mr @ st.qd, rel=1e-10)

    def test_potential_energy_matches_structure(self, rng):
        model, _ = manifold_model(10)
        q = rng.normal(size=2) * 1e-5
        assert model.potential_energy(q) == pytest.approx(model.structure.strain_energy(model.mapping.eval(q)), rel=1e-10)
