"""Reduced equations of motion over linear subspaces and quadratic manifolds.

The reduced residual is

    r(q, qd, qdd, t) = P^T [M Gdd + C Gd - f(G)] - P^T f_ext(t)

with ``G = Gamma(q)``, ``P = dGamma/dq``, ``Gd = P qd`` and
``Gdd = P qdd + Omega:(qd x qd)``.  The bracketed terms selected in
:class:`TermSelection` are evaluated element by element as
``sum_e w_e P_e^T h_e`` over the sampled elements (all elements with unit
weights for a full ROM, the reduced mesh for a hyper-reduced ROM).  Terms
that are not selected are evaluated exactly: with precomputed reduced
matrices for a linear basis and with a full element sum otherwise.  The
projected load always uses precomputed reduced vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fe_core import NDOF_ELEM, LoadCase, Structure


class UntrainedModelError(RuntimeError):
    pass


@dataclass(frozen=True)
class TermSelection:
    """Which parts of the left-hand side enter the element-sampled quantity."""

    inertial: bool = True
    damping: bool = True
    internal: bool = True

    @classmethod
    def parse(cls, spec: str) -> TermSelection:
        if spec in ("all", "full"):
            return cls()
        if spec == "internal":
            return cls(False, False, True)
        parts = {p.strip() for p in spec.split("+")}
        unknown = parts - {"inertial", "damping", "internal"}
        if unknown:
            raise ValueError(f"unknown term(s) {sorted(unknown)}")
        return cls("inertial" in parts, "damping" in parts, "internal" in parts)

    def complement(self) -> TermSelection:
        return TermSelection(not self.inertial, not self.damping, not self.internal)

    def any(self) -> bool:
        return self.inertial or self.damping or self.internal

    def label(self) -> str:
        names = [n for n in ("inertial", "damping", "internal") if getattr(self, n)]
        return "+".join(names) if names else "none"


ALL_TERMS = TermSelection()
INTERNAL_ONLY = TermSelection(False, False, True)


@dataclass
class ReducedState:
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray
    t: float = 0.0


_RELATIVE = np.eye(NDOF_ELEM)
_RELATIVE[[0, 3], 0] -= 1.0
_RELATIVE[[1, 4], 1] -= 1.0


class ElementSet:
    """Elements, weights and mapping rows gathered once for repeated evaluation."""

    def __init__(self, structure: Structure, mapping, ids, weights):
        self.ids = np.asarray(ids, dtype=np.int64)
        self.weights = np.asarray(weights, dtype=float)
        self.batch = structure.batch.subset(self.ids)
        edofs = structure.edofs[self.ids]
        self.Phi, self.Omega = mapping.restrict(edofs)
        self.gathers = NDOF_ELEM * len(self.ids)
        # Strains are invariant to rigid translation, so the internal force is
        # evaluated from rows with the first node's translation removed.  This
        # avoids cancellation between large nodal displacements on fine meshes.
        self.Phi_rel = _RELATIVE @ self.Phi
        self.Omega_rel = None if self.Omega is None else np.einsum("ab,kbij->kaij", _RELATIVE, self.Omega)
        # likewise, bending uses rows free of the chord rotation
        T = self.batch.natural_transform()
        self.Phi_bend = T @ self.Phi
        self.Omega_bend = None if self.Omega is None else np.einsum("kab,kbij->kaij", T, self.Omega)

    def __len__(self):
        return len(self.ids)

    def kinematics(self, q, qd=None, qdd=None):
        """Element displacement, velocity, acceleration and tangent rows."""
        if self.Omega is None:
            P = self.Phi
            g = P @ q
            v = None if qd is None else P @ qd
            a = None if qdd is None else P @ qdd
            return g, v, a, P, None
        Oq = self.Omega @ q
        P = self.Phi + Oq
        g = (self.Phi + 0.5 * Oq) @ q
        v = None if qd is None else P @ qd
        a = None
        if qdd is not None:
            Oqd = self.Omega @ qd
            a = P @ qdd + Oqd @ qd
        return g, v, a, P, Oq

    def evaluate(self, q, qd, qdd, terms: TermSelection, jac=False, per_element=False):
        """Weighted element sum of ``P_e^T h_e`` and, optionally, its Jacobians.

        Returns ``(r, Jq, Jqd, Jqdd, conv)`` where ``conv`` is the convective
        part ``sum w P^T M_e (Omega.qd)`` of the reduced damping operator.
        With ``per_element`` the unweighted per-element rows ``(k, m)`` are
        returned instead of ``r``.
        """
        b = self.batch
        w = self.weights
        Om = self.Omega
        g, v, a, P, _ = self.kinematics(q, qd, qdd)
        h = np.zeros(g.shape)
        K = None
        if terms.inertial:
            h += np.einsum("kab,kb->ka", b.mass, a)
        if terms.damping:
            h += np.einsum("kab,kb->ka", b.damping, v)
        if terms.internal:
            if Om is None:
                g_rel, g_bend = self.Phi_rel @ q, self.Phi_bend @ q
            else:
                g_rel = (self.Phi_rel + 0.5 * (self.Omega_rel @ q)) @ q
                g_bend = (self.Phi_bend + 0.5 * (self.Omega_bend @ q)) @ q
            fe, K = b.force_and_tangent(g_rel, tangent=jac, bending=g_bend)
            h -= fe
        c = np.einsum("kai,ka->ki", P, h)
        if per_element:
            out = c
        else:
            out = w @ c
        if not jac:
            return out, None, None, None, None

        m = P.shape[-1]
        Jq = np.zeros((m, m))
        Jqd = np.zeros((m, m))
        Jqdd = np.zeros((m, m))
        conv = np.zeros((m, m))
        wP = w[:, None, None] * P
        dh_dq = np.zeros(P.shape)  # (k, 6, m)
        if Om is not None:
            Oqd = Om @ qd
        if terms.inertial:
            MP = b.mass @ P
            Jqdd += np.einsum("kai,kaj->ij", wP, MP)
            if Om is not None:
                MOqd = b.mass @ Oqd
                conv += np.einsum("kai,kaj->ij", wP, MOqd)
                Jqd += 2.0 * conv
                dh_dq += b.mass @ (Om @ qdd)
        if terms.damping:
            Jqd += np.einsum("kai,kaj->ij", wP, b.damping @ P)
            if Om is not None:
                dh_dq += b.damping @ Oqd
        if terms.internal:
            dh_dq += K @ P
        Jq += np.einsum("kai,kaj->ij", wP, dh_dq)
        if Om is not None:
            Jq += np.einsum("k,kaij,ka->ij", w, Om, h)
        return out, Jq, Jqd, Jqdd, conv


class ReducedModel:
    """Reduced (optionally hyper-reduced) model exposing residual and Jacobians.

    Parameters
    ----------
    structure : Structure
    mapping : LinearBasis or QuadraticManifold
    loadcase : LoadCase, optional
    sampling : object with ``elements`` and ``weights``, optional
        Reduced mesh; ``None`` evaluates every element with unit weight.
    terms : TermSelection
        Terms entering the element-sampled quantity.
    """

    homogeneity = 2
    is_reduced = True

    def __init__(self, structure: Structure, mapping, loadcase: LoadCase | None = None, sampling=None, terms: TermSelection = ALL_TERMS):
        if mapping.n != structure.n:
            raise ValueError(f"mapping has {mapping.n} rows, structure has {structure.n} DOFs")
        self.structure = structure
        self.mapping = mapping
        self.loadcase = loadcase
        self.sampling = sampling
        self.terms = terms
        self.dim = mapping.size
        ne = structure.n_elements
        if sampling is None:
            self.sampled = ElementSet(structure, mapping, np.arange(ne), np.ones(ne))
        else:
            ids = np.asarray(sampling.elements, dtype=np.int64)
            if ids.size == 0:
                raise UntrainedModelError("reduced mesh is empty; train the model first")
            self.sampled = ElementSet(structure, mapping, ids, sampling.weights)
        self._all = None
        self.gather_count = 0

        rest = terms.complement()
        self._rest = rest
        self._Mr = self._Cr = None
        if mapping.is_linear:
            V = mapping.V
            if rest.inertial:
                self._Mr = V.T @ (structure.mass() @ V)
            if rest.damping:
                self._Cr = V.T @ (structure.damping() @ V)
            self._rest_elements = TermSelection(False, False, rest.internal)
        else:
            self._rest_elements = rest
        if self._rest_elements.any():
            self._all = self.sampled if sampling is None else ElementSet(structure, mapping, np.arange(ne), np.ones(ne))

        if loadcase is not None:
            self._l_Phi = mapping.Phi.T @ loadcase.l
            self._l_Omega = None if mapping.Omega is None else np.einsum("I,Iij->ij", loadcase.l, mapping.Omega)

    @property
    def is_hyper(self) -> bool:
        return self.sampling is not None

    def with_sampling(self, sampling) -> ReducedModel:
        return ReducedModel(self.structure, self.mapping, self.loadcase, sampling, self.terms)

    def with_terms(self, terms: TermSelection) -> ReducedModel:
        return ReducedModel(self.structure, self.mapping, self.loadcase, self.sampling, terms)

    def with_load(self, loadcase) -> ReducedModel:
        return ReducedModel(self.structure, self.mapping, loadcase, self.sampling, self.terms)

    # -- load --------------------------------------------------------------

    def load_factor(self, t):
        return 0.0 if self.loadcase is None else self.loadcase.p(t)

    def reduced_load(self, q, t):
        """``P(q)^T f_ext(t)`` and its derivative with respect to ``q``."""
        m = self.dim
        if self.loadcase is None:
            return np.zeros(m), np.zeros((m, m))
        p = self.loadcase.p(t)
        if self._l_Omega is None:
            return p * self._l_Phi, np.zeros((m, m))
        return p * (self._l_Phi + self._l_Omega @ q), p * self._l_Omega

    # -- residual ----------------------------------------------------------

    def _assemble(self, q, qd, qdd, t, jac):
        q = np.asarray(q, dtype=float)
        qd = np.asarray(qd, dtype=float)
        qdd = np.asarray(qdd, dtype=float)
        self.gather_count += self.sampled.gathers
        r, Jq, Jqd, Jqdd, conv = self.sampled.evaluate(q, qd, qdd, self.terms, jac=jac)
        if self._rest_elements.any():
            r2, Jq2, Jqd2, Jqdd2, conv2 = self._all_elements().evaluate(q, qd, qdd, self._rest_elements, jac=jac)
            r = r + r2
            if jac:
                Jq, Jqd, Jqdd, conv = Jq + Jq2, Jqd + Jqd2, Jqdd + Jqdd2, conv + conv2
        if self._Mr is not None:
            r = r + self._Mr @ qdd
            if jac:
                Jqdd = Jqdd + self._Mr
        if self._Cr is not None:
            r = r + self._Cr @ qd
            if jac:
                Jqd = Jqd + self._Cr
        fr, dfr = self.reduced_load(q, t)
        r = r - fr
        if jac:
            Jq = Jq - dfr
        return r, Jq, Jqd, Jqdd, conv

    def residual(self, q, qd, qdd, t=0.0) -> np.ndarray:
        return self._assemble(q, qd, qdd, t, jac=False)[0]

    def residual_and_jacobians(self, q, qd, qdd, t=0.0):
        """Residual and ``(dr/dq, dr/dqd, dr/dqdd)``."""
        r, Jq, Jqd, Jqdd, _ = self._assemble(q, qd, qdd, t, jac=True)
        return r, (Jq, Jqd, Jqdd)

    def hyper_force(self, q, qd, qdd) -> np.ndarray:
        """Element-sampled part ``sum_{e in E} w_e P_e^T h_e`` only."""
        if len(self.sampled) == 0:
            raise UntrainedModelError("reduced mesh is empty")
        self.gather_count += self.sampled.gathers
        return self.sampled.evaluate(np.asarray(q, float), np.asarray(qd, float), np.asarray(qdd, float), self.terms)[0]

    def element_contributions(self, q, qd, qdd) -> np.ndarray:
        """Unweighted rows ``P_e^T h_e`` for every element, shape ``(n_e, m)``."""
        es = self._all_elements()
        return es.evaluate(np.asarray(q, float), np.asarray(qd, float), np.asarray(qdd, float), self.terms, per_element=True)[0]

    def _all_elements(self) -> ElementSet:
        if self._all is None:
            ne = self.structure.n_elements
            if self.sampling is None:
                self._all = self.sampled
                return self._all
            self._all = ElementSet(self.structure, self.mapping, np.arange(ne), np.ones(ne))
        return self._all

    # -- energies ----------------------------------------------------------

    def _energy_set(self, selected: bool) -> ElementSet:
        return self.sampled if selected else self._all_elements()

    def kinetic_energy(self, q, qd) -> float:
        if not self.terms.inertial and self._Mr is not None:
            return 0.5 * float(qd @ self._Mr @ qd)
        es = self._energy_set(self.terms.inertial)
        _, v, _, _, _ = es.kinematics(np.asarray(q, float), np.asarray(qd, float))
        return float(es.weights @ es.batch.kinetic_energy(v))

    def potential_energy(self, q) -> float:
        es = self._energy_set(self.terms.internal)
        g, _, _, _, _ = es.kinematics(np.asarray(q, float))
        return float(es.weights @ es.batch.strain_energy(g))

    def dissipation(self, q, qd) -> float:
        if not self.terms.damping and self._Cr is not None:
            return 0.5 * float(qd @ self._Cr @ qd)
        es = self._energy_set(self.terms.damping)
        _, v, _, _, _ = es.kinematics(np.asarray(q, float), np.asarray(qd, float))
        return float(es.weights @ es.batch.dissipation(v))

    def external_power(self, q, qd, t) -> float:
        """``Gd^T f_ext(t) = qd^T P^T f_ext(t)``."""
        return float(np.asarray(qd) @ self.reduced_load(np.asarray(q, float), t)[0])

    # -- full-space quantities ---------------------------------------------

    def lift(self, q, qd=None, qdd=None):
        q = np.asarray(q, dtype=float)
        u = self.mapping.eval(q)
        if qd is None:
            return u, None, None
        P = self.mapping.tangent(q)
        ud = P @ qd
        udd = None if qdd is None else P @ qdd + self.mapping.curvature(np.asarray(qd, float))
        return u, ud, udd


def reduced_residual(model: ReducedModel, state: ReducedState) -> np.ndarray:
    return model.residual(state.q, state.qd, state.qdd, state.t)


def reduced_operators(model: ReducedModel, state: ReducedState):
    """Configuration-dependent ``(M_r, C_r, K_r)``.

    ``M_r = P^T M P``, ``C_r = P^T C P + P^T M (Omega.qd)`` and
    ``K_r = dr/dq`` including the derivative of ``P^T`` contracted with the
    element forces.  All respect the model's element sampling.
    """
    r, Jq, Jqd, Jqdd, conv = model._assemble(state.q, state.qd, state.qdd, state.t, jac=True)
    return Jqdd, Jqd - conv, Jq


def lift(model: ReducedModel, state: ReducedState):
    return model.lift(state.q, state.qd, state.qdd)


def hyper_force(model: ReducedModel, state: ReducedState) -> np.ndarray:
    return model.hyper_force(state.q, state.qd, state.qdd)
