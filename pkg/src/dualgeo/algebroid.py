"""Generalized Lie algebroid data, its anchor, the bracket on sections and axiom checks.

Index conventions for stored arrays:

* ``rho[alpha, i]``    anchor components rho_alpha^i
* ``L[gamma, alpha, beta]``  structure functions L^gamma_{alpha beta}

Non-identity morphisms h, eta are accepted; the bracket and the checks work in
the composed picture where rho and L are replaced by rho o h and L o h.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .jets import (
    DomainError,
    Expr,
    ExprArray,
    FunctionField,
    Jet,
    Point,
    TensorField,
    X,
    eval_jet,
    jet_contract,
    sample_points,
    substitute,
)
from .report import CheckReport, ResidualTracker

IDENTITY = "IDENTITY"


@dataclass(frozen=True)
class AlgebroidSpec:
    m: int
    p_rank: int
    r_rank: int
    rho: ExprArray
    L: ExprArray
    h_map: tuple | None = None  # None means IDENTITY
    eta_map: tuple | None = None

    def __post_init__(self):
        if self.rho.shape != (self.p_rank, self.m):
            raise ValueError(f"rho must have shape {(self.p_rank, self.m)}, got {self.rho.shape}")
        if self.L.shape != (self.p_rank,) * 3:
            raise ValueError(f"L must have shape {(self.p_rank,) * 3}, got {self.L.shape}")
        for name in ("h_map", "eta_map"):
            mp = getattr(self, name)
            if mp is None:
                continue
            if len(mp) != self.m:
                raise ValueError(f"{name} needs {self.m} components")
            for e in mp:
                if any(kind == "p" for kind, _ in e.atoms()):
                    raise ValueError(f"{name} may reference base atoms only")

    @property
    def dims(self) -> tuple[int, int]:
        return (self.m, self.r_rank)

    @property
    def identity_mode(self) -> bool:
        return self.h_map is None and self.eta_map is None

    def composed(self) -> "AlgebroidSpec":
        """Pre-compose rho and L with h; the result is in identity-morphism mode."""
        if self.h_map is None:
            return replace(self, eta_map=None)
        hm = list(self.h_map)
        rho = ExprArray(np.vectorize(lambda e: substitute(e, hm), otypes=[object])(self.rho.exprs))
        L = ExprArray(np.vectorize(lambda e: substitute(e, hm), otypes=[object])(self.L.exprs))
        return AlgebroidSpec(self.m, self.p_rank, self.r_rank, rho, L)

    @staticmethod
    def flat(m: int, r_rank: int | None = None) -> "AlgebroidSpec":
        """rho = identity, L = 0 (the classical tangent-bundle case)."""
        return AlgebroidSpec(m, m, m if r_rank is None else r_rank, ExprArray.identity(m), ExprArray.zeros((m, m, m)))


@dataclass(frozen=True)
class Section:
    components: TensorField  # shape (p_rank,)

    @staticmethod
    def of(exprs: Sequence) -> "Section":
        return Section(ExprArray(list(exprs)))

    def values(self, pt: Point) -> np.ndarray:
        return self.components.values(pt)


def theta(spec: AlgebroidSpec) -> TensorField:
    """Induced anchor theta_alpha^i = (rho_alpha^j o eta) (dh^i/dx^j o eta).

    In identity-morphism mode this is rho itself.  Otherwise only point values
    are available (order-0 jets).
    """
    if spec.identity_mode:
        return spec.rho
    m = spec.m
    eta = list(spec.eta_map) if spec.eta_map is not None else [X(i + 1) for i in range(m)]
    hm = list(spec.h_map) if spec.h_map is not None else [X(i + 1) for i in range(m)]
    rho_eta = ExprArray(np.vectorize(lambda e: substitute(e, eta), otypes=[object])(spec.rho.exprs))
    eta_arr = ExprArray(eta)
    h_arr = ExprArray(hm)

    def fn(pt: Point, order: int) -> Jet:
        if order > 0:
            raise NotImplementedError("theta with non-identity morphisms is available as point values only")
        y = Point(eta_arr.values(pt), pt.p)
        dh = h_arr.jet(y, 1).g[:, :m]  # dh[k, j] = dh^k/dx^j at eta(x)
        vals = rho_eta.values(pt) @ dh.T
        return Jet.constant(vals, pt.m + pt.r, 0)

    return FunctionField((spec.p_rank, m), fn)


# ---------------------------------------------------------------------------
# bracket kernel


def bracket_jets(L: Jet, rho: Jet, U: Jet, V: Jet, m: int) -> Jet:
    """Bracket of two batches of sections.

    U has shape (K1, p), V shape (K2, p); result (K1, K2, p).  The result has
    one order less than the lowest of U, V (their derivatives enter).
    """
    UV = jet_contract("ka,lb->klab", U, V)
    t1 = jet_contract("gab,klab->klg", L, UV)
    DV = V.partial()[:, :, :m]
    DU = U.partial()[:, :, :m]
    Urho = jet_contract("ka,ai->ki", U, rho)
    Vrho = jet_contract("lb,bi->li", V, rho)
    t2 = jet_contract("ki,lgi->klg", Urho, DV)
    t3 = jet_contract("li,kgi->klg", Vrho, DU)
    return t1 + t2 - t3


def bracket_sections(spec: AlgebroidSpec, u: Section, v: Section) -> Section:
    """[u,v]^g = u^a v^b L^g_ab + theta(u)(v^g) - theta(v)(u^g) as a derived field."""
    s = spec.composed()

    def fn(pt: Point, order: int) -> Jet:
        U = u.components.jet(pt, order + 1)[None, :]
        V = v.components.jet(pt, order + 1)[None, :]
        Lj = s.L.jet(pt, order)
        rj = s.rho.jet(pt, order)
        return bracket_jets(Lj, rj, U, V, spec.m)[0, 0]

    return Section(FunctionField((spec.p_rank,), fn))


def generating_sections(spec: AlgebroidSpec) -> ExprArray:
    """Constant sections e_alpha followed by the sections x^i e_alpha."""
    p, m = spec.p_rank, spec.m
    rows = []
    for a in range(p):
        rows.append([1.0 if b == a else 0.0 for b in range(p)])
    for a in range(p):
        for i in range(m):
            rows.append([X(i + 1) if b == a else 0.0 for b in range(p)])
    return ExprArray(rows)


def jacobiator(J: np.ndarray) -> np.ndarray:
    """Given J[k,l,m,...] = [[u_k,u_l],u_m], return the cyclic sum."""
    return J + np.einsum("lmk...->klm...", J) + np.einsum("mkl...->klm...", J)


def anchor_compat_residual(L: np.ndarray, rho: Jet, m: int) -> np.ndarray:
    """L^g_ab rho_g^k - (rho_a^i d_i rho_b^k - rho_b^j d_j rho_a^k)."""
    r = rho.v
    d = rho.g[:, :, :m]  # d[b, k, i] = d_i rho_b^k
    lhs = np.einsum("gab,gk->abk", L, r)
    rhs = np.einsum("ai,bki->abk", r, d) - np.einsum("bj,akj->abk", r, d)
    return lhs - rhs


def check_algebroid(spec: AlgebroidSpec, samples: int = 100, seed: int = 0, tol: float = 1e-9) -> CheckReport:
    """Antisymmetry of L, Jacobi on the test family, and anchor compatibility."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    s = spec.composed()
    fam = generating_sections(s)
    tr = ResidualTracker(["antisymmetry", "jacobi", "anchor"])
    for pt in sample_points(s.m, s.r_rank, samples, seed):
        try:
            Lj = s.L.jet(pt, 1)
            rj = s.rho.jet(pt, 1)
            F = fam.jet(pt, 2)
            tr.update("antisymmetry", Lj.v + np.swapaxes(Lj.v, 1, 2), pt)
            B = bracket_jets(Lj, rj, F, F, s.m)  # order 1, (K, K, p)
            K = B.shape[0]
            B2 = B[:, :, :]
            flat = Jet(B2.v.reshape(K * K, -1), B2.g.reshape(K * K, -1, B2.n), None, None, 1, B2.n)
            J = bracket_jets(Lj.truncate(0), rj.truncate(0), flat, F.truncate(1), s.m).v
            tr.update("jacobi", jacobiator(J.reshape(K, K, K, -1)), pt)
            tr.update("anchor", anchor_compat_residual(Lj.v, rj, s.m), pt)
            tr.point_done()
        except (DomainError, ZeroDivisionError, np.linalg.LinAlgError) as err:
            tr.point_failed(pt, err)
    return tr.report("algebroid-axioms", tol)


def anchor_homomorphism_residual(spec: AlgebroidSpec, pt: Point) -> float:
    """theta([u,v])(x^k) - [theta(u), theta(v)](x^k) over the test family."""
    s = spec.composed()
    F = generating_sections(s).jet(pt, 2)
    Lj = s.L.jet(pt, 1)
    rj = s.rho.jet(pt, 2)
    B = bracket_jets(Lj, rj.truncate(1), F, F, s.m)
    lhs = np.einsum("klg,gi->kli", B.v, rj.v)
    # W_k = u_k^a rho_a^i as a jet; commutator applied to x^i
    W = jet_contract("ka,ai->ki", F, rj)  # order 2
    dW = W.partial().v[:, :, : s.m]  # dW[k, i, j] = d_j W_k^i
    rhs = np.einsum("kj,lij->kli", W.v, dW) - np.einsum("lj,kij->kli", W.v, dW)
    return float(np.max(np.abs(lhs - rhs)))
