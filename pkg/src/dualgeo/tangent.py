"""Sections of the generalized tangent bundle of the dual bundle in the natural base.

A section is Z^alpha T_alpha + Y_a dp^a where T_alpha is the pulled-back frame
(anchored to rho_alpha^i d/dx^i) and dp^a = d/dp_a.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .algebroid import AlgebroidSpec, Section, bracket_jets, jacobiator
from .jets import (
    DomainError,
    ExprArray,
    FunctionField,
    Jet,
    P,
    Point,
    TensorField,
    X,
    jet_contract,
    sample_points,
)
from .report import CheckReport, ResidualTracker


@dataclass(frozen=True)
class TangentSection:
    Z: TensorField  # (p_rank,)
    Y: TensorField  # (r_rank,)

    @staticmethod
    def of(Z: Sequence, Y: Sequence) -> "TangentSection":
        return TangentSection(ExprArray(list(Z)), ExprArray(list(Y)))


@dataclass(frozen=True)
class TangentVectorValue:
    dx: np.ndarray
    dp: np.ndarray


def anchor_image(spec: AlgebroidSpec, X_: TangentSection, pt: Point) -> TangentVectorValue:
    s = spec.composed()
    Z = X_.Z.values(pt)
    return TangentVectorValue(Z @ s.rho.values(pt), np.array(X_.Y.values(pt), dtype=float))


def project_pi_bang(X_: TangentSection) -> Section:
    return Section(X_.Z)


def vertical_inclusion(spec: AlgebroidSpec, Y: TensorField) -> TangentSection:
    return TangentSection(ExprArray.zeros((spec.p_rank,)), Y)


def apply_anchored(Z: Jet, Y: Jet, rho: Jet, F: Jet, m: int) -> Jet:
    """V_k(f_l) for anchored fields V_k = Z_k^a rho_a^i d_i + Y_kb d/dp_b.

    Z (K1, p), Y (K1, r), F (K2, q); result (K1, K2, q).
    """
    D = F.partial()
    Dx = D[..., :m]
    Dp = D[..., m:]
    Zr = jet_contract("ka,ai->ki", Z, rho)
    return jet_contract("ki,lqi->klq", Zr, Dx) + jet_contract("kb,lqb->klq", Y, Dp)


def bracket_tangent_jets(L: Jet, rho: Jet, Z1: Jet, Y1: Jet, Z2: Jet, Y2: Jet, m: int) -> tuple[Jet, Jet]:
    """Batched bracket; returns (Z, Y) parts with shapes (K1, K2, p), (K1, K2, r)."""
    Zpart = bracket_jets(L, rho, Z1, Z2, m)
    Ypart = apply_anchored(Z1, Y1, rho, Y2, m) - apply_anchored(Z2, Y2, rho, Y1, m).transpose(1, 0, 2)
    return Zpart, Ypart


def bracket_tangent(spec: AlgebroidSpec, X1: TangentSection, X2: TangentSection) -> TangentSection:
    """Z-part: pullback-algebroid bracket; Y-part: dp components of the anchored commutator."""
    s = spec.composed()
    m = s.m

    def parts(pt: Point, order: int):
        Z1 = X1.Z.jet(pt, order + 1)[None, :]
        Y1 = X1.Y.jet(pt, order + 1)[None, :]
        Z2 = X2.Z.jet(pt, order + 1)[None, :]
        Y2 = X2.Y.jet(pt, order + 1)[None, :]
        Zp, Yp = bracket_tangent_jets(s.L.jet(pt, order), s.rho.jet(pt, order), Z1, Y1, Z2, Y2, m)
        return Zp[0, 0], Yp[0, 0]

    return TangentSection(
        FunctionField((s.p_rank,), lambda pt, o: parts(pt, o)[0]),
        FunctionField((s.r_rank,), lambda pt, o: parts(pt, o)[1]),
    )


def generating_family(spec: AlgebroidSpec) -> tuple[ExprArray, ExprArray]:
    """(e_a, 0), (0, e^a), (x^i e_a, 0), (0, p_b e^a) as batched Z and Y arrays."""
    p, r, m = spec.p_rank, spec.r_rank, spec.m
    Zs, Ys = [], []

    def unit(k, size, coef=1.0):
        return [coef if j == k else 0.0 for j in range(size)]

    for a in range(p):
        Zs.append(unit(a, p))
        Ys.append(unit(-1, r))
    for a in range(r):
        Zs.append(unit(-1, p))
        Ys.append(unit(a, r))
    for a in range(p):
        for i in range(m):
            Zs.append(unit(a, p, X(i + 1)))
            Ys.append(unit(-1, r))
    for a in range(r):
        for b in range(r):
            Zs.append(unit(-1, p))
            Ys.append(unit(a, r, P(b + 1)))
    return ExprArray(Zs), ExprArray(Ys)


def anchor_commutator_residual(spec: AlgebroidSpec, Z1: Jet, Y1: Jet, Z2: Jet, Y2: Jet, pt: Point) -> float:
    """Compare the anchor of the bracket with the commutator of anchored fields on x^k.

    The jets must be of order >= 1.
    """
    s = spec.composed()
    m = s.m
    # only values are compared, so every jet is cut to the order its value needs
    L0 = s.L.jet(pt, 0)
    rho = s.rho.jet(pt, 1)
    rho0 = rho.truncate(0)
    Z1, Y1, Z2, Y2 = (J.truncate(1) for J in (Z1, Y1, Z2, Y2))
    Zp, _ = bracket_tangent_jets(L0, rho0, Z1, Y1, Z2, Y2, m)
    lhs = np.einsum("klg,gi->kli", Zp.v, rho.v)
    W1 = jet_contract("ka,ai->ki", Z1, rho)  # V_k(x^i)
    W2 = jet_contract("la,ai->li", Z2, rho)
    Z1, Y1, Z2, Y2 = (J.truncate(0) for J in (Z1, Y1, Z2, Y2))
    rhs = apply_anchored(Z1, Y1, rho0, W2, m).v - np.swapaxes(apply_anchored(Z2, Y2, rho0, W1, m).v, 0, 1)
    return float(np.max(np.abs(lhs - rhs))) if lhs.size else 0.0


def check_tangent_jacobi(spec: AlgebroidSpec, samples: int = 100, seed: int = 0, tol: float = 1e-9) -> CheckReport:
    """Jacobi identity of the tangent bracket and anchor homomorphism on the generating family."""
    s = spec.composed()
    Zf, Yf = generating_family(s)
    tr = ResidualTracker(["jacobi", "anchor-commutator"])
    m = s.m
    for pt in sample_points(s.m, s.r_rank, samples, seed):
        try:
            L = s.L.jet(pt, 1)
            rho = s.rho.jet(pt, 1)
            Z = Zf.jet(pt, 2)
            Y = Yf.jet(pt, 2)
            K = Z.shape[0]
            Zb, Yb = bracket_tangent_jets(L, rho, Z, Y, Z, Y, m)  # order 1
            Zb = _flatten_pairs(Zb)
            Yb = _flatten_pairs(Yb)
            Zj, Yj = bracket_tangent_jets(L.truncate(0), rho.truncate(0), Zb, Yb, Z.truncate(1), Y.truncate(1), m)
            J = np.concatenate([Zj.v, Yj.v], axis=-1).reshape(K, K, K, -1)
            tr.update("jacobi", jacobiator(J), pt)
            tr.update("anchor-commutator", anchor_commutator_residual(s, Z, Y, Z, Y, pt), pt)
            tr.point_done()
        except (DomainError, ZeroDivisionError) as err:
            tr.point_failed(pt, err)
    return tr.report("tangent-jacobi", tol)


def _flatten_pairs(J: Jet) -> Jet:
    K1, K2 = J.shape[:2]
    slots = [sl.reshape((K1 * K2,) + sl.shape[2:]) for sl in J.slots()]
    slots += [None] * (4 - len(slots))
    return Jet(*slots, J.order, J.n)
