"""Hamilton and Cartan fundamental functions, Hessian metrics, the normal
Levi-Civita-type connection and torsion-prescribed deformations of it.

Here E = F, so Greek and Latin indices share the range 1..r.  ``gv`` is the
vertical metric g^{ab} and ``gt`` its inverse g~_{ab}; the induced metric has
g_h = gt and g_v = gv.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algebroid import AlgebroidSpec
from .connection import DistinguishedLinearConnection, DLCValues, NonlinearConnection, adapted_jet, vertical_jet
from .jets import DomainError, Expr, FunctionField, Jet, Point, TensorField, eval_jet, jet_contract, sample_points
from .metric import PseudoMetric, SingularMetricError, checked_inverse
from .report import CheckReport, ResidualTracker

PAIRINGS = ("dual", "copy")


@dataclass(frozen=True)
class HamiltonFunction:
    expr: Expr
    kind: str = "hamilton"  # or "cartan"

    def __post_init__(self):
        if self.kind not in ("hamilton", "cartan"):
            raise ValueError(f"unknown kind {self.kind!r}")

    def potential_jet(self, pt: Point, order: int) -> Jet:
        """Jet of H, or of K*K for a Cartan function."""
        J = eval_jet(self.expr, pt, order)
        return J * J if self.kind == "cartan" else J


class HessianField(TensorField):
    """Fiber Hessian of H (or of K^2), optionally halved."""

    def __init__(self, H: HamiltonFunction, r_rank: int, half: bool = False):
        self.H = H
        self.shape = (r_rank, r_rank)
        self.half = half

    def jet(self, pt: Point, order: int) -> Jet:
        if order + 2 > 3:
            raise ValueError("Hessian jets are available up to order 1")
        J = self.H.potential_jet(pt, order + 2)
        m = pt.m
        Hs = J.partial().partial()[m:, m:]
        return Hs.scale(0.5) if self.half else Hs


def hessian_metric(H: HamiltonFunction, pt: Point, half: bool = False) -> np.ndarray:
    return HessianField(H, pt.r, half).values(pt)


def check_regularity(
    H: HamiltonFunction, m: int, r_rank: int, samples: int = 100, seed: int = 0, tol: float = 1e-10, half: bool = False
) -> CheckReport:
    """Smallest |det| of the fiber Hessian over the samples; passes when it stays >= tol."""
    field = HessianField(H, r_rank, half)
    min_det = float("inf")
    worst = None
    used = 0
    failures = []
    for pt in sample_points(m, r_rank, samples, seed):
        try:
            d = abs(float(np.linalg.det(field.values(pt))))
        except (DomainError, ZeroDivisionError) as err:
            failures.append(f"x={list(np.round(pt.x, 6))} p={list(np.round(pt.p, 6))}: {err}")
            continue
        used += 1
        if d < min_det:
            min_det, worst = d, pt
    notes = f"min|det|={min_det:.3e}"
    if failures:
        notes += f"; {len(failures)} point(s) failed: {failures[0]}"
    return CheckReport("regularity", used > 0 and min_det >= tol, min_det if used else float("nan"), worst, used, notes)


def check_homogeneity(
    K: HamiltonFunction, m: int, r_rank: int, samples: int = 100, seed: int = 0, tol: float = 1e-10
) -> CheckReport:
    """Euler residual |p_a dK/dp_a - K|, positivity of K and of the K^2 Hessian."""
    if K.kind != "cartan":
        raise ValueError("homogeneity applies to Cartan functions")
    tr = ResidualTracker(["euler", "hessian-0-homogeneity"])
    field = HessianField(K, r_rank)
    min_k = float("inf")
    min_eig = float("inf")
    for pt in sample_points(m, r_rank, samples, seed):
        try:
            J = eval_jet(K.expr, pt, 1)
            tr.update("euler", J.g[m:] @ pt.p - J.v, pt)
            g = field.values(pt)
            g2 = field.values(Point(pt.x, 2.0 * pt.p))
            tr.update("hessian-0-homogeneity", g - g2, pt)
            min_k = min(min_k, float(J.v))
            min_eig = min(min_eig, float(np.min(np.linalg.eigvalsh(0.5 * (g + g.T)))))
            tr.point_done()
        except (DomainError, ZeroDivisionError) as err:
            tr.point_failed(pt, err)
    positive = min_k > 0
    posdef = min_eig > 0
    rep = tr.report("homogeneity", tol, f"min K={min_k:.6g}; min Hessian eigenvalue={min_eig:.6g}")
    rep.passed = rep.passed and positive and posdef
    rep.details.update(min_K=min_k, min_eigenvalue=min_eig, positive=positive, positive_definite=posdef)
    return rep


# ---------------------------------------------------------------------------
# normal connections


class InverseField(TensorField):
    def __init__(self, field: TensorField, block: str = "vertical"):
        self.field = field
        self.shape = tuple(field.shape)
        self.block = block

    def jet(self, pt: Point, order: int) -> Jet:
        return checked_inverse(self.field.jet(pt, order), self.block)


def induced_metric(g_v: TensorField) -> PseudoMetric:
    """G with horizontal block the inverse of g_v."""
    return PseudoMetric(InverseField(g_v), g_v)


def _paired(H: Jet, V: Jet, pairing: str) -> DLCValues:
    if pairing == "dual":
        return DLCValues(H, -H, -V, V)
    if pairing == "copy":
        return DLCValues(H, H, V, V)
    raise ValueError(f"pairing must be one of {PAIRINGS}")


def _require_square(spec: AlgebroidSpec) -> None:
    if spec.p_rank != spec.r_rank:
        raise ValueError("normal connections need p_rank == r_rank")


def levi_civita_normal(
    spec: AlgebroidSpec, conn: NonlinearConnection, g_v: TensorField, pairing: str = "dual"
) -> DistinguishedLinearConnection:
    """Torsion-free normal connection compatible with the induced metric.

    The Greek family is H and Vv is V.  With pairing="dual" the other two
    families are -H and -V, which is what keeps them compatible under the sign
    convention of the covariant derivatives; pairing="copy" reuses H and V unchanged.
    """
    _require_square(spec)
    if pairing not in PAIRINGS:
        raise ValueError(f"pairing must be one of {PAIRINGS}")
    s = spec.composed()
    m = s.m

    def fn(pt: Point, order: int) -> DLCValues:
        gv1 = g_v.jet(pt, order + 1)
        gt1 = checked_inverse(gv1, "vertical")
        gv, gt = gv1.truncate(order), gt1.truncate(order)
        L = s.L.jet(pt, order)
        dgt = adapted_jet(gt1, s.rho.jet(pt, order), conn.gamma.jet(pt, order), m)  # [a, b, c] = delta_c gt_ab
        inner = (
            dgt.transpose(0, 2, 1)  # dgt[e, c, b]
            + dgt.transpose(1, 0, 2)  # dgt[b, e, c]
            - dgt.transpose(2, 0, 1)  # dgt[b, c, e]
            - jet_contract("cd,dbe->ebc", gt, L)
            + jet_contract("bd,dec->ebc", gt, L)
            - jet_contract("ed,dbc->ebc", gt, L)
        )
        H = jet_contract("ae,ebc->abc", gv, inner).scale(0.5)
        dv = vertical_jet(gv1, m)  # [a, b, c] = d^c g^ab
        V = jet_contract("be,eac->abc", gt, dv + dv.transpose(0, 2, 1) - dv.transpose(2, 0, 1)).scale(0.5)
        return _paired(H, V, pairing)

    return DistinguishedLinearConnection(s.p_rank, s.r_rank, fn, f"levi-civita-{pairing}")


@dataclass(frozen=True)
class TorsionPrescription:
    T: TensorField  # T[a, b, c] = T^a_{bc}
    S: TensorField  # S[a, b, c] = S^{ac}_b


def prescription_antisymmetry(P: TorsionPrescription, pt: Point) -> float:
    T = P.T.values(pt)
    S = P.S.values(pt)
    return float(max(np.max(np.abs(T + T.transpose(0, 2, 1))), np.max(np.abs(S + S.transpose(2, 1, 0)))))


def torsion_family(
    spec: AlgebroidSpec,
    base: DistinguishedLinearConnection,
    g_v: TensorField,
    P: TorsionPrescription,
    pairing: str = "dual",
) -> DistinguishedLinearConnection:
    """Deform a normal connection so that its torsions become T and S."""
    _require_square(spec)
    if tuple(P.T.shape) != (spec.r_rank,) * 3 or tuple(P.S.shape) != (spec.r_rank,) * 3:
        raise ValueError("torsion prescription must be r_rank^3 arrays")

    def fn(pt: Point, order: int) -> DLCValues:
        c = base.jets(pt, order)
        gv = g_v.jet(pt, order)
        gt = checked_inverse(gv, "vertical")
        T = P.T.jet(pt, order)
        S = P.S.jet(pt, order)
        lowT = jet_contract("ed,dbc->ebc", gt, T)  # T_{ebc}
        inner = lowT - lowT.transpose(1, 0, 2) + lowT.transpose(2, 1, 0)  # T_ebc - T_bec + T_cbe
        dH = jet_contract("ae,ebc->abc", gv, inner).scale(0.5)
        Sup = S.transpose(0, 2, 1)  # Sup[a, c, d] = S^{ac}_d
        raised = jet_contract("acd,ed->ace", Sup, gv)  # S^{ac}_d g^{de}
        # dV[a,b,c] = 1/2 gt[b,e] (raised[a,c,e] - raised[e,c,a] + raised[a,e,c])
        inner_v = raised - raised.transpose(2, 1, 0) + raised.transpose(0, 2, 1)
        dV = jet_contract("be,ace->abc", gt, inner_v).scale(0.5)
        d = _paired(dH, dV, pairing)
        return DLCValues(c.Hh + d.Hh, c.Hv + d.Hv, c.Vh + d.Vh, c.Vv + d.Vv)

    return DistinguishedLinearConnection(base.p_rank, base.r_rank, fn, f"torsion-family-{pairing}")


def torsion_recover(spec: AlgebroidSpec, dlc: DistinguishedLinearConnection, subtract_structure: bool = False) -> TorsionPrescription:
    """T = H_abc - H_acb + L_abc and S^{ac}_b = V^{ac}_b - V^{ca}_b.

    subtract_structure=True subtracts L instead.
    """
    _require_square(spec)
    s = spec.composed()
    sign = -1.0 if subtract_structure else 1.0
    r = s.r_rank

    def T(pt: Point, order: int) -> Jet:
        H = dlc.jets(pt, order).Hh
        return H - H.transpose(0, 2, 1) + s.L.jet(pt, order).scale(sign)

    def S(pt: Point, order: int) -> Jet:
        V = dlc.jets(pt, order).Vv
        return V - V.transpose(2, 1, 0)

    return TorsionPrescription(FunctionField((r, r, r), T), FunctionField((r, r, r), S))


def check_torsion_roundtrip(
    spec: AlgebroidSpec,
    dlc: DistinguishedLinearConnection,
    P: TorsionPrescription,
    samples: int = 100,
    seed: int = 0,
    tol: float = 1e-10,
    name: str = "torsion-roundtrip",
) -> CheckReport:
    rec = torsion_recover(spec, dlc)
    tr = ResidualTracker(["T", "S"])
    for pt in sample_points(spec.m, spec.r_rank, samples, seed):
        try:
            tr.update("T", rec.T.values(pt) - P.T.values(pt), pt)
            tr.update("S", rec.S.values(pt) - P.S.values(pt), pt)
            tr.point_done()
        except (DomainError, ZeroDivisionError, SingularMetricError) as err:
            tr.point_failed(pt, err)
    return tr.report(name, tol)
