"""Block (pseudo)metrics on the generalized tangent bundle and compatible connections.

``g_h[alpha, beta]`` is the horizontal block g_{alpha beta}, ``g_v[a, b]`` the
vertical block g^{ab}.  Inverses are written ``ghi`` (g~^{beta alpha}) and
``gvi`` (g~_{ba}).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .algebroid import AlgebroidSpec
from .connection import (
    DistinguishedLinearConnection,
    DLCValues,
    NonlinearConnection,
    adapted_jet,
    berwald,
    h_cov_jet,
    v_cov_jet,
    vertical_jet,
)
from .jets import DomainError, ExprArray, Jet, Point, TensorField, jet_contract, jet_inverse, sample_points
from .report import CheckReport, ResidualTracker

DET_MIN = 1e-10
COND_WARN = 1e8


class SingularMetricError(ValueError):
    def __init__(self, block: str, det: float, cond: float):
        super().__init__(f"{block} block is singular (|det|={abs(det):.3e}, cond={cond:.3e})")
        self.block = block
        self.det = det
        self.cond = cond


class IllConditionedMetricWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PseudoMetric:
    g_h: TensorField  # (p, p)
    g_v: TensorField  # (r, r)

    @staticmethod
    def identity(p_rank: int, r_rank: int) -> "PseudoMetric":
        return PseudoMetric(ExprArray.identity(p_rank), ExprArray.identity(r_rank))


def checked_inverse(J: Jet, block: str) -> Jet:
    A = J.v
    det = float(np.linalg.det(A))
    cond = float(np.linalg.cond(A)) if np.all(np.isfinite(A)) else float("inf")
    if not abs(det) >= DET_MIN:
        raise SingularMetricError(block, det, cond)
    if cond > COND_WARN:
        warnings.warn(f"{block} block is ill-conditioned (cond={cond:.3e})", IllConditionedMetricWarning, stacklevel=3)
    return jet_inverse(J)


def invert_metric(G: PseudoMetric, pt: Point) -> tuple[np.ndarray, np.ndarray]:
    n = pt.m + pt.r
    gh = Jet.constant(G.g_h.values(pt), n, 0)
    gv = Jet.constant(G.g_v.values(pt), n, 0)
    return checked_inverse(gh, "horizontal").v, checked_inverse(gv, "vertical").v


def symmetry_residual(G: PseudoMetric, pt: Point) -> float:
    a, b = G.g_h.values(pt), G.g_v.values(pt)
    return float(max(np.max(np.abs(a - a.T)), np.max(np.abs(b - b.T))))


def classify(spec: AlgebroidSpec, G: PseudoMetric, samples: int = 100, seed: int = 0, tol: float = 1e-12) -> dict:
    """Riemannian (no momentum dependence), Minkowski (no base dependence) or general, per block.

    Also returns the largest derivative magnitudes and the eigenvalue sign
    counts seen at the samples.
    """
    if samples < 2:
        raise ValueError("samples must be >= 2")
    m = spec.m
    out: dict = {}
    for name, field in (("h_block", G.g_h), ("v_block", G.g_v)):
        dp = dx = 0.0
        signatures = set()
        for pt in sample_points(m, spec.r_rank, samples, seed):
            try:
                J = field.jet(pt, 1)
            except (DomainError, ZeroDivisionError):
                continue
            dx = max(dx, float(np.max(np.abs(J.g[..., :m]), initial=0.0)))
            dp = max(dp, float(np.max(np.abs(J.g[..., m:]), initial=0.0)))
            ev = np.linalg.eigvalsh(0.5 * (J.v + J.v.T))
            signatures.add((int(np.sum(ev > 0)), int(np.sum(ev < 0))))
        if dp < tol:
            label = "Riemannian"
        elif dx < tol:
            label = "Minkowski"
        else:
            label = "general"
        out[name] = label
        out[name + "_max_dp"] = dp
        out[name + "_max_dx"] = dx
        out[name + "_signatures"] = sorted(signatures)
    return out


# ---------------------------------------------------------------------------
# shared per-point data


@dataclass
class _Local:
    gh: Jet  # order k+1
    gv: Jet
    ghi: Jet  # order k
    gvi: Jet
    rho: Jet  # order k
    L: Jet
    gamma: Jet
    m: int


def _local(spec: AlgebroidSpec, conn: NonlinearConnection, G: PseudoMetric, pt: Point, order: int) -> _Local:
    s = spec.composed()
    gh = G.g_h.jet(pt, order + 1)
    gv = G.g_v.jet(pt, order + 1)
    return _Local(
        gh, gv,
        checked_inverse(gh.truncate(order), "horizontal"),
        checked_inverse(gv.truncate(order), "vertical"),
        s.rho.jet(pt, order), s.L.jet(pt, order), conn.gamma.jet(pt, order), s.m,
    )


def koszul(loc: _Local) -> Jet:
    """Christoffel-type Hh with structure-function corrections."""
    dg = adapted_jet(loc.gh, loc.rho, loc.gamma, loc.m)  # dg[e, b, g] = delta_g g_{eb}
    g = loc.gh.truncate(dg.order)
    L = loc.L
    lower = (
        dg
        + dg.transpose(0, 2, 1)
        - dg.transpose(2, 0, 1)
        + jet_contract("te,tgb->ebg", g, L)
        - jet_contract("bt,tge->ebg", g, L)
        - jet_contract("tg,tbe->ebg", g, L)
    )
    return jet_contract("ae,ebg->abg", loc.ghi, lower).scale(0.5)


def _vertical_koszul(loc: _Local) -> Jet:
    d = vertical_jet(loc.gv, loc.m)  # d[a, b, c] = d^c g^{ab}
    lower = d + d.transpose(0, 2, 1) - d.transpose(2, 0, 1)
    # Vv[a, b, c] = 1/2 gvi[b, e] (d[e,a,c] + d[e,c,a] - d[a,c,e])
    return jet_contract("be,eac->abc", loc.gvi, lower).scale(0.5)


def _h_ring(loc: _Local, c0: DLCValues, g: Jet, kinds: list[str]) -> Jet:
    return h_cov_jet(g, kinds, c0.Hh, c0.Hv, loc.rho, loc.gamma, loc.m)


def _v_ring(loc: _Local, c0: DLCValues, g: Jet, kinds: list[str]) -> Jet:
    return v_cov_jet(g, kinds, c0.Vh, c0.Vv, loc.m)


def _latin_h(loc: _Local, c0: DLCValues) -> Jet:
    D = _h_ring(loc, c0, loc.gv, ["L", "L"])  # D[e, a, g]
    return c0.Hv + jet_contract("be,eag->abg", loc.gvi, D).scale(0.5)


def _greek_v(loc: _Local, c0: DLCValues) -> Jet:
    D = _v_ring(loc, c0, loc.gh, ["g", "g"])  # D[e, b, c]
    return c0.Vh + jet_contract("ae,ebc->abc", loc.ghi, D).scale(0.5)


def metrizable_from(
    spec: AlgebroidSpec,
    conn: NonlinearConnection,
    dlc0: DistinguishedLinearConnection,
    G: PseudoMetric,
    origin: str = "metrizable-from",
) -> DistinguishedLinearConnection:
    """Metric-compatible connection built on a starting connection dlc0."""

    def fn(pt: Point, order: int) -> DLCValues:
        loc = _local(spec, conn, G, pt, order)
        c0 = dlc0.jets(pt, order)
        return DLCValues(koszul(loc), _latin_h(loc, c0), _greek_v(loc, c0), _vertical_koszul(loc))

    return DistinguishedLinearConnection(spec.p_rank, spec.r_rank, fn, origin)


def riemannian_berwald_form(spec: AlgebroidSpec, conn: NonlinearConnection, G: PseudoMetric) -> DistinguishedLinearConnection:
    """Simplified form valid when neither block depends on the momenta.

    Hh uses rho_g^i d_i in place of the adapted derivative, Hv is written out
    through the momentum derivatives of Gamma, and both V families vanish.
    """
    p, r, m = spec.p_rank, spec.r_rank, spec.m

    def fn(pt: Point, order: int) -> DLCValues:
        loc = _local(spec, conn, G, pt, order)
        n = loc.gh.n
        zero_gamma = Jet.constant(np.zeros(loc.gamma.shape), n, order)
        flat = _Local(loc.gh, loc.gv, loc.ghi, loc.gvi, loc.rho, loc.L, zero_gamma, m)
        Hh = koszul(flat)
        dG = conn.gamma.jet(pt, order + 1).partial()[:, :, m:]  # dG[b, g, a] = d^a Gamma_{bg}
        dGamma = dG.transpose(2, 0, 1)  # [a, b, g]
        gv = loc.gv.truncate(order)
        rdg = adapted_jet(loc.gv, loc.rho, zero_gamma, m)  # [e, a, g]
        inner = rdg - jet_contract("edg,da->eag", dGamma, gv) - jet_contract("adg,ed->eag", dGamma, gv)
        Hv = dGamma + jet_contract("be,eag->abg", loc.gvi, inner).scale(0.5)
        return DLCValues(Hh, Hv, Jet.constant(np.zeros((p, p, r)), n, order), Jet.constant(np.zeros((r, r, r)), n, order))

    return DistinguishedLinearConnection(p, r, fn, "riemannian-berwald")


def metrizable_berwald(
    spec: AlgebroidSpec,
    conn: NonlinearConnection,
    G: PseudoMetric,
    verify_samples: int = 0,
    seed: int = 0,
    tol: float = 1e-10,
) -> DistinguishedLinearConnection:
    """metrizable_from with the Berwald connection of conn as starting point.

    With verify_samples > 0 and both blocks Riemannian, the simplified form is
    evaluated too and the two must agree within tol.
    """
    out = metrizable_from(spec, conn, berwald(spec, conn), G, origin="metrizable-berwald")
    if verify_samples > 0:
        cls = classify(spec, G, max(verify_samples, 2), seed)
        if cls["h_block"] == "Riemannian" and cls["v_block"] == "Riemannian":
            rep = compare_connections(spec, out, riemannian_berwald_form(spec, conn, G), verify_samples, seed, tol, "berwald-riemannian-agreement")
            if not rep.passed:
                raise AssertionError(f"general and Riemannian forms disagree: {rep.notes}")
    return out


def compare_connections(
    spec: AlgebroidSpec,
    a: DistinguishedLinearConnection,
    b: DistinguishedLinearConnection,
    samples: int = 100,
    seed: int = 0,
    tol: float = 1e-10,
    name: str = "connection-agreement",
) -> CheckReport:
    fams = ["Hh", "Hv", "Vh", "Vv"]
    tr = ResidualTracker(fams)
    for pt in sample_points(spec.m, spec.r_rank, samples, seed):
        try:
            va, vb = a.values(pt), b.values(pt)
            for f in fams:
                tr.update(f, getattr(va, f) - getattr(vb, f), pt)
            tr.point_done()
        except (DomainError, ZeroDivisionError, np.linalg.LinAlgError, SingularMetricError) as err:
            tr.point_failed(pt, err)
    return tr.report(name, tol)


# ---------------------------------------------------------------------------
# Obata operators


def obata_arrays(g: np.ndarray, gi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """O[a,e,b,c] = 1/2 (d^a_b d^e_c - g_bc gi^ae) and O* with the plus sign."""
    k = g.shape[0]
    I = np.eye(k)
    dd = np.einsum("ab,ec->aebc", I, I)
    gg = np.einsum("bc,ae->aebc", g, gi)
    return 0.5 * (dd - gg), 0.5 * (dd + gg)


def obata_identity(k: int) -> np.ndarray:
    I = np.eye(k)
    return np.einsum("ab,ec->aebc", I, I)


def obata_apply(O: np.ndarray, A: np.ndarray) -> np.ndarray:
    """(O A)^a_c = O[a,e,b,c] A[b,e]; extra trailing axes of A are carried along."""
    return np.einsum("aebc,be...->ac...", O, A)


def obata_compose(O: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Operator of A -> O(P(A))."""
    return np.einsum("azhc,hebz->aebc", O, P)


@dataclass(frozen=True)
class ObataOperators:
    """Evaluated at points: horizontal pair from (g_h, ghi), vertical pair from (gvi, g_v)."""

    G: PseudoMetric

    def at(self, pt: Point) -> dict:
        gh = self.G.g_h.values(pt)
        gv = self.G.g_v.values(pt)
        ghi, gvi = invert_metric(self.G, pt)
        O, Os = obata_arrays(gh, ghi)
        Ov, Ovs = obata_arrays(gvi, gv)
        return {"O": O, "O*": Os, "O_v": Ov, "O*_v": Ovs}


def obata(G: PseudoMetric) -> ObataOperators:
    return ObataOperators(G)


def projector_residuals(ops: dict) -> dict:
    out = {}
    for sfx in ("", "_v"):
        O, Os = ops["O" + sfx], ops["O*" + sfx]
        I = obata_identity(O.shape[0])
        out["sum" + sfx] = float(np.max(np.abs(O + Os - I)))
        out["idem" + sfx] = float(np.max(np.abs(obata_compose(O, O) - O)))
        out["idem*" + sfx] = float(np.max(np.abs(obata_compose(Os, Os) - Os)))
        out["cross" + sfx] = float(np.max(np.abs(obata_compose(O, Os))))
        out["cross*" + sfx] = float(np.max(np.abs(obata_compose(Os, O))))
    return out


@dataclass(frozen=True)
class DeformationTensors:
    X_h: TensorField  # X^eta_{eps gamma}   (p, p, p)
    X_v: TensorField  # X^{eta c}_eps      (p, p, r)
    Y_h: TensorField  # Y^d_{e gamma}       (r, r, p)
    Y_v: TensorField  # Y^{dc}_e            (r, r, r)

    @staticmethod
    def zero(p_rank: int, r_rank: int) -> "DeformationTensors":
        p, r = p_rank, r_rank
        return DeformationTensors(
            ExprArray.zeros((p, p, p)), ExprArray.zeros((p, p, r)), ExprArray.zeros((r, r, p)), ExprArray.zeros((r, r, r))
        )


def _obata_jets(gh: Jet, ghi: Jet) -> Jet:
    """O[a,e,b,c] as a jet (it depends on the point through the metric)."""
    k = gh.shape[0]
    I = np.eye(k)
    dd = Jet.constant(np.einsum("ab,ec->aebc", I, I), gh.n, gh.order)
    return (dd - jet_contract("bc,ae->aebc", gh, ghi)).scale(0.5)


def metrizable_family(
    spec: AlgebroidSpec,
    conn: NonlinearConnection,
    G: PseudoMetric,
    D: DeformationTensors,
    base: DistinguishedLinearConnection | None = None,
) -> DistinguishedLinearConnection:
    """Canonical compatible connection plus Obata-projected deformations.

    Hh += O[a,e,h,b] X_h[h,e,g], Hv += Ov[a,e,d,b] Y_h[d,e,g], and likewise
    for the vertical families with X_v, Y_v.
    """
    base = base if base is not None else metrizable_berwald(spec, conn, G)

    def fn(pt: Point, order: int) -> DLCValues:
        c = base.jets(pt, order)
        gh = G.g_h.jet(pt, order)
        gv = G.g_v.jet(pt, order)
        O = _obata_jets(gh, checked_inverse(gh, "horizontal"))
        Ov = _obata_jets(checked_inverse(gv, "vertical"), gv)
        return DLCValues(
            c.Hh + jet_contract("aehb,heg->abg", O, D.X_h.jet(pt, order)),
            c.Hv + jet_contract("aedb,deg->abg", Ov, D.Y_h.jet(pt, order)),
            c.Vh + jet_contract("aehb,hec->abc", O, D.X_v.jet(pt, order)),
            c.Vv + jet_contract("aedb,dec->abc", Ov, D.Y_v.jet(pt, order)),
        )

    return DistinguishedLinearConnection(spec.p_rank, spec.r_rank, fn, "obata-family")


def metrizable_family_variant(
    spec: AlgebroidSpec,
    conn: NonlinearConnection,
    G: PseudoMetric,
    D: DeformationTensors,
    base: DistinguishedLinearConnection | None = None,
) -> DistinguishedLinearConnection:
    """Variant with the index pattern O[a,e,g,h] X_h[h,e,b], and O* in the vertical families.

    Kept to demonstrate that this pattern does not preserve compatibility.
    """
    base = base if base is not None else metrizable_berwald(spec, conn, G)

    def fn(pt: Point, order: int) -> DLCValues:
        c = base.jets(pt, order)
        gh = G.g_h.jet(pt, order)
        gv = G.g_v.jet(pt, order)
        ghi = checked_inverse(gh, "horizontal")
        gvi = checked_inverse(gv, "vertical")
        O = _obata_jets(gh, ghi)
        Ov = _obata_jets(gvi, gv)
        n = gh.n
        Os = Jet.constant(obata_identity(gh.shape[0]), n, order) - O
        Ovs = Jet.constant(obata_identity(gv.shape[0]), n, order) - Ov
        return DLCValues(
            c.Hh + jet_contract("aegh,heb->abg", O, D.X_h.jet(pt, order)),
            c.Hv + jet_contract("aegd,deb->abg", Ov, D.Y_h.jet(pt, order)),
            c.Vh + jet_contract("aebh,hec->abc", Os, D.X_v.jet(pt, order)),
            c.Vv + jet_contract("aebd,dec->abc", Ovs, D.Y_v.jet(pt, order)),
        )

    return DistinguishedLinearConnection(spec.p_rank, spec.r_rank, fn, "obata-family-variant")


def metrizable_deformation(
    spec: AlgebroidSpec,
    conn: NonlinearConnection,
    dlc0: DistinguishedLinearConnection,
    G: PseudoMetric,
) -> DistinguishedLinearConnection:
    """Every family is ring-0 plus half the inverse metric times the ring-0 derivative of the metric."""

    def fn(pt: Point, order: int) -> DLCValues:
        loc = _local(spec, conn, G, pt, order)
        c0 = dlc0.jets(pt, order)
        Dh = _h_ring(loc, c0, loc.gh, ["g", "g"])  # [e, b, g]
        Dv = _v_ring(loc, c0, loc.gv, ["L", "L"])  # [e, a, c]
        return DLCValues(
            c0.Hh + jet_contract("ae,ebg->abg", loc.ghi, Dh).scale(0.5),
            _latin_h(loc, c0),
            _greek_v(loc, c0),
            c0.Vv + jet_contract("be,eac->abc", loc.gvi, Dv).scale(0.5),
        )

    return DistinguishedLinearConnection(spec.p_rank, spec.r_rank, fn, "deformation")


# ---------------------------------------------------------------------------
# compatibility


COMPAT_FAMILIES = ["g_h|h", "g_v|h", "g_h|v", "g_v|v"]


def compatibility_residuals(
    spec: AlgebroidSpec, conn: NonlinearConnection, dlc: DistinguishedLinearConnection, G: PseudoMetric, pt: Point
) -> dict:
    s = spec.composed()
    gh = G.g_h.jet(pt, 1)
    gv = G.g_v.jet(pt, 1)
    c = dlc.jets(pt, 0)
    rho, gamma = s.rho.jet(pt, 0), conn.gamma.jet(pt, 0)
    return {
        "g_h|h": h_cov_jet(gh, ["g", "g"], c.Hh, c.Hv, rho, gamma, s.m).v,
        "g_v|h": h_cov_jet(gv, ["L", "L"], c.Hh, c.Hv, rho, gamma, s.m).v,
        "g_h|v": v_cov_jet(gh, ["g", "g"], c.Vh, c.Vv, s.m).v,
        "g_v|v": v_cov_jet(gv, ["L", "L"], c.Vh, c.Vv, s.m).v,
    }


def check_compatibility(
    spec: AlgebroidSpec,
    conn: NonlinearConnection,
    dlc: DistinguishedLinearConnection,
    G: PseudoMetric,
    samples: int = 100,
    seed: int = 0,
    tol: float = 1e-9,
    name: str = "compatibility",
) -> CheckReport:
    """All four metric-derivative families; notes carry the H- and V-verdicts."""
    tr = ResidualTracker(COMPAT_FAMILIES)
    for pt in sample_points(spec.m, spec.r_rank, samples, seed):
        try:
            res = compatibility_residuals(spec, conn, dlc, G, pt)
            for k, v in res.items():
                tr.update(k, v, pt)
            tr.point_done()
        except (DomainError, ZeroDivisionError, np.linalg.LinAlgError, SingularMetricError) as err:
            tr.point_failed(pt, err)
    h_ok = tr.used > 0 and max(tr.max["g_h|h"], tr.max["g_v|h"]) < tol
    v_ok = tr.used > 0 and max(tr.max["g_h|v"], tr.max["g_v|v"]) < tol
    verdict = f"H-metrizable={'yes' if h_ok else 'no'}; V-metrizable={'yes' if v_ok else 'no'}"
    rep = tr.report(name, tol, verdict)
    rep.details["h_verdict"] = h_ok
    rep.details["v_verdict"] = v_ok
    return rep
