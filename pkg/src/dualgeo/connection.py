"""Nonlinear connections, adapted frames, distinguished linear connections and chart laws.

Stored layouts (first index is always the upper one, the derivative direction is last):

* ``gamma[b, alpha]``        Gamma_{b alpha}
* ``Hh[alpha, beta, gamma]`` H^alpha_{beta gamma}
* ``Hv[a, b, gamma]``        H^a_{b gamma}
* ``Vh[alpha, beta, c]``     V^{alpha c}_beta
* ``Vv[a, b, c]``            V^{a c}_b

Covariant derivatives use the sign pattern: + on upper Greek and lower Latin
slots, - on lower Greek and upper Latin slots.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .algebroid import AlgebroidSpec
from .jets import (
    DomainError,
    ExprArray,
    FunctionField,
    Jet,
    Point,
    TensorField,
    jet_contract,
    jet_inverse,
    sample_points,
)
from .report import CheckReport, ResidualTracker


@dataclass(frozen=True)
class NonlinearConnection:
    gamma: TensorField  # (r_rank, p_rank)

    @staticmethod
    def zero(r_rank: int, p_rank: int) -> "NonlinearConnection":
        return NonlinearConnection(ExprArray.zeros((r_rank, p_rank)))

    @property
    def r_rank(self) -> int:
        return self.gamma.shape[0]

    @property
    def p_rank(self) -> int:
        return self.gamma.shape[1]


# ---------------------------------------------------------------------------
# adapted frame


def adapted_jet(F: Jet, rho: Jet, gamma: Jet, m: int) -> Jet:
    """delta_gamma F for a batch F of shape S; result S + (p,), one order lower."""
    S = F.shape
    K = int(np.prod(S)) if S else 1
    D = F.partial().reshape((K, F.n))
    out = jet_contract("ki,gi->kg", D[:, :m], rho) + jet_contract("kb,bg->kg", D[:, m:], gamma)
    return out.reshape(S + (rho.shape[0],))


def vertical_jet(F: Jet, m: int) -> Jet:
    """d/dp_c F with c appended as the last component axis."""
    return F.partial()[..., m:]


def adapted_derivative(spec: AlgebroidSpec, conn: NonlinearConnection, field: TensorField) -> FunctionField:
    """The field delta_gamma f for every gamma, as a trailing axis."""
    s = spec.composed()

    def fn(pt: Point, order: int) -> Jet:
        return adapted_jet(field.jet(pt, order + 1), s.rho.jet(pt, order), conn.gamma.jet(pt, order), s.m)

    return FunctionField(tuple(field.shape) + (s.p_rank,), fn)


@dataclass(frozen=True)
class AdaptedVector:
    """delta*_alpha = d*_alpha + Gamma_{b alpha} d^b as an anchored field."""

    spec: AlgebroidSpec
    conn: NonlinearConnection
    alpha: int

    def value(self, pt: Point) -> tuple[np.ndarray, np.ndarray]:
        s = self.spec.composed()
        return s.rho.values(pt)[self.alpha], self.conn.gamma.values(pt)[:, self.alpha]

    def apply(self, field: TensorField) -> FunctionField:
        full = adapted_derivative(self.spec, self.conn, field)
        a = self.alpha
        return FunctionField(tuple(field.shape), lambda pt, order: full.jet(pt, order)[..., a])


def adapted_frame(spec: AlgebroidSpec, conn: NonlinearConnection) -> list[AdaptedVector]:
    return [AdaptedVector(spec, conn, a) for a in range(spec.p_rank)]


def dual_adapted(conn: NonlinearConnection) -> tuple[FunctionField, np.ndarray]:
    """Coefficients of delta p_a = -Gamma_{a alpha} dz^alpha + dp_a."""
    g = conn.gamma
    return FunctionField(g.shape, lambda pt, order: -g.jet(pt, order)), np.eye(conn.r_rank)


def pairing_residual(conn: NonlinearConnection, pt: Point) -> float:
    """Max deviation of the frame/coframe pairing matrix from the identity."""
    G = conn.gamma.values(pt)
    r, p = G.shape
    frame = np.vstack([np.eye(p), G])  # columns delta*_alpha in (dz, dp) coordinates
    frame = np.hstack([frame, np.vstack([np.zeros((p, r)), np.eye(r)])])  # plus d^b
    minus_g, ident = dual_adapted(conn)
    coframe = np.block([[np.eye(p), np.zeros((p, r))], [minus_g.values(pt), ident]])
    return float(np.max(np.abs(coframe @ frame - np.eye(p + r))))


# ---------------------------------------------------------------------------
# distinguished linear connections


class DLCValues(NamedTuple):
    Hh: Jet
    Hv: Jet
    Vh: Jet
    Vv: Jet


class DistinguishedLinearConnection:
    """Four coefficient families evaluated together at a point."""

    def __init__(
        self,
        p_rank: int,
        r_rank: int,
        fn: Callable[[Point, int], DLCValues],
        origin: str = "",
        exprs: tuple | None = None,
    ):
        self.p_rank = p_rank
        self.r_rank = r_rank
        self._fn = fn
        self.origin = origin
        self.exprs = exprs
        self._cache: tuple | None = None

    def jets(self, pt: Point, order: int) -> DLCValues:
        key = (pt.x.tobytes(), pt.p.tobytes(), order)
        if self._cache is not None and self._cache[0] == key:
            return self._cache[1]
        val = self._fn(pt, order)
        self._cache = (key, val)
        return val

    def values(self, pt: Point) -> DLCValues:
        return DLCValues(*(j.v for j in self.jets(pt, 0)))

    def family(self, name: str) -> FunctionField:
        shape = self.shapes()[name]
        return FunctionField(shape, lambda pt, order: getattr(self.jets(pt, order), name))

    def shapes(self) -> dict:
        p, r = self.p_rank, self.r_rank
        return {"Hh": (p, p, p), "Hv": (r, r, p), "Vh": (p, p, r), "Vv": (r, r, r)}

    @staticmethod
    def from_exprs(Hh: ExprArray, Hv: ExprArray, Vh: ExprArray, Vv: ExprArray, origin: str = "") -> "DistinguishedLinearConnection":
        p, r = Hh.shape[0], Hv.shape[0]
        want = {"Hh": (p, p, p), "Hv": (r, r, p), "Vh": (p, p, r), "Vv": (r, r, r)}
        for name, arr in zip(want, (Hh, Hv, Vh, Vv)):
            if arr.shape != want[name]:
                raise ValueError(f"{name} must have shape {want[name]}, got {arr.shape}")

        def fn(pt: Point, order: int) -> DLCValues:
            return DLCValues(Hh.jet(pt, order), Hv.jet(pt, order), Vh.jet(pt, order), Vv.jet(pt, order))

        return DistinguishedLinearConnection(p, r, fn, origin, (Hh, Hv, Vh, Vv))

    @staticmethod
    def zero(p_rank: int, r_rank: int) -> "DistinguishedLinearConnection":
        p, r = p_rank, r_rank
        return DistinguishedLinearConnection.from_exprs(
            ExprArray.zeros((p, p, p)), ExprArray.zeros((r, r, p)),
            ExprArray.zeros((p, p, r)), ExprArray.zeros((r, r, r)), origin="zero",
        )


def berwald(spec: AlgebroidSpec, conn: NonlinearConnection) -> DistinguishedLinearConnection:
    """Hv^a_{b gamma} = dGamma_{b gamma}/dp_a, V = 0.

    When p_rank == r_rank the Greek family carries the same expression;
    otherwise it is zero.
    """
    p, r, m = spec.p_rank, spec.r_rank, spec.m
    same = p == r

    def fn(pt: Point, order: int) -> DLCValues:
        G = conn.gamma.jet(pt, order + 1)
        Hv = G.partial()[:, :, m:].transpose(2, 0, 1)  # [a, b, gamma]
        Hh = Hv if same else Jet.constant(np.zeros((p, p, p)), G.n, order)
        n = G.n
        return DLCValues(Hh, Hv, Jet.constant(np.zeros((p, p, r)), n, order), Jet.constant(np.zeros((r, r, r)), n, order))

    return DistinguishedLinearConnection(p, r, fn, origin="berwald")


# ---------------------------------------------------------------------------
# d-tensors and covariant derivatives


@dataclass(frozen=True)
class DTensor:
    """Components indexed (upper Greek, upper Latin, lower Greek, lower Latin)."""

    signature: tuple[int, int, int, int]
    components: TensorField

    def __post_init__(self):
        if sum(self.signature) > 4:
            raise ValueError("valence above 4 is not supported")

    def kinds(self) -> list[str]:
        up_g, up_l, lo_g, lo_l = self.signature
        return ["G"] * up_g + ["L"] * up_l + ["g"] * lo_g + ["l"] * lo_l

    def check_shape(self, p_rank: int, r_rank: int) -> None:
        dim = {"G": p_rank, "g": p_rank, "L": r_rank, "l": r_rank}
        want = tuple(dim[k] for k in self.kinds())
        if tuple(self.components.shape) != want:
            raise ValueError(f"component shape {self.components.shape} does not match signature {self.signature}")


_LETTERS = "ABCEFHIJKL"


def _slot_term(T: Jet, C: Jet, axis: int, upper: bool) -> Jet:
    """sum_X C[new, X, d] T[..X..] (upper) or C[X, new, d] T[..X..] (lower), d appended."""
    nd = T.v.ndim
    t = _LETTERS[:nd]
    x = t[axis]
    o = t[:axis] + "N" + t[axis + 1 :] + "D"
    c = f"N{x}D" if upper else f"{x}ND"
    return jet_contract(f"{c},{t}->{o}", C, T)


def cov_slots(T: Jet, kinds: list[str], base: Jet, greek: Jet, latin: Jet) -> Jet:
    """base + slot terms with the sign pattern of the module docstring."""
    out = base
    for ax, kind in enumerate(kinds):
        if kind == "G":
            out = out + _slot_term(T, greek, ax, True)
        elif kind == "g":
            out = out - _slot_term(T, greek, ax, False)
        elif kind == "L":
            out = out - _slot_term(T, latin, ax, True)
        else:
            out = out + _slot_term(T, latin, ax, False)
    return out


def h_cov_jet(T: Jet, kinds: list[str], Hh: Jet, Hv: Jet, rho: Jet, gamma: Jet, m: int) -> Jet:
    """T_{|gamma} with gamma as trailing axis; coefficient jets one order below T."""
    return cov_slots(T.truncate(Hh.order), kinds, adapted_jet(T, rho, gamma, m), Hh, Hv)


def v_cov_jet(T: Jet, kinds: list[str], Vh: Jet, Vv: Jet, m: int) -> Jet:
    """T|^c with c as trailing axis."""
    return cov_slots(T.truncate(Vh.order), kinds, vertical_jet(T, m), Vh, Vv)


def h_cov_deriv(
    spec: AlgebroidSpec,
    conn: NonlinearConnection,
    dlc: DistinguishedLinearConnection,
    T: DTensor,
    gamma_index: int | None = None,
) -> FunctionField:
    """Horizontal covariant derivative; all gamma along a trailing axis unless one is picked."""
    s = spec.composed()
    T.check_shape(s.p_rank, s.r_rank)
    kinds = T.kinds()

    def fn(pt: Point, order: int) -> Jet:
        c = dlc.jets(pt, order)
        J = h_cov_jet(T.components.jet(pt, order + 1), kinds, c.Hh, c.Hv, s.rho.jet(pt, order), conn.gamma.jet(pt, order), s.m)
        return J if gamma_index is None else J[..., gamma_index]

    shape = tuple(T.components.shape) + (() if gamma_index is not None else (s.p_rank,))
    return FunctionField(shape, fn)


def v_cov_deriv(
    spec: AlgebroidSpec,
    dlc: DistinguishedLinearConnection,
    T: DTensor,
    c_index: int | None = None,
) -> FunctionField:
    s = spec.composed()
    T.check_shape(s.p_rank, s.r_rank)
    kinds = T.kinds()

    def fn(pt: Point, order: int) -> Jet:
        c = dlc.jets(pt, order)
        J = v_cov_jet(T.components.jet(pt, order + 1), kinds, c.Vh, c.Vv, s.m)
        return J if c_index is None else J[..., c_index]

    shape = tuple(T.components.shape) + (() if c_index is not None else (s.r_rank,))
    return FunctionField(shape, fn)


# ---------------------------------------------------------------------------
# chart transitions


@dataclass(frozen=True)
class ChartTransition:
    Lambda: ExprArray  # Lambda[a', a]
    Mmat: ExprArray  # Mmat[a', a]
    base_jacobian: ExprArray  # J[i', i]

    def __post_init__(self):
        for name in ("Lambda", "Mmat", "base_jacobian"):
            arr = getattr(self, name)
            if len(arr.shape) != 2 or arr.shape[0] != arr.shape[1]:
                raise ValueError(f"{name} must be square")
            for e in arr.exprs.flat:
                if any(kind == "p" for kind, _ in e.atoms()):
                    raise ValueError(f"{name} entries may reference base atoms only")

    @staticmethod
    def identity(m: int, p_rank: int, r_rank: int) -> "ChartTransition":
        return ChartTransition(ExprArray.identity(p_rank), ExprArray.identity(r_rank), ExprArray.identity(m))

    def check_invertible(self, pt: Point) -> None:
        for name in ("Lambda", "Mmat", "base_jacobian"):
            d = np.linalg.det(getattr(self, name).values(pt))
            if not abs(d) >= 1e-12:
                raise np.linalg.LinAlgError(f"{name} is singular at the sample point (det={d:.3e})")


class _ChartJets(NamedTuple):
    Lam: Jet  # Lambda^{a'}_a
    Linv: Jet  # Lambda^a_{a'}
    M: Jet  # M^{a'}_a
    Minv: Jet  # M^a_{a'}


def _chart_jets(trans: ChartTransition, pt: Point, order: int) -> _ChartJets:
    Lam = trans.Lambda.jet(pt, order)
    M = trans.Mmat.jet(pt, order)
    return _ChartJets(Lam, jet_inverse(Lam), M, jet_inverse(M))


def primed_momenta(trans: ChartTransition, pt: Point) -> np.ndarray:
    """p_{a'} = M^a_{a'} p_a."""
    Minv = np.linalg.inv(trans.Mmat.values(pt))
    return Minv.T @ pt.p


def _momentum_jet(pt: Point, order: int, m: int) -> Jet:
    r = pt.r
    n = m + r
    J = Jet.constant(pt.p, n, order)
    if order >= 1:
        J.g[:, m:] = np.eye(r)
    return J


def nlc_law(spec: AlgebroidSpec, conn: NonlinearConnection, trans: ChartTransition, pt: Point, order: int = 0) -> Jet:
    """Gamma_{b'g'} = M^b_{b'} [-rho_g^i d_i(M^{a'}_b) p_{a'} + Gamma_{bg}] Lambda^g_{g'}."""
    s = spec.composed()
    m = s.m
    c = _chart_jets(trans, pt, order + 1)
    rho = s.rho.jet(pt, order)
    p = _momentum_jet(pt, order, m)
    p_primed = jet_contract("ab,a->b", c.Minv.truncate(order), p)
    dM = c.M.partial()[:, :, :m]  # dM[a', b, i]
    rdM = jet_contract("gi,Abi->Abg", rho, dM)
    inner = conn.gamma.jet(pt, order) - jet_contract("Abg,A->bg", rdM, p_primed)
    t = jet_contract("bB,bg->Bg", c.Minv.truncate(order), inner)
    return jet_contract("Bg,gG->BG", t, c.Linv.truncate(order))


def nlc_primed_direct(spec: AlgebroidSpec, conn: NonlinearConnection, trans: ChartTransition, pt: Point, order: int = 0) -> Jet:
    """Primed components from the definition: delta*_{g'} applied to the primed momenta."""
    s = spec.composed()
    m = s.m
    c = _chart_jets(trans, pt, order + 1)
    p = _momentum_jet(pt, order + 1, m)
    p_primed = jet_contract("ab,a->b", c.Minv, p)  # p_{b'} as a function of (x, p)
    d = adapted_jet(p_primed, s.rho.jet(pt, order), conn.gamma.jet(pt, order), m)  # [b', g]
    return jet_contract("Bg,gG->BG", d, c.Linv.truncate(order))


def check_nlc_law(
    spec: AlgebroidSpec,
    conn: NonlinearConnection,
    trans: ChartTransition,
    samples: int = 100,
    seed: int = 0,
    tol: float = 1e-10,
) -> CheckReport:
    tr = ResidualTracker(["law-vs-direct"])
    for pt in sample_points(spec.m, spec.r_rank, samples, seed):
        try:
            trans.check_invertible(pt)
            a = nlc_law(spec, conn, trans, pt).v
            b = nlc_primed_direct(spec, conn, trans, pt).v
            tr.update("law-vs-direct", a - b, pt)
            tr.point_done()
        except (DomainError, ZeroDivisionError, np.linalg.LinAlgError) as err:
            tr.point_failed(pt, err)
    return tr.report("nlc-law", tol)


def dlc_law(spec: AlgebroidSpec, conn: NonlinearConnection, dlc: DistinguishedLinearConnection, trans: ChartTransition, pt: Point) -> DLCValues:
    """Primed coefficients (as values) from the standard law, inhomogeneous terms from delta of the inverse matrices."""
    s = spec.composed()
    m = s.m
    c = _chart_jets(trans, pt, 1)
    rho, gam = s.rho.jet(pt, 0), conn.gamma.jet(pt, 0)
    dLinv = adapted_jet(c.Linv, rho, gam, m).v  # delta_g Lambda^a_{b'}
    dMinv = adapted_jet(c.Minv, rho, gam, m).v
    Lam, Linv, M, Minv = (j.v for j in c)
    H = dlc.values(pt)
    Hh = np.einsum("Aa,abg,gG->AbG", Lam, dLinv + np.einsum("abg,bB->aBg", H.Hh, Linv), Linv)
    Hv = np.einsum("Aa,abg,gG->AbG", M, dMinv + np.einsum("abg,bB->aBg", H.Hv, Minv), Linv)
    Vh = np.einsum("Aa,abc,bB,Cc->ABC", Lam, H.Vh, Linv, M)
    Vv = np.einsum("Aa,abc,bB,Cc->ABC", M, H.Vv, Minv, M)
    return DLCValues(Hh, Hv, Vh, Vv)


def dlc_primed_direct(spec: AlgebroidSpec, conn: NonlinearConnection, dlc: DistinguishedLinearConnection, trans: ChartTransition, pt: Point) -> DLCValues:
    """Primed coefficients that keep the covariant derivatives of this module tensorial.

    Derived from the forward matrices: Hh' = [-delta(Lambda) Lambda^-1 + Lambda H Lambda^-1] Lambda^-1
    and Hv' = [+delta(M) M^-1 + M H M^-1] Lambda^-1.
    """
    s = spec.composed()
    m = s.m
    c = _chart_jets(trans, pt, 1)
    rho, gam = s.rho.jet(pt, 0), conn.gamma.jet(pt, 0)
    dLam = adapted_jet(c.Lam, rho, gam, m).v  # [a', a, g]
    dM = adapted_jet(c.M, rho, gam, m).v
    Lam, Linv, M, Minv = (j.v for j in c)
    H = dlc.values(pt)
    Hh = np.einsum("Abg,bB,gG->ABG", -dLam, Linv, Linv) + np.einsum("Aa,abg,bB,gG->ABG", Lam, H.Hh, Linv, Linv)
    Hv = np.einsum("Abg,bB,gG->ABG", dM, Minv, Linv) + np.einsum("Aa,abg,bB,gG->ABG", M, H.Hv, Minv, Linv)
    Vh = np.einsum("Aa,abc,bB,Cc->ABC", Lam, H.Vh, Linv, M)
    Vv = np.einsum("Aa,abc,bB,Cc->ABC", M, H.Vv, Minv, M)
    return DLCValues(Hh, Hv, Vh, Vv)


def berwald_primed(spec: AlgebroidSpec, conn: NonlinearConnection, trans: ChartTransition, pt: Point) -> DLCValues:
    """Berwald coefficients recomputed from the primed nonlinear connection.

    d/dp_{a'} = M^{a'}_a d/dp_a since the primed momenta are linear in p.
    """
    m = spec.m
    G1 = nlc_primed_direct(spec, conn, trans, pt, order=1)  # [b', g'] as jet
    M = trans.Mmat.values(pt)
    Hv = np.einsum("Aa,bga->Abg", M, G1.g[:, :, m:])
    p, r = spec.p_rank, spec.r_rank
    Hh = Hv if p == r else np.zeros((p, p, p))
    return DLCValues(Hh, Hv, np.zeros((p, p, r)), np.zeros((r, r, r)))


def check_dlc_law(
    spec: AlgebroidSpec,
    conn: NonlinearConnection,
    dlc: DistinguishedLinearConnection,
    trans: ChartTransition,
    samples: int = 100,
    seed: int = 0,
    tol: float = 1e-10,
) -> CheckReport:
    """dlc_law against the tensoriality-preserving dlc_primed_direct, family by family.

    For a Berwald connection dlc_law is also compared with the
    connection recomputed in the primed chart (the Greek family only when
    Lambda equals M at the point).
    """
    fams = ["Hh", "Hv", "Vh", "Vv"]
    names = [f"{f}-law" for f in fams]
    is_berwald = dlc.origin == "berwald"
    if is_berwald:
        names += ["berwald-recompute"]
    tr = ResidualTracker(names)
    for pt in sample_points(spec.m, spec.r_rank, samples, seed):
        try:
            trans.check_invertible(pt)
            a = dlc_law(spec, conn, dlc, trans, pt)
            b = dlc_primed_direct(spec, conn, dlc, trans, pt)
            for f in fams:
                tr.update(f"{f}-law", getattr(a, f) - getattr(b, f), pt)
            if is_berwald:
                bw = berwald_primed(spec, conn, trans, pt)
                worst = [a.Hv - bw.Hv, a.Vh - bw.Vh, a.Vv - bw.Vv]
                if a.Hh.shape == bw.Hh.shape and np.allclose(trans.Lambda.values(pt), trans.Mmat.values(pt), rtol=0, atol=1e-15):
                    worst.append(a.Hh - bw.Hh)
                tr.update("berwald-recompute", max(float(np.max(np.abs(w))) for w in worst), pt)
            tr.point_done()
        except (DomainError, ZeroDivisionError, np.linalg.LinAlgError) as err:
            tr.point_failed(pt, err)
    return tr.report("dlc-law", tol)
