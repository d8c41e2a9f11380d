"""Scalar-field expressions on the dual total space and truncated-Taylor jets.

Expressions are prefix s-expressions over base atoms ``x1..xm`` and fiber
atoms ``p1..pr``.  Jets carry value, gradient, Hessian and (optionally) the
third-derivative tensor with respect to the full coordinate tuple
``(x1..xm, p1..pr)``; they are propagated forward through every operation so
the derivatives are exact up to floating point rounding.

A :class:`Jet` may be array valued: the leading axes index components and the
trailing axes index coordinates.  That lets whole coefficient families be
pushed through products and contractions in one numpy call.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np

EPS_FIBER = 1e-3


# ---------------------------------------------------------------------------
# errors


class ExprSyntaxError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class AtomIndexError(IndexError):
    def __init__(self, atom: str, dims: tuple[int, int], position: int | None = None):
        where = "" if position is None else f" at position {position}"
        super().__init__(f"atom {atom} out of range for dims (m={dims[0]}, r={dims[1]}){where}")
        self.atom = atom
        self.position = position


class DomainError(ArithmeticError):
    """Raised when a subexpression leaves the domain of its operator."""

    def __init__(self, reason: str, expr: "Expr"):
        super().__init__(f"{reason} in {to_string(expr)}")
        self.reason = reason
        self.expr = expr


# ---------------------------------------------------------------------------
# expression tree

UNARY_OPS = ("neg", "sin", "cos", "exp", "log", "sqrt")
NARY_OPS = ("+", "*")
BINARY_OPS = ("-", "/")


class Expr:
    __slots__ = ()

    def atoms(self) -> set[tuple[str, int]]:
        out: set[tuple[str, int]] = set()
        _collect_atoms(self, out)
        return out

    def __str__(self) -> str:
        return to_string(self)

    # light operator sugar for building expressions in code
    def __add__(self, other):
        return Add((self, _lift(other)))

    def __radd__(self, other):
        return Add((_lift(other), self))

    def __mul__(self, other):
        return Mul((self, _lift(other)))

    def __rmul__(self, other):
        return Mul((_lift(other), self))

    def __sub__(self, other):
        return Sub(self, _lift(other))

    def __rsub__(self, other):
        return Sub(_lift(other), self)

    def __truediv__(self, other):
        return Div(self, _lift(other))

    def __neg__(self):
        return Unary("neg", self)


@dataclass(frozen=True, eq=True)
class Const(Expr):
    value: float


@dataclass(frozen=True, eq=True)
class Atom(Expr):
    kind: str  # "x" or "p"
    index: int  # 1-based


@dataclass(frozen=True, eq=True)
class Unary(Expr):
    op: str
    arg: Expr


@dataclass(frozen=True, eq=True)
class Add(Expr):
    args: tuple


@dataclass(frozen=True, eq=True)
class Mul(Expr):
    args: tuple


@dataclass(frozen=True, eq=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True)
class Div(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True)
class Pow(Expr):
    base: Expr
    exponent: float


ZERO = Const(0.0)
ONE = Const(1.0)


def _lift(v) -> Expr:
    if isinstance(v, Expr):
        return v
    return Const(float(v))


def X(i: int) -> Atom:
    return Atom("x", i)


def P(a: int) -> Atom:
    return Atom("p", a)


def _collect_atoms(e: Expr, out: set) -> None:
    if isinstance(e, Atom):
        out.add((e.kind, e.index))
    elif isinstance(e, Unary):
        _collect_atoms(e.arg, out)
    elif isinstance(e, (Add, Mul)):
        for a in e.args:
            _collect_atoms(a, out)
    elif isinstance(e, (Sub, Div)):
        _collect_atoms(e.left, out)
        _collect_atoms(e.right, out)
    elif isinstance(e, Pow):
        _collect_atoms(e.base, out)


def is_zero(e: Expr) -> bool:
    return isinstance(e, Const) and e.value == 0.0


def substitute(e: Expr, xmap: Sequence[Expr]) -> Expr:
    """Replace every base atom x_i by ``xmap[i-1]`` (pre-composition f -> f o h)."""
    if isinstance(e, Atom):
        return xmap[e.index - 1] if e.kind == "x" else e
    if isinstance(e, Const):
        return e
    if isinstance(e, Unary):
        return Unary(e.op, substitute(e.arg, xmap))
    if isinstance(e, Add):
        return Add(tuple(substitute(a, xmap) for a in e.args))
    if isinstance(e, Mul):
        return Mul(tuple(substitute(a, xmap) for a in e.args))
    if isinstance(e, Sub):
        return Sub(substitute(e.left, xmap), substitute(e.right, xmap))
    if isinstance(e, Div):
        return Div(substitute(e.left, xmap), substitute(e.right, xmap))
    if isinstance(e, Pow):
        return Pow(substitute(e.base, xmap), e.exponent)
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# printing and parsing


def _fmt_number(v: float) -> str:
    if not math.isfinite(v):
        raise ValueError(f"non-finite constant {v}")
    return repr(float(v))


def to_string(e: Expr) -> str:
    if isinstance(e, Const):
        return _fmt_number(e.value)
    if isinstance(e, Atom):
        return f"{e.kind}{e.index}"
    if isinstance(e, Unary):
        return f"({e.op} {to_string(e.arg)})"
    if isinstance(e, Add):
        return "(+ " + " ".join(to_string(a) for a in e.args) + ")"
    if isinstance(e, Mul):
        return "(* " + " ".join(to_string(a) for a in e.args) + ")"
    if isinstance(e, Sub):
        return f"(- {to_string(e.left)} {to_string(e.right)})"
    if isinstance(e, Div):
        return f"(/ {to_string(e.left)} {to_string(e.right)})"
    if isinstance(e, Pow):
        return f"(pow {to_string(e.base)} {_fmt_number(e.exponent)})"
    raise TypeError(f"not an expression: {e!r}")


_NUMBER = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?\Z")
_ATOM = re.compile(r"([xp])(\d+)\Z")
_TOKEN = re.compile(r"\s*(\(|\)|[^\s()]+)")


def _tokenize(text: str) -> list[tuple[str, int]]:
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        mt = _TOKEN.match(text, pos)
        if mt is None:
            # only trailing whitespace can fail to match
            break
        tokens.append((mt.group(1), mt.start(1)))
        pos = mt.end()
    return tokens


def parse_expr(text: str, dims: tuple[int, int]) -> Expr:
    """Parse a prefix s-expression, checking atoms against ``dims = (m, r)``."""
    tokens = _tokenize(text)
    if not tokens:
        raise ExprSyntaxError("empty expression", 0)
    m, r = dims
    k = 0

    def expect_more(pos: int):
        if k >= len(tokens):
            raise ExprSyntaxError("unexpected end of input", len(text))

    def parse_one() -> Expr:
        nonlocal k
        expect_more(len(text))
        tok, pos = tokens[k]
        k += 1
        if tok == ")":
            raise ExprSyntaxError("unexpected ')'", pos)
        if tok != "(":
            return _leaf(tok, pos)
        expect_more(pos)
        op, op_pos = tokens[k]
        k += 1
        if op in ("(", ")"):
            raise ExprSyntaxError("expected operator", op_pos)
        args = []
        number_arg = None
        while True:
            if k >= len(tokens):
                raise ExprSyntaxError("unclosed '('", pos)
            if tokens[k][0] == ")":
                k += 1
                break
            if op == "pow" and len(args) == 1:
                tok2, pos2 = tokens[k]
                if not _NUMBER.match(tok2):
                    raise ExprSyntaxError("pow exponent must be a number", pos2)
                number_arg = float(tok2)
                k += 1
                args.append(None)
                continue
            args.append(parse_one())
        return _node(op, op_pos, args, number_arg)

    def _leaf(tok: str, pos: int) -> Expr:
        if _NUMBER.match(tok):
            v = float(tok)
            if not math.isfinite(v):
                raise ExprSyntaxError(f"number out of range '{tok}'", pos)
            return Const(v)
        ma = _ATOM.match(tok)
        if ma:
            kind, idx = ma.group(1), int(ma.group(2))
            bound = m if kind == "x" else r
            if idx < 1 or idx > bound:
                raise AtomIndexError(tok, dims, pos)
            return Atom(kind, idx)
        raise ExprSyntaxError(f"unknown token '{tok}'", pos)

    def _node(op: str, pos: int, args: list, number_arg) -> Expr:
        if op in UNARY_OPS:
            if len(args) != 1:
                raise ExprSyntaxError(f"'{op}' takes 1 argument, got {len(args)}", pos)
            return Unary(op, args[0])
        if op in NARY_OPS:
            if len(args) < 2:
                raise ExprSyntaxError(f"'{op}' takes at least 2 arguments", pos)
            return (Add if op == "+" else Mul)(tuple(args))
        if op in BINARY_OPS:
            if len(args) != 2:
                raise ExprSyntaxError(f"'{op}' takes 2 arguments, got {len(args)}", pos)
            return (Sub if op == "-" else Div)(args[0], args[1])
        if op == "pow":
            if len(args) != 2:
                raise ExprSyntaxError("'pow' takes an expression and a number", pos)
            return Pow(args[0], number_arg)
        raise ExprSyntaxError(f"unknown operator '{op}'", pos)

    e = parse_one()
    if k != len(tokens):
        raise ExprSyntaxError("trailing input", tokens[k][1])
    return e


# ---------------------------------------------------------------------------
# points and sampling


@dataclass(frozen=True)
class Point:
    x: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).reshape(-1))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(-1))
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.p))):
            raise ValueError("point has non-finite coordinates")

    @property
    def m(self) -> int:
        return self.x.size

    @property
    def r(self) -> int:
        return self.p.size

    @property
    def coords(self) -> np.ndarray:
        return np.concatenate([self.x, self.p])

    def as_dict(self) -> dict:
        return {"x": [float(v) for v in self.x], "p": [float(v) for v in self.p]}


def sample_points(
    m: int,
    r: int,
    count: int,
    seed: int | np.random.Generator = 0,
    *,
    x_bound: float = 1.0,
    p_min: float = EPS_FIBER,
    p_max: float = 2.0,
) -> list[Point]:
    """x uniform in the cube, p uniform (by volume) in the annulus p_min <= |p| <= p_max."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pts = []
    for _ in range(count):
        x = rng.uniform(-x_bound, x_bound, size=m)
        if r == 0:
            p = np.zeros(0)
        else:
            d = rng.normal(size=r)
            while np.linalg.norm(d) == 0.0:
                d = rng.normal(size=r)
            d /= np.linalg.norm(d)
            u = rng.uniform(p_min**r, p_max**r)
            p = d * u ** (1.0 / r)
        pts.append(Point(x, p))
    return pts


# ---------------------------------------------------------------------------
# jets


def _sym3(a: np.ndarray, B: np.ndarray) -> np.ndarray:
    """S_ijk = a_i B_jk + a_j B_ik + a_k B_ij (over trailing axes)."""
    T = a[..., :, None, None] * B[..., None, :, :]
    return T + np.swapaxes(T, -3, -2) + np.einsum("...kij->...ijk", T)


class Jet:
    """Truncated Taylor expansion of an (array of) scalar field(s) at a point.

    ``v`` has shape S, ``g`` S+(n,), ``h`` S+(n,n), ``t`` S+(n,n,n).  Slots above
    ``order`` are ``None``.
    """

    __slots__ = ("v", "g", "h", "t", "order", "n")
    __array_ufunc__ = None  # let numpy defer to the reflected jet operators

    def __init__(self, v, g=None, h=None, t=None, order: int | None = None, n: int | None = None):
        self.v = np.asarray(v, dtype=float)
        self.g = g
        self.h = h
        self.t = t
        if order is None:
            order = 0 if g is None else 1 if h is None else 2 if t is None else 3
        self.order = order
        if n is None:
            if g is None:
                raise ValueError("coordinate count needed for order-0 jets")
            n = g.shape[-1]
        self.n = n

    # scalar-facing accessors
    @property
    def value(self):
        return float(self.v) if self.v.ndim == 0 else self.v

    @property
    def grad(self):
        return self.g

    @property
    def hess(self):
        return self.h

    @property
    def third(self):
        return self.t

    @property
    def shape(self) -> tuple:
        return self.v.shape

    def __repr__(self) -> str:
        return f"Jet(shape={self.shape}, order={self.order}, value={self.v!r})"

    # constructors
    @staticmethod
    def constant(value, n: int, order: int) -> "Jet":
        v = np.asarray(value, dtype=float)
        S = v.shape
        g = np.zeros(S + (n,)) if order >= 1 else None
        h = np.zeros(S + (n, n)) if order >= 2 else None
        t = np.zeros(S + (n, n, n)) if order >= 3 else None
        return Jet(v, g, h, t, order, n)

    @staticmethod
    def variable(k: int, value: float, n: int, order: int) -> "Jet":
        j = Jet.constant(value, n, order)
        if order >= 1:
            j.g[k] = 1.0
        return j

    def truncate(self, order: int) -> "Jet":
        if order >= self.order:
            return self
        return Jet(
            self.v,
            self.g if order >= 1 else None,
            self.h if order >= 2 else None,
            None,
            order,
            self.n,
        )

    def slots(self) -> list:
        return [s for s in (self.v, self.g, self.h, self.t)][: self.order + 1]

    # structural helpers
    def __getitem__(self, idx) -> "Jet":
        if not isinstance(idx, tuple):
            idx = (idx,)
        if any(i is Ellipsis for i in idx):
            # the ellipsis spans component axes only, never derivative axes
            k = idx.index(Ellipsis)
            used = sum(1 for i in idx if i is not Ellipsis and i is not None)
            idx = idx[:k] + (slice(None),) * (self.v.ndim - used) + idx[k + 1 :]
        return Jet(*[None if s is None else s[idx] for s in (self.v, self.g, self.h, self.t)], self.order, self.n)

    def partial(self) -> "Jet":
        """Jet of the gradient: shape S+(n,), order lowered by one."""
        if self.order < 1:
            raise ValueError("cannot differentiate an order-0 jet")
        return Jet(self.g, self.h, self.t, None, self.order - 1, self.n)

    def transpose(self, *axes) -> "Jet":
        k = self.v.ndim
        out = []
        for j, s in enumerate(self.slots()):
            out.append(np.transpose(s, tuple(axes) + tuple(range(k, k + j))))
        out += [None] * (4 - len(out))
        return Jet(*out, self.order, self.n)

    def reshape(self, *shape) -> "Jet":
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        k = self.v.ndim
        out = [s.reshape(tuple(shape) + s.shape[k:]) for s in self.slots()]
        out += [None] * (4 - len(out))
        return Jet(*out, self.order, self.n)

    def sum(self, axis: int) -> "Jet":
        if axis < 0:
            axis += self.v.ndim
        out = [s.sum(axis=axis) for s in self.slots()] + [None] * (3 - self.order)
        return Jet(*out, self.order, self.n)

    @staticmethod
    def stack(jets: Sequence["Jet"], shape: tuple | None = None) -> "Jet":
        order = min(j.order for j in jets)
        n = jets[0].n
        js = [j.truncate(order) for j in jets]
        out = []
        for slot in range(order + 1):
            arr = np.stack([j.slots()[slot] for j in js], axis=0)
            if shape is not None:
                arr = arr.reshape(tuple(shape) + arr.shape[1:])
            out.append(arr)
        out += [None] * (4 - len(out))
        return Jet(*out, order, n)

    # arithmetic
    def _coerce(self, other) -> "Jet":
        if isinstance(other, Jet):
            return other
        return Jet.constant(other, self.n, self.order)

    def __add__(self, other) -> "Jet":
        if not isinstance(other, Jet):
            return Jet(self.v + other, self.g, self.h, self.t, self.order, self.n)
        o = min(self.order, other.order)
        a, b = self.truncate(o), other.truncate(o)
        out = [x + y for x, y in zip(a.slots(), b.slots())] + [None] * (3 - o)
        return Jet(*out, o, self.n)

    __radd__ = __add__

    def __neg__(self) -> "Jet":
        out = [-s for s in self.slots()] + [None] * (3 - self.order)
        return Jet(*out, self.order, self.n)

    def __sub__(self, other) -> "Jet":
        return self + (-other if isinstance(other, Jet) else -np.asarray(other))

    def __rsub__(self, other) -> "Jet":
        return (-self) + other

    def scale(self, c) -> "Jet":
        c = np.asarray(c, dtype=float)
        out = []
        for j, s in enumerate(self.slots()):
            out.append(s * c.reshape(c.shape + (1,) * j) if c.ndim else s * c)
        out += [None] * (4 - len(out))
        return Jet(*out, self.order, self.n)

    def __mul__(self, other) -> "Jet":
        if not isinstance(other, Jet):
            return self.scale(other)
        o = min(self.order, other.order)
        a, b = self.truncate(o), other.truncate(o)
        av, bv = a.v, b.v
        v = av * bv
        g = h = t = None
        if o >= 1:
            g = av[..., None] * b.g + bv[..., None] * a.g
        if o >= 2:
            ag, bg = a.g, b.g
            cross = ag[..., :, None] * bg[..., None, :]
            h = av[..., None, None] * b.h + bv[..., None, None] * a.h + cross + np.swapaxes(cross, -1, -2)
        if o >= 3:
            t = (
                av[..., None, None, None] * b.t
                + bv[..., None, None, None] * a.t
                + _sym3(a.g, b.h)
                + _sym3(b.g, a.h)
            )
        return Jet(v, g, h, t, o, self.n)

    __rmul__ = __mul__

    def compose(self, d0, d1, d2=None, d3=None) -> "Jet":
        """phi(self) given phi and its derivatives evaluated at self.v (elementwise)."""
        o = self.order
        g = h = t = None
        if o >= 1:
            g = d1[..., None] * self.g
        if o >= 2:
            gg = self.g[..., :, None] * self.g[..., None, :]
            h = d1[..., None, None] * self.h + d2[..., None, None] * gg
        if o >= 3:
            ggg = gg[..., :, :, None] * self.g[..., None, None, :]
            t = (
                d1[..., None, None, None] * self.t
                + d2[..., None, None, None] * _sym3(self.g, self.h)
                + d3[..., None, None, None] * ggg
            )
        return Jet(d0, g, h, t, o, self.n)

    def reciprocal(self) -> "Jet":
        u = self.v
        if np.any(u == 0.0):
            raise ZeroDivisionError("reciprocal of a zero jet value")
        r = 1.0 / u
        return self.compose(r, -r * r, 2.0 * r**3, -6.0 * r**4)

    def __truediv__(self, other) -> "Jet":
        if not isinstance(other, Jet):
            return self.scale(1.0 / np.asarray(other, dtype=float))
        return self * other.reciprocal()

    def __rtruediv__(self, other) -> "Jet":
        return self.reciprocal() * other


# derivative tables for the unary operators: phi, phi', phi'', phi'''
def _sin(u):
    s, c = np.sin(u), np.cos(u)
    return s, c, -s, -c


def _cos(u):
    s, c = np.sin(u), np.cos(u)
    return c, -s, -c, s


def _exp(u):
    e = np.exp(u)
    return e, e, e, e


def _log(u):
    r = 1.0 / u
    return np.log(u), r, -r * r, 2.0 * r**3


def _sqrt(u):
    s = np.sqrt(u)
    return s, 0.5 / s, -0.25 / (s * u), 0.375 / (s * u * u)


def _pow_table(u, c: float):
    out = []
    coef = 1.0
    for j in range(4):
        if coef == 0.0:
            out.append(np.zeros_like(u))
        else:
            out.append(coef * np.power(u, c - j))
        coef *= c - j
    return out


@lru_cache(maxsize=None)
def _contract_plan(subscripts: str) -> tuple[str, str, str, str, str, str]:
    lhs, out = subscripts.replace(" ", "").split("->")
    sa, sb = lhs.split(",")
    free = [c for c in "zyw" if c not in subscripts]
    if len(free) < 3:
        raise ValueError("subscripts use reserved derivative letters z, y, w")
    return (sa, sb, out, *free)


def jet_contract(subscripts: str, a: Jet, b: Jet) -> Jet:
    """Bilinear einsum of two jets with the product rule applied slot by slot."""
    sa, sb, out, z, y, w = _contract_plan(subscripts)
    o = min(a.order, b.order)
    A, B = a.truncate(o), b.truncate(o)

    def E(x, dx, yv, dy, od):
        big = x.size * yv.size > 1_000_000  # BLAS path only pays off for large operands
        return np.einsum(sa + dx + "," + sb + dy + "->" + out + od, x, yv, optimize=big)

    v = E(A.v, "", B.v, "", "")
    g = h = t = None
    if o >= 1:
        g = E(A.g, z, B.v, "", z) + E(A.v, "", B.g, z, z)
    # mixed terms that differ only by a relabelling of derivative axes are
    # computed once and permuted
    if o >= 2:
        gg = E(A.g, z, B.g, y, z + y)
        h = E(A.h, z + y, B.v, "", z + y) + gg + np.swapaxes(gg, -1, -2) + E(A.v, "", B.h, z + y, z + y)
    if o >= 3:
        zyw = z + y + w
        lead = tuple(range(v.ndim))
        k = v.ndim
        hg = E(A.h, z + y, B.g, w, zyw)
        gh = E(A.g, z, B.h, y + w, zyw)
        t = (
            E(A.t, zyw, B.v, "", zyw)
            + hg
            + hg.transpose(lead + (k, k + 2, k + 1))
            + hg.transpose(lead + (k + 2, k, k + 1))
            + gh
            + gh.transpose(lead + (k + 1, k, k + 2))
            + gh.transpose(lead + (k + 1, k + 2, k))
            + E(A.v, "", B.t, zyw, zyw)
        )
    return Jet(v, g, h, t, o, a.n)


def jet_inverse(A: Jet) -> Jet:
    """Matrix inverse of a (k,k) jet by Newton refinement B <- B(2I - AB)."""
    k = A.shape[0]
    B = Jet.constant(np.linalg.inv(A.v), A.n, A.order)
    eye2 = 2.0 * np.eye(k)
    reached = 0
    while reached < A.order:
        AB = jet_contract("ij,jk->ik", A, B)
        B = jet_contract("ij,jk->ik", B, eye2 - AB)
        reached = 2 * reached + 1
    return B


# ---------------------------------------------------------------------------
# evaluation


def _check_point(e: Expr, pt: Point) -> None:
    for kind, idx in e.atoms():
        bound = pt.m if kind == "x" else pt.r
        if idx > bound:
            raise AtomIndexError(f"{kind}{idx}", (pt.m, pt.r))


def _eval(e: Expr, pt: Point, order: int, n: int) -> Jet:
    if isinstance(e, Const):
        return Jet.constant(e.value, n, order)
    if isinstance(e, Atom):
        if e.kind == "x":
            if e.index > pt.m:
                raise AtomIndexError(f"x{e.index}", (pt.m, pt.r))
            return Jet.variable(e.index - 1, pt.x[e.index - 1], n, order)
        if e.index > pt.r:
            raise AtomIndexError(f"p{e.index}", (pt.m, pt.r))
        return Jet.variable(pt.m + e.index - 1, pt.p[e.index - 1], n, order)
    if isinstance(e, Add):
        acc = _eval(e.args[0], pt, order, n)
        for a in e.args[1:]:
            acc = acc + _eval(a, pt, order, n)
        return acc
    if isinstance(e, Mul):
        acc = _eval(e.args[0], pt, order, n)
        for a in e.args[1:]:
            acc = acc * _eval(a, pt, order, n)
        return acc
    if isinstance(e, Sub):
        return _eval(e.left, pt, order, n) - _eval(e.right, pt, order, n)
    if isinstance(e, Div):
        den = _eval(e.right, pt, order, n)
        if den.v == 0.0:
            raise DomainError("division by zero", e)
        return _eval(e.left, pt, order, n) / den
    if isinstance(e, Unary):
        u = _eval(e.arg, pt, order, n)
        if e.op == "neg":
            return -u
        if e.op == "sin":
            return u.compose(*_sin(u.v))
        if e.op == "cos":
            return u.compose(*_cos(u.v))
        if e.op == "exp":
            return u.compose(*_exp(u.v))
        if e.op == "log":
            if not u.v > 0.0:
                raise DomainError("log of non-positive value", e)
            return u.compose(*_log(u.v))
        if e.op == "sqrt":
            if not u.v > 0.0:
                raise DomainError("sqrt of non-positive value", e)
            return u.compose(*_sqrt(u.v))
        raise ValueError(f"unknown unary op {e.op}")
    if isinstance(e, Pow):
        u = _eval(e.base, pt, order, n)
        c = e.exponent
        if float(c).is_integer():
            if c < 0 and u.v == 0.0:
                raise DomainError("negative power of zero", e)
        elif not u.v > 0.0:
            raise DomainError("non-integer power of non-positive value", e)
        return u.compose(*_pow_table(u.v, c))
    raise TypeError(f"not an expression: {e!r}")


def eval_jet(e: Expr, pt: Point, order: int = 1) -> Jet:
    """Exact jet of ``e`` at ``pt`` up to ``order`` (1, 2 or 3)."""
    if order not in (1, 2, 3):
        raise ValueError("order must be 1, 2 or 3")
    return _eval(e, pt, order, pt.m + pt.r)


def eval_value(e: Expr, pt: Point) -> float:
    return _eval(e, pt, 0, pt.m + pt.r).value


# ---------------------------------------------------------------------------
# tensor fields: anything that can hand out a jet at a point


class TensorField:
    """A field of fixed component shape that evaluates to a :class:`Jet`."""

    shape: tuple = ()

    def jet(self, pt: Point, order: int) -> Jet:  # pragma: no cover - interface
        raise NotImplementedError

    def values(self, pt: Point) -> np.ndarray:
        return self.jet(pt, 0).v


class ExprArray(TensorField):
    """Dense array of expressions."""

    def __init__(self, exprs):
        if isinstance(exprs, np.ndarray) and exprs.dtype == object:
            arr = exprs
        else:
            shape = _nested_shape(exprs)
            arr = np.empty(shape, dtype=object)
            for i, e in enumerate(_flatten(exprs)):
                arr.flat[i] = _lift(e)
        self.exprs = arr
        self.shape = arr.shape
        self._const = np.zeros(arr.shape)
        self._live = []
        for i, e in enumerate(arr.flat):
            if isinstance(e, Const):
                self._const.flat[i] = e.value
            else:
                self._live.append((i, e))
        self._last: tuple | None = None

    @staticmethod
    def zeros(shape) -> "ExprArray":
        arr = np.empty(shape, dtype=object)
        for i in range(arr.size):
            arr.flat[i] = ZERO
        return ExprArray(arr)

    @staticmethod
    def identity(k: int) -> "ExprArray":
        arr = np.empty((k, k), dtype=object)
        for i in range(k):
            for j in range(k):
                arr[i, j] = ONE if i == j else ZERO
        return ExprArray(arr)

    def is_zero(self) -> bool:
        return all(is_zero(e) for e in self.exprs.flat)

    def jet(self, pt: Point, order: int) -> Jet:
        key = (pt.x.tobytes(), pt.p.tobytes(), order)
        last = self._last
        if last is not None and last[0] == key:
            return last[1]
        n = pt.m + pt.r
        J = Jet.constant(self._const.copy(), n, order)
        K = self._const.size
        flat = [s.reshape((K,) + s.shape[len(self.shape):]) for s in J.slots()]
        for i, e in self._live:
            for dst, src in zip(flat, _eval(e, pt, order, n).slots()):
                dst[i] = src
        for s in J.slots():
            s.flags.writeable = False
        self._last = (key, J)
        return J

    def strings(self):
        return np.vectorize(to_string, otypes=[object])(self.exprs).tolist()

    def __getitem__(self, idx):
        return self.exprs[idx]


def _nested_shape(obj) -> tuple:
    if isinstance(obj, np.ndarray):
        return obj.shape
    if isinstance(obj, (list, tuple)):
        if not obj:
            return (0,)
        inner = {_nested_shape(o) for o in obj}
        if len(inner) != 1:
            raise ValueError("ragged nested array")
        return (len(obj),) + inner.pop()
    return ()


def _flatten(obj) -> Iterable:
    if isinstance(obj, np.ndarray):
        yield from obj.flat
    elif isinstance(obj, (list, tuple)):
        for o in obj:
            yield from _flatten(o)
    else:
        yield obj


class FunctionField(TensorField):
    """Field defined by a callable ``(pt, order) -> Jet``."""

    def __init__(self, shape: tuple, fn: Callable[[Point, int], Jet]):
        self.shape = tuple(shape)
        self._fn = fn

    def jet(self, pt: Point, order: int) -> Jet:
        return self._fn(pt, order)


def parse_array(data, dims: tuple[int, int], shape: tuple) -> ExprArray:
    """Parse a nested list of expression strings of the given shape."""
    arr = np.empty(shape, dtype=object)
    try:
        got = _nested_shape(data)
    except ValueError:
        got = None
    if got != tuple(shape):
        raise ValueError(f"expected array of shape {tuple(shape)}, got {tuple(got)}")
    for idx in np.ndindex(*shape):
        item = data
        for i in idx:
            item = item[i]
        arr[idx] = parse_expr(str(item), dims) if isinstance(item, str) else Const(float(item))
    return ExprArray(arr)
