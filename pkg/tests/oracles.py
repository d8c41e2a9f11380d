"""Independent reference computations used by the tests.

Nothing here goes through Jet arithmetic: derivatives are central finite
differences of plain values and contractions are explicit index loops.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from dualgeo.jets import Add, Atom, Const, Div, Mul, Point, Pow, Sub, Unary

# ---------------------------------------------------------------------------
# plain evaluation of an expression tree (numpy arrays of points allowed)


class OutOfDomain(Exception):
    pass


def evaluate(e, x: np.ndarray, p: np.ndarray, margin: float = 0.0):
    """Value of ``e`` with x, p of shape (m, K) / (r, K); returns shape (K,).

    With margin > 0 every log/sqrt/non-integer pow argument must exceed it and
    every denominator must exceed it in magnitude, otherwise OutOfDomain.
    """
    if isinstance(e, Const):
        return np.full(x.shape[1], e.value)
    if isinstance(e, Atom):
        return (x if e.kind == "x" else p)[e.index - 1].astype(float)
    if isinstance(e, Add):
        return sum(evaluate(a, x, p, margin) for a in e.args)
    if isinstance(e, Mul):
        out = evaluate(e.args[0], x, p, margin)
        for a in e.args[1:]:
            out = out * evaluate(a, x, p, margin)
        return out
    if isinstance(e, Sub):
        return evaluate(e.left, x, p, margin) - evaluate(e.right, x, p, margin)
    if isinstance(e, Div):
        den = evaluate(e.right, x, p, margin)
        if np.any(np.abs(den) <= margin) or np.any(den == 0):
            raise OutOfDomain("division")
        return evaluate(e.left, x, p, margin) / den
    if isinstance(e, Unary):
        u = evaluate(e.arg, x, p, margin)
        if e.op == "neg":
            return -u
        if e.op == "sin":
            return np.sin(u)
        if e.op == "cos":
            return np.cos(u)
        if e.op == "exp":
            if np.any(u > 30):
                raise OutOfDomain("overflow")
            return np.exp(u)
        if e.op in ("log", "sqrt"):
            if np.any(u <= margin) or np.any(u <= 0):
                raise OutOfDomain(e.op)
            return np.log(u) if e.op == "log" else np.sqrt(u)
    if isinstance(e, Pow):
        u = evaluate(e.base, x, p, margin)
        c = e.exponent
        if float(c).is_integer():
            if c < 0 and (np.any(np.abs(u) <= margin) or np.any(u == 0)):
                raise OutOfDomain("pow")
        elif np.any(u <= margin) or np.any(u <= 0):
            raise OutOfDomain("pow")
        return u**c
    raise TypeError(e)


def scalar_value(e, pt: Point) -> float:
    return float(evaluate(e, pt.x[:, None], pt.p[:, None])[0])


# ---------------------------------------------------------------------------
# central differences


def fd_stencil_points(z: np.ndarray, idx: tuple, h: float):
    """Points and weights of the product of central differences along idx."""
    n = z.size
    pts, wts = [], []
    for signs in itertools.product((1.0, -1.0), repeat=len(idx)):
        q = z.copy()
        for s, i in zip(signs, idx):
            q[i] += s * h
        pts.append(q)
        wts.append(np.prod(signs))
    scale = (2.0 * h) ** len(idx)
    return np.array(pts).T.reshape(n, -1), np.array(wts) / scale


def fd_partials(f, z: np.ndarray, order: int, h: float) -> dict:
    """All partials of the given order with sorted index tuples, f: (n, K) -> (K,)."""
    n = z.size
    combos = list(itertools.combinations_with_replacement(range(n), order))
    blocks = [fd_stencil_points(z, c, h) for c in combos]
    allpts = np.concatenate([b[0] for b in blocks], axis=1)
    vals = f(allpts)
    out = {}
    k = 0
    for c, (P_, w) in zip(combos, blocks):
        K = P_.shape[1]
        out[c] = float(np.dot(w, vals[k : k + K]))
        k += K
    return out


def fd_field_gradient(field, pt: Point, h: float) -> np.ndarray:
    """d/dz_k of the field values, stacked as a trailing axis (central difference)."""
    z = pt.coords
    m = pt.m
    cols = []
    for k in range(z.size):
        zp, zm = z.copy(), z.copy()
        zp[k] += h
        zm[k] -= h
        a = field.values(Point(zp[:m], zp[m:]))
        b = field.values(Point(zm[:m], zm[m:]))
        cols.append((np.asarray(a) - np.asarray(b)) / (2 * h))
    return np.stack(cols, axis=-1)


# ---------------------------------------------------------------------------
# covariant derivatives by explicit loops


def loop_h_cov(T, dT, kinds, Hh, Hv, rho, gamma, m):
    """Index-loop horizontal covariant derivative.

    T: component values, dT: T's gradient over all coordinates (trailing axis).
    Returns array with an extra trailing gamma axis.
    """
    p = rho.shape[0]
    out = np.zeros(T.shape + (p,))
    for idx in np.ndindex(*T.shape):
        for g in range(p):
            val = sum(dT[idx + (i,)] * rho[g, i] for i in range(m))
            val += sum(dT[idx + (m + b,)] * gamma[b, g] for b in range(gamma.shape[0]))
            for ax, kind in enumerate(kinds):
                C = Hh if kind in "Gg" else Hv
                for X in range(T.shape[ax]):
                    j = list(idx)
                    j[ax] = X
                    tv = T[tuple(j)]
                    if kind == "G":
                        val += C[idx[ax], X, g] * tv
                    elif kind == "g":
                        val -= C[X, idx[ax], g] * tv
                    elif kind == "L":
                        val -= C[idx[ax], X, g] * tv
                    else:
                        val += C[X, idx[ax], g] * tv
            out[idx + (g,)] = val
    return out


def loop_v_cov(T, dT, kinds, Vh, Vv, m):
    r = Vv.shape[0]
    out = np.zeros(T.shape + (r,))
    for idx in np.ndindex(*T.shape):
        for c in range(r):
            val = dT[idx + (m + c,)]
            for ax, kind in enumerate(kinds):
                C = Vh if kind in "Gg" else Vv
                for X in range(T.shape[ax]):
                    j = list(idx)
                    j[ax] = X
                    tv = T[tuple(j)]
                    if kind == "G":
                        val += C[idx[ax], X, c] * tv
                    elif kind == "g":
                        val -= C[X, idx[ax], c] * tv
                    elif kind == "L":
                        val -= C[idx[ax], X, c] * tv
                    else:
                        val += C[X, idx[ax], c] * tv
            out[idx + (c,)] = val
    return out


# ---------------------------------------------------------------------------
# random instances


def _poly(rng, atoms, c0, spread):
    terms = [f"{c0:.6f}"]
    for a in atoms:
        terms.append(f"(* {rng.uniform(-spread, spread):.6f} {a})")
    return "(+ " + " ".join(terms) + ")"


def random_linear(rng, m: int, r: int, spread: float = 1.0) -> str:
    """c0 + sum c_i x_i + sum d_a p_a with random coefficients."""
    atoms = [f"x{i + 1}" for i in range(m)] + [f"p{a + 1}" for a in range(r)]
    return _poly(rng, atoms, rng.uniform(-spread, spread), spread)


def random_spd_block(rng, k: int, m: int, r: int, p_dependent: bool = True) -> list:
    """Symmetric polynomial block, diagonally dominant on |x| <= 1, |p| <= 2."""
    rows = [[None] * k for _ in range(k)]
    for i in range(k):
        dg = [f"(* {rng.uniform(-0.3, 0.3):.6f} x{j + 1})" for j in range(m)]
        if p_dependent:
            dg.append(f"(* {rng.uniform(0.0, 0.2):.6f} p{(i % r) + 1} p{(i % r) + 1})")
        rows[i][i] = f"(+ {2.0 + 0.4 * m + rng.uniform(0, 1):.6f} " + " ".join(dg) + ")"
        for j in range(i + 1, k):
            od = [f"(* {rng.uniform(-0.1, 0.1):.6f} x{q + 1})" for q in range(m)]
            if p_dependent:
                od.append(f"(* {rng.uniform(-0.05, 0.05):.6f} p1 p{r})")
            e = f"(+ {rng.uniform(-0.2, 0.2):.6f} " + " ".join(od) + ")"
            rows[i][j] = rows[j][i] = e
    return rows


def random_tensor_strings(rng, shape, m: int, r: int, spread: float = 0.5):
    out = np.empty(shape, dtype=object)
    for idx in np.ndindex(*shape):
        out[idx] = random_linear(rng, m, r, spread)
    return out.tolist()
