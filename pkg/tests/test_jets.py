import math

import numpy as np
import pytest

from dualgeo.jets import (
    Add,
    Atom,
    AtomIndexError,
    Const,
    DomainError,
    ExprArray,
    ExprSyntaxError,
    Jet,
    Mul,
    Point,
    Unary,
    eval_jet,
    jet_contract,
    jet_inverse,
    parse_expr,
    sample_points,
    to_string,
)

from oracles import evaluate, fd_partials

D22 = (2, 2)


def test_parse_product_of_atoms():
    assert parse_expr("(* x1 x1)", D22) == Mul((Atom("x", 1), Atom("x", 1)))


def test_out_of_range_atom_rejected():
    with pytest.raises(AtomIndexError) as exc:
        parse_expr("(sin p3)", D22)
    assert exc.value.position == 5


@pytest.mark.parametrize(
    "text",
    [
        "(+ (exp x1) (* 0.5 (pow p1 2)))",
        "(/ (sqrt (+ 1 (* p1 p1))) (cos x2))",
        "(- (neg x1) (log (+ 2 p2)))",
        "(* 1e-3 x1 p2 -2.5)",
    ],
)
def test_print_reparse_roundtrip(text):
    e = parse_expr(text, D22)
    assert parse_expr(to_string(e), D22) == e


@pytest.mark.parametrize(
    "text, pos",
    [
        ("(+ x1", 0),
        ("(+ x1 x2))", 9),
        ("(foo x1)", 1),
        ("(pow x1 x2)", 8),
        ("(sin x1 x2)", 1),
        ("(+ x1)", 1),
        ("(- x1 x2 x1)", 1),
        ("", 0),
        ("x1 x2", 3),
        ("(+ x1 $)", 6),
    ],
)
def test_syntax_errors_report_position(text, pos):
    with pytest.raises(ExprSyntaxError) as exc:
        parse_expr(text, D22)
    assert exc.value.position == pos


def test_monomial_jet():
    J = eval_jet(parse_expr("(* x1 x1)", D22), Point([3, 0], [0, 0]), 2)
    assert J.value == 9
    np.testing.assert_array_equal(J.grad, [6, 0, 0, 0])
    H = np.zeros((4, 4))
    H[0, 0] = 2
    np.testing.assert_array_equal(J.hess, H)


def test_sin_at_origin():
    J = eval_jet(parse_expr("(sin x1)", (1, 1)), Point([0], [0]), 2)
    assert J.value == 0 and J.grad[0] == 1 and J.hess[0, 0] == 0


def test_exp_product_against_fd():
    e = parse_expr("(exp (* x1 p1))", (1, 1))
    pt = Point([1.0], [2.0])
    J = eval_jet(e, pt, 1)
    f = lambda Z: evaluate(e, Z[:1], Z[1:])
    fd = fd_partials(f, pt.coords, 1, 1e-5)
    for (k,), v in fd.items():
        assert abs(J.grad[k] - v) / abs(v) < 1e-8


def test_domain_errors_carry_subexpression():
    pt = Point([0.0, 0.0], [0.0, 0.0])
    with pytest.raises(DomainError) as exc:
        eval_jet(parse_expr("(+ 1 (log x1))", D22), pt)
    assert to_string(exc.value.expr) == "(log x1)"
    with pytest.raises(DomainError):
        eval_jet(parse_expr("(sqrt (neg (+ 1 x1)))", D22), pt)
    with pytest.raises(DomainError):
        eval_jet(parse_expr("(/ 1 x2)", D22), pt)
    with pytest.raises(DomainError):
        eval_jet(parse_expr("(pow x1 0.5)", D22), pt)


def test_order_validation():
    with pytest.raises(ValueError):
        eval_jet(Const(1.0), Point([0.0], [0.0]), 4)


def _random_poly(rng, deg, m=2, r=2):
    atoms = [f"x{i + 1}" for i in range(m)] + [f"p{a + 1}" for a in range(r)]
    terms = []
    for _ in range(6):
        k = rng.integers(0, deg + 1)
        fac = [atoms[j] for j in rng.integers(0, len(atoms), size=k)]
        c = f"{rng.uniform(-2, 2):.4f}"
        terms.append(c if not fac else "(* " + c + " " + " ".join(fac) + ")")
    return "(+ " + " ".join(terms) + ")"


def test_polynomials_against_finite_differences():
    rng = np.random.default_rng(3)
    for pt in sample_points(2, 2, 30, 7):
        e = parse_expr(_random_poly(rng, 4), D22)
        J = eval_jet(e, pt, 3)
        f = lambda Z: evaluate(e, Z[:2], Z[2:])
        for order, h, tol, slot in ((1, 1e-5, 1e-7, J.g), (2, 1e-4, 1e-5, J.h), (3, 1e-3, 1e-3, J.t)):
            for idx, v in fd_partials(f, pt.coords, order, h).items():
                assert abs(slot[idx] - v) <= tol * max(1.0, abs(v)), (idx, slot[idx], v)


def test_top_slot_vanishes_below_degree():
    e = parse_expr("(+ (* x1 x2 p1) (* 3 p2 p2) x1)", D22)  # degree 3
    for pt in sample_points(2, 2, 5, 1):
        J3 = eval_jet(e, pt, 3)
        e2 = parse_expr("(+ (* 3 p2 p2) x1)", D22)
        assert np.all(eval_jet(e2, pt, 3).t == 0)
        assert np.any(J3.t != 0)


def test_symmetry_of_higher_slots():
    e = parse_expr("(* (sin (* x1 p2)) (exp (/ x2 (+ 2 p1))))", D22)
    J = eval_jet(e, Point([0.3, -0.2], [0.5, 1.1]), 3)
    np.testing.assert_array_equal(J.h, J.h.T)
    for perm in [(1, 0, 2), (2, 1, 0), (0, 2, 1), (1, 2, 0), (2, 0, 1)]:
        np.testing.assert_allclose(J.t, J.t.transpose(perm), rtol=0, atol=1e-14)


def test_linearity():
    e1 = parse_expr("(sin (* x1 p1))", D22)
    e2 = parse_expr("(exp (- x2 p2))", D22)
    a, b = 1.7, -0.4
    comb = Add((Mul((Const(a), e1)), Mul((Const(b), e2))))
    for pt in sample_points(2, 2, 10, 2):
        J1, J2, J = eval_jet(e1, pt, 3), eval_jet(e2, pt, 3), eval_jet(comb, pt, 3)
        for s, s1, s2 in zip(J.slots(), J1.slots(), J2.slots()):
            np.testing.assert_allclose(s, a * s1 + b * s2, rtol=0, atol=1e-12)


def test_product_rule():
    e1 = parse_expr("(cos (+ x1 p2))", D22)
    e2 = parse_expr("(sqrt (+ 3 (* x2 p1)))", D22)
    prod = Mul((e1, e2))
    for pt in sample_points(2, 2, 10, 4):
        J1, J2, J = eval_jet(e1, pt, 1), eval_jet(e2, pt, 1), eval_jet(prod, pt, 1)
        want = J1.value * J2.grad + J2.value * J1.grad
        np.testing.assert_allclose(J.grad, want, rtol=1e-14, atol=1e-15)


def test_jet_contract_matches_elementwise_products():
    pt = Point([0.2, 0.4], [1.0, -0.5])
    A = ExprArray([[parse_expr(s, D22) for s in row] for row in [["(* x1 p2 p2)", "(* x2 p1)"], ["(sin (* p2 x1))", "2"]]])
    B = ExprArray([parse_expr("(exp x1)", D22), parse_expr("(* p1 p2 (cos x2))", D22)])
    C = jet_contract("ij,j->i", A.jet(pt, 3), B.jet(pt, 3))
    for i in range(2):
        direct = A.jet(pt, 3)[i, 0] * B.jet(pt, 3)[0] + A.jet(pt, 3)[i, 1] * B.jet(pt, 3)[1]
        for s, d in zip(C[i].slots(), direct.slots()):
            np.testing.assert_allclose(s, d, rtol=0, atol=1e-13)


def test_jet_inverse_against_fd():
    pt = Point([0.3, -0.1], [0.7, 0.2])
    M = ExprArray([[parse_expr(s, D22) for s in row] for row in [["(+ 2 x1)", "(* x2 p1)"], ["p2", "(exp x2)"]]])
    Jinv = jet_inverse(M.jet(pt, 2))
    np.testing.assert_allclose(Jinv.v @ M.values(pt), np.eye(2), atol=1e-14)
    h = 1e-5
    z = pt.coords
    for k in range(4):
        zp, zm = z.copy(), z.copy()
        zp[k] += h
        zm[k] -= h
        d = (np.linalg.inv(M.values(Point(zp[:2], zp[2:]))) - np.linalg.inv(M.values(Point(zm[:2], zm[2:])))) / (2 * h)
        np.testing.assert_allclose(Jinv.g[..., k], d, atol=1e-8)


def test_ellipsis_indexes_components_only():
    J = ExprArray([[parse_expr("x1", D22), parse_expr("p1", D22)]]).jet(Point([1, 2], [3, 4]), 1)
    sub = J[..., 1:]
    assert sub.shape == (1, 1)
    assert sub.g.shape == (1, 1, 4)
    assert sub.g[0, 0, 2] == 1.0


def test_sampling_respects_fiber_annulus():
    pts = sample_points(3, 2, 200, 11)
    for pt in pts:
        assert np.all(np.abs(pt.x) <= 1)
        assert 1e-3 <= np.linalg.norm(pt.p) <= 2
    again = sample_points(3, 2, 200, 11)
    assert all(np.array_equal(a.coords, b.coords) for a, b in zip(pts, again))


def test_non_finite_point_rejected():
    with pytest.raises(ValueError):
        Point([math.nan], [0.0])


def test_unary_ops_against_closed_forms():
    pt = Point([0.4], [1.3])
    cases = {
        "(cos x1)": (math.cos(0.4), -math.sin(0.4)),
        "(log p1)": (math.log(1.3), 0.0),
        "(pow p1 -1.5)": (1.3**-1.5, 0.0),
        "(neg x1)": (-0.4, -1.0),
    }
    for text, (val, dx) in cases.items():
        J = eval_jet(parse_expr(text, (1, 1)), pt, 1)
        assert J.value == pytest.approx(val, rel=1e-15)
        assert J.grad[0] == pytest.approx(dx, rel=1e-15, abs=0)
    assert isinstance(parse_expr("(neg x1)", (1, 1)), Unary)
