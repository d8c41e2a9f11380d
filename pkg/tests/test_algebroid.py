import numpy as np
import pytest

from dualgeo.algebroid import (
    AlgebroidSpec,
    Section,
    anchor_homomorphism_residual,
    bracket_sections,
    check_algebroid,
    theta,
)
from dualgeo.jets import ExprArray, Point, X, parse_expr, sample_points

from oracles import fd_field_gradient


def so3() -> AlgebroidSpec:
    eps = np.zeros((3, 3, 3))
    for a, b, c in [(0, 1, 2), (1, 2, 0), (2, 0, 1)]:
        eps[a, b, c], eps[a, c, b] = 1.0, -1.0
    L = eps.transpose(2, 0, 1)  # L[c, a, b] = eps_abc
    return AlgebroidSpec(3, 3, 3, ExprArray.zeros((3, 3)), ExprArray(L.tolist()))


def arr(rows, dims=(2, 2)):
    return ExprArray(np.vectorize(lambda s: parse_expr(s, dims), otypes=[object])(np.array(rows, dtype=object)))


def test_theta_identity_and_zero():
    pt = Point([0.3, -0.2], [1.0, 0.5])
    np.testing.assert_array_equal(theta(AlgebroidSpec.flat(2)).values(pt), np.eye(2))
    assert np.all(theta(so3()).values(Point([0.1, 0.2, 0.3], [1, 0, 0])) == 0)


def test_theta_substitution():
    spec = AlgebroidSpec(2, 2, 2, arr([["x1", "0"], ["0", "1"]]), ExprArray.zeros((2, 2, 2)))
    assert theta(spec).values(Point([2.0, 0.0], [1, 1]))[0, 0] == 2.0


def test_theta_with_nonidentity_morphisms():
    # h(x) = (2 x1, x2), eta = id: theta_a^k = rho_a^j dh^k/dx^j
    spec = AlgebroidSpec(
        2, 2, 2, arr([["x2", "1"], ["0", "x1"]]), ExprArray.zeros((2, 2, 2)),
        h_map=(parse_expr("(* 2 x1)", (2, 2)), X(2)), eta_map=None,
    )
    pt = Point([0.5, -0.7], [1, 1])
    rho = np.array([[-0.7, 1.0], [0.0, 0.5]])
    np.testing.assert_allclose(theta(spec).values(pt), rho @ np.diag([2.0, 1.0]).T)


def test_so3_structure_constants_reproduce():
    spec = so3()
    pt = Point([0.1, 0.2, 0.3], [1, 0, 0])
    e = lambda k: Section.of([1.0 if j == k else 0.0 for j in range(3)])
    np.testing.assert_allclose(bracket_sections(spec, e(0), e(1)).values(pt), [0, 0, 1])
    f = parse_expr("(sin (* x1 x2))", (3, 3))
    v = Section.of([0.0, f, 0.0])
    out = bracket_sections(spec, e(0), v).values(pt)
    np.testing.assert_allclose(out, [0, 0, np.sin(0.02)], atol=1e-15)


def test_flat_leibniz_term():
    spec = AlgebroidSpec.flat(2)
    u = Section.of([1.0, 0.0])
    v = Section.of([0.0, X(1)])
    for pt in sample_points(2, 2, 5, 0):
        np.testing.assert_allclose(bracket_sections(spec, u, v).values(pt), [0, 1], atol=0)


def test_flat_bracket_is_vector_field_commutator():
    spec = AlgebroidSpec.flat(2)
    d = (2, 2)
    u = Section.of([parse_expr("(* x1 x2)", d), parse_expr("(sin x1)", d)])
    v = Section.of([parse_expr("(exp x2)", d), parse_expr("(* x1 x1)", d)])
    br = bracket_sections(spec, u, v)
    for pt in sample_points(2, 2, 10, 3):
        du = fd_field_gradient(u.components, pt, 1e-6)[:, :2]
        dv = fd_field_gradient(v.components, pt, 1e-6)[:, :2]
        want = dv @ u.values(pt) - du @ v.values(pt)
        np.testing.assert_allclose(br.values(pt), want, atol=1e-8)


def test_flat_is_exact_zero_residual():
    rep = check_algebroid(AlgebroidSpec.flat(2), samples=20)
    assert rep.passed and rep.max_residual == 0.0


def test_so3_axioms():
    rep = check_algebroid(so3(), samples=50, tol=1e-12)
    assert rep.passed, rep.notes


def _brute_jacobi_so3():
    L = np.zeros((3, 3, 3))
    spec = so3()
    pt = Point([0, 0, 0], [1, 0, 0])
    L = spec.L.values(pt)
    worst = 0.0
    for a in range(3):
        for b in range(3):
            for c in range(3):
                for g in range(3):
                    s = 0.0
                    for d in range(3):
                        s += L[d, a, b] * L[g, d, c] + L[d, b, c] * L[g, d, a] + L[d, c, a] * L[g, d, b]
                    worst = max(worst, abs(s))
    return worst


def test_so3_jacobi_matches_brute_force():
    assert _brute_jacobi_so3() == 0.0
    rep = check_algebroid(so3(), samples=5, tol=1e-12)
    assert rep.details["jacobi"] < 1e-12


def test_broken_antisymmetry_detected():
    L = np.zeros((3, 3, 3), dtype=object)
    L[...] = "0"
    L[2, 0, 1] = "1"
    spec = AlgebroidSpec(3, 3, 3, ExprArray.zeros((3, 3)), arr(L.tolist(), (3, 3)))
    rep = check_algebroid(spec, samples=3)
    assert not rep.passed
    assert rep.details["antisymmetry"] == 1.0


def test_anchor_compat_violation():
    # rho = [[1, 0], [0, e^x1]] needs L^2_{12} = 1 for the anchor relation
    rho = arr([["1", "0"], ["0", "(exp x1)"]])
    good_L = np.full((2, 2, 2), "0", dtype=object)
    good_L[1, 0, 1], good_L[1, 1, 0] = "1", "-1"
    good = AlgebroidSpec(2, 2, 2, rho, arr(good_L.tolist()))
    assert check_algebroid(good, samples=20, tol=1e-12).passed
    bad = AlgebroidSpec(2, 2, 2, rho, ExprArray.zeros((2, 2, 2)))
    rep = check_algebroid(bad, samples=20)
    assert not rep.passed and rep.details["anchor"] > 0.1


def test_anchor_is_homomorphism():
    rho = arr([["1", "0"], ["0", "(exp x1)"]])
    L = np.full((2, 2, 2), "0", dtype=object)
    L[1, 0, 1], L[1, 1, 0] = "1", "-1"
    spec = AlgebroidSpec(2, 2, 2, rho, arr(L.tolist()))
    for pt in sample_points(2, 2, 10, 5):
        assert anchor_homomorphism_residual(spec, pt) < 1e-9


def test_bracket_bilinear_and_antisymmetric():
    spec = so3()
    d = (3, 3)
    u = Section.of([parse_expr(s, d) for s in ("x1", "(* x2 x3)", "1")])
    v = Section.of([parse_expr(s, d) for s in ("(sin x3)", "2", "x1")])
    w = Section.of([parse_expr(s, d) for s in ("x2", "0", "(exp x1)")])
    vw = Section(ExprArray([parse_expr(f"(+ {a} (* 3 {b}))", d) for a, b in
                            zip(("(sin x3)", "2", "x1"), ("x2", "0", "(exp x1)"))]))
    for pt in sample_points(3, 3, 10, 6):
        uv = bracket_sections(spec, u, v).values(pt)
        vu = bracket_sections(spec, v, u).values(pt)
        assert np.max(np.abs(uv + vu)) < 1e-9
        lin = bracket_sections(spec, u, vw).values(pt)
        sep = uv + 3 * bracket_sections(spec, u, w).values(pt)
        assert np.max(np.abs(lin - sep)) < 1e-9


def test_spec_shape_validation():
    with pytest.raises(ValueError):
        AlgebroidSpec(2, 2, 2, ExprArray.zeros((2, 3)), ExprArray.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        AlgebroidSpec(2, 2, 2, ExprArray.identity(2), ExprArray.zeros((2, 2, 2)), h_map=(X(1), parse_expr("p1", (2, 2))))
