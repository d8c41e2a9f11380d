import numpy as np

from dualgeo.algebroid import AlgebroidSpec
from dualgeo.jets import ExprArray, P, Point, X, parse_expr, sample_points
from dualgeo.tangent import (
    TangentSection,
    anchor_image,
    bracket_tangent,
    check_tangent_jacobi,
    project_pi_bang,
    vertical_inclusion,
)

from oracles import fd_field_gradient
from test_algebroid import arr, so3


def e(k, n, coef=1.0):
    return [coef if j == k else 0.0 for j in range(n)]


def test_anchor_image_examples():
    pt = Point([0.3, 0.4], [1.0, -1.0])
    flat = AlgebroidSpec.flat(2)
    v = anchor_image(flat, TangentSection.of(e(0, 2), [0, 0]), pt)
    np.testing.assert_array_equal(v.dx, [1, 0])
    np.testing.assert_array_equal(v.dp, [0, 0])
    v = anchor_image(so3(), TangentSection.of([1, 2, 3], [0, 0, 0]), Point([0.1, 0.2, 0.3], [1, 1, 1]))
    assert np.all(v.dx == 0) and np.all(v.dp == 0)
    spec = AlgebroidSpec(2, 2, 2, arr([["x1", "0"], ["0", "1"]]), ExprArray.zeros((2, 2, 2)))
    v = anchor_image(spec, TangentSection.of(e(0, 2), e(0, 2)), Point([2, 0], [1, 1]))
    np.testing.assert_array_equal(v.dx, [2, 0])
    np.testing.assert_array_equal(v.dp, [1, 0])


def test_bracket_examples():
    pt = Point([0.1, 0.2, 0.3], [0.5, 0.5, 0.5])
    out = bracket_tangent(so3(), TangentSection.of(e(0, 3), [0] * 3), TangentSection.of(e(1, 3), [0] * 3))
    np.testing.assert_allclose(out.Z.values(pt), [0, 0, 1])
    np.testing.assert_allclose(out.Y.values(pt), [0, 0, 0])

    flat = AlgebroidSpec.flat(2)
    pt = Point([0.3, -0.6], [1.2, 0.1])
    out = bracket_tangent(flat, TangentSection.of([0, 0], e(0, 2)), TangentSection.of([0, 0], e(1, 2)))
    assert np.all(out.Z.values(pt) == 0) and np.all(out.Y.values(pt) == 0)

    out = bracket_tangent(flat, TangentSection.of(e(0, 2), [0, 0]), TangentSection.of([0, 0], e(0, 2, X(1))))
    np.testing.assert_allclose(out.Z.values(pt), [0, 0])
    np.testing.assert_allclose(out.Y.values(pt), [1, 0])


def _as_field(sec: TangentSection, rho):
    """Vector field components (dx, dp) of the anchored section, as values."""
    class F:
        shape = (4,)

        def values(self, pt):
            return np.concatenate([sec.Z.values(pt) @ rho.values(pt), sec.Y.values(pt)])

    return F()


def test_bracket_is_fd_commutator_for_base_dependent_z():
    flat = AlgebroidSpec.flat(2)
    d = (2, 2)
    X1 = TangentSection.of([parse_expr("(* x1 x2)", d), parse_expr("x2", d)], [parse_expr("(sin x1)", d), parse_expr("(* p1 p2)", d)])
    X2 = TangentSection.of([parse_expr("(exp x2)", d), "1"], [parse_expr("(* x1 p1)", d), parse_expr("p2", d)])
    out = bracket_tangent(flat, X1, X2)
    V1, V2 = _as_field(X1, flat.rho), _as_field(X2, flat.rho)
    for pt in sample_points(2, 2, 8, 1):
        D1 = fd_field_gradient(V1, pt, 1e-6)
        D2 = fd_field_gradient(V2, pt, 1e-6)
        comm = D2 @ V1.values(pt) - D1 @ V2.values(pt)
        np.testing.assert_allclose(out.Y.values(pt), comm[2:], atol=1e-7)
        np.testing.assert_allclose(out.Z.values(pt), comm[:2], atol=1e-7)


def test_projection_and_vertical_inclusion():
    pt = Point([0.5, 0.5], [1, 2])
    sec = TangentSection.of([X(1), 2.0], [P(1), P(2)])
    z = project_pi_bang(sec)
    np.testing.assert_array_equal(z.values(pt), [0.5, 2.0])
    twice = project_pi_bang(TangentSection(z.components, sec.Y))
    np.testing.assert_array_equal(twice.values(pt), z.values(pt))
    vert = vertical_inclusion(AlgebroidSpec.flat(2), ExprArray([P(1), X(2)]))
    assert np.all(project_pi_bang(vert).values(pt) == 0)


def test_jacobi_on_generating_family():
    assert check_tangent_jacobi(so3(), samples=30, tol=1e-9).passed
    assert check_tangent_jacobi(AlgebroidSpec.flat(2), samples=30, tol=1e-9).passed
    rho = arr([["1", "0"], ["0", "(exp x1)"]])
    L = np.full((2, 2, 2), "0", dtype=object)
    L[1, 0, 1], L[1, 1, 0] = "1", "-1"
    rep = check_tangent_jacobi(AlgebroidSpec(2, 2, 2, rho, arr(L.tolist())), samples=30, tol=1e-9)
    assert rep.passed, rep.notes


def test_non_algebroid_anchor_fails():
    rho = arr([["(* x1 x2)", "0"], ["0", "1"]])
    rep = check_tangent_jacobi(AlgebroidSpec(2, 2, 2, rho, ExprArray.zeros((2, 2, 2))), samples=10)
    assert not rep.passed and rep.max_residual > 0.1


def test_momentum_dependent_z_omits_vertical_term():
    # the Z-part is the pullback bracket: Y . d/dp of Z is not part of it
    flat = AlgebroidSpec.flat(2)
    d = (2, 2)
    X1 = TangentSection.of(["0", "0"], e(0, 2))
    X2 = TangentSection.of([parse_expr("p1", d), "0"], ["0", "0"])
    out = bracket_tangent(flat, X1, X2)
    pt = Point([0.2, 0.1], [0.7, 0.3])
    np.testing.assert_array_equal(out.Z.values(pt), [0, 0])
    V1, V2 = _as_field(X1, flat.rho), _as_field(X2, flat.rho)
    comm = fd_field_gradient(V2, pt, 1e-6) @ V1.values(pt) - fd_field_gradient(V1, pt, 1e-6) @ V2.values(pt)
    np.testing.assert_allclose(comm, [1, 0, 0, 0], atol=1e-9)


def test_anchor_commutator_detects_missing_structure_functions():
    rho = arr([["1", "0"], ["0", "(exp x1)"]])
    rep = check_tangent_jacobi(AlgebroidSpec(2, 2, 2, rho, ExprArray.zeros((2, 2, 2))), samples=20)
    assert rep.details["anchor-commutator"] > 0.1
