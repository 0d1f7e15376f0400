import math

import numpy as np
import pytest

from hessquot import expr as expr_mod
from hessquot import grid as grid_mod
from hessquot.errors import NotAdmissibleError
from hessquot.grid import (
    Grid,
    GridFunction,
    assemble_jacobian,
    assemble_residual,
    fd_gradient,
    fd_hessian,
    interior_gradients,
    interior_hessians,
    sample_expression,
)
from hessquot.solver import ProblemSpec, PsiField, homotopy_rhs_field
from hessquot.symfun import QuotientSpec


def _grid3(res=9):
    return Grid(n=3, lo=(0, 0, 0), hi=(1, 1, 1), res=res)


def _grid2(res=9):
    return Grid(n=2, lo=(0, 0), hi=(1, 1), res=res)


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid(n=4, lo=(0,) * 4, hi=(1,) * 4, res=9)
    with pytest.raises(ValueError):
        Grid(n=2, lo=(0, 0), hi=(1, 1), res=4)
    with pytest.raises(ValueError):
        Grid(n=2, lo=(0, 1), hi=(1, 1), res=9)


def test_gradient_exact_on_linear():
    g = _grid3()
    u = sample_expression(expr_mod.parse("x1", 3), g)
    assert np.array_equal(fd_gradient(u, (3, 4, 5)), [1.0, 0.0, 0.0])


def test_gradient_exact_on_quadratic():
    g = _grid3()
    u = sample_expression(expr_mod.parse("x1^2 + x2^2 + x3^2", 3), g)
    node = (2, 5, 7)
    x = g.node_coord(node)
    assert np.allclose(fd_gradient(u, node), 2 * x, rtol=1e-13)


def test_gradient_second_order_convergence():
    errs = []
    for res in (17, 33):
        g = Grid(n=2, lo=(0, 0), hi=(1, 1), res=res)
        u = sample_expression(expr_mod.parse("sin(x1)", 2), g)
        exact = np.cos(g.interior_coords()[:, 0])
        got = interior_gradients(u.values, g)[:, 0]
        errs.append(np.abs(got - exact).max())
    ratio = errs[0] / errs[1]
    assert 3.5 <= ratio <= 4.5


def test_hessian_exact_on_quadratics():
    g = _grid3(7)
    u = sample_expression(expr_mod.parse("(x1^2 + x2^2 + x3^2)/2", 3), g)
    for node in [(1, 1, 1), (3, 2, 4), (5, 5, 5)]:
        assert np.allclose(fd_hessian(u, node), np.eye(3), atol=1e-14)
    v = sample_expression(expr_mod.parse("x1*x2", 3), g)
    H = fd_hessian(v, (3, 3, 3))
    expected = np.zeros((3, 3))
    expected[0, 1] = expected[1, 0] = 1.0
    assert np.allclose(H, expected, atol=1e-14)


def test_hessian_second_order_convergence():
    errs = []
    for res in (17, 33):
        g = Grid(n=2, lo=(0, 0), hi=(1, 1), res=res)
        u = sample_expression(expr_mod.parse("sin(x1)*sin(x2)", 2), g)
        H = interior_hessians(u.values, g)
        x = g.interior_coords()
        exact = np.empty_like(H)
        s1, s2 = np.sin(x[:, 0]), np.sin(x[:, 1])
        c1, c2 = np.cos(x[:, 0]), np.cos(x[:, 1])
        exact[:, 0, 0] = exact[:, 1, 1] = -s1 * s2
        exact[:, 0, 1] = exact[:, 1, 0] = c1 * c2
        errs.append(np.abs(H - exact).max())
    ratio = errs[0] / errs[1]
    assert 3.5 <= ratio <= 4.5


def test_stencil_ops_reject_boundary_nodes():
    g = _grid3()
    u = GridFunction(g, np.zeros(g.shape))
    with pytest.raises(ValueError):
        fd_gradient(u, (0, 3, 3))
    with pytest.raises(ValueError):
        fd_hessian(u, (3, 8, 3))


def test_pointwise_and_vectorized_stencils_agree(rng):
    g = _grid2(7)
    u = GridFunction(g, rng.normal(size=g.shape))
    H = interior_hessians(u.values, g)
    P = interior_gradients(u.values, g)
    for node in [(1, 1), (3, 4), (5, 5)]:
        row = np.ravel_multi_index((node[0] - 1, node[1] - 1), g.interior_shape)
        assert np.array_equal(fd_hessian(u, node), H[row])
        assert np.array_equal(fd_gradient(u, node), P[row])


def _quadratic_problem(res=9):
    g = _grid3(res)
    spec = QuotientSpec(3, 3, 1, tau=1.0)
    quad = expr_mod.parse("(x1^2 + x2^2 + x3^2)/2", 3)
    psi = expr_mod.parse("sqrt(4/3)", 3)
    return ProblemSpec(grid=g, quotient=spec, psi=psi, phi=quad, subsolution=quad)


def test_residual_zero_at_start_of_continuation():
    prob = _quadratic_problem()
    u = sample_expression(prob.subsolution, prob.grid)
    psi0 = homotopy_rhs_field(prob)
    r = assemble_residual(u, prob, 0.0, psi0)
    assert np.abs(r).max() == 0.0


def test_residual_zero_for_exact_quadratic_at_target():
    # U is 2I at every interior node, and psi is exactly its operator value
    prob = _quadratic_problem()
    u = sample_expression(prob.subsolution, prob.grid)
    psi0 = homotopy_rhs_field(prob)
    r = assemble_residual(u, prob, 1.0, psi0)
    assert np.abs(r).max() <= 1e-15


def test_residual_locality(rng):
    prob = _quadratic_problem(7)
    g = prob.grid
    u = sample_expression(prob.subsolution, g)
    psi0 = homotopy_rhs_field(prob)
    r0 = assemble_residual(u, prob, 0.5, psi0)
    bumped = u.copy()
    bumped.values[3, 3, 3] += 1e-3
    r1 = assemble_residual(bumped, prob, 0.5, psi0)
    changed = np.flatnonzero(r1 != r0)
    nodes = np.stack(np.unravel_index(changed, g.interior_shape), axis=-1) + 1
    assert len(changed) > 0
    assert np.all(np.abs(nodes - 3).max(axis=1) <= 1)


def test_residual_reports_offending_node():
    prob = _quadratic_problem(7)
    u = sample_expression(prob.subsolution, prob.grid)
    psi0 = homotopy_rhs_field(prob)
    bad = u.copy()
    bad.values[2, 2, 2] += 1.0  # destroys admissibility nearby
    with pytest.raises(NotAdmissibleError) as err:
        assemble_residual(bad, prob, 0.0, psi0)
    assert err.value.node is not None
    assert all(1 <= c <= prob.grid.res - 2 for c in err.value.node)


def test_jacobian_matches_directional_differences(rng):
    for maker, n in [(_quadratic_problem, 3)]:
        prob = maker(7)
        g = prob.grid
        u = sample_expression(prob.subsolution, g)
        noise = 1e-4 * rng.normal(size=g.shape)
        noise[g.boundary_mask()] = 0.0
        u.values += noise
        psi0 = homotopy_rhs_field(prob)
        for t in (0.0, 0.6, 1.0):
            sys_ = assemble_jacobian(u, prob, t, psi0=psi0)
            base = assemble_residual(u, prob, t, psi0)
            assert np.allclose(sys_.rhs, -base)
            core = (slice(1, -1),) * n
            for _ in range(8):
                delta = np.zeros(g.num_interior)
                idx = rng.choice(g.num_interior, size=6, replace=False)
                delta[idx] = rng.normal(size=6)
                eps = 1e-6
                up, dn = u.copy(), u.copy()
                up.values[core] += eps * delta.reshape(g.interior_shape)
                dn.values[core] -= eps * delta.reshape(g.interior_shape)
                fd = (
                    assemble_residual(up, prob, t, psi0)
                    - assemble_residual(dn, prob, t, psi0)
                ) / (2 * eps)
                jd = sys_.matrix @ delta
                assert np.abs(fd - jd).max() <= 1e-5 * max(1.0, np.abs(jd).max())


def test_jacobian_first_order_terms_respond_to_psi(rng):
    # a psi with u and gradient dependence shifts the diagonal and the
    # +/- axis neighbors relative to the pure second-order part
    g = _grid3(7)
    spec = QuotientSpec(3, 3, 1)
    quad = expr_mod.parse("(x1^2 + x2^2 + x3^2)/2", 3)
    psi = expr_mod.parse("sqrt(4/3) + 0.25*u + 0.125*p1", 3)
    prob = ProblemSpec(grid=g, quotient=spec, psi=psi, phi=quad, subsolution=quad)
    u = sample_expression(quad, g)
    psi0 = homotopy_rhs_field(prob)
    j0 = assemble_jacobian(u, prob, 0.0, psi0=psi0).matrix
    j1 = assemble_jacobian(u, prob, 1.0, psi0=psi0).matrix
    diff = (j1 - j0).toarray()
    row = np.ravel_multi_index((2, 2, 2), g.interior_shape)
    h = g.h[0]
    assert diff[row, row] == pytest.approx(-0.25)
    up = np.ravel_multi_index((3, 2, 2), g.interior_shape)
    dn = np.ravel_multi_index((1, 2, 2), g.interior_shape)
    assert diff[row, up] == pytest.approx(-0.125 / (2 * h))
    assert diff[row, dn] == pytest.approx(+0.125 / (2 * h))


def test_jacobian_row_sparsity():
    prob = _quadratic_problem(7)
    u = sample_expression(prob.subsolution, prob.grid)
    sys_ = assemble_jacobian(u, prob, 1.0, psi0=homotopy_rhs_field(prob))
    assert sys_.matrix.shape == (prob.grid.num_interior, prob.grid.num_interior)
    assert np.diff(sys_.matrix.indptr).max() <= 3**3


def test_field_forcing_path():
    g = _grid2(7)
    spec = QuotientSpec(2, 2, 0, tau=1.0)
    quad = expr_mod.parse("(x1^2 + x2^2)/2", 2)
    psi0_const = np.full(g.num_interior, 1.0)
    prob = ProblemSpec(
        grid=g, quotient=spec, psi=PsiField(psi0_const), phi=quad, subsolution=quad
    )
    u = sample_expression(quad, g)
    r = assemble_residual(u, prob, 1.0, psi0_const)
    # determinant of the identity Hessian is 1, so the residual vanishes
    assert np.abs(r).max() <= 1e-14


def test_csv_lines_layout():
    g = _grid2(5)
    u = sample_expression(expr_mod.parse("x1 + 10*x2", 2), g)
    lines = list(grid_mod.csv_lines(u))
    assert lines[0] == "i,j,x1,x2,u"
    assert len(lines) == 1 + 25
    first = lines[1].split(",")
    assert first[:2] == ["0", "0"]
    # row-major: the second row advances the last index
    second = lines[2].split(",")
    assert second[:2] == ["0", "1"]
    g3 = _grid3(5)
    lines3 = list(grid_mod.csv_lines(sample_expression(expr_mod.parse("x3", 3), g3)))
    assert lines3[0] == "i,j,k,x1,x2,x3,u"


def test_exact_derivative_sampling():
    g = _grid2(7)
    e = expr_mod.parse("exp((x1^2 + x2^2)/4)", 2)
    x = g.interior_coords()
    vals = np.exp((x**2).sum(axis=1) / 4)
    P = grid_mod.exact_interior_gradients(e, g)
    assert np.allclose(P, 0.5 * x * vals[:, None], rtol=1e-12)
    H = grid_mod.exact_interior_hessians(e, g)
    expected = vals[:, None, None] * (
        0.5 * np.eye(2) + 0.25 * np.einsum("ni,nj->nij", x, x)
    )
    assert np.allclose(H, expected, rtol=1e-12)
