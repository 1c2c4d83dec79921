import math

import numpy as np
import pytest
from gmpy2 import mpq

from biharmonic_nest.nest import NestOptions, build_nest, final_perturb
from biharmonic_nest.poly import BiharmonicPoly, HarmonicPoly, evaluate, hilbert_product, linear_combine
from biharmonic_nest.scalar import Field
from biharmonic_nest.tracer import (
    Cartesian,
    Contour,
    LogPolar,
    TraceOptions,
    analyze,
    contour_xy,
    contours_to_rows,
    extract_contours,
    min_gradient_on,
    nesting_forest,
    refine_contour,
    sample_grid,
)

F = Field.bigfloat(256)


def circle(field=F):
    """r^2 - 1"""
    return BiharmonicPoly(HarmonicPoly(field, (-1,), (0,)), HarmonicPoly(field, (1,), (0,)))


def x_poly(field=F):
    return BiharmonicPoly(HarmonicPoly.monomial(field, 1), HarmonicPoly.zero(field))


def const(c, field=F):
    return BiharmonicPoly(HarmonicPoly(field, (c,), (0,)), HarmonicPoly.zero(field))


@pytest.fixture(scope="module")
def two_stage():
    u, cert = build_nest(2, mpq(1, 2), NestOptions(precision=256))
    return u, cert, final_perturb(u, cert)


# -- sampling -------------------------------------------------------------------


def test_cartesian_signs():
    g = sample_grid(circle(), Cartesian(-2, 2, -2, 2), (64, 64))
    X, Y = np.meshgrid(g.cols, g.rows)
    R = np.hypot(X, Y)
    assert np.all(g.signs[R < 0.95] == -1)
    assert np.all(g.signs[R > 1.05] == 1)


def test_logpolar_sign_flip_at_zero():
    g = sample_grid(circle(), LogPolar(-1, 1), (65, 32))
    assert np.all(g.signs[g.rows < -1e-12] == -1)
    assert np.all(g.signs[g.rows > 1e-12] == 1)


def test_constant_all_positive():
    g = sample_grid(const(1), Cartesian(-1, 1, -1, 1), (32, 32))
    assert np.all(g.signs == 1)


def test_resolution_floor():
    with pytest.raises(ValueError):
        sample_grid(circle(), Cartesian(-1, 1, -1, 1), (8, 64))


def test_zero_heavy_grid_is_offset():
    # u = x vanishes on a whole grid column when 0 is a node
    g = sample_grid(x_poly(), Cartesian(-1, 1, -1, 1), (65, 65))
    assert np.count_nonzero(g.values == 0) == 0


def test_deep_scales_do_not_underflow():
    # coefficients far outside double range still give finite normalized samples
    tiny = F.two_pow(-3000)
    u = BiharmonicPoly(HarmonicPoly(F, (-tiny,), (0,)), HarmonicPoly(F, (1,), (0,)))
    g = sample_grid(u, LogPolar(-1045, -1035), (64, 32))
    assert np.all(np.isfinite(g.values))
    assert set(np.unique(g.signs)) == {-1, 1}


# -- extraction ---------------------------------------------------------------------


@pytest.mark.parametrize("res", [16, 33, 128])
def test_line_is_one_open_contour(res):
    cs = extract_contours(sample_grid(x_poly(), Cartesian(-1, 1, -1, 1), (res, res)))
    assert len(cs) == 1
    assert not cs[0].closed and cs[0].on_boundary
    assert np.allclose(contour_xy(cs[0])[:, 0], 0, atol=1e-12)


def test_circle_vertices():
    cs = extract_contours(sample_grid(circle(), Cartesian(-2, 2, -2, 2), (128, 128)))
    assert len(cs) == 1 and cs[0].closed
    r = np.hypot(*contour_xy(cs[0]).T)
    assert np.max(np.abs(r - 1)) < 1e-3


def test_hilbert_three_circles():
    cs = extract_contours(sample_grid(hilbert_product(F, 3), Cartesian(-4, 4, -4, 4), (512, 512)))
    assert len(cs) == 3 and all(c.closed for c in cs)
    radii = sorted(float(np.mean(np.hypot(*contour_xy(c).T))) for c in cs)
    assert np.allclose(radii, [1, 2, 3], atol=1e-3)


def test_logpolar_circle_wraps():
    cs = extract_contours(sample_grid(circle(), LogPolar(-1, 1), (64, 64)))
    assert len(cs) == 1
    assert cs[0].closed and abs(cs[0].wraps_theta) == 1


def test_saddle_cells_resolved():
    # xy has a saddle at the origin; the four branches must not merge into loops
    u = BiharmonicPoly(HarmonicPoly.monomial(F, 2, mpq(1, 2), part="im"), HarmonicPoly.zero(F))
    cs = extract_contours(sample_grid(u, Cartesian(-1, 1, -1, 1), (64, 64)))
    assert not any(c.closed for c in cs)
    assert all(c.on_boundary for c in cs)


# -- refinement ----------------------------------------------------------------------


def _square_contour(r):
    pts = [(r, 0.0), (0.0, r), (-r, 0.0), (0.0, -r), (r, 0.0)]
    return Contour(points=pts, closed=True, wraps_theta=0, chart=Cartesian(-2, 2, -2, 2))


def test_newton_from_crude_vertex():
    c = refine_contour(circle(), _square_contour(1.1), tol=mpq(1, 10**30))
    assert not c.stalls
    for a, b in c.points:
        with F.context():
            assert abs(evaluate(circle(), a, b)) <= 1e-30
    a, b = c.points[0]
    assert abs(float(a) - 1) < 1e-29 and abs(float(b)) < 1e-29


def test_fixed_point_vertex():
    c = refine_contour(circle(), _square_contour(1.0))
    assert [(float(a), float(b)) for a, b in c.points[:4]] == [(1, 0), (0, 1), (-1, 0), (0, -1)]


def test_refinement_keeps_topology():
    grid = sample_grid(hilbert_product(F, 3), LogPolar(-0.5, 1.5), (256, 128))
    for c in extract_contours(grid):
        r = refine_contour(hilbert_product(F, 3), c)
        assert (r.closed, r.wraps_theta) == (c.closed, c.wraps_theta)
        assert r.refined


# -- gradients -----------------------------------------------------------------------


def test_min_gradient_circle():
    c = refine_contour(circle(), _square_contour(1.0))
    gc = min_gradient_on(circle(), c)
    assert abs(float(gc.min_norm) - 2) < 1e-60
    assert not gc.below


def test_min_gradient_line():
    cs = extract_contours(sample_grid(x_poly(), Cartesian(-1, 1, -1, 1), (32, 32)))
    assert float(min_gradient_on(x_poly(), cs[0]).min_norm) == 1


@pytest.mark.parametrize("c", [mpq(4), mpq(-1, 8)])
def test_min_gradient_scales_linearly(c):
    u = hilbert_product(F, 2)
    cs = [refine_contour(u, k) for k in extract_contours(sample_grid(u, Cartesian(-3, 3, -3, 3), (64, 64)))]
    cu = linear_combine(c, u, 0, u)
    for k in cs:
        a, b = min_gradient_on(u, k).min_norm, min_gradient_on(cu, k).min_norm
        with F.context():
            assert b == abs(c) * a


# -- forest and analysis ---------------------------------------------------------------


def test_forest_two_circles():
    cs = extract_contours(sample_grid(hilbert_product(F, 2), Cartesian(-3, 3, -3, 3), (128, 128)))
    rep = nesting_forest(cs)
    assert (rep.loops_around_origin, rep.depth) == (2, 2)
    assert not rep.flags


def test_forest_line():
    cs = extract_contours(sample_grid(x_poly(), Cartesian(-1, 1, -1, 1), (32, 32)))
    rep = nesting_forest(cs)
    assert (rep.loops_around_origin, rep.depth) == (0, 0)


def test_hilbert_analysis_and_stability():
    u = hilbert_product(F, 3)
    reps = [analyze(u, opts=TraceOptions(grid=g))[0] for g in (256, 512)]
    assert [r.depth for r in reps] == [3, 3]
    assert [r.loops_around_origin for r in reps] == [3, 3]
    assert all(not r.flags for r in reps)


def test_chart_independence_hilbert():
    u = hilbert_product(F, 3)
    cart, _ = analyze(u, opts=TraceOptions(grid=512))
    polar, _ = analyze(u, opts=TraceOptions(grid=512, logpolar=(-1.0, 1.5)))
    assert cart.depth == polar.depth == 3


def test_chart_independence_build(two_stage):
    # both charts cover the disc of radius 1.5, origin included; after the shift u(0) > 0 while
    # the innermost certificate loop is negative, so one more loop surrounds the origin there
    _, _, (v, pcert) = two_stage
    polar, _ = analyze(v, opts=TraceOptions(grid=1024, logpolar=(-8.0, math.log(1.5))))
    cart, _ = analyze(v, opts=TraceOptions(grid=1024, window=1.5))
    assert polar.depth == cart.depth == 2
    banded, _ = analyze(v, pcert)
    assert banded.depth == 1


def test_unperturbed_signs_alternate(two_stage):
    u, cert, _ = two_stage
    rep, _ = analyze(u, cert, TraceOptions(grid=256))
    assert rep.certificate_loop_signs == [-1, 1]


def test_perturbed_analysis(two_stage):
    _, _, (v, pcert) = two_stage
    rep, contours = analyze(v, pcert)
    assert rep.depth >= 1
    assert not rep.flags
    for c in contours:
        assert c.closed or c.on_boundary
    info = rep.per_loop[0]
    assert info.gradient_ratio > 2.0 ** -64
    # every vertex of an origin loop is refined to the default tolerance
    c = contours[info.contour_id]
    assert c.refined and not c.stalls


def test_contour_rows(two_stage):
    _, _, (v, pcert) = two_stage
    _, contours = analyze(v, pcert, TraceOptions(grid=256))
    rows = contours_to_rows(v, contours)
    assert rows and set(rows[0]) == {"contour_id", "chart", "x", "y", "closed", "wraps_theta"}
    assert {r["chart"] for r in rows} == {"logpolar"}
    for r in rows[:10]:
        assert math.isfinite(float(r["x"]))
