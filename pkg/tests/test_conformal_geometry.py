import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gffloops.conformal_geometry import (METHOD_TOL, conformal_radius, distortion_report, ed_between, ed_outer,
                                         extremal_distance, loop_metrics, measure_loop, neg_log_cr_green,
                                         neg_log_cr_puncture)
from gffloops.errors import PreconditionError
from gffloops.interface_extraction import loop_from_region, sign_clusters_outermost
from gffloops.lattice_gff import INNER, OUTER, build_domain, sample_dgff

# -log CR(0, ellipse with semi-axes 0.5 and 0.25), from the Jacobi sn map of
# the ellipse onto the disk evaluated to 30 digits, cross-checked against a
# least-squares harmonic polynomial fit of log|z| on the boundary
ELLIPSE_NEG_LOG_CR = 1.1940212805791957
LOG2_OVER_2PI = math.log(2) / (2 * math.pi)


def region_loop(domain, predicate):
    w = domain.kind.shape[0]
    ij = np.indices((2 * w - 1, 2 * w - 1)) / 2.0
    x = (ij[0] - domain.center[0]) * domain.h
    y = (ij[1] - domain.center[1]) * domain.h
    return loop_from_region(domain, predicate(x, y))


def circle(domain, rho):
    return region_loop(domain, lambda x, y: np.hypot(x, y) < rho)


def ellipse(domain, a=0.5, b=0.25):
    return region_loop(domain, lambda x, y: (x / a) ** 2 + (y / b) ** 2 < 1)


def annulus_ed(mesh, r):
    dom = build_domain("annulus", mesh, r=r)
    return extremal_distance(dom, dom.kind == OUTER, dom.kind == INNER)


# ---------------------------------------------------------------------------
# extremal distance


def test_annulus_half_ed_and_refinement():
    e128 = abs(annulus_ed(128, 0.5) - LOG2_OVER_2PI)
    e256 = abs(annulus_ed(256, 0.5) - LOG2_OVER_2PI)
    assert e256 <= 0.02 * LOG2_OVER_2PI
    assert e256 <= 0.6 * e128


def test_annulus_of_modulus_one():
    # the hole has to span a few cells, which needs a ~2100 cell mesh; the
    # iterative solver starts from the continuum potential
    r = math.exp(-2 * math.pi)
    mesh = int(math.ceil(4 / r))
    mesh += mesh % 2
    dom = build_domain("annulus", mesh, r=r)
    ij = np.indices(dom.kind.shape)
    rad = np.maximum(np.hypot(ij[0] - dom.center[0], ij[1] - dom.center[1]) * dom.h, r)
    guess = np.clip(np.log(rad) / math.log(r), 0.0, 1.0)
    ed = extremal_distance(dom, dom.kind == OUTER, dom.kind == INNER, guess=guess)
    assert ed == pytest.approx(1.0, rel=0.02)


def test_superadditivity_equality_on_circles(disk256):
    c1, c2 = circle(disk256, 0.6), circle(disk256, 0.3)
    whole = ed_outer(disk256, c2)
    parts = ed_outer(disk256, c1) + ed_between(disk256, c1, c2)
    assert parts == pytest.approx(whole, rel=0.01)
    assert whole == pytest.approx(math.log(1 / 0.3) / (2 * math.pi), rel=0.02)


def test_ed_dihedral_invariance(disk64):
    loop = region_loop(disk64, lambda x, y: ((x - 0.1) / 0.5) ** 2 + ((y + 0.05) / 0.3) ** 2 < 1)
    target = loop.layer | loop.inside
    base = extremal_distance(disk64, disk64.kind == OUTER, target)
    for k in range(1, 4):
        rot = np.rot90(target, k)
        assert extremal_distance(disk64, disk64.kind == OUTER, rot) == pytest.approx(base, rel=1e-10)
    for flip in (target[::-1], target[:, ::-1], target.T):
        assert extremal_distance(disk64, disk64.kind == OUTER, flip) == pytest.approx(base, rel=1e-10)


def test_ed_errors(disk64):
    outer = disk64.kind == OUTER
    loop = circle(disk64, 0.5)
    with pytest.raises(PreconditionError):
        extremal_distance(disk64, outer, np.zeros_like(outer))
    with pytest.raises(PreconditionError):
        extremal_distance(disk64, outer, outer)
    grown = circle(disk64, 0.999)
    with pytest.raises(PreconditionError):
        extremal_distance(disk64, outer, grown.layer | grown.inside)
    assert extremal_distance(disk64, outer, loop.layer | loop.inside) > 0


# ---------------------------------------------------------------------------
# conformal radius


def test_circle_conformal_radius(disk256):
    loop = circle(disk256, 0.5)
    val, flags = conformal_radius(disk256, loop, cross_check=True)
    assert val == pytest.approx(math.log(2), rel=0.02)
    assert not flags
    r_minus, _ = loop_metrics(disk256, loop)
    slack = disk256.h * math.sqrt(2) / r_minus
    assert abs(2 * math.pi * ed_outer(disk256, loop) - val) <= slack


def test_ellipse_conformal_radius(disk256):
    val, flags = conformal_radius(disk256, ellipse(disk256), cross_check=True)
    assert val == pytest.approx(ELLIPSE_NEG_LOG_CR, rel=0.03)
    assert not flags


@pytest.mark.parametrize("rho", [0.3, 0.5])
def test_circle_ed_refinement(rho):
    target = math.log(1 / rho) / (2 * math.pi)
    errs = []
    for mesh in (128, 256):
        dom = build_domain("disk", mesh)
        errs.append(abs(ed_outer(dom, circle(dom, rho)) - target))
    assert errs[1] <= 0.6 * errs[0]


@pytest.mark.parametrize("shape", ["circle", "ellipse", "square"])
def test_green_and_puncture_agree(disk256, shape):
    loop = {"circle": lambda: circle(disk256, 0.4), "ellipse": lambda: ellipse(disk256),
            "square": lambda: region_loop(disk256, lambda x, y: np.maximum(abs(x), abs(y)) < 0.45)}[shape]()
    g = neg_log_cr_green(disk256, loop.inside)
    p = neg_log_cr_puncture(disk256, loop.inside)
    assert abs(g - p) <= METHOD_TOL * max(abs(g), 1.0)


def test_too_close_loops_are_flagged(disk64):
    loop = circle(disk64, 1.5 * disk64.h)
    val, flags = conformal_radius(disk64, loop)
    assert val is None and "too_close" in flags
    off = region_loop(disk64, lambda x, y: np.hypot(x - 0.5, y) < 0.2)
    val, flags = conformal_radius(disk64, off)
    assert val is None and "too_close" in flags


# ---------------------------------------------------------------------------
# radii and deterministic bounds


@pytest.mark.parametrize("rho", [0.25, 0.5, 0.8])
def test_circle_radii(disk256, rho):
    r_minus, r_plus = loop_metrics(disk256, circle(disk256, rho))
    assert abs(r_minus - rho) <= disk256.h / 2 and abs(r_plus - rho) <= disk256.h / 2


def test_ellipse_radii(disk256):
    r_minus, r_plus = loop_metrics(disk256, ellipse(disk256))
    assert abs(r_minus - 0.25) <= disk256.h / 2 and abs(r_plus - 0.5) <= disk256.h / 2


def test_circle_bounds(disk256):
    geo = measure_loop(disk256, circle(disk256, 0.5))
    assert all(distortion_report(geo).values())
    slack = disk256.h * math.sqrt(2) / geo.r_minus
    assert abs(2 * math.pi * geo.ed_outer - geo.neg_log_cr) <= slack


def test_ellipse_bounds_strict(disk256):
    geo = measure_loop(disk256, ellipse(disk256))
    assert all(distortion_report(geo).values())
    cr = math.exp(-geo.neg_log_cr)
    ed = math.exp(-2 * math.pi * geo.ed_outer)
    assert cr / 4 < geo.r_minus < cr
    assert ed < geo.r_plus < 4 * ed
    assert 2 * math.pi * geo.ed_outer < geo.neg_log_cr


def test_incomplete_geometry_rejected(disk64):
    geo = measure_loop(disk64, circle(disk64, 1.5 * disk64.h))
    with pytest.raises(PreconditionError):
        distortion_report(geo)


@given(a=st.floats(0.15, 0.85), b=st.floats(0.15, 0.85), dx=st.floats(-0.08, 0.08), dy=st.floats(-0.08, 0.08),
       square=st.booleans())
def test_bounds_hold_for_convex_regions(disk64, a, b, dx, dy, square):
    if square:
        loop = region_loop(disk64, lambda x, y: np.maximum(abs(x - dx) / a, abs(y - dy) / b) < 1)
    else:
        loop = region_loop(disk64, lambda x, y: ((x - dx) / a) ** 2 + ((y - dy) / b) ** 2 < 1)
    geo = measure_loop(disk64, loop)
    assert geo.r_minus <= geo.r_plus
    if geo.complete():
        assert geo.ed_outer >= 0
        assert all(distortion_report(geo).values())


def test_bounds_hold_on_sampled_loops():
    dom = build_domain("disk", 128)
    checked = 0
    for seed in range(150):
        res = sign_clusters_outermost(sample_dgff(dom, 0.0, seed))
        if res is None:
            continue
        geo = measure_loop(dom, res.outer, cross_check=True)
        if not geo.complete():
            continue
        checked += 1
        assert all(distortion_report(geo).values()), (seed, geo)
        assert "method_disagree" not in geo.flags
    assert checked >= 10
