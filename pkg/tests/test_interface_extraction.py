import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gffloops.closed_form_laws import GAP
from gffloops.errors import ExplorationError, PreconditionError
from gffloops.interface_extraction import (ITERATION_CAP, fps_component, hausdorff, iterated_loops, loop_from_region,
                                           non_contractible_chain, open_edges_at_level, sign_clusters_outermost)
from gffloops.lattice_gff import INTERIOR, OUTSIDE, FieldSample, build_domain, sample_dgff

SLIT_HALF_WIDTH = 0.04


@pytest.fixture(scope="module")
def disk32():
    return build_domain("disk", 32)


def _synthetic(domain, fn):
    z = domain.coords(domain.interior_ij)
    vals = np.asarray(fn(z[:, 0], z[:, 1]), dtype=float)
    return FieldSample(domain, vals, np.zeros(domain.n_boundary), 0, 0.0)


def _vertex_radius(domain):
    ij = np.indices(domain.kind.shape)
    return np.hypot(ij[0] - domain.center[0], ij[1] - domain.center[1]) * domain.h


def _moats(*bands):
    """Negative rings at the given (inner, outer) radii in a positive sea.

    The sea is cut by a zero-valued slit along the positive x axis beyond the
    outermost ring, so the sea itself does not surround the origin.
    """
    edge = max(hi for _, hi in bands)

    def fn(x, y):
        rad = np.hypot(x, y)
        out = np.ones_like(rad)
        for lo, hi in bands:
            out[(rad >= lo) & (rad < hi)] = -1.0
        out[(rad >= edge) & (x > 0) & (np.abs(y) < SLIT_HALF_WIDTH)] = 0.0
        return out

    return fn


def _interior_disk(domain, radius):
    return (_vertex_radius(domain) < radius) & (domain.kind != OUTSIDE)


# ---------------------------------------------------------------------------
# open edges


def test_edge_closed_when_an_endpoint_is_below_level(disk32):
    f = _synthetic(disk32, lambda x, y: np.where(x < 0, -0.1, 5.0))
    rows, cols = open_edges_at_level(f, 0.0, seed=1)
    w = disk32.kind.shape[0]
    win = f.window()
    below = np.nan_to_num(win, nan=-1.0) <= 0
    assert not np.any(rows & (below[:-1] | below[1:]))
    assert not np.any(cols & (below[:, :-1] | below[:, 1:]))
    assert rows.shape == (w - 1, w) and cols.shape == (w, w - 1)


def test_open_probability_one_half_at_critical_height():
    dom = build_domain("disk", 128)
    c = math.sqrt(math.log(2) / 2)
    f = _synthetic(dom, lambda x, y: np.full_like(x, c))
    rows, cols = open_edges_at_level(f, 0.0, seed=7)
    inner = dom.kind == INTERIOR
    both_r = inner[:-1] & inner[1:]
    both_c = inner[:, :-1] & inner[:, 1:]
    n = int(both_r.sum() + both_c.sum())
    frac = (rows[both_r].sum() + cols[both_c].sum()) / n
    assert abs(frac - 0.5) <= 4 * math.sqrt(0.25 / n)


def test_high_fields_open_almost_surely(disk32):
    f = _synthetic(disk32, lambda x, y: np.full_like(x, 6.0))
    rows, cols = open_edges_at_level(f, 0.0, seed=3)
    inner = disk32.kind == INTERIOR
    assert rows[inner[:-1] & inner[1:]].all() and cols[inner[:, :-1] & inner[:, 1:]].all()


@given(seed=st.integers(0, 2**32 - 1), h1=st.floats(-1.0, 1.0), dh=st.floats(0.0, 1.0))
def test_open_edges_invariants(disk32, seed, h1, dh):
    f = sample_dgff(disk32, 0.0, seed % 1000)
    r1, c1 = open_edges_at_level(f, h1, seed=seed)
    r1b, c1b = open_edges_at_level(f, h1, seed=seed)
    assert np.array_equal(r1, r1b) and np.array_equal(c1, c1b)
    # with the same uniforms, raising the level can only close edges
    r2, c2 = open_edges_at_level(f, h1 + dh, seed=seed)
    assert not np.any(r2 & ~r1) and not np.any(c2 & ~c1)
    win = np.nan_to_num(f.window(), nan=0.0)
    above = win > h1
    inner = disk32.kind == INTERIOR
    both_r = inner[:-1] & inner[1:]
    assert not np.any(r1 & both_r & ~(above[:-1] & above[1:]))


# ---------------------------------------------------------------------------
# sign clusters on synthetic fields


def test_single_moat_is_selected(disk32):
    f = _synthetic(disk32, _moats((0.4, 0.5)))
    res = sign_clusters_outermost(f, deterministic=True)
    assert res.sign == -1 and res.label == pytest.approx(-GAP)
    assert np.array_equal(res.outer.inside, _interior_disk(disk32, 0.5))
    assert np.array_equal(res.inner.inside, _interior_disk(disk32, 0.4))
    assert res.outer.is_closed() and res.inner.is_closed()
    assert res.outer.surrounds_origin and res.inner.surrounds_origin
    assert not res.flags


def test_outer_of_two_moats_is_selected(disk32):
    f = _synthetic(disk32, _moats((0.25, 0.3), (0.5, 0.6)))
    res = sign_clusters_outermost(f, deterministic=True)
    assert res.sign == -1
    assert np.array_equal(res.outer.inside, _interior_disk(disk32, 0.6))
    assert np.array_equal(res.inner.inside, _interior_disk(disk32, 0.5))


def test_sea_reaching_the_boundary_is_flagged(disk32):
    # without the slit the sea is a ring around the origin, hence outermost
    f = _synthetic(disk32, lambda x, y: np.where((np.hypot(x, y) >= 0.4) & (np.hypot(x, y) < 0.5), -1.0, 1.0))
    res = sign_clusters_outermost(f, deterministic=True)
    assert res.sign == 1 and "touches_boundary" in res.flags


def test_no_surrounding_cluster(disk32):
    f = _synthetic(disk32, lambda x, y: np.where(x > 0, 1.0, -1.0))
    assert sign_clusters_outermost(f, deterministic=True) is None


def test_loop_from_region_is_closed(disk32):
    w = disk32.kind.shape[0]
    ij = np.indices((2 * w - 1, 2 * w - 1)) / 2.0
    x = (ij[0] - disk32.center[0]) * disk32.h
    y = (ij[1] - disk32.center[1]) * disk32.h
    loop = loop_from_region(disk32, (np.abs(x) < 0.3) & (np.abs(y) < 0.45))
    assert loop.is_closed() and loop.surrounds_origin
    # perimeter of a (2k+1) x (2m+1) vertex block
    kx, ky = int(0.3 / disk32.h - 1e-9), int(0.45 / disk32.h - 1e-9)
    assert len(loop.dual_edges) == 2 * (2 * kx + 1) + 2 * (2 * ky + 1)


# ---------------------------------------------------------------------------
# first-passage sets


def test_fps_fills_domain_when_field_is_high(disk32):
    f = _synthetic(disk32, lambda x, y: np.full_like(x, 0.5))
    fps, loop = fps_component(f, GAP, deterministic=True)
    assert loop is None
    member = disk32.kind != OUTSIDE
    assert fps[0::2, 0::2][member].all()


def test_fps_stops_at_moat(disk32):
    f = _synthetic(disk32, lambda x, y: np.where((np.hypot(x, y) >= 0.4) & (np.hypot(x, y) < 0.5), -3.0, 0.0))
    fps, loop = fps_component(f, 1.0, deterministic=True)
    assert loop is not None and loop.label == -1.0
    assert np.array_equal(loop.inside, _interior_disk(disk32, 0.5))
    assert not fps[0::2, 0::2][_interior_disk(disk32, 0.5)].any()


def test_fps_rejects_bad_levels(disk32):
    f = sample_dgff(disk32, 0.0, 0)
    with pytest.raises(PreconditionError):
        fps_component(f, 0.0)
    with pytest.raises(PreconditionError):
        fps_component(f, 1.0, boundary="inner")


@pytest.mark.parametrize("seed", range(12))
def test_fps_monotone_in_level(disk32, seed):
    f = sample_dgff(disk32, 0.0, seed)
    small, _ = fps_component(f, GAP)
    large, _ = fps_component(f, 2 * GAP)
    assert not np.any(small & ~large)


# ---------------------------------------------------------------------------
# iterated loops


@pytest.fixture(scope="module")
def disk64():
    return build_domain("disk", 64)


@pytest.mark.parametrize("seed", range(10))
def test_cluster_and_first_iterated_loop_agree(disk64, seed):
    f = sample_dgff(disk64, 0.0, seed)
    res = sign_clusters_outermost(f)
    seq = iterated_loops(f, (GAP, GAP), seed)
    if res is None:
        assert seq.terminal and not seq.loops
        return
    assert np.array_equal(seq.loops[0].inside, res.outer.inside)
    assert seq.labels[0] == pytest.approx(res.label)
    assert len(seq.labels) == 1 and seq.stopped


@pytest.mark.parametrize("seed", range(20))
def test_iterated_labels_and_nesting(disk64, seed):
    f = sample_dgff(disk64, 0.0, seed)
    seq = iterated_loops(f, (GAP, 3 * GAP), seed)
    assert seq.check()
    assert len(seq.loops) == len(seq.labels) <= ITERATION_CAP
    assert seq.stopped or seq.terminal
    if seq.stopped:
        assert seq.labels[-1] == pytest.approx(-GAP) or seq.labels[-1] == pytest.approx(3 * GAP)
    for outer, inner in zip(seq.loops, seq.loops[1:]):
        assert not np.any(inner.inside & ~outer.inside)
        assert inner.inside.sum() < outer.inside.sum()
        assert inner.is_closed()


def test_loop_soup_boundaries_are_nested(disk64):
    seen = 0
    for seed in range(300):
        res = sign_clusters_outermost(sample_dgff(disk64, 0.0, seed))
        if res is None or res.inner is None:
            continue
        seen += 1
        assert res.inner.surrounds_origin
        assert not np.any(res.inner.inside & ~res.outer.inside)
        assert res.inner.inside.sum() < res.outer.inside.sum()
    assert seen > 0


def test_iterated_loops_reject_bad_levels(disk64):
    f = sample_dgff(disk64, 0.0, 0)
    for levels in ((GAP, 1.0), (0.0, 2 * GAP), (-GAP, 3 * GAP)):
        with pytest.raises(PreconditionError):
            iterated_loops(f, levels, 0)


def test_iteration_cap_raises():
    # reaching an inner value of 3 * 2 lambda takes at least three steps
    dom = build_domain("annulus", 64, r=0.3)
    for seed in range(5):
        f = sample_dgff(dom, 3 * GAP, seed)
        with pytest.raises(ExplorationError):
            iterated_loops(f, (20 * GAP, 20 * GAP), seed, cap=2)
        seq = iterated_loops(f, (20 * GAP, 20 * GAP), seed)
        assert seq.terminal and len(seq.labels) >= 3


@pytest.mark.parametrize("n_levels", [1, 2, -1, -2])
def test_annulus_exploration_ends_at_inner_value(n_levels):
    dom = build_domain("annulus", 64, r=0.3)
    for seed in range(10):
        f = sample_dgff(dom, n_levels * GAP, seed)
        seq = iterated_loops(f, (20 * GAP, 20 * GAP), seed)
        assert seq.terminal and seq.check()
        assert seq.labels[-1] == pytest.approx(n_levels * GAP)


def test_reversed_exploration_matches():
    dom = build_domain("annulus", 256, r=0.2)
    good = 0
    runs = 50
    for seed in range(runs):
        f = sample_dgff(dom, 0.0, seed)
        out = non_contractible_chain(f, "outer_to_inner")
        back = non_contractible_chain(f, "inner_to_outer")[::-1]
        same = len(out) == len(back) and all(hausdorff(p, q, dom) <= 2 for p, q in zip(out, back))
        good += same
    assert good >= 0.9 * runs


def test_degenerate_fraction_stable_under_refinement():
    n = 600

    def degenerate_fraction(mesh):
        dom = build_domain("disk", mesh)
        bad = 0
        for seed in range(n):
            res = sign_clusters_outermost(sample_dgff(dom, 0.0, seed))
            bad += res is None or "touches_boundary" in res.flags
        return bad / n

    p1, p2 = degenerate_fraction(256), degenerate_fraction(512)
    se = math.sqrt(p1 * (1 - p1) / n + p2 * (1 - p2) / n)
    assert abs(p1 - p2) <= 3 * se
