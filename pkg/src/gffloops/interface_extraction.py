"""Metric-graph interfaces of a lattice GFF: sign clusters, first-passage sets, iterated loops.

Everything runs on a refined grid of shape (2W-1, 2W-1) for a W x W lattice
window: cell (2i, 2j) is vertex (i, j), cells with one odd coordinate are
edges and cells with two odd coordinates are plaquettes.  A metric-graph
superlevel set is then a set of vertex and edge cells, its clusters are
4-connected components, and planar separation questions (does this cluster
surround the origin, which side of it is the hole on) become flood fills on
the complement.

The region outside the current domain is one cell block held at the outer
boundary value; an annulus hole is another block held at the inner value.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .closed_form_laws import GAP
from .errors import ExplorationError, PreconditionError
from .lattice_gff import (INNER, INTERIOR, OUTER, OUTSIDE, FieldSample, harmonic_on_mask, sample_zero_boundary,
                          seed_children)

ITERATION_CAP = 64
_LABEL_TOL = 1e-9


# ---------------------------------------------------------------------------
# loops


@dataclass(eq=False)
class Loop:
    """A lattice interface, described by the vertex set on its bounded side.

    ``inside`` holds the domain vertices (interior or boundary) on the
    origin/hole side, ``layer`` the vertices just outside that carry the
    curve for Dirichlet problems, and ``dual_edges`` the (inside, layer)
    vertex pairs whose shared dual edges trace the loop.
    """

    inside: np.ndarray
    layer: np.ndarray
    dual_edges: np.ndarray
    surrounds_origin: bool
    touches_outer: bool = False
    touches_inner: bool = False
    label: float = None

    def midpoints(self, domain):
        """Planar midpoints of the dual edges."""
        return domain.coords(self.dual_edges.mean(axis=1))

    def is_closed(self):
        """Every dual vertex met by the dual edges has even degree."""
        e = self.dual_edges
        if e.size == 0:
            return False
        a, b = e[:, 0, :], e[:, 1, :]
        # dual edge between lattice neighbours a, b joins the two plaquettes
        # on either side; plaquettes indexed by their lower-left corner
        d = b - a
        base = np.minimum(a, b)
        horiz = d[:, 0] != 0  # a, b differ in the first coordinate
        p1 = np.where(horiz[:, None], base + np.array([0, -1]), base + np.array([-1, 0]))
        p2 = base
        keys = np.concatenate([p1, p2])
        _, counts = np.unique(keys, axis=0, return_counts=True)
        return bool(np.all(counts % 2 == 0))


def loop_from_region(domain, inside_ref, target_vertex=None):
    """Build a :class:`Loop` from a refined-grid mask of its bounded side."""
    member = domain.kind != OUTSIDE
    inside = inside_ref[0::2, 0::2] & member
    grown = np.zeros_like(inside)
    for axis in (0, 1):
        for shift in (1, -1):
            grown |= _shift(inside, shift, axis)
    layer = grown & member & ~inside
    pairs = []
    for di, dj in ((1, 0), (0, 1)):
        a = inside[: inside.shape[0] - di, : inside.shape[1] - dj]
        b = layer[di:, dj:]
        ii, jj = np.nonzero(a & b)
        pairs.append(np.stack([np.stack([ii, jj], 1), np.stack([ii + di, jj + dj], 1)], 1))
        a = layer[: inside.shape[0] - di, : inside.shape[1] - dj]
        b = inside[di:, dj:]
        ii, jj = np.nonzero(a & b)
        pairs.append(np.stack([np.stack([ii + di, jj + dj], 1), np.stack([ii, jj], 1)], 1))
    dual = np.concatenate(pairs) if pairs else np.zeros((0, 2, 2), dtype=int)
    if target_vertex is None:
        target_vertex = domain.center
    return Loop(inside=inside, layer=layer, dual_edges=dual,
                surrounds_origin=bool(inside[target_vertex]),
                touches_outer=bool(np.any(layer & (domain.kind == OUTER))),
                touches_inner=bool(np.any(layer & _near(domain.kind == INNER))))


def _near(mask):
    out = mask.copy()
    for axis in (0, 1):
        for shift in (1, -1):
            out |= _shift(mask, shift, axis)
    return out


def _shift(a, shift, axis):
    out = np.zeros_like(a)
    if axis == 0:
        if shift > 0:
            out[shift:] = a[:-shift]
        else:
            out[:shift] = a[-shift:]
    else:
        if shift > 0:
            out[:, shift:] = a[:, :-shift]
        else:
            out[:, :shift] = a[:, -shift:]
    return out


def hausdorff(loop_a, loop_b, domain):
    """Hausdorff distance between the dual-edge midpoints of two loops, in cells."""
    from scipy.spatial import cKDTree

    pa, pb = loop_a.dual_edges.mean(axis=1), loop_b.dual_edges.mean(axis=1)
    if len(pa) == 0 or len(pb) == 0:
        return np.inf
    da, _ = cKDTree(pb).query(pa)
    db, _ = cKDTree(pa).query(pb)
    return float(max(da.max(), db.max()))


@dataclass
class LabeledLoopSequence:
    """Loops l_1..l_n in exploration order with labels alpha_j in 2*lambda*Z."""

    loops: list
    labels: list
    direction: str = "outer_to_inner"
    stopped: bool = False
    terminal: bool = False
    flags: set = field(default_factory=set)

    def check(self):
        """Label increments are exactly +-2*lambda."""
        prev = 0.0
        for lab in self.labels:
            if abs(abs(lab - prev) - GAP) > _LABEL_TOL:
                return False
            prev = lab
        return True


# ---------------------------------------------------------------------------
# field preparation and the refined grid


@dataclass(eq=False)
class Landscape:
    """Field values on the full window with boundary blocks filled in.

    ``comp`` is 0 on free vertices, 1 on the outer block and 2 on the hole
    block; ``values`` holds the field on free vertices and the block value
    elsewhere.  ``u_rows``/``u_cols`` are the edge uniforms (None in
    deterministic mode, where every edge with both ends above the level opens).
    """

    values: np.ndarray
    comp: np.ndarray
    u_rows: np.ndarray = None
    u_cols: np.ndarray = None

    @property
    def shape(self):
        return self.values.shape


def hole_mask(domain):
    """Window points inside the annulus hole (empty for a disk)."""
    if domain.shape != "annulus":
        return np.zeros(domain.kind.shape, dtype=bool)
    ij = np.indices(domain.kind.shape)
    rad = np.hypot(ij[0] - domain.center[0], ij[1] - domain.center[1]) * domain.h
    return (domain.kind != INTERIOR) & (rad < 0.5 * (domain.r + domain.R))


def edge_uniforms(shape, seed):
    """One uniform per lattice edge of a window, drawn from ``seed``."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    rng = np.random.Generator(np.random.PCG64(ss))
    w0, w1 = shape
    return rng.random((w0 - 1, w1)), rng.random((w0, w1 - 1))


def landscape(field_sample, deterministic=False, free=None, outer_value=0.0, hole_value=None):
    """Landscape of a :class:`FieldSample` (or of a sub-region of it).

    ``free`` restricts the free vertices to a sub-region of the domain
    interior; points of the domain outside it join the outer block unless
    they belong to the annulus hole.
    """
    dom = field_sample.domain
    win = field_sample.window()
    hole = hole_mask(dom)
    if free is None:
        free = dom.kind == INTERIOR
    comp = np.where(free, 0, np.where(hole, 2, 1)).astype(np.int8)
    if hole_value is None:
        hole_value = field_sample.v
    values = np.where(comp == 0, np.nan_to_num(win), np.where(comp == 2, hole_value, outer_value))
    if deterministic:
        return Landscape(values, comp)
    ur, uc = edge_uniforms(values.shape, field_sample.edge_refinement_seed)
    return Landscape(values, comp, ur, uc)


def _open_edges(g, comp, u, axis):
    """Open indicator of the edges along ``axis`` for the level function g."""
    if axis == 0:
        ga, gb, ca, cb = g[:-1], g[1:], comp[:-1], comp[1:]
    else:
        ga, gb, ca, cb = g[:, :-1], g[:, 1:], comp[:, :-1], comp[:, 1:]
    above = (ga > 0) & (gb > 0)
    block = (ca > 0) & (cb > 0)
    with np.errstate(over="ignore"):
        close = np.exp(-2.0 * ga * gb)
    bridge = above if u is None else above & (u > close)
    return np.where(block, above & (ca == cb), bridge)


def refined_superlevel(land, level, sign=1):
    """Refined-grid mask of the metric-graph set {sign * phi > level}."""
    g = sign * land.values - level
    comp = land.comp
    w0, w1 = g.shape
    out = np.zeros((2 * w0 - 1, 2 * w1 - 1), dtype=bool)
    out[0::2, 0::2] = g > 0
    out[1::2, 0::2] = _open_edges(g, comp, land.u_rows, 0)
    out[0::2, 1::2] = _open_edges(g, comp, land.u_cols, 1)
    c = comp
    same = (c[:-1, :-1] > 0) & (c[:-1, :-1] == c[1:, :-1]) & (c[:-1, :-1] == c[:-1, 1:]) & (c[:-1, :-1] == c[1:, 1:])
    out[1::2, 1::2] = same & (g[:-1, :-1] > 0)
    return out


def open_edges_at_level(field_sample, level, seed=None, deterministic=False):
    """Open edges of the metric-graph superlevel set {phi > level}.

    Returns boolean arrays (rows, cols) over the window: rows[i, j] is the
    edge (i, j)-(i+1, j) and cols[i, j] the edge (i, j)-(i, j+1).  ``seed``
    overrides the field's own edge-refinement seed.
    """
    land = landscape(field_sample, deterministic)
    if seed is not None and not deterministic:
        land.u_rows, land.u_cols = edge_uniforms(land.shape, seed)
    ref = refined_superlevel(land, level)
    return ref[1::2, 0::2], ref[0::2, 1::2]


def _component(mask, cell):
    """Component of ``mask`` containing ``cell`` (empty if the cell is not in mask)."""
    if not mask[cell]:
        return np.zeros_like(mask)
    lab, _ = ndimage.label(mask)
    return lab == lab[cell]


def _seed_cells(land, domain):
    corner = (0, 0)
    target = (2 * domain.center[0], 2 * domain.center[1])
    return corner, target


def reaches_outer(cluster, land):
    """True when a vertex of ``cluster`` neighbours the outer block.

    Such a cluster joins the centre to the outer boundary when it also
    contains the centre, so nothing can separate the two.
    """
    outer = _near(land.comp == 1)
    return bool(np.any(cluster[0::2, 0::2] & outer & (land.comp != 1)))


def separates(cluster, corner, target):
    """True when ``cluster`` contains ``target`` or cuts it off from ``corner``."""
    if cluster[target]:
        return True
    lab, _ = ndimage.label(~cluster)
    return lab[target] != lab[corner]


@dataclass
class _Candidate:
    sign: int
    mask: np.ndarray
    far: int
    near: int


def _ray_candidates(clusters, target):
    """Clusters meeting all four axis rays from ``target``, with ray extents.

    ``clusters`` is a list of (sign, labelled array).  A cluster that
    separates target from the outside meets every ray.
    """
    ti, tj = target
    out = []
    for sign, lab in clusters:
        rays = [lab[ti, tj:], lab[ti, : tj + 1][::-1], lab[ti:, tj], lab[: ti + 1, tj][::-1]]
        common = None
        for r in rays:
            ids = set(np.unique(r[r > 0]).tolist())
            common = ids if common is None else common & ids
        east = rays[0]
        for k in sorted(common):
            pos = np.flatnonzero(east == k)
            out.append(_Candidate(sign, lab == k, int(pos.max()), int(pos.min())))
    return out


def separating_clusters(land, domain, level=0.0):
    """All sign clusters at ``level`` that separate the centre from the outer block.

    Returned as (sign, refined mask) pairs sorted from the outside inwards.
    In a disk the list is empty when the origin's own cluster reaches the
    outer block.  In an annulus the hole's cluster is kept even then (and
    flagged by the caller), since its outer side is still a level line.
    """
    corner, target = _seed_cells(land, domain)
    clusters = []
    for sign in (1, -1):
        lab, _ = ndimage.label(refined_superlevel(land, level, sign))
        clusters.append((sign, lab))
    cands = _ray_candidates(clusters, target)
    cands.sort(key=lambda c: -c.far)
    if domain.shape == "disk" and any(c.mask[target] and reaches_outer(c.mask, land) for c in cands):
        return []
    return [(c.sign, c.mask) for c in cands if separates(c.mask, corner, target)]


def _outermost(land, domain, level=0.0):
    found = separating_clusters(land, domain, level)
    return found[0] if found else None


def _outer_side_loop(domain, cluster, corner):
    exterior = _component(~cluster, corner)
    return loop_from_region(domain, ~exterior)


def _inner_side_loop(domain, cluster, target):
    if cluster[target]:
        return None
    return loop_from_region(domain, _component(~cluster, target))


@dataclass
class ClusterResult:
    """Outermost separating sign cluster and its two boundary loops."""

    cluster: np.ndarray
    sign: int
    outer: Loop
    inner: Loop
    label: float
    flags: set = field(default_factory=set)


def sign_clusters_outermost(field_sample, seed=None, deterministic=False, land=None):
    """Outermost sign cluster around the origin (disk) or the hole (annulus).

    Returns a :class:`ClusterResult` (``inner`` is None when the centre lies
    in the cluster itself or the cluster is attached to the hole), or None
    when no cluster separates the centre from the outer boundary, including
    (disk only) when the origin's own cluster reaches the outer block.
    """
    dom = field_sample.domain
    if land is None:
        land = landscape(field_sample, deterministic)
        if seed is not None and not deterministic:
            land.u_rows, land.u_cols = edge_uniforms(land.shape, seed)
    found = _outermost(land, dom)
    if found is None:
        return None
    sign, mask = found
    corner, target = _seed_cells(land, dom)
    outer = _outer_side_loop(dom, mask, corner)
    inner = _inner_side_loop(dom, mask, target)
    flags = set()
    if inner is None:
        flags.add("center_in_cluster")
    if outer.touches_outer:
        flags.add("touches_boundary")
    outer.label = sign * GAP
    return ClusterResult(mask, sign, outer, inner, sign * GAP, flags)


def fps_component(field_sample, a, boundary="outer", seed=None, deterministic=False):
    """First-passage set of level -a grown from one boundary.

    Returns (refined FPS mask, loop or None).  The loop bounds the
    complementary component on the other side (origin for a disk, hole for
    an annulus); it is None when the FPS reaches that side.
    """
    if not a > 0:
        raise PreconditionError("a must be positive")
    dom = field_sample.domain
    land = landscape(field_sample, deterministic)
    if seed is not None and not deterministic:
        land.u_rows, land.u_cols = edge_uniforms(land.shape, seed)
    corner, target = _seed_cells(land, dom)
    sup = refined_superlevel(land, -a)
    if boundary == "outer":
        src, dst = corner, target
    elif boundary == "inner":
        if dom.shape != "annulus":
            raise PreconditionError("inner boundary exploration needs an annulus")
        src, dst = target, corner
    else:
        raise PreconditionError(f"unknown boundary {boundary!r}")
    fps = _component(sup, src)
    if fps[dst]:
        return fps, None
    if boundary == "outer":
        loop = loop_from_region(dom, _component(~fps, dst))
    else:
        loop = loop_from_region(dom, ~_component(~fps, dst))
    loop.label = -a
    return fps, loop


# ---------------------------------------------------------------------------
# iterated two-valued-set loops


def _stage_field(domain, free, hole_value, rng):
    """Fresh GFF on the free vertices: zero outside, ``hole_value`` on the hole."""
    win = sample_zero_boundary(free, rng)
    hole = hole_mask(domain)
    if hole_value != 0 and domain.shape == "annulus":
        fixed = np.where(hole, float(hole_value), 0.0)
        mean, _ = harmonic_on_mask(free, fixed)
        win = np.where(free, win + mean, np.nan)
    return win


def iterated_loops(field_sample, stop_levels, seed, direction="outer_to_inner",
                   cap=ITERATION_CAP, min_cells=2):
    """Iterate outermost sign-cluster loops until a label reaches -a or b.

    The first stage uses ``field_sample`` itself.  Each later stage samples
    a fresh zero-boundary GFF inside the previous loop (with the annulus
    hole at its value relative to the running label), which has the law of
    the field there given the exploration so far.  Stops with the stopped
    loop last in the sequence, or with ``terminal`` set when the exploration
    reaches the inner boundary (annulus) or the loops shrink below
    ``min_cells`` cells from the origin (disk, flagged "unresolved").
    """
    a, b = stop_levels
    a, b = float(a), float(b)
    k = (a + b) / GAP
    if not (a > 0 and b > 0) or abs(k - round(k)) > 1e-9 or round(k) < 1:
        raise PreconditionError("stop levels need a, b > 0 with a + b a multiple of 2*lambda")
    if direction != "outer_to_inner":
        return _inner_to_outer(field_sample, seed)
    dom = field_sample.domain
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    seq = LabeledLoopSequence([], [], direction)
    alpha = 0.0
    free = dom.kind == INTERIOR
    land = landscape(field_sample)
    hole_value = field_sample.v
    for step in range(cap):
        res = sign_clusters_outermost(field_sample, land=land)
        if res is None:
            seq.terminal = True
            return seq
        loop = res.outer
        alpha += res.sign * GAP
        loop.label = alpha
        seq.loops.append(loop)
        seq.labels.append(alpha)
        seq.flags |= res.flags
        if abs(alpha + a) < _LABEL_TOL or abs(alpha - b) < _LABEL_TOL:
            seq.stopped = True
            return seq
        if loop.touches_outer:
            seq.flags.add("touches_boundary")
        free = loop.inside & (dom.kind == INTERIOR)
        if dom.shape == "disk":
            r_minus = _r_minus(loop, dom)
            if r_minus < min_cells * dom.h or not free[dom.center]:
                seq.flags.add("unresolved")
                seq.terminal = True
                return seq
        elif not free.any():
            seq.terminal = True
            return seq
        stage_ss = seed_children(ss, step + 1)[step]
        field_ss, edge_ss = seed_children(stage_ss, 2)
        rng = np.random.Generator(np.random.PCG64(field_ss))
        rel = hole_value - alpha
        win = _stage_field(dom, free, rel, rng)
        ii = dom.interior_ij
        vals = np.nan_to_num(win[ii[:, 0], ii[:, 1]])
        field_sample = FieldSample(dom, vals, field_sample.boundary_values, edge_ss, rel)
        land = landscape(field_sample, free=free, hole_value=rel)
    raise ExplorationError(f"no stopping label after {cap} iterations")


def _r_minus(loop, domain):
    mids = loop.midpoints(domain)
    return float(np.min(np.hypot(mids[:, 0], mids[:, 1]))) if len(mids) else 0.0


def _inner_to_outer(field_sample, seed):
    raise PreconditionError("iterated loops from the inner boundary: use non_contractible_chain")


# ---------------------------------------------------------------------------
# annulus objects


@dataclass
class AnnulusLoops:
    """Non-contractible interfaces of one annulus field.

    ``tvs`` is the outer boundary of the outermost separating sign cluster
    (None when no cluster separates the boundaries), ``cluster_inner`` the
    boundary of that cluster facing the hole (None when the cluster is
    attached to the hole), ``label`` the cluster sign times 2*lambda.
    """

    tvs: Loop
    cluster_inner: Loop
    label: float
    flags: set = field(default_factory=set)


def annulus_loops(field_sample):
    """TVS loop and loop-soup-cluster boundaries around the hole of an annulus field."""
    dom = field_sample.domain
    if dom.shape != "annulus":
        raise PreconditionError("annulus_loops needs an annulus domain")
    res = sign_clusters_outermost(field_sample)
    if res is None:
        return AnnulusLoops(None, None, None, {"no_separating_cluster"})
    flags = set(res.flags)
    if res.inner is None:
        flags.add("attached_to_hole")
    return AnnulusLoops(res.outer, res.inner, res.label, flags)


def non_contractible_chain(field_sample, direction="outer_to_inner"):
    """Boundaries of all separating sign clusters of an annulus field, in order.

    Each separating cluster contributes its two boundary loops.  The
    outward-in run orders clusters by their farthest reach along a ray and
    reads each cluster's outer boundary first; the inward-out run orders by
    nearest reach from the hole and reads the hole-side boundary first.
    """
    dom = field_sample.domain
    land = landscape(field_sample)
    corner, target = _seed_cells(land, dom)
    clusters = []
    for sign in (1, -1):
        lab, _ = ndimage.label(refined_superlevel(land, 0.0, sign))
        clusters.append((sign, lab))
    cands = _ray_candidates(clusters, target)
    if direction == "outer_to_inner":
        cands.sort(key=lambda c: -c.far)
    else:
        cands.sort(key=lambda c: c.near)
    loops = []
    for c in cands:
        if not separates(c.mask, corner, target):
            continue
        outer = _outer_side_loop(dom, c.mask, corner)
        inner = _inner_side_loop(dom, c.mask, target)
        pair = [outer] + ([inner] if inner is not None else [])
        loops.extend(pair if direction == "outer_to_inner" else pair[::-1])
    return loops
