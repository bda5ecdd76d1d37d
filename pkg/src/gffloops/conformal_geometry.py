"""Extremal distance, conformal radius and radii of lattice loops.

Extremal distance is the reciprocal Dirichlet energy of the 0/1 potential
between two vertex sets.  The conformal radius seen from the origin is read
off the discrete Green function: G(0, 0) inside a domain grows like
(2 pi)^-1 log(CR / h) plus a lattice constant, so comparing with a
reference disk of known radius cancels the constant.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError
from .lattice_gff import INNER, INTERIOR, OUTER, OUTSIDE, _factor, _laplacian, harmonic_on_mask

METHOD_TOL = 0.03
# smaller puncture radius in cells (the larger one is twice this)
PUNCTURE_CELLS = 4
_NEIGHBOURS = ((1, 0), (-1, 0), (0, 1), (0, -1))


def _roll(a, di, dj):
    return np.roll(np.roll(a, di, axis=0), dj, axis=1)


def extremal_distance(domain, set_a, set_b, guess=None):
    """Extremal distance between two vertex sets (window masks) of a domain.

    Solves for the potential equal to 0 on A and 1 on B, harmonic on the
    remaining interior vertices, and returns 1 / energy.  Every boundary
    vertex reachable from the free vertices must belong to A or B.
    ``guess`` seeds the iterative solver used on very large grids.
    """
    set_a = np.asarray(set_a, dtype=bool)
    set_b = np.asarray(set_b, dtype=bool)
    if not set_a.any() or not set_b.any():
        raise PreconditionError("both sets must be nonempty")
    if np.any(set_a & set_b):
        raise PreconditionError("sets overlap")
    if touching(set_a, set_b):
        raise PreconditionError("sets touch")
    free = (domain.kind == INTERIOR) & ~set_a & ~set_b
    fixed = np.full(domain.kind.shape, np.nan)
    fixed[set_a] = 0.0
    fixed[set_b] = 1.0
    if not free.any():
        raise PreconditionError("no vertices between the sets")
    _, energy = harmonic_on_mask(free, fixed, guess=guess)
    if not energy > 0:
        raise PreconditionError("sets are not connected through the domain")
    return 1.0 / energy


def touching(set_a, set_b):
    """True when some vertex of A is a lattice neighbour of some vertex of B."""
    return any(np.any(set_a & _roll(set_b, di, dj)) for di, dj in _NEIGHBOURS)


def outer_contact(domain, loop):
    """The loop meets, or is one edge away from, the outer boundary."""
    return loop.touches_outer or touching(domain.kind == OUTER, loop.layer | loop.inside)


def inner_contact(domain, loop):
    """No free vertex separates the loop from the hole."""
    outside = (domain.kind != OUTSIDE) & ~loop.inside
    hole = loop.inside & (domain.kind == INNER)
    return not hole.any() or bool(np.any(outside & hole)) or touching(outside, hole)


def nested_contact(domain, outer_loop, inner_loop):
    """No free vertex separates two nested loops."""
    outside = (domain.kind != OUTSIDE) & ~outer_loop.inside
    target = inner_loop.layer | inner_loop.inside
    return bool(np.any(outside & target)) or touching(outside, target)


def green_diagonal(free, vertex):
    """Discrete Green function G(v, v) on the vertex set ``free`` (zero outside)."""
    index = np.full(free.shape, -1, dtype=np.int64)
    index[free] = np.arange(int(free.sum()))
    k = index[vertex]
    if k < 0:
        raise PreconditionError("vertex is not free")
    lap = _laplacian(free, index)
    rhs = np.zeros(lap.shape[0])
    rhs[k] = 1.0
    return float(_factor(lap).solve(rhs)[k])


def _reference(domain):
    """Green diagonal at the centre of the full lattice disk of radius R."""
    key = ("green_ref", domain.mesh_cells, domain.R)
    if key not in domain._cache:
        ref = _disk_mask(domain, domain.R)
        domain._cache[key] = green_diagonal(ref, domain.center)
    return domain._cache[key]


def _disk_mask(domain, radius):
    ij = np.indices(domain.kind.shape)
    rad = np.hypot(ij[0] - domain.center[0], ij[1] - domain.center[1]) * domain.h
    return rad < radius - 1e-12 * domain.R


def neg_log_cr_green(domain, inside):
    """-log CR(0, region) by Green calibration against the lattice unit disk."""
    free = inside & (domain.kind == INTERIOR)
    g_loop = green_diagonal(free, domain.center)
    return -math.log(domain.R) + 2 * math.pi * (_reference(domain) - g_loop)


def _puncture_term(domain, free, rho):
    # log(1/rho) - 2 pi ED(complement of free, disk of radius rho around 0)
    hole = _disk_mask(domain, rho) & free
    fixed = np.where(hole, 1.0, 0.0)
    _, energy = harmonic_on_mask(free & ~hole, fixed)
    return math.log(1.0 / rho) - 2 * math.pi / energy


def neg_log_cr_puncture(domain, inside, cells=4):
    """-log CR(0, region) from the puncture limit with Richardson extrapolation.

    Uses holes of ``cells`` and ``2 * cells`` lattice cells, each calibrated
    against the same hole in the reference disk, and extrapolates the O(r)
    error linearly to r = 0.
    """
    free = inside & (domain.kind == INTERIOR)
    ref = _disk_mask(domain, domain.R)
    vals = []
    for c in (cells, 2 * cells):
        rho = (c + 0.5) * domain.h
        vals.append(_puncture_term(domain, free, rho) - _puncture_term(domain, ref, rho) - math.log(domain.R))
    return 2 * vals[0] - vals[1]


def conformal_radius(domain, loop, min_cells=2, cross_check=False):
    """-log CR(0, interior of loop); returns (value, flags).

    The value is None and the flag "too_close" is set when the loop comes
    within ``min_cells`` cells of the origin.  With ``cross_check`` the
    puncture estimate is also computed and "method_disagree" flagged when
    the two differ by more than 3%; loops too small to hold the puncture
    disks get "cross_check_skipped" instead.
    """
    flags = set()
    r_minus, _ = loop_metrics(domain, loop)
    if not loop.surrounds_origin or r_minus < min_cells * domain.h:
        flags.add("too_close")
        return None, flags
    value = neg_log_cr_green(domain, loop.inside)
    if cross_check and r_minus <= (2 * PUNCTURE_CELLS + 2) * domain.h:
        flags.add("cross_check_skipped")
    elif cross_check:
        other = neg_log_cr_puncture(domain, loop.inside, PUNCTURE_CELLS)
        if abs(other - value) > METHOD_TOL * max(abs(value), 1.0):
            flags.add("method_disagree")
    return value, flags


def loop_metrics(domain, loop):
    """(r_minus, r_plus): min and max distance of dual-edge midpoints from 0."""
    mids = loop.midpoints(domain)
    if len(mids) == 0:
        return 0.0, 0.0
    rad = np.hypot(mids[:, 0], mids[:, 1])
    return float(rad.min()), float(rad.max())


def outer_boundary_set(domain):
    return domain.kind == OUTER


def inner_boundary_set(domain):
    return domain.kind == INNER


def ed_outer(domain, loop):
    """ED(outer boundary, loop)."""
    return extremal_distance(domain, domain.kind == OUTER, loop.layer | loop.inside)


def ed_inner(domain, loop):
    """ED(loop, inner boundary) on an annulus."""
    outside = (domain.kind != OUTSIDE) & ~loop.inside
    return extremal_distance(domain, outside, loop.inside & (domain.kind == INNER))


def ed_between(domain, outer_loop, inner_loop):
    """ED between two nested loops."""
    outside = (domain.kind != OUTSIDE) & ~outer_loop.inside
    return extremal_distance(domain, outside, inner_loop.layer | inner_loop.inside)


@dataclass
class LoopGeometry:
    """Measured geometry of one loop around the origin (or the hole)."""

    ed_outer: float = None
    ed_inner: float = None
    neg_log_cr: float = None
    r_minus: float = None
    r_plus: float = None
    label: float = None
    h: float = None
    flags: set = field(default_factory=set)

    def complete(self):
        return None not in (self.ed_outer, self.neg_log_cr, self.r_minus, self.r_plus)


def measure_loop(domain, loop, cross_check=False, lazy=False):
    """LoopGeometry of a loop in a disk (ED to the boundary, CR, radii).

    With ``lazy`` the extremal distance is skipped for loops already
    flagged "too_close", since such rows are discarded anyway.
    """
    geo = LoopGeometry(label=loop.label, h=domain.h)
    geo.r_minus, geo.r_plus = loop_metrics(domain, loop)
    geo.neg_log_cr, flags = conformal_radius(domain, loop, cross_check=cross_check)
    geo.flags |= flags
    if outer_contact(domain, loop):
        geo.flags.add("touches_boundary")
    elif not (lazy and "too_close" in geo.flags):
        geo.ed_outer = ed_outer(domain, loop)
    return geo


def distortion_report(geo):
    """Deterministic conformal-geometry bounds, each with one cell of slack.

    Radii get one cell diameter h*sqrt(2) of slack; log-scale quantities
    get the corresponding relative slack at the relevant radius.
    """
    if not geo.complete():
        raise PreconditionError("geometry incomplete")
    s = geo.h * math.sqrt(2)
    cr = math.exp(-geo.neg_log_cr)
    ed = math.exp(-2 * math.pi * geo.ed_outer)
    rm, rp = geo.r_minus, geo.r_plus
    out = {
        "koebe": cr / 4 - s <= rm <= cr + s,
        "r_plus_ed": ed - s <= rp <= 4 * ed + s,
        "ratio": ed / cr <= (rp + s) / max(rm - s, 1e-300)
        and (rp - s) / (rm + s) <= 16 * ed / cr,
        "ed_cr": 2 * math.pi * geo.ed_outer <= geo.neg_log_cr + s / max(rm, s),
    }
    return out
