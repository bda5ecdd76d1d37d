"""Square-lattice disks and annuli, the discrete GFF on them, and Dirichlet solves.

Vertices are the points h*(i, j) of a square lattice; a vertex is interior
when it lies strictly inside the shape, and boundary vertices are the
lattice neighbours of interior vertices that are not interior themselves.
Edges have unit conductance, so the field with density proportional to
exp(-1/2 sum_edges (f(x) - f(y))^2) has covariance the inverse graph
Laplacian, which behaves like (2 pi)^-1 log at large scales.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg, splu

from .errors import ConstructionError, PreconditionError, SolverError

OUTSIDE = 0
INTERIOR = 1
OUTER = 2
INNER = 3

_NEIGHBOURS = ((1, 0), (-1, 0), (0, 1), (0, -1))
# above this many free vertices an LU factor no longer fits in a few GB
DIRECT_LIMIT = 1_500_000
CG_RTOL = 1e-10


@dataclass(eq=False)
class GridDomain:
    """A lattice disk or annulus.

    ``kind`` is a 2-D array over the padded lattice window classifying each
    point as OUTSIDE, INTERIOR, OUTER or INNER boundary.  Interior and
    boundary vertices are numbered in row-major order; ``interior_index``
    and ``boundary_index`` map window points to those numbers (-1 elsewhere).
    """

    shape: str
    R: float
    r: float
    mesh_cells: int
    h: float
    kind: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.interior_index = np.full(self.kind.shape, -1, dtype=np.int64)
        inside = self.kind == INTERIOR
        self.interior_index[inside] = np.arange(int(inside.sum()))
        self.interior_ij = np.argwhere(inside)
        bnd = (self.kind == OUTER) | (self.kind == INNER)
        self.boundary_index = np.full(self.kind.shape, -1, dtype=np.int64)
        self.boundary_index[bnd] = np.arange(int(bnd.sum()))
        self.boundary_ij = np.argwhere(bnd)
        self.boundary_kind = self.kind[bnd]
        self.center = (self.kind.shape[0] // 2, self.kind.shape[1] // 2)

    # -- sizes and coordinates

    @property
    def n_interior(self):
        return int(self.interior_ij.shape[0])

    @property
    def n_boundary(self):
        return int(self.boundary_ij.shape[0])

    def coords(self, ij):
        """Planar coordinates of window indices (array of shape (..., 2))."""
        ij = np.asarray(ij)
        return (ij - np.array(self.center)) * self.h

    @property
    def boundary_outer(self):
        return np.flatnonzero(self.boundary_kind == OUTER)

    @property
    def boundary_inner(self):
        return np.flatnonzero(self.boundary_kind == INNER)

    def origin_interior_index(self):
        """Interior index of the lattice point at the origin (-1 for an annulus)."""
        return int(self.interior_index[self.center])

    # -- graph structure

    def edges(self):
        """Edges as window index pairs ((i1, j1), (i2, j2)) with at least one interior end.

        Returned as two (E, 2) integer arrays; each undirected edge appears once.
        """
        if "edges" not in self._cache:
            inside = self.kind == INTERIOR
            member = self.kind != OUTSIDE
            a_list, b_list = [], []
            for di, dj in ((1, 0), (0, 1)):
                a = np.zeros_like(inside)
                b = np.zeros_like(inside)
                a[: a.shape[0] - di, : a.shape[1] - dj] = True
                src = a & member
                dst = np.roll(np.roll(member, -di, axis=0), -dj, axis=1) & a
                src_in = inside
                dst_in = np.roll(np.roll(inside, -di, axis=0), -dj, axis=1)
                sel = src & dst & (src_in | dst_in)
                ii, jj = np.nonzero(sel)
                a_list.append(np.stack([ii, jj], axis=1))
                b_list.append(np.stack([ii + di, jj + dj], axis=1))
                del b
            self._cache["edges"] = (np.concatenate(a_list), np.concatenate(b_list))
        return self._cache["edges"]

    def laplacian(self):
        """Graph Laplacian on interior vertices (Dirichlet at the boundary)."""
        if "laplacian" not in self._cache:
            self._cache["laplacian"] = _laplacian(self.kind == INTERIOR, self.interior_index)
        return self._cache["laplacian"]

    def factor(self):
        """Cached sparse LU factorization of :meth:`laplacian`."""
        if "factor" not in self._cache:
            self._cache["factor"] = _factor(self.laplacian())
        return self._cache["factor"]

    # -- serialization

    def descriptor(self):
        return {"shape": self.shape, "R": self.R, "r": self.r, "mesh_cells": self.mesh_cells,
                "h": self.h, "n_interior": self.n_interior, "n_boundary": self.n_boundary}

    def header(self, seed=None):
        """One-line structured record of the domain for output file headers."""
        rec = dict(self.descriptor())
        if seed is not None:
            rec["seed"] = int(seed)
        return json.dumps(rec, sort_keys=True, separators=(",", ":"))


def build_domain(shape, mesh_cells, R=1.0, r=None):
    """Lattice disk (``shape="disk"``) or annulus r < |z| < R.

    The spacing is h = R / (mesh_cells // 2), so ``mesh_cells`` counts
    lattice cells across a diameter.
    """
    mesh_cells = int(mesh_cells)
    if mesh_cells < 4:
        raise ConstructionError("mesh_cells must be at least 4")
    if not R > 0:
        raise ConstructionError("R must be positive")
    if shape == "disk":
        r = 0.0
    elif shape == "annulus":
        if r is None or not 0 < r < R:
            raise ConstructionError("annulus needs 0 < r < R")
        if r / R < 4.0 / mesh_cells:
            raise ConstructionError("inner hole must span at least 4 cells")
    else:
        raise ConstructionError(f"unknown shape {shape!r}")
    half = mesh_cells // 2
    h = R / half
    m = half + 1
    ii, jj = np.meshgrid(np.arange(-m, m + 1), np.arange(-m, m + 1), indexing="ij")
    rad = np.hypot(ii, jj) * h
    tol = 1e-12 * R
    inside = rad < R - tol
    if shape == "annulus":
        inside &= rad > r + tol
    kind = np.zeros(rad.shape, dtype=np.int8)
    kind[inside] = INTERIOR
    nb = np.zeros_like(inside)
    for di, dj in _NEIGHBOURS:
        nb |= np.roll(np.roll(inside, di, axis=0), dj, axis=1)
    bnd = nb & ~inside
    kind[bnd & (rad >= R - tol)] = OUTER
    kind[bnd & (rad < R - tol)] = INNER
    dom = GridDomain(shape, float(R), float(r), mesh_cells, h, kind)
    _check_domain(dom)
    return dom


def _check_domain(dom):
    if dom.n_interior == 0:
        raise ConstructionError("domain has no interior vertices")
    if not np.any(dom.kind == OUTER):
        raise ConstructionError("domain has no outer boundary")
    if dom.shape == "annulus" and not np.any(dom.kind == INNER):
        raise ConstructionError("annulus has no inner boundary vertices")
    reach = flood(dom.kind == INTERIOR, dom.kind == OUTER)
    if not reach[dom.kind == INTERIOR].all():
        raise ConstructionError("some interior vertex has no path to the outer boundary")


def flood(passable, seeds):
    """Points of ``passable`` 4-connected to ``seeds`` (seeds need not be passable).

    Implemented with connected-component labelling of passable | seeds.
    """
    from scipy import ndimage

    mask = passable | seeds
    lab, _ = ndimage.label(mask)
    hit = np.unique(lab[seeds & mask])
    hit = hit[hit > 0]
    return np.isin(lab, hit) & mask


def _laplacian(free, index):
    """Laplacian on the vertices of mask ``free`` numbered by ``index``."""
    n = int(free.sum())
    rows = [np.arange(n)]
    cols = [np.arange(n)]
    vals = [np.full(n, 4.0)]
    src = index[free]
    for di, dj in _NEIGHBOURS:
        nb_free = np.roll(np.roll(free, -di, axis=0), -dj, axis=1)
        nb_index = np.roll(np.roll(index, -di, axis=0), -dj, axis=1)
        sel = free & nb_free
        rows.append(index[sel])
        cols.append(nb_index[sel])
        vals.append(np.full(int(sel.sum()), -1.0))
    del src
    return sparse.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(n, n))


def _factor(mat):
    try:
        return splu(mat.tocsc(), permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as exc:  # singular or out of memory
        raise SolverError(f"sparse factorization failed: {exc}") from exc


def _check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise SolverError(f"{what} produced non-finite values")
    return x


# ---------------------------------------------------------------------------
# harmonic functions and energies


def harmonic_on_mask(free, fixed_values, factor=None, index=None, guess=None):
    """Discrete harmonic function on the points of ``free`` with Dirichlet data.

    ``fixed_values`` is a window array giving the value at every non-free
    point that neighbours a free point (NaN is not allowed there).  Returns
    (window array of values, with NaN outside free and the data, energy),
    where energy sums (f(x) - f(y))^2 over edges with a free endpoint.

    Problems larger than ``DIRECT_LIMIT`` are solved by conjugate gradients
    started from ``guess`` (a window array, optional) instead of sparse LU.
    """
    if index is None:
        index = np.full(free.shape, -1, dtype=np.int64)
        index[free] = np.arange(int(free.sum()))
    n = int(free.sum())
    if n == 0:
        raise PreconditionError("no free vertices")
    rhs = np.zeros(n)
    for di, dj in _NEIGHBOURS:
        nb_free = np.roll(np.roll(free, -di, axis=0), -dj, axis=1)
        nb_val = np.roll(np.roll(fixed_values, -di, axis=0), -dj, axis=1)
        sel = free & ~nb_free
        vals = nb_val[sel]
        if np.any(~np.isfinite(vals)):
            raise PreconditionError("a free vertex neighbours a point without boundary data")
        np.add.at(rhs, index[sel], vals)
    if factor is None and n > DIRECT_LIMIT:
        x0 = None
        if guess is not None:
            x0 = np.empty(n)
            x0[index[free]] = guess[free]
        sol, info = cg(_laplacian(free, index).tocsr(), rhs, x0=x0, rtol=CG_RTOL, maxiter=20 * int(math.sqrt(n)))
        if info != 0:
            raise SolverError(f"conjugate gradients did not converge (info={info})")
    else:
        if factor is None:
            factor = _factor(_laplacian(free, index))
        sol = factor.solve(rhs)
    sol = _check_finite(sol, "Dirichlet solve")
    out = np.where(free, 0.0, fixed_values).astype(float)
    out[free] = sol[index[free]]
    return out, dirichlet_energy(out, free)


def dirichlet_energy(values, free):
    """Sum of squared differences over lattice edges with at least one end in ``free``."""
    total = 0.0
    for di, dj in ((1, 0), (0, 1)):
        a = values[: values.shape[0] - di, : values.shape[1] - dj]
        b = values[di:, dj:]
        fa = free[: free.shape[0] - di, : free.shape[1] - dj]
        fb = free[di:, dj:]
        sel = (fa | fb) & np.isfinite(a) & np.isfinite(b)
        total += float(np.sum((a[sel] - b[sel]) ** 2))
    return total


def solve_dirichlet(domain, boundary_data):
    """Harmonic extension of per-boundary-vertex data and its Dirichlet energy.

    Returns (interior values in interior order, energy).
    """
    data = np.asarray(boundary_data, dtype=float)
    if data.shape != (domain.n_boundary,):
        raise PreconditionError("boundary data must have one value per boundary vertex")
    if not np.all(np.isfinite(data)):
        raise PreconditionError("boundary data must be finite")
    fixed = np.full(domain.kind.shape, np.nan)
    bi = domain.boundary_ij
    fixed[bi[:, 0], bi[:, 1]] = data
    free = domain.kind == INTERIOR
    out, energy = harmonic_on_mask(free, fixed, factor=domain.factor(), index=domain.interior_index)
    ii = domain.interior_ij
    return out[ii[:, 0], ii[:, 1]], energy


def boundary_function(domain, v):
    """u_v on the boundary: 0 on the outer component, v on the inner one."""
    return np.where(domain.boundary_kind == INNER, float(v), 0.0)


def green_column(domain, k):
    """Column k of the inverse Laplacian (discrete Green function with pole k)."""
    e = np.zeros(domain.n_interior)
    e[k] = 1.0
    return _check_finite(domain.factor().solve(e), "Green solve")


# ---------------------------------------------------------------------------
# field sampling


@dataclass
class FieldSample:
    """One discrete GFF realization on a domain.

    ``values`` are indexed like the domain interior; ``boundary_values`` like
    its boundary.  ``edge_refinement_seed`` feeds the metric-graph edge
    decisions made during interface extraction.
    """

    domain: GridDomain
    values: np.ndarray
    boundary_values: np.ndarray
    edge_refinement_seed: object
    v: float = 0.0

    def window(self):
        """Field values on the full lattice window (NaN outside the domain)."""
        out = np.full(self.domain.kind.shape, np.nan)
        ii = self.domain.interior_ij
        out[ii[:, 0], ii[:, 1]] = self.values
        bi = self.domain.boundary_ij
        out[bi[:, 0], bi[:, 1]] = self.boundary_values
        return out


def _incidence(free, index):
    """Edge-vertex incidence matrix B with B^T B the Laplacian on ``free``.

    Edges with one end outside ``free`` keep a single +1 entry.
    """
    rows, cols, vals = [], [], []
    e = 0
    for di, dj in ((1, 0), (0, 1)):
        fa = free[: free.shape[0] - di, : free.shape[1] - dj]
        fb = free[di:, dj:]
        ia = index[: free.shape[0] - di, : free.shape[1] - dj]
        ib = index[di:, dj:]
        sel = fa | fb
        na = int(sel.sum())
        eids = e + np.arange(na)
        sa = fa[sel]
        sb = fb[sel]
        rows += [eids[sa], eids[sb]]
        cols += [ia[sel][sa], ib[sel][sb]]
        vals += [np.ones(int(sa.sum())), -np.ones(int(sb.sum()))]
        e += na
    return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(e, int(free.sum())))


def sample_zero_boundary(free, rng, factor=None, index=None, incidence=None):
    """Zero-boundary discrete GFF on the points of ``free`` (window array, NaN elsewhere).

    Uses x = Lap^-1 B^T xi with i.i.d. standard normal edge noise xi, whose
    covariance is Lap^-1 B^T B Lap^-1 = Lap^-1.
    """
    if index is None:
        index = np.full(free.shape, -1, dtype=np.int64)
        index[free] = np.arange(int(free.sum()))
    if incidence is None:
        incidence = _incidence(free, index)
    if factor is None:
        factor = _factor(_laplacian(free, index))
    xi = rng.standard_normal(incidence.shape[0])
    x = _check_finite(factor.solve(incidence.T @ xi), "GFF solve")
    out = np.full(free.shape, np.nan)
    out[free] = x[index[free]]
    return out


def seed_children(seed, n):
    """``n`` child seed sequences of ``seed``, independent of any earlier spawning."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    return [np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (k,)) for k in range(n)]


def sample_dgff(domain, v, seed):
    """Discrete GFF with boundary values u_v (0 outer, v inner).

    ``seed`` is an int or ``numpy.random.SeedSequence``; the first child
    stream drives the field and the second is kept for edge refinement.
    """
    field_ss, edge_ss = seed_children(seed, 2)
    rng = np.random.Generator(np.random.PCG64(field_ss))
    if "incidence" not in domain._cache:
        domain._cache["incidence"] = _incidence(domain.kind == INTERIOR, domain.interior_index)
    win = sample_zero_boundary(domain.kind == INTERIOR, rng, domain.factor(), domain.interior_index,
                               domain._cache["incidence"])
    ii = domain.interior_ij
    values = win[ii[:, 0], ii[:, 1]]
    bvals = boundary_function(domain, v)
    if v != 0:
        mean, _ = solve_dirichlet(domain, bvals)
        values = values + mean
    return FieldSample(domain, values, bvals, edge_ss, float(v))
