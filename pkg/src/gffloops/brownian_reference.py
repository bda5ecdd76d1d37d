"""Reference samples of the Brownian functionals behind the loop laws.

Two independent routes are provided.  The exact samplers draw from the
factorized closed-form laws by numerical inversion of distribution
functions; the walk oracle reads the same functionals off discretized
Brownian paths.  Everything is in field units (barrier at +-2 lambda for the
CLE4 loop); :func:`sample_cluster_quadruple` defaults to the +-pi
convention, where times are 2 pi times larger.

Random streams are derived counter-style from a master seed with
``SeedSequence(seed, spawn_key=(i,))`` so that chunk ``i`` of a run, or
replica ``i`` of an experiment, can be regenerated on its own.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from . import closed_form_laws as cfl
from . import walk
from .closed_form_laws import GAP, LOWER, UPPER, LawParams
from .errors import NumericError, PreconditionError

PI_UNITS = 2.0 * math.pi
ORACLE_CHUNK = 4096
# nodes of the per-sample conditional inversion grid
COND_NODES = 512
BRIDGE_NODES = 4096


def _as_seed_sequence(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


def child_seed(seed, index):
    """Seed sequence for replica or chunk ``index`` of master ``seed``."""
    ss = _as_seed_sequence(seed)
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (int(index),))


def make_rng(seed, index=None):
    """Generator for ``seed`` (an int or SeedSequence), or for its child ``index``."""
    ss = _as_seed_sequence(seed) if index is None else child_seed(seed, index)
    return np.random.Generator(np.random.PCG64(ss))


@dataclass
class FunctionalSample:
    """A batch of draws of (tau, T [, tau_bar, T_bar]) with the exit value X.

    ``X`` holds the value of the path at time T (-a, b, or v for a censored
    bridge) and NaN when unknown.  For bridges ``censored`` marks the atom
    T = L; for unconditioned oracle paths it marks truncation at ``t_max``.
    In both cases tau = T = the censoring time.
    """

    tau: np.ndarray
    T: np.ndarray
    X: np.ndarray
    censored: np.ndarray
    tau_bar: np.ndarray = None
    T_bar: np.ndarray = None
    censored_bar: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return int(self.T.size)

    def validate(self, atol=1e-9):
        """Check the ordering invariants; raises PreconditionError on failure."""
        tau, T = self.tau, self.T
        if np.any(tau < -atol) or np.any(tau > T + atol):
            raise PreconditionError("expected 0 <= tau <= T")
        if np.any(self.censored & (np.abs(tau - T) > atol)):
            raise PreconditionError("censored draws must have tau = T")
        if self.T_bar is not None:
            # a censored second leg carries the censoring time in both fields
            ok = ~self.censored & ~self.censored_bar
            if np.any(self.T_bar[ok] < T[ok] - atol):
                raise PreconditionError("expected T <= T_bar")
            gap = self.T_bar[ok] - T[ok]
            tb = self.tau_bar[ok]
            if np.any(tb < -atol) or np.any(tb > gap + atol):
                raise PreconditionError("expected 0 <= tau_bar <= T_bar - T")
        return True

    def side(self, a, b=None):
        """Exit side as -1 / +1 / 0 (censored or unknown)."""
        s = np.zeros(self.T.size, dtype=int)
        s[np.isclose(self.X, -a) & ~self.censored] = LOWER
        if b is not None:
            s[np.isclose(self.X, b) & ~self.censored] = UPPER
        return s

    def scaled(self, factor):
        """Copy with all times multiplied by ``factor`` (e.g. :data:`PI_UNITS`)."""
        mul = lambda x: None if x is None else x * factor
        return FunctionalSample(mul(self.tau), mul(self.T), self.X.copy(), self.censored.copy(),
                                mul(self.tau_bar), mul(self.T_bar),
                                None if self.censored_bar is None else self.censored_bar.copy(),
                                dict(self.meta, time_scale=self.meta.get("time_scale", 1.0) * factor))

    def concat(self, other):
        cat = lambda x, y: None if x is None else np.concatenate([x, y])
        return FunctionalSample(cat(self.tau, other.tau), cat(self.T, other.T), cat(self.X, other.X),
                                cat(self.censored, other.censored), cat(self.tau_bar, other.tau_bar),
                                cat(self.T_bar, other.T_bar),
                                cat(self.censored_bar, other.censored_bar), dict(self.meta))


def censor_at(sample, t_max):
    """Apply the walk oracle's truncation rule at ``t_max`` to an exact sample.

    A draw with T > t_max becomes censored with tau = T = t_max; a second
    leg with T_bar > t_max gets tau_bar = T_bar = t_max.  This makes exact
    and truncated oracle samples comparable draw for draw in law.
    """
    cut = sample.T > t_max
    out = FunctionalSample(np.where(cut, t_max, sample.tau), np.minimum(sample.T, t_max),
                           np.where(cut, np.nan, sample.X), sample.censored | cut,
                           meta=dict(sample.meta, t_max=t_max))
    if sample.T_bar is not None:
        cut_bar = cut | sample.censored_bar | (sample.T_bar > t_max)
        out.T_bar = np.where(cut_bar, t_max, sample.T_bar)
        out.tau_bar = np.where(cut_bar, t_max, sample.tau_bar)
        out.censored_bar = cut_bar
    return out


@dataclass(frozen=True)
class OracleConfig:
    """Discretization of the random-walk oracle.

    ``barrier`` is ``"one_sided"`` (level -a), ``"two_sided"`` (-a and b) or
    ``"cluster"`` (two-sided exit followed by the return leg to 0).
    ``bridge`` is None or a pair (v, L) with L a multiple of dt.
    """

    dt: float = 1e-4
    barrier: str = "two_sided"
    bridge: tuple = None
    t_max: float = 64.0

    def __post_init__(self):
        if not self.dt > 0:
            raise PreconditionError("dt must be positive")
        if self.barrier not in ("one_sided", "two_sided", "cluster"):
            raise PreconditionError(f"unknown barrier {self.barrier!r}")
        if self.bridge is not None:
            v, L = self.bridge
            if not L > 0:
                raise PreconditionError("bridge length must be positive")
            steps = L / self.dt
            if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
                raise PreconditionError("bridge length must be a multiple of dt")
        elif not self.t_max > 0:
            raise PreconditionError("t_max must be positive")

    @property
    def mode(self):
        return {"one_sided": walk.MODE_FPS, "two_sided": walk.MODE_TVS,
                "cluster": walk.MODE_CLUSTER}[self.barrier]


# ---------------------------------------------------------------------------
# inverse distribution functions


class TabulatedLaw:
    """Inverse of a continuous distribution function on (0, inf).

    ``cdf`` is vectorized and increases from 0 to ``mass``.  The table maps
    z = log F - log(mass - F) to log t with a monotone cubic, which keeps
    relative accuracy in both tails.  The grid is doubled until the
    round trip error in CDF space is below ``tol`` (relative to mass).
    """

    def __init__(self, cdf, mass, scale=1.0, tol=1e-8, n=512, max_n=1 << 15,
                 tail_lo=1e-14, tail_hi=1e-12):
        if not mass > 0:
            raise NumericError("distribution has no mass to invert")
        self.cdf = cdf
        self.mass = float(mass)
        t_lo = scale
        while cdf(t_lo) / mass > tail_lo:
            t_lo *= 0.5
            if t_lo < 1e-300:
                raise NumericError("could not bracket the lower tail")
        t_hi = scale
        while 1.0 - cdf(t_hi) / mass > tail_hi:
            t_hi *= 2.0
            if t_hi > 1e300:
                raise NumericError("could not bracket the upper tail")
        self.t_lo, self.t_hi = t_lo, t_hi
        while True:
            lt = np.linspace(math.log(t_lo), math.log(t_hi), n)
            self._build(lt)
            mid = 0.5 * (lt[1:] + lt[:-1])
            f_mid = cdf(np.exp(mid))
            keep = (f_mid > 0) & (f_mid < mass)
            back = self._invert_fraction(f_mid[keep] / mass)
            err = np.max(np.abs(cdf(back) - f_mid[keep])) / mass if keep.any() else 0.0
            if err <= tol:
                self.max_error = float(err)
                return
            if n >= max_n:
                raise NumericError(f"inverse-CDF table did not reach tolerance (error {err:.2e})")
            n *= 2

    def _build(self, lt):
        f = self.cdf(np.exp(lt)) / self.mass
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.log(f) - np.log1p(-f)
        good = np.isfinite(z)
        z, lt = z[good], lt[good]
        # drop plateaus from rounding so the table is strictly increasing
        inc = np.concatenate([[True], np.diff(z) > 0])
        z, lt = z[inc], lt[inc]
        if z.size < 4:
            raise NumericError("inverse-CDF table degenerate")
        self._interp = PchipInterpolator(z, lt, extrapolate=False)
        self._zmin, self._zmax = z[0], z[-1]

    def _invert_fraction(self, u):
        u = np.asarray(u, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.log(u) - np.log1p(-u)
        z = np.clip(z, self._zmin, self._zmax)
        return np.exp(self._interp(z))

    def sample(self, rng, n):
        return self._invert_fraction(rng.random(n))

    def quantile(self, u):
        """Quantile at fraction ``u`` of the total mass."""
        return self._invert_fraction(u)


def _choose(rng, probs, n):
    probs = np.asarray(probs, dtype=float)
    cum = np.cumsum(probs)
    if abs(cum[-1] - 1.0) > 1e-6:
        raise NumericError(f"category probabilities sum to {cum[-1]!r}")
    return np.minimum(np.searchsorted(cum / cum[-1], rng.random(n), side="right"), probs.size - 1)


_TABLES = {}


def _table(key, cdf, mass, scale):
    if key not in _TABLES:
        _TABLES[key] = TabulatedLaw(cdf, mass, scale=scale)
    return _TABLES[key]


def gap_law():
    """Table for the Bessel-3 hitting time of 2 lambda."""
    return _table(("beta", GAP), lambda t: cfl.exit_cdf("beta", t, x=GAP), 1.0, GAP ** 2)


def _tau_law(kind, a, b=None, side=None):
    mass = cfl.tau_mass(kind, a, b, side)
    if mass <= 0:
        return None, 0.0
    key = ("tau", kind, a, b, side)
    scale = max(a if b is None else min(a, b), 0.1) ** 2
    return _table(key, lambda t: cfl.tau_cdf(kind, t, a, b, side), mass, scale), mass


def _atom_law(kind, a, b=None, side=None):
    mass = cfl.atom_mass(kind, a, b, side)
    if mass <= 0:
        return None, 0.0
    key = ("atom", kind, a, b, side)
    depth = a if kind == "fps" or side == LOWER else b
    return _table(key, lambda t: cfl.atom_exit_cdf(kind, t, a, b, side), mass, depth ** 2), mass


# ---------------------------------------------------------------------------
# exact samplers


def _pair_from_factorization(rng, n, kind, a, b=None, side=None):
    """(tau, T) on one exit side, normalized to that side's probability."""
    tau_tab, m_tau = _tau_law(kind, a, b, side)
    atom_tab, m_atom = _atom_law(kind, a, b, side)
    total = m_atom + m_tau
    which = _choose(rng, [m_atom / total, m_tau / total], n) if m_atom > 0 else np.ones(n, dtype=int)
    tau = np.zeros(n)
    T = np.empty(n)
    at = which == 0
    if at.any():
        T[at] = atom_tab.sample(rng, int(at.sum()))
    ac = ~at
    if ac.any():
        k = int(ac.sum())
        tau[ac] = tau_tab.sample(rng, k)
        T[ac] = tau[ac] + gap_law().sample(rng, k)
    return tau, T


def sample_fps_pair(a, seed, n=1):
    """Exact draws of (tau_{-a}, T_{-a}).

    tau is the last visit to -a + 2 lambda before T.  When a < 2 lambda the
    path may reach -a without visiting that level, which gives tau = 0.
    """
    if not a > 0:
        raise PreconditionError("a must be positive")
    tau, T = _pair_from_factorization(make_rng(seed), n, "fps", a)
    return FunctionalSample(tau, T, np.full(n, -float(a)), np.zeros(n, dtype=bool),
                            meta={"law": "fps", "a": a})


def sample_tvs_triple(a, b, seed, n=1):
    """Exact draws of (tau_{-a,b}, T_{-a,b}, B_T)."""
    LawParams(a, b)
    rng = make_rng(seed)
    sides = np.where(_choose(rng, [b / (a + b), a / (a + b)], n) == 0, LOWER, UPPER)
    tau = np.empty(n)
    T = np.empty(n)
    for s in (LOWER, UPPER):
        idx = np.flatnonzero(sides == s)
        if idx.size:
            tau[idx], T[idx] = _pair_from_factorization(rng, idx.size, "tvs", a, b, s)
    X = np.where(sides == LOWER, -float(a), float(b))
    return FunctionalSample(tau, T, X, np.zeros(n, dtype=bool), meta={"law": "tvs", "a": a, "b": b})


def _cheb_nodes(m):
    theta = (np.arange(m) + 0.5) / m
    return theta, 0.5 * (1.0 - np.cos(np.pi * theta)), 0.5 * np.pi * np.sin(np.pi * theta) / m


def _invert_rows(weights, x_edges, u):
    """Row-wise inversion of cumulative weights; returns positions in x_edges."""
    cum = np.concatenate([np.zeros((weights.shape[0], 1)), np.cumsum(weights, axis=1)], axis=1)
    target = u * cum[:, -1]
    out = np.empty(weights.shape[0])
    for i in range(weights.shape[0]):
        out[i] = np.interp(target[i], cum[i], x_edges)
    return out


def _conditional_tau(rng, kind, T, a, b=None, side=None, chunk=512):
    """Draw tau given (T, side) from tau_density(t1) beta(T - t1), plus the atom."""
    n = T.size
    tau = np.zeros(n)
    if n == 0:
        return tau
    theta, frac, w = _cheb_nodes(COND_NODES)
    edges = 0.5 * (1.0 - np.cos(np.pi * np.arange(COND_NODES + 1) / COND_NODES))
    has_atom = cfl.atom_mass(kind, a, b, side) > 0
    for lo in range(0, n, chunk):
        t2 = T[lo:lo + chunk, None]
        t1 = t2 * frac[None, :]
        dens = (np.asarray(cfl.tau_density(kind, t1, a, b, side))
                * np.asarray(cfl.exit_density("beta", t2 - t1, x=GAP)))
        weights = dens * t2 * w[None, :]
        ac_mass = weights.sum(axis=1)
        if has_atom:
            atom = np.asarray(cfl.atom_exit_density(kind, t2[:, 0], a, b, side))
            p_atom = atom / (atom + ac_mass)
        else:
            p_atom = np.zeros(t2.shape[0])
        pos = _invert_rows(weights, edges, rng.random(t2.shape[0]))
        draw = t2[:, 0] * pos
        draw[rng.random(t2.shape[0]) < p_atom] = 0.0
        tau[lo:lo + chunk] = draw
    return tau


class BridgeHittingLaw:
    """Tabulated law of (T_hat, side) for a bridge of length L ending at v.

    Exit densities are tabulated on a Chebyshev grid of (0, L); the mass not
    accounted for by the exit sides is the censored atom T_hat = L.
    """

    def __init__(self, kind, a, b, v, L, nodes=BRIDGE_NODES):
        self.kind, self.a, self.b, self.v, self.L = kind, a, b, float(v), float(L)
        theta, frac, w = _cheb_nodes(nodes)
        t = L * frac
        self.edges = L * 0.5 * (1.0 - np.cos(np.pi * np.arange(nodes + 1) / nodes))
        self.sides = (LOWER,) if kind == "fps" else (LOWER, UPPER)
        self.weights = {}
        for s in self.sides:
            if kind == "fps":
                dens = cfl.bridge_hitting_density("fps", t, a=a, v=v, L=L)
            else:
                dens = cfl.bridge_hitting_density("tvs", t, a=a, b=b, side=s, v=v, L=L)
            self.weights[s] = np.asarray(dens) * L * w
        self.masses = {s: float(self.weights[s].sum()) for s in self.sides}
        self.censored_mass = max(0.0, 1.0 - sum(self.masses.values()))

    def sample(self, rng, n):
        probs = [self.masses[s] for s in self.sides] + [self.censored_mass]
        total = sum(probs)
        which = _choose(rng, np.array(probs) / total, n)
        T = np.full(n, self.L)
        side = np.zeros(n, dtype=int)
        for j, s in enumerate(self.sides):
            idx = np.flatnonzero(which == j)
            if idx.size:
                cum = np.concatenate([[0.0], np.cumsum(self.weights[s])])
                T[idx] = np.interp(rng.random(idx.size) * cum[-1], cum, self.edges)
                side[idx] = s
        return T, side


def exact_censoring_probability(kind, a, b, v, L):
    """P(no exit before L) for the bridge, from the killed kernel."""
    if kind == "fps":
        if v <= -a:
            return 0.0
        return cfl.heat_kernel("halfline", L, 0.0, v, a=a) / cfl.gaussian(L, v)
    if v <= -a or v >= b:
        return 0.0
    return cfl.heat_kernel("interval", L, 0.0, v, a=a, b=b) / cfl.gaussian(L, v)


def sample_bridge_triple(a, b, v, L, seed, n=1, kind="tvs"):
    """Exact draws of (tau_hat, T_hat, B_hat at T_hat) for a bridge 0 -> v on [0, L].

    ``kind="fps"`` ignores ``b`` and uses the one-sided barrier -a.  The
    atom T_hat = L is reported through ``censored`` with tau = T = L, X = v.
    """
    LawParams(a, None if kind == "fps" else b, v, L)
    rng = make_rng(seed)
    law = BridgeHittingLaw(kind, a, b, v, L)
    T, side = law.sample(rng, n)
    tau = np.full(n, float(L))
    for s in law.sides:
        idx = np.flatnonzero(side == s)
        if idx.size:
            tau[idx] = _conditional_tau(rng, kind, T[idx], a, b, s)
    censored = side == 0
    X = np.where(side == LOWER, -float(a), np.where(side == UPPER, float(b) if b else np.nan, v))
    return FunctionalSample(tau, T, X.astype(float), censored,
                            meta={"law": f"{kind}_bridge", "a": a, "b": b, "v": v, "L": L,
                                  "censoring_probability": law.censored_mass})


def sample_cluster_quadruple(seed, n=1, units="pi"):
    """Exact draws of (tau, T, tau_bar, T_bar) for the loop-soup cluster.

    T is the exit time of (-2 lambda, 2 lambda), tau the last zero before
    it, T_bar the first return to 0 after T and tau_bar the time from T to
    the last visit of B_T before T_bar.  The return leg is a mirrored first
    passage at depth 2 lambda, independent of the first leg.
    """
    first = sample_tvs_triple(GAP, GAP, child_seed(seed, 0), n)
    leg = sample_fps_pair(GAP, child_seed(seed, 1), n)
    out = FunctionalSample(first.tau, first.T, first.X, first.censored, leg.tau,
                           first.T + leg.T, np.zeros(n, dtype=bool),
                           meta={"law": "cluster", "time_scale": 1.0})
    return out.scaled(PI_UNITS) if units == "pi" else out


def _fps_bridge_rows(rng, a, v, L, chunk=256):
    """One FPS bridge draw per row with row-specific endpoint and length."""
    n = v.size
    T = L.copy()
    tau = L.copy()
    hit = np.zeros(n, dtype=bool)
    theta, frac, w = _cheb_nodes(COND_NODES)
    edges = 0.5 * (1.0 - np.cos(np.pi * np.arange(COND_NODES + 1) / COND_NODES))
    for lo in range(0, n, chunk):
        sl = slice(lo, lo + chunk)
        Lr = L[sl, None]
        t = Lr * frac[None, :]
        dens = (np.asarray(cfl.exit_density("q_a", t, a=a))
                * cfl.bridge_factor(t, -a, v[sl, None], Lr))
        weights = dens * Lr * w[None, :]
        p_hit = np.clip(weights.sum(axis=1), 0.0, 1.0)
        # with v <= -a the hit is certain; the quadrature sum is renormalized
        p_hit[v[sl] <= -a] = 1.0
        m = p_hit.size
        h = rng.random(m) < p_hit
        pos = _invert_rows(weights, edges, rng.random(m))
        T[sl] = np.where(h, Lr[:, 0] * pos, Lr[:, 0])
        hit[sl] = h
    idx = np.flatnonzero(hit)
    tau[idx] = _conditional_tau(rng, "fps", T[idx], a)
    return tau, T, hit


def sample_cluster_bridge(v, L, seed, n=1):
    """Bridge analogue of :func:`sample_cluster_quadruple`, in field units.

    The exit of (-2 lambda, 2 lambda) is drawn from the bridge law; given
    B_T = c the rest of the path is a bridge from c to v over L - T, and its
    first return to 0 is a mirrored FPS bridge at depth 2 lambda.
    """
    first = sample_bridge_triple(GAP, GAP, v, L, child_seed(seed, 0), n, kind="tvs")
    rng = make_rng(seed, 1)
    tau_bar = np.full(n, float(L))
    T_bar = np.full(n, float(L))
    cens_bar = np.ones(n, dtype=bool)
    idx = np.flatnonzero(~first.censored)
    if idx.size:
        c = first.X[idx]
        sgn = np.sign(c)
        v_leg = sgn * (v - c)
        L_leg = L - first.T[idx]
        tb, Tl, hit = _fps_bridge_rows(rng, GAP, v_leg, L_leg)
        tau_bar[idx] = np.where(hit, tb, L)
        T_bar[idx] = np.where(hit, first.T[idx] + Tl, L)
        cens_bar[idx] = ~hit
    return FunctionalSample(first.tau, first.T, first.X, first.censored, tau_bar, T_bar, cens_bar,
                            meta={"law": "cluster_bridge", "v": v, "L": L})


# ---------------------------------------------------------------------------
# walk oracle


def sample_walk_oracle(params, cfg, seed, n, backend=None):
    """Functionals read off ``n`` discretized paths (see :class:`OracleConfig`).

    Paths are generated in chunks of :data:`ORACLE_CHUNK`; chunk ``k`` uses
    the stream ``child_seed(seed, k)``, so results do not depend on how the
    work is split.
    """
    if not isinstance(params, LawParams):
        raise PreconditionError("params must be a LawParams")
    a = params.a
    if cfg.barrier == "one_sided":
        b = math.inf
    elif cfg.barrier == "cluster":
        b = params.b if params.b is not None else a
    else:
        if params.b is None:
            raise PreconditionError("two-sided barrier needs b")
        b = params.b
    bridge = cfg.bridge is not None
    v, L = cfg.bridge if bridge else (0.0, 0.0)
    parts = []
    for k, lo in enumerate(range(0, n, ORACLE_CHUNK)):
        m = min(ORACLE_CHUNK, n - lo)
        bg = np.random.PCG64(child_seed(seed, k))
        parts.append(walk.walk_batch(bg, m, cfg.dt, cfg.mode, a, b if math.isfinite(b) else 0.0,
                                     GAP, cfg.t_max, bridge, v, L, backend=backend))
    res = {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}
    X = np.where(res["X"] < 0, -a, np.where(res["X"] > 0, b, v if bridge else np.nan))
    sample = FunctionalSample(res["tau"], res["T"], X.astype(float), res["censored"],
                              meta={"law": "oracle", "barrier": cfg.barrier, "dt": cfg.dt,
                                    "bridge": cfg.bridge, "t_max": None if bridge else cfg.t_max})
    if cfg.barrier == "cluster":
        sample.tau_bar = res["tau_bar"]
        sample.T_bar = res["T_bar"]
        sample.censored_bar = res["censored_bar"]
    return sample
