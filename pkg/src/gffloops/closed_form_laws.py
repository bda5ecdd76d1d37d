"""Explicit densities for Brownian motion, Brownian bridge and Bessel-3 hitting times.

All quantities are in field units: a GFF with covariance normalized like
(2 pi)^-1 log, so that the height gap is 2*LAMBDA with LAMBDA = sqrt(pi/8),
and Brownian time plays the role of extremal distance.  Multiply times by
2 pi to move to the convention where the barrier sits at +-pi.

Every density accepts scalar or array time arguments and returns a value of
the same shape.  Series are truncated adaptively: the number of terms is
chosen from an explicit bound on the first omitted term, and exceeding the
term cap raises :class:`TruncationError` carrying the partial sum.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .errors import IntegrationError, PoleError, PreconditionError, TruncationError

LAMBDA = math.sqrt(math.pi / 8.0)
GAP = 2.0 * LAMBDA
LOWER = -1
UPPER = 1
SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class SeriesControl:
    """Truncation policy shared by the theta-type series.

    ``crossover_ratio`` selects the reflection (image) series when
    ``t <= crossover_ratio * width**2`` and the spectral series otherwise.
    """

    abs_tol: float = 1e-13
    max_terms: int = 64
    crossover_ratio: float = 0.35

    def __post_init__(self):
        if not self.abs_tol > 0:
            raise PreconditionError("abs_tol must be positive")
        if self.max_terms < 8:
            raise PreconditionError("max_terms must be at least 8")
        if not self.crossover_ratio > 0:
            raise PreconditionError("crossover_ratio must be positive")


DEFAULT_CONTROL = SeriesControl()


@dataclass(frozen=True)
class LawParams:
    """Barrier and bridge parameters of one family of Brownian functionals.

    ``b`` is None for one-sided (first passage) laws and ``v, L`` are only
    read by bridge laws.
    """

    a: float
    b: float = None
    v: float = 0.0
    L: float = None

    def __post_init__(self):
        if not self.a > 0:
            raise PreconditionError("a must be positive")
        if self.b is not None and not self.b > 0:
            raise PreconditionError("b must be positive")
        if self.L is not None and not self.L > 0:
            raise PreconditionError("L must be positive")

    @property
    def lam(self):
        return LAMBDA

    def tvs_levels_ok(self, tol=1e-9):
        """True when a + b is a positive multiple of 2 lambda."""
        if self.b is None:
            return False
        k = (self.a + self.b) / GAP
        return round(k) >= 1 and abs(k - round(k)) < tol


def _ctrl(ctrl):
    return DEFAULT_CONTROL if ctrl is None else ctrl


def _time_array(t):
    arr = np.asarray(t, dtype=float)
    if arr.size and not np.all(arr > 0):
        raise PreconditionError("time arguments must be strictly positive")
    return arr


def _out(values, like):
    if np.ndim(like) == 0:
        return float(values)
    return values


def gaussian(t, d):
    """Free heat kernel p(t, 0, d)."""
    return np.exp(-np.square(d) / (2.0 * t)) / np.sqrt(2.0 * np.pi * t)


def free_kernel_time_integral(t, d):
    """Closed form of int_0^t p(s, 0, d) ds."""
    t = np.asarray(t, dtype=float)
    d = np.abs(np.asarray(d, dtype=float))
    return (np.sqrt(2.0 * t / np.pi) * np.exp(-d * d / (2.0 * t))
            - d * special.erfc(d / np.sqrt(2.0 * t)))


def free_kernel_integral_difference(t, d1, d2):
    """int_0^t (p(s, 0, d1) - p(s, 0, d2)) ds without cancellation at large t."""
    t = np.asarray(t, dtype=float)
    d1 = abs(float(d1))
    d2 = abs(float(d2))
    e1 = d1 * d1 / (2.0 * t)
    e2 = d2 * d2 / (2.0 * t)
    gauss = np.sqrt(2.0 * t / np.pi) * np.exp(-e1) * (-np.expm1(e1 - e2))
    return (gauss - d1 * special.erfc(d1 / np.sqrt(2.0 * t))
            + d2 * special.erfc(d2 / np.sqrt(2.0 * t)))


def _side_value(a, b, side):
    if side == LOWER:
        return -a
    if side == UPPER:
        return b
    raise PreconditionError("side must be LOWER (-1) or UPPER (+1)")


def side_mass(a, b, side):
    """P(B exits (-a, b) through the given side), starting from 0."""
    _check_ab(a, b)
    return b / (a + b) if side == LOWER else a / (a + b)


def _check_ab(a, b=None):
    if not a > 0 or (b is not None and not b > 0):
        raise PreconditionError("barrier depths must be positive")


# ---------------------------------------------------------------------------
# heat kernels


def _n_reflection_terms(tmax, width, ctrl):
    # image k contributes at most 2 exp(-((2|k|-2) W)^2 / 2t) / sqrt(2 pi t)
    log_target = math.log(max(ctrl.abs_tol, 1e-300) * 0.1)
    need = math.sqrt(max(-2.0 * tmax * log_target, 0.0)) / (2.0 * width) + 2.0
    return int(math.ceil(need))


def _n_spectral_terms(tmin, width, ctrl, power=0):
    # term n is at most C n^power exp(-n^2 pi^2 t / 2 W^2)
    rate = math.pi ** 2 * tmin / (2.0 * width ** 2)
    log_target = math.log(max(ctrl.abs_tol, 1e-300) * 0.01 * width / (1.0 + 10.0 / width))
    n = 1
    while n <= 4 * ctrl.max_terms:
        if power * math.log(n) - rate * n * n < log_target:
            return n
        n += 1
    return n


def _interval_reflection(t, x, y, a, b, ctrl):
    width = a + b
    k_needed = _n_reflection_terms(float(np.max(t)), width, ctrl)
    k_used = min(k_needed, ctrl.max_terms)
    ks = np.arange(-k_used, k_used + 1, dtype=float)
    shape = np.broadcast(t, x, y).shape
    tt, xx, yy = (np.broadcast_to(v, shape)[..., None] for v in (t, x, y))
    shift = 2.0 * ks * width
    total = (gaussian(tt, yy - xx + shift) - gaussian(tt, yy + xx + 2.0 * a + shift)).sum(axis=-1)
    if k_needed > ctrl.max_terms:
        raise TruncationError("reflection series for the interval kernel hit the term cap", total)
    return total


def _interval_spectral(t, x, y, a, b, ctrl):
    width = a + b
    n_needed = _n_spectral_terms(float(np.min(t)), width, ctrl)
    n_used = min(n_needed, ctrl.max_terms)
    ns = np.arange(1, n_used + 1, dtype=float)
    shape = np.broadcast(t, x, y).shape
    tt, xx, yy = (np.broadcast_to(v, shape)[..., None] for v in (t, x, y))
    k = ns * np.pi / width
    terms = np.exp(-0.5 * k * k * tt) * np.sin(k * (xx + a)) * np.sin(k * (yy + a))
    total = (2.0 / width) * terms.sum(axis=-1)
    if n_needed > ctrl.max_terms:
        raise TruncationError("spectral series for the interval kernel hit the term cap", total)
    return total


def heat_kernel(kind, t, x, y, a=None, b=None, ctrl=None, method="auto"):
    """Transition density of Brownian motion, possibly killed at barriers.

    ``kind`` is ``"free"``, ``"halfline"`` (killed at -a) or ``"interval"``
    (killed at -a and b).  For the interval kernel ``method`` may force
    ``"reflection"`` or ``"spectral"``; ``"auto"`` switches at
    ``t = crossover_ratio * (a + b)**2``.
    """
    ctrl = _ctrl(ctrl)
    tt = _time_array(t)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    like = np.broadcast(tt, x, y)
    if kind == "free":
        val = gaussian(tt, y - x)
    elif kind == "halfline":
        _check_ab(a)
        if np.any(x < -a) or np.any(y < -a):
            raise PreconditionError("halfline kernel needs x, y >= -a")
        val = gaussian(tt, y - x) - gaussian(tt, y + x + 2.0 * a)
    elif kind == "interval":
        _check_ab(a, b)
        if np.any(x < -a) or np.any(x > b) or np.any(y < -a) or np.any(y > b):
            raise PreconditionError("interval kernel needs x, y in [-a, b]")
        if method == "reflection":
            val = _interval_reflection(tt, x, y, a, b, ctrl)
        elif method == "spectral":
            val = _interval_spectral(tt, x, y, a, b, ctrl)
        elif method == "auto":
            shape = like.shape
            tb, xb, yb = (np.broadcast_to(v, shape) for v in (tt, x, y))
            small = tb <= ctrl.crossover_ratio * (a + b) ** 2
            val = np.empty(shape)
            if np.any(small):
                val[small] = _interval_reflection(tb[small], xb[small], yb[small], a, b, ctrl)
            if np.any(~small):
                val[~small] = _interval_spectral(tb[~small], xb[~small], yb[~small], a, b, ctrl)
        else:
            raise PreconditionError(f"unknown method {method!r}")
        # Dirichlet condition holds exactly; tiny negative rounding is clipped
        val = np.maximum(val, 0.0)
    else:
        raise PreconditionError(f"unknown kernel kind {kind!r}")
    if like.ndim == 0:
        return float(val)
    return np.asarray(val, dtype=float)


def bridge_factor(t, c, v, L):
    """Radon-Nikodym weight p(L - t, c, v) / p(L, 0, v) of a bridge to v."""
    t = np.asarray(t, dtype=float)
    rest = L - t
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(rest > 0, gaussian(np.where(rest > 0, rest, 1.0), v - c), 0.0)
    return w / gaussian(L, v)


# ---------------------------------------------------------------------------
# exit densities


def _q_a(t, a):
    return a / np.sqrt(2.0 * np.pi * t ** 3) * np.exp(-a * a / (2.0 * t))


def _q_ab_reflection(t, a, b, side, ctrl):
    width = a + b
    c = a if side == LOWER else b
    k_needed = _n_reflection_terms(float(np.max(t)), width, ctrl)
    k_used = min(k_needed, ctrl.max_terms)
    ks = np.arange(-k_used, k_used + 1, dtype=float)
    tt = t[..., None]
    m = c + 2.0 * ks * width
    total = (m / np.sqrt(2.0 * np.pi * tt ** 3) * np.exp(-m * m / (2.0 * tt))).sum(axis=-1)
    if k_needed > ctrl.max_terms:
        raise TruncationError("reflection series for q_ab hit the term cap", total)
    return total


def _q_ab_spectral(t, a, b, side, ctrl):
    width = a + b
    n_needed = _n_spectral_terms(float(np.min(t)), width, ctrl, power=1)
    n_used = min(n_needed, ctrl.max_terms)
    ns = np.arange(1, n_used + 1, dtype=float)
    sgn = np.ones_like(ns) if side == LOWER else (-1.0) ** (ns + 1)
    coef = ns * np.sin(ns * np.pi * a / width) * sgn
    rate = ns ** 2 * np.pi ** 2 / (2.0 * width ** 2)
    total = (np.pi / width ** 2) * (coef * np.exp(-rate * t[..., None])).sum(axis=-1)
    if n_needed > ctrl.max_terms:
        raise TruncationError("spectral series for q_ab hit the term cap", total)
    return total


def _q_ab(t, a, b, side, ctrl):
    _check_ab(a, b)
    _side_value(a, b, side)
    small = t <= ctrl.crossover_ratio * (a + b) ** 2
    out = np.empty(t.shape)
    if np.any(small):
        out[small] = _q_ab_reflection(t[small], a, b, side, ctrl)
    if np.any(~small):
        out[~small] = _q_ab_spectral(t[~small], a, b, side, ctrl)
    return np.maximum(out, 0.0)


def _beta_small(t, x, ctrl):
    k_needed = _n_reflection_terms(float(np.max(t)), x, ctrl)
    k_used = min(k_needed, ctrl.max_terms)
    odd = (2.0 * np.arange(k_used + 1) + 1.0) ** 2
    tt = t[..., None]
    terms = (odd * x * x - tt) * np.exp(-odd * x * x / (2.0 * tt))
    total = math.sqrt(2.0) * x / np.sqrt(np.pi * t ** 5) * terms.sum(axis=-1)
    if k_needed > ctrl.max_terms:
        raise TruncationError("small-time series for beta hit the term cap", total)
    return total


def _beta_spectral(t, x, ctrl):
    n_needed = _n_spectral_terms(float(np.min(t)), x, ctrl, power=2)
    n_used = min(n_needed, ctrl.max_terms)
    ns = np.arange(1, n_used + 1, dtype=float)
    rate = ns ** 2 * np.pi ** 2 / (2.0 * x * x)
    coef = (-1.0) ** (ns + 1) * 2.0 * rate
    total = (coef * np.exp(-rate * t[..., None])).sum(axis=-1)
    if n_needed > ctrl.max_terms:
        raise TruncationError("spectral series for beta hit the term cap", total)
    return total


def _beta(t, x, ctrl, method="auto"):
    if not x > 0:
        raise PreconditionError("beta needs a positive level")
    if method == "small":
        return _beta_small(t, x, ctrl)
    if method == "spectral":
        return _beta_spectral(t, x, ctrl)
    # the Bessel-3 hitting law of x behaves like exit of an interval of width 2x
    small = t <= ctrl.crossover_ratio * (2.0 * x) ** 2
    out = np.empty(t.shape)
    if np.any(small):
        out[small] = _beta_small(t[small], x, ctrl)
    if np.any(~small):
        out[~small] = _beta_spectral(t[~small], x, ctrl)
    return np.maximum(out, 0.0)


def _qcheck0_scalar(t, ctrl):
    def integrand(s):
        s_arr = np.array([s])
        first = _q_ab(s_arr, GAP, GAP, LOWER, ctrl) + _q_ab(s_arr, GAP, GAP, UPPER, ctrl)
        return float(first[0] * _q_a(t - s, GAP))

    with np.errstate(all="ignore"):
        res = integrate.quad(integrand, 0.0, t, epsabs=1e-15, epsrel=1e-9, limit=200,
                             full_output=1)
    val, err = res[0], res[1]
    if len(res) > 3 and err > 1e-7 * max(abs(val), 1e-8):
        raise IntegrationError(f"quadrature for qcheck0 failed at t={t}: {res[3]}")
    return val


def exit_density(kind, t, a=None, b=None, side=None, x=None, ctrl=None, method="auto"):
    """Density of a first hitting time.

    kinds: ``"q_a"`` (level -a), ``"q_ab"`` (exit of (-a, b) through
    ``side``), ``"beta"`` (Bessel-3 from 0 hitting ``x``) and ``"qcheck0"``
    (first return to 0 after exiting (-2 lambda, 2 lambda)).
    """
    ctrl = _ctrl(ctrl)
    tt = _time_array(t)
    flat = np.atleast_1d(tt).astype(float).ravel()
    if kind == "q_a":
        _check_ab(a)
        val = _q_a(flat, a)
    elif kind == "q_ab":
        val = _q_ab(flat, a, b, side, ctrl)
    elif kind == "beta":
        val = _beta(flat, x, ctrl, method)
    elif kind == "qcheck0":
        val = np.array([_qcheck0_scalar(s, ctrl) for s in flat])
    else:
        raise PreconditionError(f"unknown exit density kind {kind!r}")
    val = val.reshape(np.shape(tt))
    return _out(val, tt)


def atom_exit_density(kind, t, a=None, b=None, side=None, ctrl=None):
    """Density in T of the event {tau = 0} (no visit to the recording level).

    For the first passage at -a this event has mass 1 - a/(2 lambda) when
    a < 2 lambda: the path reaches -a before -a + 2 lambda.  For two-sided
    exits the same happens on a side whose depth is below 2 lambda.
    """
    ctrl = _ctrl(ctrl)
    tt = _time_array(t)
    flat = np.atleast_1d(tt).astype(float).ravel()
    if kind == "fps":
        _check_ab(a)
        val = _q_ab(flat, a, GAP - a, LOWER, ctrl) if a < GAP else np.zeros_like(flat)
    elif kind == "tvs":
        _check_ab(a, b)
        _side_value(a, b, side)
        depth, other = (a, b) if side == LOWER else (b, a)
        if depth < GAP:
            val = _q_ab(flat, depth, GAP - depth, LOWER, ctrl)
        else:
            val = np.zeros_like(flat)
    else:
        raise PreconditionError(f"unknown atom kind {kind!r}")
    return _out(val.reshape(np.shape(tt)), tt)


def atom_mass(kind, a, b=None, side=None):
    """Total mass of the {tau = 0} event for the given functional."""
    if kind == "fps":
        _check_ab(a)
        return max(GAP - a, 0.0) / GAP
    if kind == "tvs":
        _check_ab(a, b)
        depth = a if side == LOWER else b
        _side_value(a, b, side)
        return max(GAP - depth, 0.0) / GAP
    raise PreconditionError(f"unknown atom kind {kind!r}")


def recording_level(kind, a, b=None, side=None):
    """Level whose last visit before T defines tau."""
    if kind == "fps":
        return -a + GAP
    return -a + GAP if side == LOWER else b - GAP


def tau_density(kind, t, a, b=None, side=None, ctrl=None):
    """Absolutely continuous part of the density of tau (jointly with the side)."""
    ctrl = _ctrl(ctrl)
    y = recording_level(kind, a, b, side)
    if kind == "fps":
        return heat_kernel("halfline", t, 0.0, y, a=a, ctrl=ctrl) / (4.0 * LAMBDA)
    if kind == "tvs":
        _tvs_pre(a, b)
        return heat_kernel("interval", t, 0.0, y, a=a, b=b, ctrl=ctrl) / (4.0 * LAMBDA)
    raise PreconditionError(f"unknown tau kind {kind!r}")


def tau_mass(kind, a, b=None, side=None):
    """Mass of the absolutely continuous part of tau: Green function / (4 lambda)."""
    y = recording_level(kind, a, b, side)
    if kind == "fps":
        _check_ab(a)
        green = 2.0 * min(a, y + a)
    else:
        _tvs_pre(a, b)
        lo, hi = min(0.0, y), max(0.0, y)
        green = 2.0 * (lo + a) * (b - hi) / (a + b)
    return green / (4.0 * LAMBDA)


def _tvs_pre(a, b):
    _check_ab(a, b)
    if a + b < GAP - 1e-12:
        raise PreconditionError("two-sided last-passage laws need a + b >= 2 lambda")


# ---------------------------------------------------------------------------
# joint densities


def _check_order(t1, t2, L=None):
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    if np.any(t1 <= 0) or np.any(t2 <= t1):
        raise PreconditionError("joint densities need 0 < t1 < t2")
    if L is not None and np.any(t2 >= L):
        raise PreconditionError("bridge joint densities need t2 < L")
    return t1, t2


def bridge_hitting_density(kind, t, a=None, b=None, side=None, v=0.0, L=1.0, ctrl=None):
    """Density of the hitting time of a bridge from 0 to v on [0, L], on {T < L}.

    kinds: ``"fps"`` (level -a), ``"tvs"`` (exit through ``side``) and
    ``"cluster"`` (first return to 0 after exiting (-2 lambda, 2 lambda)).
    """
    tt = _time_array(t)
    if np.any(tt >= L):
        raise PreconditionError("bridge hitting densities need t < L")
    if kind == "fps":
        val = exit_density("q_a", tt, a=a) * bridge_factor(tt, -a, v, L)
    elif kind == "tvs":
        c = _side_value(a, b, side)
        val = exit_density("q_ab", tt, a=a, b=b, side=side, ctrl=ctrl) * bridge_factor(tt, c, v, L)
    elif kind == "cluster":
        val = exit_density("qcheck0", tt, ctrl=ctrl) * bridge_factor(tt, 0.0, v, L)
    else:
        raise PreconditionError(f"unknown bridge kind {kind!r}")
    return _out(np.asarray(val), tt)


def joint_density(kind, t1, t2, a=None, b=None, side=None, v=0.0, L=None, ctrl=None):
    """Joint density of (tau, T) for the last-passage / hitting pairs.

    The two-sided kinds are the joint density together with the exit side:
    integrating over t1 and t2 gives the side probability times the mass of
    {tau > 0}.  ``cluster_bridge_T`` is one-dimensional and reads ``t2``.
    """
    ctrl = _ctrl(ctrl)
    if kind == "cluster_bridge_T":
        if L is None:
            raise PreconditionError("bridge kinds need L")
        return bridge_hitting_density("cluster", t2, v=v, L=L, ctrl=ctrl)
    bridge = kind.endswith("_bridge")
    if bridge and L is None:
        raise PreconditionError("bridge kinds need L")
    t1, t2 = _check_order(t1, t2, L if bridge else None)
    base = kind[:-7] if bridge else kind
    gap_law = np.asarray(exit_density("beta", t2 - t1, x=GAP, ctrl=ctrl))
    if base == "fps":
        val = np.asarray(tau_density("fps", t1, a, ctrl=ctrl)) * gap_law
        c = -a
    elif base == "tvs":
        val = np.asarray(tau_density("tvs", t1, a, b, side, ctrl=ctrl)) * gap_law
        c = _side_value(a, b, side)
    else:
        raise PreconditionError(f"unknown joint kind {kind!r}")
    if bridge:
        val = val * bridge_factor(t2, c, v, L)
    return _out(val, np.broadcast(t1, t2))


# ---------------------------------------------------------------------------
# Bessel-3 Laplace transform


def bessel3_laplace(x, nu):
    """E[exp(-nu T_x)] for the Bessel-3 hitting time of x from 0.

    For nu < 0 this is the analytic continuation x s / sin(x s) with
    s = sqrt(-2 nu), which has a pole at nu = -pi^2 / (2 x^2).
    """
    if not x > 0:
        raise PreconditionError("level must be positive")
    nu = float(nu)
    if nu > 0:
        z = x * math.sqrt(2.0 * nu)
        if z < 1e-6:
            return 1.0 - z * z / 6.0
        if z > 700:
            return 2.0 * z * math.exp(-z)
        return z / math.sinh(z)
    if nu == 0:
        return 1.0
    z = x * math.sqrt(-2.0 * nu)
    if z >= math.pi:
        raise PoleError("continued Laplace transform evaluated at or beyond its pole")
    if z < 1e-6:
        return 1.0 + z * z / 6.0
    return z / math.sin(z)


def bessel3_pole(x):
    """Exponential tail rate pi^2 / (2 x^2) of the Bessel-3 hitting time."""
    return math.pi ** 2 / (2.0 * x * x)


def interval_exit_rate(a, b):
    """Exponential tail rate pi^2 / (2 (a+b)^2) of the exit time of (-a, b)."""
    return math.pi ** 2 / (2.0 * (a + b) ** 2)


# ---------------------------------------------------------------------------
# distribution functions (termwise integrals of the series above)


def _erfc_sum(t, shifts, signs):
    tt = t[..., None]
    return (signs * special.erfc(np.abs(shifts) / np.sqrt(2.0 * tt))).sum(axis=-1)


def exit_cdf(kind, t, a=None, b=None, side=None, x=None, ctrl=None):
    """P(T <= t [, exit side]) for the ``q_a``, ``q_ab`` and ``beta`` laws."""
    ctrl = _ctrl(ctrl)
    tt = _time_array(t)
    flat = np.atleast_1d(tt).astype(float).ravel()
    out = np.empty(flat.shape)
    if kind == "q_a":
        _check_ab(a)
        out = special.erfc(a / np.sqrt(2.0 * flat))
    elif kind == "q_ab":
        _check_ab(a, b)
        width = a + b
        c = a if side == LOWER else b
        _side_value(a, b, side)
        small = flat <= ctrl.crossover_ratio * width ** 2
        if np.any(small):
            k = _n_reflection_terms(float(flat[small].max()), width, ctrl)
            ks = np.arange(-k, k + 1, dtype=float)
            m = c + 2.0 * ks * width
            out[small] = _erfc_sum(flat[small], m, np.sign(m))
        if np.any(~small):
            n = min(_n_spectral_terms(float(flat[~small].min()), width, ctrl), ctrl.max_terms)
            ns = np.arange(1, n + 1, dtype=float)
            sgn = np.ones_like(ns) if side == LOWER else (-1.0) ** (ns + 1)
            coef = 2.0 / (ns * np.pi) * np.sin(ns * np.pi * a / width) * sgn
            rate = ns ** 2 * np.pi ** 2 / (2.0 * width ** 2)
            tail = (coef * np.exp(-rate * flat[~small][:, None])).sum(axis=-1)
            out[~small] = side_mass(a, b, side) - tail
    elif kind == "beta":
        if not x > 0:
            raise PreconditionError("beta needs a positive level")
        small = flat <= ctrl.crossover_ratio * (2.0 * x) ** 2
        if np.any(small):
            ts = flat[small]
            k = _n_reflection_terms(float(ts.max()), x, ctrl)
            odd = (2.0 * np.arange(k + 1) + 1.0) ** 2
            out[small] = (2.0 * math.sqrt(2.0) * x / np.sqrt(np.pi * ts)
                          * np.exp(-odd * x * x / (2.0 * ts[:, None])).sum(axis=-1))
        if np.any(~small):
            n = min(_n_spectral_terms(float(flat[~small].min()), x, ctrl), ctrl.max_terms)
            ns = np.arange(1, n + 1, dtype=float)
            rate = ns ** 2 * np.pi ** 2 / (2.0 * x * x)
            surv = (2.0 * (-1.0) ** (ns + 1) * np.exp(-rate * flat[~small][:, None])).sum(axis=-1)
            out[~small] = 1.0 - surv
    else:
        raise PreconditionError(f"no closed-form CDF for {kind!r}")
    return _out(np.clip(out, 0.0, None).reshape(np.shape(tt)), tt)


def tau_cdf(kind, t, a, b=None, side=None, ctrl=None):
    """P(0 < tau <= t [, exit side]), the absolutely continuous part only."""
    ctrl = _ctrl(ctrl)
    tt = _time_array(t)
    flat = np.atleast_1d(tt).astype(float).ravel()
    y = recording_level(kind, a, b, side)
    if kind == "fps":
        _check_ab(a)
        out = free_kernel_integral_difference(flat, y, y + 2.0 * a)
    elif kind == "tvs":
        _tvs_pre(a, b)
        width = a + b
        out = np.empty(flat.shape)
        small = flat <= ctrl.crossover_ratio * width ** 2
        if np.any(small):
            ts = flat[small]
            k = _n_reflection_terms(float(ts.max()), width, ctrl) + 1
            shift = 2.0 * np.arange(-k, k + 1, dtype=float) * width
            first = free_kernel_time_integral(ts[:, None], y + shift)
            second = free_kernel_time_integral(ts[:, None], y + 2.0 * a + shift)
            out[small] = (first - second).sum(axis=-1)
        if np.any(~small):
            n = min(_n_spectral_terms(float(flat[~small].min()), width, ctrl), ctrl.max_terms)
            ns = np.arange(1, n + 1, dtype=float)
            kk = ns * np.pi / width
            coef = (2.0 / width) * np.sin(kk * a) * np.sin(kk * (y + a)) * 2.0 / (kk * kk)
            tail = (coef * np.exp(-0.5 * kk * kk * flat[~small][:, None])).sum(axis=-1)
            out[~small] = 4.0 * LAMBDA * tau_mass("tvs", a, b, side) - tail
    else:
        raise PreconditionError(f"unknown tau kind {kind!r}")
    out = out / (4.0 * LAMBDA)
    return _out(np.clip(out, 0.0, None).reshape(np.shape(tt)), tt)


def atom_exit_cdf(kind, t, a=None, b=None, side=None, ctrl=None):
    """CDF in T of the {tau = 0} event (see :func:`atom_exit_density`)."""
    if kind == "fps":
        depth = a
    else:
        depth = a if side == LOWER else b
    if depth >= GAP:
        return _out(np.zeros(np.shape(t)), np.asarray(t))
    return exit_cdf("q_ab", t, a=depth, b=GAP - depth, side=LOWER, ctrl=ctrl)
