"""Goodness-of-fit, tail exponents, conditional invariance and Laplace transforms."""

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .errors import EmptySampleError, InsufficientDataError

BOOTSTRAP = 1000


@dataclass
class ComparisonReport:
    """Result record of one statistical comparison."""

    name: str = ""
    ks_stat: float = None
    ks_pvalue: float = None
    sample_sizes: tuple = ()
    binning: dict = None
    estimate: float = None
    ci: tuple = None
    passed: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def ok(self):
        return bool(self.passed) and all(self.passed.values())

    def to_dict(self):
        d = asdict(self)
        d["ok"] = self.ok
        return _plain(d)


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x)
    return x


def _finite(sample, what="sample"):
    x = np.asarray(sample, dtype=float).ravel()
    x = x[np.isfinite(x)]
    if x.size == 0:
        raise EmptySampleError(f"{what} is empty")
    return x


def ks_compare(sample, reference, name="", threshold=None, censored=None, censor_prob=None):
    """Kolmogorov-Smirnov comparison of ``sample`` against a reference.

    ``reference`` is either another sample (two-sample test) or a callable
    CDF (one-sample test).  With ``censored`` (a boolean mask over
    ``sample``) and ``censor_prob`` the censored rows are removed before the
    KS test, the reference CDF is taken as already conditioned on the
    uncensored event, and an exact binomial test checks the censoring count.
    ``threshold`` adds a pass flag ks_stat <= threshold.
    """
    x = np.asarray(sample, dtype=float).ravel()
    report = ComparisonReport(name=name)
    if censored is not None:
        censored = np.asarray(censored, dtype=bool).ravel()
        n_all = x.size
        k = int(censored.sum())
        x = x[~censored]
        if censor_prob is not None:
            bt = stats.binomtest(k, n_all, censor_prob)
            report.extra.update(censored=k, n_total=n_all, censor_prob=float(censor_prob),
                                censor_pvalue=float(bt.pvalue))
            report.passed["censoring"] = bt.pvalue > 0.01
    x = _finite(x)
    if callable(reference):
        res = stats.ks_1samp(x, reference)
        report.sample_sizes = (x.size,)
    else:
        y = _finite(reference, "reference sample")
        res = stats.ks_2samp(x, y)
        report.sample_sizes = (x.size, y.size)
    report.ks_stat = float(res.statistic)
    report.ks_pvalue = float(res.pvalue)
    if threshold is not None:
        report.passed["ks"] = report.ks_stat <= threshold
        report.extra["threshold"] = threshold
    return report


def ks_censored_bridge(sample_x, sample_censored, ref_x, ref_censored, name="", threshold=None):
    """Two-sample comparison of censored bridge data.

    KS on the uncensored sub-populations plus a two-proportion check of the
    censoring frequencies (|z| < 3).
    """
    xc = np.asarray(sample_censored, dtype=bool)
    yc = np.asarray(ref_censored, dtype=bool)
    rep = ks_compare(np.asarray(sample_x)[~xc], np.asarray(ref_x)[~yc], name=name, threshold=threshold)
    p1, p2 = xc.mean(), yc.mean()
    pool = (xc.sum() + yc.sum()) / (xc.size + yc.size)
    se = math.sqrt(max(pool * (1 - pool), 1e-300) * (1 / xc.size + 1 / yc.size))
    z = (p1 - p2) / se if se > 0 else 0.0
    rep.extra.update(censored_a=float(p1), censored_b=float(p2), censor_z=float(z))
    rep.passed["censoring"] = abs(z) < 3
    return rep


def cdf_from_density(density, lower=0.0, upper=np.inf, mass=1.0, tol=1e-8):
    """CDF t -> (1/mass) * integral of ``density`` from ``lower`` to t by quadrature."""
    from scipy.integrate import quad

    def cdf(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        order = np.argsort(t)
        out = np.empty_like(t)
        acc, prev = 0.0, lower
        for i in order:
            ti = t[i]
            if ti > prev:
                acc += quad(density, prev, ti, epsabs=tol, epsrel=tol, limit=200)[0]
                prev = ti
            out[i] = acc / mass
        return np.clip(out, 0.0, 1.0)

    return cdf


def tail_exponent(samples, quantile=0.9, n_boot=BOOTSTRAP, seed=0, min_exceedances=1000,
                  log_scale=False):
    """Exponential tail rate of ``samples`` above the ``quantile`` threshold.

    Maximum likelihood for the excess over the threshold, with a percentile
    bootstrap CI.  With ``log_scale`` the samples are replaced by their
    logarithms first, which turns a power tail into an exponential one.
    """
    x = _finite(samples)
    if log_scale:
        x = np.log(x[x > 0])
    u = float(np.quantile(x, quantile))
    exc = x[x > u] - u
    if exc.size < min_exceedances:
        raise InsufficientDataError(f"{exc.size} exceedances, need {min_exceedances}")
    rate = 1.0 / exc.mean()
    rng = np.random.default_rng(seed)
    boots = np.empty(n_boot)
    for k in range(n_boot):
        boots[k] = 1.0 / rng.choice(exc, exc.size).mean()
    lo, hi = np.quantile(boots, [0.025, 0.975])
    return ComparisonReport(name="tail_exponent", estimate=float(rate), ci=(float(lo), float(hi)),
                            sample_sizes=(x.size, exc.size), extra={"threshold": u, "quantile": quantile})


def tail_sensitivity(samples, quantiles=(0.8, 0.9, 0.95), **kw):
    """Tail rate at several thresholds (for reporting threshold sensitivity)."""
    out = {}
    for q in quantiles:
        try:
            out[q] = tail_exponent(samples, q, n_boot=kw.get("n_boot", 200), min_exceedances=kw.get("min_exceedances", 100)).estimate
        except InsufficientDataError:
            out[q] = None
    return out


def conditional_invariance(data_a, data_b, n_bins=8, min_per_bin=50, alpha=0.01, coverage=0.95):
    """Compare the response given (conditioner bin, label) between two datasets.

    Each dataset is a dict with arrays "conditioner", "response" and "label".
    The conditioner is cut into ``n_bins`` equal-probability bins of the
    pooled data; bins with fewer than ``min_per_bin`` points in either
    dataset are skipped and flagged.  Passes when at least ``coverage`` of
    the compared bins have KS p-value above ``alpha``; no compared bin is a
    failure.
    """
    ca, ra, la = (np.asarray(data_a[k], dtype=float) for k in ("conditioner", "response", "label"))
    cb, rb, lb = (np.asarray(data_b[k], dtype=float) for k in ("conditioner", "response", "label"))
    pooled = np.concatenate([ca, cb])
    pooled = pooled[np.isfinite(pooled)]
    if pooled.size == 0:
        raise EmptySampleError("no conditioner values")
    edges = np.unique(np.quantile(pooled, np.linspace(0, 1, n_bins + 1)))
    edges[0], edges[-1] = -np.inf, np.inf
    ba = np.digitize(ca, edges[1:-1])
    bb = np.digitize(cb, edges[1:-1])
    labels = sorted(set(np.unique(la[np.isfinite(la)])) | set(np.unique(lb[np.isfinite(lb)])))
    bins, skipped = [], []
    for k in range(len(edges) - 1):
        for lab in labels:
            xa = ra[(ba == k) & (la == lab) & np.isfinite(ra)]
            xb = rb[(bb == k) & (lb == lab) & np.isfinite(rb)]
            if min(xa.size, xb.size) < min_per_bin:
                skipped.append({"bin": k, "label": float(lab), "n": [int(xa.size), int(xb.size)]})
                continue
            res = stats.ks_2samp(xa, xb)
            bins.append({"bin": k, "label": float(lab), "n": [int(xa.size), int(xb.size)],
                         "ks": float(res.statistic), "p": float(res.pvalue)})
    n_pass = sum(b["p"] > alpha for b in bins)
    frac = n_pass / len(bins) if bins else 0.0
    return ComparisonReport(name="conditional_invariance", sample_sizes=(ca.size, cb.size),
                            binning={"edges": edges[1:-1].tolist(), "bins": bins, "skipped": skipped},
                            estimate=frac, passed={"invariance": bool(bins) and frac >= coverage})


def laplace_empirical(samples, nu_grid, n_boot=BOOTSTRAP, seed=0):
    """E[exp(-nu X)] per nu with percentile bootstrap CIs.

    Returns (nu, mean, lo, hi) arrays.
    """
    x = _finite(samples)
    nu = np.asarray(nu_grid, dtype=float)
    if np.any(nu < 0):
        raise ValueError("nu must be nonnegative")
    vals = np.exp(-np.outer(nu, x))
    mean = vals.mean(axis=1)
    rng = np.random.default_rng(seed)
    boots = np.empty((n_boot, nu.size))
    for b in range(n_boot):
        boots[b] = vals[:, rng.integers(0, x.size, x.size)].mean(axis=1)
    lo, hi = np.quantile(boots, [0.025, 0.975], axis=0)
    return nu, mean, lo, hi


def within_se(count, n, p, k=3.0):
    """True when a binomial frequency count/n is within k standard errors of p."""
    se = math.sqrt(p * (1 - p) / n) if 0 < p < 1 else 0.0
    return abs(count / n - p) <= k * se + 1e-12
