import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy import stats

from gffloops import closed_form_laws as cfl
from gffloops import walk
from gffloops.brownian_reference import (PI_UNITS, FunctionalSample, OracleConfig, censor_at, child_seed,
                                         exact_censoring_probability, sample_bridge_triple,
                                         sample_cluster_bridge, sample_cluster_quadruple, sample_fps_pair,
                                         sample_tvs_triple, sample_walk_oracle)
from gffloops.closed_form_laws import GAP, LOWER, UPPER, LawParams
from gffloops.errors import PreconditionError

# no-exit probabilities of Brownian bridges, frozen from 30-digit image
# sums of the killed kernel divided by the free kernel
CENSOR_FROZEN = [
    (("tvs", 1.0, 1.0, 0.0, 1.0), 0.73000032832264548),
    (("tvs", 1.0, 1.0, 0.5, 0.25), 0.98167821693666384),
    (("tvs", 1.0, 2.0, 0.3, 2.0), 0.69444861686861305),
    (("fps", 1.0, None, 0.5, 1.0), 0.95021293163213606),
]


def ks_cdf(x, cdf):
    return stats.ks_1samp(np.asarray(x), cdf).statistic


def tvs_T_cdf(a, b):
    return lambda t: (cfl.exit_cdf("q_ab", np.asarray(t), a=a, b=b, side=LOWER)
                      + cfl.exit_cdf("q_ab", np.asarray(t), a=a, b=b, side=UPPER))


@pytest.mark.parametrize("args,want", CENSOR_FROZEN)
def test_censoring_probability_frozen(args, want):
    assert exact_censoring_probability(*args) == pytest.approx(want, abs=1e-12)


def test_child_seeds_are_stateless():
    a = child_seed(5, 3)
    b = child_seed(5, 3)
    assert a.generate_state(4).tolist() == b.generate_state(4).tolist()
    assert child_seed(5, 4).generate_state(4).tolist() != a.generate_state(4).tolist()


@pytest.mark.parametrize("sampler", [
    lambda s: sample_fps_pair(GAP, s, 500),
    lambda s: sample_tvs_triple(1.0, 3.0, s, 500),
    lambda s: sample_bridge_triple(GAP, GAP, 0.3, 0.8, s, 500),
    lambda s: sample_cluster_quadruple(s, 500),
    lambda s: sample_cluster_bridge(GAP, 0.6, s, 300),
])
def test_bit_for_bit_determinism(sampler):
    x, y = sampler(11), sampler(11)
    for key in ("tau", "T", "tau_bar", "T_bar"):
        u, v = getattr(x, key), getattr(y, key)
        assert (u is None and v is None) or np.array_equal(u, v)
    assert not np.array_equal(sampler(12).T, x.T)


@given(a=st.floats(0.2, 3.0), b=st.floats(0.2, 3.0), seed=st.integers(0, 2 ** 32 - 1))
def test_tvs_ordering_invariants(a, b, seed):
    assume(a + b >= GAP)
    s = sample_tvs_triple(a, b, seed, 50)
    assert s.validate()
    assert set(np.unique(s.X)) <= {-a, b}


@given(a=st.floats(0.2, 3.0), v=st.floats(-3.0, 3.0), L=st.floats(0.05, 3.0), seed=st.integers(0, 2 ** 32 - 1))
def test_bridge_ordering_invariants(a, v, L, seed):
    assume(2 * a >= GAP)
    s = sample_bridge_triple(a, a, v, L, seed, 40)
    s.validate()
    assert np.all(s.T <= L + 1e-12)
    assert np.all(s.tau[s.censored] == L) and np.all(s.T[s.censored] == L)


@given(seed=st.integers(0, 2 ** 32 - 1))
def test_cluster_orderings(seed):
    s = sample_cluster_quadruple(seed, 200)
    s.validate()
    assert np.all(s.tau <= s.T) and np.all(s.T <= s.T_bar)
    assert np.all((0 <= s.tau_bar) & (s.tau_bar <= s.T_bar - s.T + 1e-9))


def test_fps_tau_strictly_below_T():
    s = sample_fps_pair(GAP, 1, 20000)
    assert np.all(s.tau < s.T)


def test_fps_T_marginal():
    s = sample_fps_pair(GAP, 2, 100000)
    assert ks_cdf(s.T, lambda t: cfl.exit_cdf("q_a", t, a=GAP)) <= 0.01


def test_fps_gap_is_bessel3_hit():
    s = sample_fps_pair(GAP, 3, 100000)
    assert ks_cdf(s.T - s.tau, lambda t: cfl.exit_cdf("beta", t, x=GAP)) <= 0.01


def test_fps_tau_independent_of_gap():
    s = sample_fps_pair(GAP, 4, 100000)
    r = stats.spearmanr(s.tau, s.T - s.tau).statistic
    assert abs(r) <= 3 / math.sqrt(len(s))


def test_tvs_symmetric_sides():
    n = 100000
    s = sample_tvs_triple(GAP, GAP, 5, n)
    up = np.mean(s.X > 0)
    assert abs(up - 0.5) <= 3 * math.sqrt(0.25 / n)


def test_tvs_side_frequency_one_three():
    n = 100000
    s = sample_tvs_triple(1.0, 3.0, 6, n)
    low = np.mean(s.X == -1.0)
    assert abs(low - 0.75) <= 3 * math.sqrt(0.75 * 0.25 / n)


def test_tvs_joint_binned_chi_square():
    # with a, b multiples of 2 lambda there is no tau = 0 atom and the joint
    # density factorizes as side mass x tau law x independent Bessel-3 gap,
    # so bin probabilities are products of 1-D CDF increments
    a, b, n = GAP, 3 * GAP, 100000
    s = sample_tvs_triple(a, b, 7, n)
    gap = s.T - s.tau
    big = 1e6
    g_edges = np.quantile(gap, np.linspace(0, 1, 6))
    g_edges[0], g_edges[-1] = 1e-12, big
    g_prob = np.diff(cfl.exit_cdf("beta", g_edges, x=GAP))
    obs, exp = [], []
    for side, val in ((LOWER, -a), (UPPER, b)):
        assert cfl.atom_mass("tvs", a, b, side) == 0
        sel = s.X == val
        t_edges = np.quantile(s.tau[sel], np.linspace(0, 1, 6))
        t_edges[0], t_edges[-1] = 1e-12, big
        t_prob = np.diff(cfl.tau_cdf("tvs", t_edges, a, b, side))
        counts, _, _ = np.histogram2d(s.tau[sel], gap[sel], bins=[t_edges, g_edges])
        obs.append(counts.ravel())
        exp.append(n * np.outer(t_prob, g_prob).ravel())
    obs, exp = np.concatenate(obs), np.concatenate(exp)
    assert exp.sum() == pytest.approx(n, rel=1e-5)
    # the mass beyond the outer edges (< 1e-6) goes to the last bins
    exp *= n / exp.sum()
    assert stats.chisquare(obs, exp).pvalue > 0.01


def test_one_sided_bridge_below_barrier_never_censored():
    s = sample_bridge_triple(1.0, None, -1.2, 0.7, 8, 20000, kind="fps")
    assert not s.censored.any()


def test_long_bridge_matches_free_law():
    a = b = 1.0
    br = sample_bridge_triple(a, b, 0.0, 50.0, 9, 100000)
    free = sample_tvs_triple(a, b, 10, 100000)
    assert br.censored.mean() < 1e-3
    ok = ~br.censored
    assert stats.ks_2samp(br.T[ok], free.T).statistic <= 0.02
    assert stats.ks_2samp(br.tau[ok], free.tau).statistic <= 0.02


def test_short_bridge_censoring_frequency():
    a = b = 1.0
    L = 0.25
    p = exact_censoring_probability("tvs", a, b, 0.0, L)
    assert p > 0.9
    n = 100000
    s = sample_bridge_triple(a, b, 0.0, L, 11, n)
    assert abs(s.censored.mean() - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_cluster_return_leg_marginal():
    s = sample_cluster_quadruple(12, 100000)
    cdf = lambda t: cfl.exit_cdf("q_a", np.asarray(t), a=math.pi)
    assert ks_cdf(s.T_bar - s.T, cdf) <= 0.02


def test_cluster_exit_marginal_in_pi_units():
    s = sample_cluster_quadruple(13, 100000)
    assert ks_cdf(s.T, tvs_T_cdf(math.pi, math.pi)) <= 0.02


def test_scaled_and_censor_at():
    s = sample_tvs_triple(1.0, 1.0, 14, 1000)
    t = s.scaled(2.0)
    assert np.allclose(t.T, 2 * s.T) and t.meta["time_scale"] == 2.0
    c = censor_at(s, 0.5)
    assert np.all(c.T <= 0.5)
    assert np.all(c.censored == (s.T > 0.5))
    c.validate()


def test_validate_rejects_bad_ordering():
    bad = FunctionalSample(np.array([2.0]), np.array([1.0]), np.array([1.0]), np.array([False]))
    with pytest.raises(PreconditionError):
        bad.validate()


def test_oracle_config_validation():
    with pytest.raises(PreconditionError):
        OracleConfig(dt=0.0)
    with pytest.raises(PreconditionError):
        OracleConfig(dt=1e-3, bridge=(0.0, 0.00105))
    OracleConfig(dt=1e-3, bridge=(0.0, 0.5))


def test_oracle_deterministic_and_chunk_independent():
    cfg = OracleConfig(dt=1e-3)
    p = LawParams(1.0, 1.0)
    x = sample_walk_oracle(p, cfg, 3, 5000)
    y = sample_walk_oracle(p, cfg, 3, 5000)
    assert np.array_equal(x.T, y.T) and np.array_equal(x.tau, y.tau)
    z = sample_walk_oracle(p, cfg, 3, 6000)
    assert np.array_equal(z.T[:4096], x.T[:4096])


@pytest.mark.slow
def test_oracle_mean_exit_time_and_symmetry():
    n = 1000000
    s = sample_walk_oracle(LawParams(1.0, 1.0), OracleConfig(dt=1e-4), 15, n)
    assert not s.censored.any()
    se = s.T.std() / math.sqrt(n)
    assert abs(s.T.mean() - 1.0) <= 3 * se
    assert abs(np.mean(s.X == 1.0) - 0.5) <= 3 * math.sqrt(0.25 / n)


def test_oracle_tail_rate_pi_barrier():
    from gffloops.stat_harness import tail_exponent
    s = sample_walk_oracle(LawParams(math.pi, math.pi), OracleConfig(dt=1e-2, t_max=1e4), 16, 20000)
    rep = tail_exponent(s.T, quantile=0.9, min_exceedances=1000, n_boot=200)
    assert rep.estimate == pytest.approx(0.125, abs=0.01)


def test_oracle_bridge_censoring_matches_exact():
    a = b = 1.0
    L, v, n = 0.5, 0.2, 20000
    s = sample_walk_oracle(LawParams(a, b, v, L), OracleConfig(dt=1e-4, bridge=(v, L)), 17, n)
    p = exact_censoring_probability("tvs", a, b, v, L)
    # the discrete walk with in-step bridge refinement has no first-order bias
    assert abs(s.censored.mean() - p) <= 4 * math.sqrt(p * (1 - p) / n)


@pytest.mark.skipif(walk.BACKEND != "compiled", reason="compiled kernel not built")
def test_backends_agree_in_law():
    cfg = OracleConfig(dt=1e-3)
    p = LawParams(1.0, 2.0)
    c = sample_walk_oracle(p, cfg, 18, 20000, backend="compiled")
    n = sample_walk_oracle(p, cfg, 19, 20000, backend="numpy")
    assert stats.ks_2samp(c.T, n.T).pvalue > 1e-3
    assert stats.ks_2samp(c.tau, n.tau).pvalue > 1e-3


def test_fallback_without_extension():
    # an unbuilt extension behaves like a blocked import
    code = "import sys; sys.modules['gffloops._walk'] = None; from gffloops import walk; print(walk.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_pi_units_constant():
    assert PI_UNITS == 2 * math.pi
    # barrier 2 lambda in field units is pi after the time change
    assert GAP * math.sqrt(PI_UNITS) == pytest.approx(math.pi)
