"""Pure numpy version of the random-walk oracle.

Same algorithm and output layout as the compiled kernel; paths are advanced
in blocks of steps and crossings are located with array reductions.  The
random stream is consumed differently, so the two kernels agree in law but
not draw for draw.
"""

import numpy as np

P_CUT = 16.0
BLOCK = 1024
BATCH = 4096

MODE_FPS = 0
MODE_TVS = 1
MODE_CLUSTER = 2


REFINE_DEPTH = 12


def _crosses(rng, x0, x1, level, h):
    """Crossing indicator of ``level`` by Brownian bridges over time ``h``."""
    d0 = x0 - level
    d1 = x1 - level
    prod = d0 * d1
    grid = prod <= 0.0
    near = ~grid & (prod <= P_CUT * h)
    u = rng.random(np.shape(prod))
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        bridge = near & (u < np.exp(-2.0 * np.where(near, prod, 0.0) / h))
    return grid | bridge


def _refine(rng, x0, x1, level, t, h, first):
    """First (or last) crossing time inside steps known to cross ``level``.

    Bisection with Brownian-bridge midpoints.  A bridge conditioned to touch
    the level is a bridge to the mirror image of its endpoint, reflected
    after the first visit, with the same visits to the level; mirroring keeps
    a sign change in the current interval so one half always crosses.
    """
    x0 = np.array(x0, dtype=float)
    x1 = np.array(x1, dtype=float)
    t = np.array(t, dtype=float)
    c = np.broadcast_to(np.asarray(level, dtype=float), x0.shape)
    h = np.broadcast_to(np.asarray(h, dtype=float), x0.shape).copy()
    x1 = np.where((x0 - c) * (x1 - c) > 0.0, 2.0 * c - x1, x1)
    for _ in range(REFINE_DEPTH):
        m = 0.5 * (x0 + x1) + np.sqrt(0.25 * h) * rng.standard_normal(x0.shape)
        c1 = _crosses(rng, x0, m, c, 0.5 * h)
        c2 = _crosses(rng, m, x1, c, 0.5 * h)
        h *= 0.5
        left = c1 if first else ~c2
        x1 = np.where(left, m, x1)
        x0 = np.where(left, x0, m)
        t = np.where(left, t, t + h)
        x1 = np.where((x0 - c) * (x1 - c) > 0.0, 2.0 * c - x1, x1)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(x0 != x1, (x0 - c) / (x0 - x1), 0.5)
    return t + h * frac


def _last_true(mask):
    n = mask.shape[1]
    rev = mask[:, ::-1]
    any_ = rev.any(axis=1)
    return any_, n - 1 - rev.argmax(axis=1)


def _scan(rng, prev, nxt, t_prev, valid, lo, hi, rec_lo, rec_hi, dt):
    """Scan one block for absorption at lo / hi and visits to the recording levels.

    Returns the absorption flag, side, refined hitting time, step index, and
    for each recording level the (x0, x1, t) of its last crossing step up to
    absorption (NaN time when there is none).
    """
    col = lambda v: v[:, None]
    with np.errstate(invalid="ignore"):
        hit_lo = _crosses(rng, prev, nxt, col(lo), dt) & valid
        hit_hi = _crosses(rng, prev, nxt, col(hi), dt) & valid
        rl = _crosses(rng, prev, nxt, col(rec_lo), dt)
        rh = _crosses(rng, prev, nxt, col(rec_hi), dt)
    absorbed = hit_lo | hit_hi
    found = absorbed.any(axis=1)
    idx = np.where(found, absorbed.argmax(axis=1), prev.shape[1] - 1)
    rows = np.arange(prev.shape[0])
    side = np.where(found, np.where(hit_lo[rows, idx], -1, 1), 0)
    t_hit = np.full(rows.size, np.nan)
    for s, level in ((-1, lo), (1, hi)):
        sel = np.flatnonzero(side == s)
        if sel.size:
            t_hit[sel] = _refine(rng, prev[sel, idx[sel]], nxt[sel, idx[sel]], level[sel],
                                 t_prev[sel, idx[sel]], dt, True)
    upto = valid & (np.arange(prev.shape[1])[None, :] <= idx[:, None])
    visits = []
    for mask in (rl, rh):
        any_, i = _last_true(mask & upto)
        tv = np.where(any_, t_prev[rows, i], np.nan)
        visits.append((prev[rows, i], nxt[rows, i], tv))
    return found, side, t_hit, idx, visits[0], visits[1]


def _merge_visit(store, sel, visit):
    """Keep the latest crossing step per row."""
    x0, x1, tv = visit
    seen = ~np.isnan(tv)
    rows = sel[seen]
    store[0][rows] = x0[seen]
    store[1][rows] = x1[seen]
    store[2][rows] = tv[seen]


def _new_store(m):
    return [np.zeros(m), np.zeros(m), np.full(m, np.nan)]


def _resolve(rng, store, level, dt, default):
    """Refine stored last-crossing steps into times; ``default`` where none."""
    out = np.array(default, dtype=float)
    seen = np.flatnonzero(~np.isnan(store[2]))
    if seen.size:
        out[seen] = _refine(rng, store[0][seen], store[1][seen], np.asarray(level)[seen],
                            store[2][seen], dt, False)
    return out


def _finish_visits(rng, stores, rec_lo, rec_hi, dt, side, t_hit, last_lo, last_hi):
    """Refine the stored last crossings into last_lo / last_hi (in place)."""
    last_lo[:] = _resolve(rng, stores[0], rec_lo, dt, last_lo)
    if np.array_equal(rec_lo, rec_hi):
        last_hi[:] = last_lo
    else:
        last_hi[:] = _resolve(rng, stores[1], rec_hi, dt, last_hi)
    hit = side != 0
    # a recording crossing refined into the absorbing step stays before T
    last_lo[hit] = np.minimum(last_lo[hit], t_hit[hit])
    last_hi[hit] = np.minimum(last_hi[hit], t_hit[hit])


def _seed_last_visit(rng, c, x_next, t_hit, t_next, mask):
    """Last visit to c on the remainder (t_hit, t_next) of the exit step."""
    last = np.array(t_hit, dtype=float)
    sel = np.flatnonzero(mask & (t_next > t_hit))
    if sel.size:
        last[sel] = _refine(rng, c[sel], x_next[sel], c[sel], t_hit[sel],
                            t_next[sel] - t_hit[sel], False)
    return last


def _stage_free(rng, x, t, lo, hi, rec_lo, rec_hi, dt, t_end, last_lo, last_hi):
    """Run free paths (no stored path) until absorption or t_end."""
    m = x.size
    side = np.zeros(m, dtype=np.int_)
    t_hit = np.zeros(m)
    stores = (_new_store(m), _new_store(m))
    active = np.arange(m)
    sdt = np.sqrt(dt)
    steps = np.arange(BLOCK)
    while active.size:
        xa = x[active]
        ta = t[active]
        incr = rng.standard_normal((active.size, BLOCK)) * sdt
        nxt = xa[:, None] + np.cumsum(incr, axis=1)
        prev = np.concatenate([xa[:, None], nxt[:, :-1]], axis=1)
        t_prev = ta[:, None] + steps[None, :] * dt
        valid = t_prev < t_end
        found, s, th, idx, vlo, vhi = _scan(rng, prev, nxt, t_prev, valid, lo[active], hi[active],
                                            rec_lo[active], rec_hi[active], dt)
        _merge_visit(stores[0], active, vlo)
        _merge_visit(stores[1], active, vhi)
        rows = np.arange(active.size)
        side[active] = s
        t_hit[active] = th
        x[active] = np.where(found, nxt[rows, idx], nxt[:, -1])
        t[active] = np.where(found, t_prev[rows, idx] + dt, ta + BLOCK * dt)
        done = found | (t[active] >= t_end)
        active = active[~done]
    _finish_visits(rng, stores, rec_lo, rec_hi, dt, side, t_hit, last_lo, last_hi)
    return side, t_hit


def walk_batch(bit_generator, n_paths, dt, mode, a, b, gap, t_max, bridge=False, v=0.0, L=0.0):
    """Vectorized counterpart of the compiled ``walk_batch``."""
    rng = np.random.Generator(bit_generator)
    out = {
        "tau": np.zeros(n_paths),
        "T": np.zeros(n_paths),
        "tau_bar": np.full(n_paths, np.nan),
        "T_bar": np.full(n_paths, np.nan),
        "X": np.zeros(n_paths, dtype=np.int_),
        "censored": np.zeros(n_paths, dtype=bool),
        "censored_bar": np.zeros(n_paths, dtype=bool),
    }
    inf = np.inf
    if mode == MODE_FPS:
        lo0, hi0, rlo0, rhi0 = -a, inf, -a + gap, -a + gap
    else:
        lo0, hi0, rlo0, rhi0 = -a, b, -a + gap, b - gap
    end_time = L if bridge else t_max
    n_grid = int(L / dt + 0.5) if bridge else 0
    for start in range(0, n_paths, BATCH):
        m = min(BATCH, n_paths - start)
        sl = slice(start, start + m)
        full = lambda val: np.full(m, val, dtype=float)
        last_lo = np.zeros(m)
        last_hi = np.zeros(m)
        rows = np.arange(m)
        if bridge:
            w = np.zeros((m, n_grid + 1))
            w[:, 1:] = np.cumsum(rng.standard_normal((m, n_grid)) * np.sqrt(dt), axis=1)
            frac = np.arange(n_grid + 1) / n_grid
            path = w - frac[None, :] * (w[:, -1:] - v)
            prev, nxt = path[:, :-1], path[:, 1:]
            t_prev = np.broadcast_to(np.arange(n_grid) * dt, prev.shape)
            valid = np.ones(prev.shape, dtype=bool)
            found, side, t_hit, idx, vlo, vhi = _scan(rng, prev, nxt, t_prev, valid, full(lo0),
                                                      full(hi0), full(rlo0), full(rhi0), dt)
            stores = (_new_store(m), _new_store(m))
            _merge_visit(stores[0], rows, vlo)
            _merge_visit(stores[1], rows, vhi)
            _finish_visits(rng, stores, full(rlo0), full(rhi0), dt, side, t_hit, last_lo, last_hi)
        else:
            x = np.zeros(m)
            t = np.zeros(m)
            side, t_hit = _stage_free(rng, x, t, full(lo0), full(hi0), full(rlo0), full(rhi0),
                                      dt, end_time, last_lo, last_hi)
            found = side != 0
        if mode == MODE_FPS:
            last_hi = last_lo
        tau = np.where(side < 0, last_lo, last_hi)
        out["X"][sl] = side
        out["censored"][sl] = ~found
        out["T"][sl] = np.where(found, t_hit, end_time)
        out["tau"][sl] = np.where(found, tau, end_time)
        if mode != MODE_CLUSTER:
            continue
        c = np.where(side < 0, -a, b).astype(float)
        lo2 = np.where(c < 0, -inf, 0.0)
        hi2 = np.where(c < 0, 0.0, inf)
        tb = np.full(m, end_time)
        taub = np.full(m, end_time)
        cens2 = np.ones(m, dtype=bool)
        if bridge:
            valid = (np.arange(n_grid)[None, :] > idx[:, None]) & found[:, None]
            f2, s2, th2, _, vis, _ = _scan(rng, prev, nxt, t_prev, valid, lo2, hi2, c, c, dt)
            s2 = np.where(found, s2, 0)
            # visits to c are only counted from the step after the first exit
            vis = (vis[0], vis[1], np.where(found & (vis[2] > t_prev[rows, idx]), vis[2], np.nan))
            store = _new_store(m)
            _merge_visit(store, rows, vis)
            last = _seed_last_visit(rng, c, nxt[rows, idx], t_hit, t_prev[rows, idx] + dt, found)
            _finish_visits(rng, (store, store), c, c, dt, s2, th2, last, last.copy())
            ok = found & f2
            tb = np.where(ok, th2, end_time)
            taub = np.where(ok, last - t_hit, end_time)
            cens2 = ~ok
        else:
            sub = np.flatnonzero(found)
            if sub.size:
                x2 = x[sub].copy()
                t2 = t[sub].copy()
                l2 = _seed_last_visit(rng, c[sub], x2, t_hit[sub], t2, np.ones(sub.size, bool))
                dummy = t_hit[sub].copy()
                s2, th2 = _stage_free(rng, x2, t2, lo2[sub], hi2[sub], c[sub], c[sub], dt,
                                      end_time, l2, dummy)
                ok = s2 != 0
                tb[sub] = np.where(ok, th2, end_time)
                taub[sub] = np.where(ok, l2 - t_hit[sub], end_time)
                cens2[sub] = ~ok
        out["T_bar"][sl] = tb
        out["tau_bar"][sl] = taub
        out["censored_bar"][sl] = cens2
    return out
