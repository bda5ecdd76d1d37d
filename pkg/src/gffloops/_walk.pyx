# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled random-walk oracle for Brownian hitting and last-passage times.

Paths advance on a grid of step dt.  Crossings between grid points are
detected with the exact Brownian-bridge crossing probability
exp(-2 (x0 - c)(x1 - c) / dt), and the crossing is then placed inside its
step by bisection with bridge midpoints, so hitting and last-passage times
are exact in law up to dt / 4096.
"""

import numpy as np
cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport exp, sqrt, INFINITY
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport random_standard_normal, random_standard_uniform

cnp.import_array()

# crossing probabilities below exp(-2 P_CUT) ~ 1e-14 are treated as zero
cdef double P_CUT = 16.0
# bisection levels used to place a crossing inside its step (dt / 2**depth)
cdef int REFINE_DEPTH = 12

cdef enum:
    MODE_FPS = 0
    MODE_TVS = 1
    MODE_CLUSTER = 2


cdef inline int _crosses(bitgen_t *rng, double x0, double x1, double c, double h) noexcept nogil:
    cdef double d0 = x0 - c
    cdef double d1 = x1 - c
    if d0 * d1 <= 0.0:
        return 1
    if d0 * d1 > P_CUT * h:
        return 0
    return random_standard_uniform(rng) < exp(-2.0 * d0 * d1 / h)


cdef double _refine(bitgen_t *rng, double x0, double x1, double c, double t, double h,
                    int first) noexcept nogil:
    # Locates the first (or last) crossing of c inside a step known to cross,
    # by bisection with Brownian-bridge midpoints.  A bridge conditioned to
    # touch c is a bridge to the mirror image 2c - x1 reflected after its
    # first visit to c, which has the same visits to c; mirroring keeps a
    # sign change in the current interval, so one half always crosses.
    cdef int level, c1, c2
    cdef double m
    if (x0 - c) * (x1 - c) > 0.0:
        x1 = 2.0 * c - x1
    for level in range(REFINE_DEPTH):
        m = 0.5 * (x0 + x1) + sqrt(0.25 * h) * random_standard_normal(rng)
        c1 = _crosses(rng, x0, m, c, 0.5 * h)
        c2 = _crosses(rng, m, x1, c, 0.5 * h)
        h = 0.5 * h
        if (first and c1) or (not first and not c2):
            x1 = m
        else:
            x0 = m
            t = t + h
        if (x0 - c) * (x1 - c) > 0.0:
            x1 = 2.0 * c - x1
    if x0 != x1:
        return t + h * (x0 - c) / (x0 - x1)
    return t + 0.5 * h


cdef struct Stage:
    double lo          # absorbing level below start, -INFINITY when absent
    double hi          # absorbing level above start, +INFINITY when absent
    double rec_lo      # recording level used when absorbed at lo
    double rec_hi      # recording level used when absorbed at hi


cdef struct Visit:
    # grid step holding the latest crossing of a recording level
    int seen
    double x0
    double x1
    double t


cdef inline int _run_stage(bitgen_t *rng, Stage st, double *x, double *t, double *t_hit,
                           double dt, double t_end, double *path, long n_grid,
                           double *last_lo, double *last_hi, long *pos) noexcept nogil:
    # Advances from grid time t[0] until absorption.  Returns -1 / +1 for the
    # side hit (t_hit receives the crossing time, x and t the next grid point)
    # or 0 when t_end or the end of a stored path is reached first.  last_lo
    # and last_hi are overwritten only if the recording level is crossed.
    cdef double x0 = x[0]
    cdef double x1
    cdef double sdt = sqrt(dt)
    cdef int side = 0
    cdef long k = pos[0]
    cdef Visit vlo, vhi
    vlo.seen = 0
    vhi.seen = 0
    while True:
        if path != NULL:
            if k >= n_grid:
                break
            x1 = path[k + 1]
        else:
            if t[0] >= t_end:
                break
            x1 = x0 + sdt * random_standard_normal(rng)
        if _crosses(rng, x0, x1, st.rec_lo, dt):
            vlo.seen = 1
            vlo.x0 = x0
            vlo.x1 = x1
            vlo.t = t[0]
        if st.rec_hi != st.rec_lo and _crosses(rng, x0, x1, st.rec_hi, dt):
            vhi.seen = 1
            vhi.x0 = x0
            vhi.x1 = x1
            vhi.t = t[0]
        if st.lo > -INFINITY and _crosses(rng, x0, x1, st.lo, dt):
            side = -1
            t_hit[0] = _refine(rng, x0, x1, st.lo, t[0], dt, 1)
        elif st.hi < INFINITY and _crosses(rng, x0, x1, st.hi, dt):
            side = 1
            t_hit[0] = _refine(rng, x0, x1, st.hi, t[0], dt, 1)
        x0 = x1
        k += 1
        if path != NULL:
            t[0] = k * dt
        else:
            t[0] += dt
        if side != 0:
            break
    if vlo.seen:
        last_lo[0] = _refine(rng, vlo.x0, vlo.x1, st.rec_lo, vlo.t, dt, 0)
    if st.rec_hi == st.rec_lo:
        last_hi[0] = last_lo[0]
    elif vhi.seen:
        last_hi[0] = _refine(rng, vhi.x0, vhi.x1, st.rec_hi, vhi.t, dt, 0)
    if side != 0:
        # a recording crossing refined into the absorbing step stays before T
        if last_lo[0] > t_hit[0]:
            last_lo[0] = t_hit[0]
        if last_hi[0] > t_hit[0]:
            last_hi[0] = t_hit[0]
    x[0] = x0
    pos[0] = k
    return side


def walk_batch(bit_generator, long n_paths, double dt, int mode, double a, double b,
               double gap, double t_max, bint bridge=False, double v=0.0, double L=0.0):
    """Simulate ``n_paths`` independent paths and read off their functionals.

    Returns a dict of arrays: tau, T, tau_bar, T_bar, X (-1, +1, 0 for
    none), censored, censored_bar.
    """
    cdef bitgen_t *rng = <bitgen_t *> PyCapsule_GetPointer(bit_generator.capsule, "BitGenerator")
    cdef cnp.ndarray[double] tau = np.zeros(n_paths)
    cdef cnp.ndarray[double] T = np.zeros(n_paths)
    cdef cnp.ndarray[double] tau_bar = np.full(n_paths, np.nan)
    cdef cnp.ndarray[double] T_bar = np.full(n_paths, np.nan)
    cdef cnp.ndarray[long] X = np.zeros(n_paths, dtype=np.int_)
    cdef cnp.ndarray[cnp.uint8_t] cens = np.zeros(n_paths, dtype=np.uint8)
    cdef cnp.ndarray[cnp.uint8_t] cens_bar = np.zeros(n_paths, dtype=np.uint8)
    cdef long n_grid = 0
    cdef cnp.ndarray[double] buf
    cdef double *path = NULL
    cdef double x, t, t_hit = 0.0, last_lo, last_hi, end_time, c, w_end, s
    cdef long i, k, pos
    cdef int side
    cdef Stage st, st2
    if bridge:
        n_grid = <long> (L / dt + 0.5)
        buf = np.empty(n_grid + 1)
        path = &buf[0]
        end_time = L
    else:
        end_time = t_max
    if mode == MODE_FPS:
        st.lo = -a
        st.hi = INFINITY
        st.rec_lo = -a + gap
        st.rec_hi = -a + gap
    else:
        st.lo = -a
        st.hi = b
        st.rec_lo = -a + gap
        st.rec_hi = b - gap
    with bit_generator.lock, nogil:
        for i in range(n_paths):
            if bridge:
                path[0] = 0.0
                s = sqrt(dt)
                for k in range(n_grid):
                    path[k + 1] = path[k] + s * random_standard_normal(rng)
                w_end = path[n_grid]
                for k in range(n_grid + 1):
                    path[k] = path[k] - (<double> k / n_grid) * (w_end - v)
            x = 0.0
            t = 0.0
            last_lo = 0.0
            last_hi = 0.0
            pos = 0
            side = _run_stage(rng, st, &x, &t, &t_hit, dt, end_time, path, n_grid,
                              &last_lo, &last_hi, &pos)
            if side == 0:
                cens[i] = 1
                T[i] = end_time
                tau[i] = end_time
                X[i] = 0
                if mode == MODE_CLUSTER:
                    tau_bar[i] = end_time
                    T_bar[i] = end_time
                    cens_bar[i] = 1
                continue
            X[i] = side
            T[i] = t_hit
            tau[i] = last_lo if side < 0 else last_hi
            if mode != MODE_CLUSTER:
                continue
            # second leg: from B_T = c back to 0, recording the last visit to c
            c = -a if side < 0 else b
            if c < 0:
                st2.lo = -INFINITY
                st2.hi = 0.0
            else:
                st2.lo = 0.0
                st2.hi = INFINITY
            st2.rec_lo = c
            st2.rec_hi = c
            # the rest of the exit step is a bridge from c to x; seed the last
            # visit to c with its last crossing there
            last_lo = T[i]
            if t > T[i]:
                last_lo = _refine(rng, c, x, c, T[i], t - T[i], 0)
            last_hi = last_lo
            side = _run_stage(rng, st2, &x, &t, &t_hit, dt, end_time, path, n_grid,
                              &last_lo, &last_hi, &pos)
            if side == 0:
                cens_bar[i] = 1
                T_bar[i] = end_time
                tau_bar[i] = end_time
            else:
                T_bar[i] = t_hit
                tau_bar[i] = last_lo - T[i]
    return {"tau": tau, "T": T, "tau_bar": tau_bar, "T_bar": T_bar, "X": X,
            "censored": cens.astype(bool), "censored_bar": cens_bar.astype(bool)}
