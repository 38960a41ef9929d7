"""Numba kernels for the backward sweep and for rollouts.

Time-major value arrays: ``V0[t, cell]`` (decision states), ``M[t, cell]``
(value of a freshly matched driver whose pickup starts from ``cell`` at
``t``; equals the indicator-1 value for ``t < T``).

For a matched driver at (i, tau) the double sum over pickup cell j and
destination k is split through per-(j, arrival) aggregates::

    Wf[a, j] = sum_k Pd[j,k] * (trip reward + continuation)   (feasible k)
    Fm[a, j] = sum_k Pd[j,k]                                  (feasible k)
    Ri[a, j] = sum_k Pd[j,k]                                  (infeasible k)

which brings a sweep down to O(N^2 T).  "Infeasible" only arises when
over-horizon orders are rejected: they are redrawn once, then the match is
void and the driver stays at (i, tau, 0).
"""
import numpy as np
from numba import config, njit, prange

# the bundled TBB is often too old; prefer OpenMP, fall back to the builtin pool
config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


@njit(parallel=True, cache=True)
def backward(Pp, Pd, Pm, fare, dd, tds, pot, w_fare, w_dist,
             a_tgt, a_steps, a_rew, a_prob, a_ok, T, reject, fixed, use_fixed):
    N = Pp.shape[0]
    V0 = np.zeros((T + 1, N))
    M = np.zeros((T + 1, N))
    Wf = np.zeros((T + 1, N))
    Fm = np.zeros((T + 1, N))
    Ri = np.zeros((T + 1, N))
    Q = np.zeros((T, N, 8))
    pol = np.zeros((T, N), dtype=np.int8)
    for tau in range(T, -1, -1):
        if tau < T:
            for l in prange(N):
                best = -np.inf
                bi = -1
                for a in range(8):
                    g = a_tgt[l, a]
                    t2 = tau + a_steps[l, a]
                    if t2 > T:
                        t2 = T
                    p = a_prob[l, a]
                    q = a_rew[l, a] + (1.0 - p) * V0[t2, g] + p * M[t2, g]
                    Q[tau, l, a] = q
                    if a_ok[l, a] and q > best:
                        best = q
                        bi = a
                if use_fixed:
                    bi = fixed[tau, l]
                    best = Q[tau, l, bi]
                V0[tau, l] = best
                pol[tau, l] = bi
        for j in prange(N):
            w = 0.0
            fm = 0.0
            ri = 0.0
            for k in range(N):
                p = Pd[j, k]
                if p == 0.0:
                    continue
                arr = tau + tds[j, k]
                if arr > T:
                    if reject:
                        ri += p
                        continue
                    arr = T
                r = w_fare * fare[j, k] - w_dist * dd[j, k] - pot[k]
                if arr < T:
                    pm = Pm[j, k]
                    r += (1.0 - pm) * V0[arr, k] + pm * M[arr, k]
                w += p * r
                fm += p
            Wf[tau, j] = w
            Fm[tau, j] = fm
            Ri[tau, j] = ri
        for i in prange(N):
            s = 0.0
            q = 0.0
            for j in range(N):
                p = Pp[i, j]
                if p == 0.0:
                    continue
                a = tau + tds[i, j]
                if a > T:
                    a = T
                s += p * ((pot[i] - w_dist * dd[i, j]) * Fm[a, j] + Wf[a, j])
                q += p * Ri[a, j]
            if reject:
                M[tau, i] = (1.0 + q) * s + q * q * V0[tau, i]
            else:
                M[tau, i] = s
    return V0, M, Q, pol


@njit(cache=True)
def _categorical(row, u):
    c = 0.0
    last = -1
    for k in range(row.shape[0]):
        p = row[k]
        if p > 0.0:
            c += p
            last = k
            if u < c:
                return k
    return last


@njit(cache=True)
def rollout_batch(seeds, starts, pol, mode, Pp, Pd, Pm, fare, dd, tds,
                  a_tgt, a_steps, a_dist, a_prob, a_ok, T, reject, w_dist,
                  n_buckets, rec):
    """Simulate one episode per seed.

    ``mode`` 0 follows ``pol[t, cell]``; mode 1 picks uniformly among the
    reachable moves and Stay.  A negative start draws the start cell
    uniformly.  Per-episode outputs are packed into ``out`` columns:
    gross, distance, occupied, en-route, orders, sum of order service
    times, sum of per-order profit rates.  Orders are bucketed by pickup
    time into ``n_buckets`` equal sub-intervals (``bsum``/``bcnt``).  When
    ``rec`` has rows, order details (pickup time, fare, service time) of
    episode e are written to ``rec[e]``.
    """
    E = seeds.shape[0]
    N = Pp.shape[0]
    out = np.zeros((E, 7))
    bsum = np.zeros((E, n_buckets))
    bcnt = np.zeros((E, n_buckets))
    choices = np.zeros(7, dtype=np.int64)
    for e in range(E):
        np.random.seed(seeds[e])
        l = starts[e]
        if l < 0:
            l = np.random.randint(0, N)
        t = 0
        ind = 0
        n_rec = 0
        while t < T:
            if ind == 0:
                if mode == 0:
                    a = pol[t, l]
                else:
                    nc = 0
                    for b in range(7):
                        if a_ok[l, b]:
                            choices[nc] = b
                            nc += 1
                    a = choices[np.random.randint(0, nc)]
                out[e, 1] += a_dist[l, a]
                p = a_prob[l, a]
                t = min(t + a_steps[l, a], T)
                l = a_tgt[l, a]
                if np.random.random() >= p:
                    continue
            # matched at (l, t): draw pickup and destination, redraw once if over horizon
            feasible = False
            for attempt in range(2):
                j = _categorical(Pp[l], np.random.random())
                k = _categorical(Pd[j], np.random.random())
                ta = min(t + tds[l, j], T)
                arr = ta + tds[j, k]
                if not reject or arr <= T:
                    feasible = True
                    break
            if not feasible:
                ind = 0
                continue
            te = min(arr, T)
            d = dd[l, j] + dd[j, k]
            out[e, 0] += fare[j, k]
            out[e, 1] += d
            out[e, 2] += te - ta
            out[e, 3] += ta - t
            out[e, 4] += 1
            out[e, 5] += arr - ta
            out[e, 6] += (fare[j, k] - w_dist * d) / (arr - t)
            b = min(int(ta * n_buckets / T), n_buckets - 1)
            bsum[e, b] += arr - ta
            bcnt[e, b] += 1
            if rec.shape[0] > 0 and n_rec < rec.shape[1]:
                rec[e, n_rec, 0] = ta
                rec[e, n_rec, 1] = fare[j, k]
                rec[e, n_rec, 2] = arr - ta
                n_rec += 1
            ind = 1 if np.random.random() < Pm[j, k] else 0
            l = k
            t = te
    return out, bsum, bcnt
