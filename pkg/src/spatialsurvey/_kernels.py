"""Compiled kernels for the first-stage designs.

All kernels work on a probability vector ``p`` that is updated in place
and an ``(M, H)`` matrix ``a`` whose rows are the balancing vectors
divided by the inclusion probabilities, so a flight step direction ``u``
must satisfy ``a[idx].T @ u == 0``. Randomness comes from numba's
internal generator, which callers seed explicitly.
"""

import numpy as np
from numba import njit

EPS = 1e-10

CUBE = 0
PIVOTAL = 1
LOCAL_CUBE = 2


@njit(cache=True)
def seed(s):
    np.random.seed(s)


@njit(cache=True)
def _null_vector(b, r, k, u, w, pivot_col, is_pivot):
    """Fill u[:k] with a nonzero null vector of b[:r, :k]; False if none.

    ``w``, ``pivot_col`` and ``is_pivot`` are scratch buffers.
    """
    for i in range(r):
        s = 0.0
        for j in range(k):
            s = max(s, abs(b[i, j]))
        if s == 0.0:
            s = 1.0
        for j in range(k):
            w[i, j] = b[i, j] / s
    for j in range(k):
        is_pivot[j] = False
    row = 0
    for col in range(k):
        if row >= r:
            break
        best, arg = 0.0, -1
        for i in range(row, r):
            if abs(w[i, col]) > best:
                best, arg = abs(w[i, col]), i
        if best <= 1e-11:
            continue
        if arg != row:
            for j in range(k):
                tmp = w[row, j]
                w[row, j] = w[arg, j]
                w[arg, j] = tmp
        piv = w[row, col]
        for j in range(k):
            w[row, j] /= piv
        for i in range(r):
            if i != row and w[i, col] != 0.0:
                f = w[i, col]
                for j in range(k):
                    w[i, j] -= f * w[row, j]
        pivot_col[row] = col
        is_pivot[col] = True
        row += 1
    free = -1
    for col in range(k):
        if not is_pivot[col]:
            free = col
            break
    if free < 0:
        return False
    for j in range(k):
        u[j] = 0.0
    u[free] = 1.0
    for i in range(row):
        u[pivot_col[i]] = -w[i, free]
    return True


@njit(cache=True)
def _step(p, idx, k, u):
    """Random martingale move of p[idx[:k]] along +-u until one coordinate hits {0, 1}."""
    l1, l2 = np.inf, np.inf
    a1, a2 = -1, -1
    for t in range(k):
        pi, ut = p[idx[t]], u[t]
        if ut > 1e-14:
            c1, c2 = (1.0 - pi) / ut, pi / ut
        elif ut < -1e-14:
            c1, c2 = pi / -ut, (1.0 - pi) / -ut
        else:
            continue
        if c1 < l1:
            l1, a1 = c1, t
        if c2 < l2:
            l2, a2 = c2, t
    if np.random.random() < l2 / (l1 + l2):
        lam, hit, sgn = l1, a1, 1.0
    else:
        lam, hit, sgn = l2, a2, -1.0
    for t in range(k):
        j = idx[t]
        q = p[j] + sgn * lam * u[t]
        if q < EPS:
            q = 0.0
        elif q > 1.0 - EPS:
            q = 1.0
        p[j] = q
    j = idx[hit]
    p[j] = 1.0 if p[j] > 0.5 else 0.0


@njit(cache=True)
def _undecided(p, order):
    out = np.empty(order.shape[0], np.int64)
    n = 0
    for t in range(order.shape[0]):
        j = order[t]
        if p[j] > 0.0 and p[j] < 1.0:
            out[n] = j
            n += 1
    return out[:n]


@njit(cache=True)
def flight(p, a, order, h):
    """Cube flight with the first ``h`` columns of ``a``.

    Units are visited in ``order`` through a window of ``h + 1`` undecided
    units; each step decides at least one of them and the window is
    refilled from the queue. Once the queue is empty the remaining units
    keep moving only while their restricted matrix is rank deficient.
    Returns the number of fractional units left.
    """
    n = order.shape[0]
    win = np.empty(h + 1, np.int64)
    u = np.empty(h + 1)
    bb = np.empty((h, h + 1))
    w = np.empty((h, h + 1))
    piv = np.empty(h, np.int64)
    isp = np.empty(h + 1, np.bool_)
    k = 0
    nxt = 0
    while True:
        while k < h + 1 and nxt < n:
            j = order[nxt]
            nxt += 1
            if p[j] > 0.0 and p[j] < 1.0:
                win[k] = j
                k += 1
        if k == 0:
            break
        for r in range(h):
            for t in range(k):
                bb[r, t] = a[win[t], r]
        if not _null_vector(bb, h, k, u, w, piv, isp):
            # only possible with an exhausted queue and k <= h
            break
        _step(p, win, k, u)
        kk = 0
        for t in range(k):
            j = win[t]
            if p[j] > 0.0 and p[j] < 1.0:
                win[kk] = j
                kk += 1
        k = kk
    return k


@njit(cache=True)
def _live_set(p):
    m = p.shape[0]
    live = np.empty(m, np.int64)
    pos = np.full(m, -1, np.int64)
    n = 0
    for j in range(m):
        if p[j] > 0.0 and p[j] < 1.0:
            live[n] = j
            pos[j] = n
            n += 1
    return live, pos, n


@njit(cache=True)
def _drop_decided(p, idx, live, pos, n):
    """Swap-remove every unit of ``idx`` that is now 0 or 1; returns new size."""
    for t in range(idx.shape[0]):
        j = idx[t]
        if pos[j] >= 0 and (p[j] <= 0.0 or p[j] >= 1.0):
            last = live[n - 1]
            live[pos[j]] = last
            pos[last] = pos[j]
            pos[j] = -1
            n -= 1
    return n


@njit(cache=True)
def landing(p, a, order, h):
    """Drop balancing columns right to left, re-running the flight each time.

    The first column (fixed size) is dropped last. A single fractional unit
    left at the very end is settled by a Bernoulli draw.
    """
    for hh in range(h - 1, 0, -1):
        if _undecided(p, order).shape[0] == 0:
            break
        flight(p, a, order, hh)
    live = _undecided(p, order)
    for t in range(live.shape[0]):
        j = live[t]
        p[j] = 1.0 if np.random.random() < p[j] else 0.0


def neighbour_table(xy):
    """Per-unit neighbour indices sorted by squared distance (self excluded)."""
    xy = np.asarray(xy, dtype=np.float64)
    m = xy.shape[0]
    d2 = ((xy[:, None, :] - xy[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    nbr = np.argsort(d2, axis=1, kind="stable")[:, : m - 1]
    nd = np.take_along_axis(d2, nbr, axis=1)
    return np.ascontiguousarray(nbr.astype(np.int64)), np.ascontiguousarray(nd)


@njit(cache=True)
def _nearest(i, nbr, nd, pos, h, out):
    """The ``h`` nearest live units (pos >= 0) to ``i``; ties broken at random.

    Walks the sorted neighbour list of ``i``; live units tied with the h-th
    distance are sampled uniformly without replacement.
    """
    row = nbr[i]
    drow = nd[i]
    length = row.shape[0]
    at = np.empty(h, np.int64)
    found = 0
    t = 0
    while t < length and found < h:
        if pos[row[t]] >= 0:
            out[found] = row[t]
            at[found] = t
            found += 1
        t += 1
    if found < h:
        return found
    bound = drow[at[h - 1]]
    first = h - 1
    while first > 0 and drow[at[first - 1]] > bound - 1e-9:
        first -= 1
    start = t
    extra = 0
    while t < length and drow[t] <= bound + 1e-9:
        if pos[row[t]] >= 0:
            extra += 1
        t += 1
    if extra == 0:
        return found
    need = h - first
    total = need + extra
    group = np.empty(total, np.int64)
    group[:need] = out[first:h]
    g = need
    for q in range(start, t):
        if pos[row[q]] >= 0:
            group[g] = row[q]
            g += 1
    for q in range(need):
        r = q + np.random.randint(total - q)
        tmp = group[q]
        group[q] = group[r]
        group[r] = tmp
        out[first + q] = group[q]
    return found


@njit(cache=True)
def _dist(nbr, nd, i, j):
    row = nbr[i]
    for t in range(row.shape[0]):
        if row[t] == j:
            return nd[i, t]
    return np.inf


@njit(cache=True)
def _pivot_pair(p, i, j):
    s = p[i] + p[j]
    if s < 1.0:
        if np.random.random() * s < p[j]:
            p[i], p[j] = 0.0, s
        else:
            p[i], p[j] = s, 0.0
    else:
        if np.random.random() * (2.0 - s) < 1.0 - p[j]:
            p[i], p[j] = 1.0, s - 1.0
        else:
            p[i], p[j] = s - 1.0, 1.0
    for q in (i, j):
        if p[q] < EPS:
            p[q] = 0.0
        elif p[q] > 1.0 - EPS:
            p[q] = 1.0


@njit(cache=True)
def local_pivotal(p, nbr, nd, mutual):
    """Local pivotal method.

    With ``mutual`` False a random undecided unit is paired with its nearest
    undecided neighbour; with ``mutual`` True the pair is only updated when
    each is the other's nearest neighbour.
    """
    live, pos, n = _live_set(p)
    nb = np.empty(1, np.int64)
    back = np.empty(1, np.int64)
    pair = np.empty(2, np.int64)
    while n > 1:
        i = live[np.random.randint(n)]
        _nearest(i, nbr, nd, pos, 1, nb)
        j = nb[0]
        if mutual:
            _nearest(j, nbr, nd, pos, 1, back)
            # i only needs to be tied for j's nearest
            if back[0] != i and _dist(nbr, nd, j, i) > _dist(nbr, nd, j, back[0]) + 1e-9:
                continue
        _pivot_pair(p, i, j)
        pair[0] = i
        pair[1] = j
        n = _drop_decided(p, pair, live, pos, n)
    if n == 1:
        j = live[0]
        p[j] = 1.0 if np.random.random() < p[j] else 0.0


@njit(cache=True)
def local_cube(p, a, nbr, nd, h):
    """Local cube: flight steps on a random unit and its ``h`` nearest neighbours."""
    m = p.shape[0]
    live, pos, n = _live_set(p)
    nb = np.empty(h, np.int64)
    idx = np.empty(h + 1, np.int64)
    u = np.empty(h + 1)
    b = np.empty((h, h + 1))
    w = np.empty((h, h + 1))
    piv = np.empty(h, np.int64)
    isp = np.empty(h + 1, np.bool_)
    while n > h:
        i = live[np.random.randint(n)]
        _nearest(i, nbr, nd, pos, h, nb)
        idx[0] = i
        for t in range(h):
            idx[t + 1] = nb[t]
        for r in range(h):
            for t in range(h + 1):
                b[r, t] = a[idx[t], r]
        _null_vector(b, h, h + 1, u, w, piv, isp)
        _step(p, idx, h + 1, u)
        n = _drop_decided(p, idx, live, pos, n)
    perm = np.random.permutation(m)
    flight(p, a, perm, h)
    landing(p, a, perm, h)


@njit(cache=True)
def cube(p, a, h):
    perm = np.random.permutation(p.shape[0])
    flight(p, a, perm, h)
    landing(p, a, perm, h)


@njit(cache=True)
def draw(method, p, a, nbr, nd, h, mutual):
    if method == CUBE:
        cube(p, a, h)
    elif method == PIVOTAL:
        local_pivotal(p, nbr, nd, mutual)
    else:
        local_cube(p, a, nbr, nd, h)


@njit(cache=True)
def draw_one(method, pi, a, nbr, nd, h, mutual, seed):
    np.random.seed(seed)
    p = pi.copy()
    draw(method, p, a, nbr, nd, h, mutual)
    return p > 0.5


@njit(cache=True, nogil=True)
def replicate(method, pi, a, nbr, nd, h, mutual, seeds, counts, infected, n_bar,
              keep_samples, joint):
    """Run ``len(seeds)`` two-stage draws and return the HT estimates.

    Second stage: SRSWOR of min(n_bar, N_i) persons per selected cluster;
    the number of infected in it is hypergeometric. ``keep_samples`` (R x M
    bool) receives the first-stage indicators when it has R rows;
    ``joint`` (M x M) accumulates pair counts when it is M x M.
    """
    r_total = seeds.shape[0]
    m = pi.shape[0]
    est = np.empty(r_total)
    sizes = np.empty(r_total, np.int64)
    incl = np.zeros(m, np.int64)
    store = keep_samples.shape[0] == r_total
    track_joint = joint.shape[0] == m
    sel = np.empty(m, np.int64)
    p = np.empty(m)
    for r in range(r_total):
        np.random.seed(seeds[r])
        p[:] = pi
        draw(method, p, a, nbr, nd, h, mutual)
        total = 0.0
        k = 0
        for i in range(m):
            if p[i] > 0.5:
                sel[k] = i
                k += 1
                incl[i] += 1
                if store:
                    keep_samples[r, i] = True
                ni = counts[i]
                nb = min(n_bar, ni)
                yi = infected[i]
                if nb > 0:
                    hits = np.random.hypergeometric(yi, ni - yi, nb)
                    total += hits * (ni / nb) / pi[i]
        if track_joint:
            for s in range(k):
                for t in range(k):
                    joint[sel[s], sel[t]] += 1
        est[r] = total
        sizes[r] = k
    return est, sizes, incl
