"""Dense primal-dual blossom solver for maximum-weight matching.

Edmonds' weighted matching with blossom shrinking and O(n**3) dual
adjustments on a complete integer-weight graph. Vertices are 1-based
internally; index 0 means "none". Vertex duals are stored doubled so
that every slack stays an integer.

Only ``max_weight_matching`` is meant to be called from outside; the
rest are numba kernels sharing one state tuple.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_INF = np.int64(1) << np.int64(62)


@njit(cache=True)
def _dist(x, y, gu, gv, W, lab):
    a = gu[x, y]
    b = gv[x, y]
    return lab[a] + lab[b] - 2 * W[a, b]


@njit(cache=True)
def _offer_slack(u, x, du, slack, sd):
    # sd[x] caches the slack of x's best edge; valid until the next dual update
    if slack[x] == 0 or du < sd[x]:
        slack[x] = u
        sd[x] = du


@njit(cache=True)
def _set_slack(x, n, slack, sd, st, S, gu, gv, W, lab):
    slack[x] = 0
    for u in range(1, n + 1):
        if gu[u, x] != 0 and st[u] != x and S[st[u]] == 0:
            _offer_slack(u, x, _dist(u, x, gu, gv, W, lab), slack, sd)


@njit(cache=True)
def _q_push(x, n, flower, flen, queue, qstate, stack):
    # iterative expansion of a (possibly nested) blossom into its vertices
    top = 0
    stack[top] = x
    top += 1
    while top > 0:
        top -= 1
        y = stack[top]
        if y <= n:
            cap = queue.shape[0]
            if qstate[1] - qstate[0] >= cap:
                return False
            queue[qstate[1] % cap] = y
            qstate[1] += 1
        else:
            for i in range(flen[y] - 1, -1, -1):
                stack[top] = flower[y, i]
                top += 1
    return True


@njit(cache=True)
def _set_st(x, b, n, st, flower, flen, stack):
    top = 0
    stack[top] = x
    top += 1
    while top > 0:
        top -= 1
        y = stack[top]
        st[y] = b
        if y > n:
            for i in range(flen[y]):
                stack[top] = flower[y, i]
                top += 1


@njit(cache=True)
def _reverse(arr, lo, hi):
    # reverse arr[lo:hi] in place
    hi -= 1
    while lo < hi:
        t = arr[lo]
        arr[lo] = arr[hi]
        arr[hi] = t
        lo += 1
        hi -= 1


@njit(cache=True)
def _get_pr(b, xr, flower, flen):
    pr = 0
    while flower[b, pr] != xr:
        pr += 1
    if pr % 2 == 1:
        _reverse(flower[b], 1, flen[b])
        return flen[b] - pr
    return pr


@njit(cache=True)
def _rotate(row, k, length, tmp):
    for i in range(length):
        tmp[i] = row[(i + k) % length]
    for i in range(length):
        row[i] = tmp[i]


@njit(cache=True)
def _set_match(u0, v0, n, match, gu, gv, flower, flen, flower_from, tasks, tmp):
    top = 0
    tasks[top, 0] = u0
    tasks[top, 1] = v0
    top += 1
    while top > 0:
        top -= 1
        u = tasks[top, 0]
        v = tasks[top, 1]
        match[u] = gv[u, v]
        if u > n:
            xr = flower_from[u, gu[u, v]]
            pr = _get_pr(u, xr, flower, flen)
            for i in range(pr):
                tasks[top, 0] = flower[u, i]
                tasks[top, 1] = flower[u, i ^ 1]
                top += 1
            tasks[top, 0] = xr
            tasks[top, 1] = v
            top += 1
            _rotate(flower[u], pr, flen[u], tmp)


@njit(cache=True)
def _augment(u, v, n, match, st, pa, gu, gv, flower, flen, flower_from, tasks, tmp):
    while True:
        xnv = st[match[u]]
        _set_match(u, v, n, match, gu, gv, flower, flen, flower_from, tasks, tmp)
        if xnv == 0:
            return
        _set_match(xnv, st[pa[xnv]], n, match, gu, gv, flower, flen, flower_from, tasks, tmp)
        u = st[pa[xnv]]
        v = xnv


@njit(cache=True)
def _get_lca(u, v, st, match, pa, vis, tick):
    tick[1] += 1
    t = tick[1]
    while u != 0 or v != 0:
        if u != 0:
            if vis[u] == t:
                return u
            vis[u] = t
            u = st[match[u]]
            if u != 0:
                u = st[pa[u]]
        u, v = v, u
    return 0


@njit(cache=True)
def _add_blossom(u, lca, v, state):
    (n, n_x, W, gu, gv, lab, match, slack, sd, st, pa, S, vis, tick, flower, flen,
     flower_from, queue, qstate, stack, tasks, tmp) = state
    b = n + 1
    while b <= n_x[0] and st[b] != 0:
        b += 1
    if b > n_x[0]:
        n_x[0] += 1
    tick[2] += 1
    lab[b] = 0
    S[b] = 0
    match[b] = match[lca]
    k = 0
    flower[b, k] = lca
    k += 1
    x = u
    while x != lca:
        flower[b, k] = x
        k += 1
        y = st[match[x]]
        flower[b, k] = y
        k += 1
        if not _q_push(y, n, flower, flen, queue, qstate, stack):
            return False
        x = st[pa[y]]
    flen[b] = k
    _reverse(flower[b], 1, k)
    x = v
    while x != lca:
        flower[b, k] = x
        k += 1
        y = st[match[x]]
        flower[b, k] = y
        k += 1
        if not _q_push(y, n, flower, flen, queue, qstate, stack):
            return False
        x = st[pa[y]]
    flen[b] = k
    _set_st(b, b, n, st, flower, flen, stack)
    for x in range(1, n_x[0] + 1):
        gu[b, x] = 0
        gv[b, x] = 0
        gu[x, b] = 0
        gv[x, b] = 0
    for x in range(1, n + 1):
        flower_from[b, x] = 0
    for i in range(flen[b]):
        xs = flower[b, i]
        for x in range(1, n_x[0] + 1):
            if gu[xs, x] == 0:
                continue
            if gu[b, x] == 0 or _dist(xs, x, gu, gv, W, lab) < _dist(b, x, gu, gv, W, lab):
                gu[b, x] = gu[xs, x]
                gv[b, x] = gv[xs, x]
                gu[x, b] = gu[x, xs]
                gv[x, b] = gv[x, xs]
        for x in range(1, n + 1):
            if flower_from[xs, x] != 0:
                flower_from[b, x] = xs
    _set_slack(b, n, slack, sd, st, S, gu, gv, W, lab)
    return True


@njit(cache=True)
def _expand_blossom(b, state):
    (n, n_x, W, gu, gv, lab, match, slack, sd, st, pa, S, vis, tick, flower, flen,
     flower_from, queue, qstate, stack, tasks, tmp) = state
    for i in range(flen[b]):
        _set_st(flower[b, i], flower[b, i], n, st, flower, flen, stack)
    xr = flower_from[b, gu[b, pa[b]]]
    pr = _get_pr(b, xr, flower, flen)
    for i in range(0, pr, 2):
        xs = flower[b, i]
        xns = flower[b, i + 1]
        pa[xs] = gu[xns, xs]
        S[xs] = 1
        S[xns] = 0
        slack[xs] = 0
        _set_slack(xns, n, slack, sd, st, S, gu, gv, W, lab)
        if not _q_push(xns, n, flower, flen, queue, qstate, stack):
            return False
    S[xr] = 1
    pa[xr] = pa[b]
    for i in range(pr + 1, flen[b]):
        xs = flower[b, i]
        S[xs] = -1
        _set_slack(xs, n, slack, sd, st, S, gu, gv, W, lab)
    st[b] = 0
    return True


@njit(cache=True)
def _on_found_edge(eu, ev, state):
    # returns 1 if augmented, 0 if search continues, -1 on queue overflow
    (n, n_x, W, gu, gv, lab, match, slack, sd, st, pa, S, vis, tick, flower, flen,
     flower_from, queue, qstate, stack, tasks, tmp) = state
    u = st[eu]
    v = st[ev]
    if S[v] == -1:
        pa[v] = eu
        S[v] = 1
        nu = st[match[v]]
        slack[v] = 0
        slack[nu] = 0
        S[nu] = 0
        if not _q_push(nu, n, flower, flen, queue, qstate, stack):
            return -1
    elif S[v] == 0:
        lca = _get_lca(u, v, st, match, pa, vis, tick)
        if lca == 0:
            _augment(u, v, n, match, st, pa, gu, gv, flower, flen, flower_from, tasks, tmp)
            _augment(v, u, n, match, st, pa, gu, gv, flower, flen, flower_from, tasks, tmp)
            return 1
        if not _add_blossom(u, lca, v, state):
            return -1
    return 0


@njit(cache=True)
def _stage(state):
    """Grow alternating trees until one augmentation happens.

    Returns 1 after an augmentation, 0 when no augmenting path exists,
    -1 on internal queue overflow.
    """
    (n, n_x, W, gu, gv, lab, match, slack, sd, st, pa, S, vis, tick, flower, flen,
     flower_from, queue, qstate, stack, tasks, tmp) = state
    counters = tick
    nx = n_x[0]
    for x in range(1, nx + 1):
        S[x] = -1
        slack[x] = 0
    qstate[0] = 0
    qstate[1] = 0
    for x in range(1, nx + 1):
        if st[x] == x and match[x] == 0:
            pa[x] = 0
            S[x] = 0
            if not _q_push(x, n, flower, flen, queue, qstate, stack):
                return -1
    if qstate[1] == 0:
        return 0
    cap = queue.shape[0]
    while True:
        while qstate[0] < qstate[1]:
            u = queue[qstate[0] % cap]
            qstate[0] += 1
            if S[st[u]] == 1:
                continue
            lu = lab[u]
            for v in range(1, n + 1):
                x = st[v]
                # st[u] may change mid-scan when a blossom forms around u
                if x == st[u] or v == u:
                    continue
                duv = lu + lab[v] - 2 * W[u, v]
                if duv == 0:
                    r = _on_found_edge(u, v, state)
                    if r != 0:
                        return r
                elif x == v:
                    _offer_slack(u, x, duv, slack, sd)
                else:
                    _offer_slack(u, x, _dist(u, x, gu, gv, W, lab), slack, sd)
        nx = n_x[0]
        d = _INF
        for b in range(n + 1, nx + 1):
            if st[b] == b and S[b] == 1:
                if lab[b] // 2 < d:
                    d = lab[b] // 2
        for x in range(1, nx + 1):
            if st[x] == x and slack[x] != 0:
                if S[x] == -1:
                    dd = sd[x]
                    if dd < d:
                        d = dd
                elif S[x] == 0:
                    dd = sd[x] // 2
                    if dd < d:
                        d = dd
        if d == _INF:
            return 0
        counters[0] += 1
        for u in range(1, n + 1):
            if S[st[u]] == 0:
                lab[u] -= d
            elif S[st[u]] == 1:
                lab[u] += d
        for b in range(n + 1, nx + 1):
            if st[b] == b:
                if S[st[b]] == 0:
                    lab[b] += 2 * d
                elif S[st[b]] == 1:
                    lab[b] -= 2 * d
        qstate[0] = 0
        qstate[1] = 0
        for x in range(1, nx + 1):
            if slack[x] != 0:
                sd[x] = _dist(slack[x], x, gu, gv, W, lab)
        for x in range(1, nx + 1):
            if st[x] == x and slack[x] != 0 and st[slack[x]] != x:
                if _dist(slack[x], x, gu, gv, W, lab) == 0:
                    r = _on_found_edge(gu[slack[x], x], gv[slack[x], x], state)
                    if r != 0:
                        return r
        for b in range(n + 1, n_x[0] + 1):
            if st[b] == b and S[b] == 1 and lab[b] == 0:
                if not _expand_blossom(b, state):
                    return -1


@njit(cache=True)
def _greedy_start(n, W, lab, match):
    # Raise each free vertex's dual tightness until one edge becomes tight;
    # match it if the other end is still free. Keeps every dual even.
    for u in range(1, n + 1):
        best = -_INF
        for v in range(1, n + 1):
            if v != u and W[u, v] > best:
                best = W[u, v]
        lab[u] = best
    for u in range(1, n + 1):
        if match[u] != 0:
            continue
        best = _INF
        arg = 0
        for v in range(1, n + 1):
            if v == u:
                continue
            s = lab[u] + lab[v] - 2 * W[u, v]
            if s < best or (s == best and match[v] == 0 and match[arg] != 0):
                best = s
                arg = v
        lab[u] -= best
        if match[arg] == 0:
            match[u] = arg
            match[arg] = u


@njit(cache=True)
def _solve(W):
    n = W.shape[0] - 1
    m = 2 * n + 1
    gu = np.zeros((m, m), dtype=np.int32)
    gv = np.zeros((m, m), dtype=np.int32)
    for u in range(1, n + 1):
        for v in range(1, n + 1):
            if u != v:
                gu[u, v] = u
                gv[u, v] = v
    lab = np.zeros(m, dtype=np.int64)
    match = np.zeros(m, dtype=np.int32)
    _greedy_start(n, W, lab, match)
    slack = np.zeros(m, dtype=np.int32)
    sd = np.zeros(m, dtype=np.int64)
    st = np.arange(m).astype(np.int32)
    pa = np.zeros(m, dtype=np.int32)
    S = np.zeros(m, dtype=np.int32)
    vis = np.zeros(m, dtype=np.int64)
    tick = np.zeros(4, dtype=np.int64)
    flower = np.zeros((m, n + 1), dtype=np.int32)
    flen = np.zeros(m, dtype=np.int64)
    flower_from = np.zeros((m, n + 1), dtype=np.int32)
    for u in range(1, n + 1):
        flower_from[u, u] = u
    queue = np.zeros(8 * m, dtype=np.int32)
    qstate = np.zeros(2, dtype=np.int64)
    stack = np.zeros(2 * m + 2, dtype=np.int32)
    tasks = np.zeros((2 * m + 2, 2), dtype=np.int32)
    tmp = np.zeros(n + 1, dtype=np.int32)
    n_x = np.zeros(1, dtype=np.int64)
    n_x[0] = n
    state = (n, n_x, W, gu, gv, lab, match, slack, sd, st, pa, S, vis, tick, flower, flen,
             flower_from, queue, qstate, stack, tasks, tmp)
    status = 0
    while True:
        r = _stage(state)
        if r == 1:
            continue
        status = r
        break
    return match[: n + 1].copy(), status, tick


def min_cost_perfect_matching(costs: np.ndarray) -> np.ndarray:
    """Minimum-cost perfect matching on a complete graph with integer costs.

    Parameters
    ----------
    costs : (n, n) int64 array
        Symmetric edge costs; ``n`` must be even. The diagonal is ignored.

    Returns
    -------
    mate : (n,) int64 array
        ``mate[i]`` is the 0-based partner of vertex ``i``.
    """
    costs = np.asarray(costs, dtype=np.int64)
    n = costs.shape[0]
    if n % 2:
        raise ValueError("perfect matching needs an even number of vertices")
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    # weights are doubled so the greedy start keeps all duals even
    W = np.zeros((n + 1, n + 1), dtype=np.int64)
    W[1:, 1:] = -2 * costs
    np.fill_diagonal(W, 0)
    match, status, _ = _solve(W)
    if status < 0:
        raise RuntimeError("blossom solver queue overflow")
    mate = match[1:].astype(np.int64) - 1
    if (mate < 0).any():
        raise RuntimeError("blossom solver returned an imperfect matching")
    return mate
