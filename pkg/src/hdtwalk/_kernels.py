"""Compiled chain loops for exact visit stores.

These mirror the reference steppers in :mod:`hdtwalk.samplers` draw for draw
and operation for operation; the test suite checks that trajectories agree
bit-for-bit. Keep the two in sync when changing either.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

MHRW, MTM, MHDA, TWO_CYCLE, SRRW = 0, 1, 2, 3, 4
KIND_CODES = {"mhrw": MHRW, "mtm": MTM, "mhda": MHDA, "two_cycle": TWO_CYCLE, "srrw": SRRW}

_opts = dict(cache=True, nogil=True)


@njit(**_opts)
def _log_balance(code, z):
    if code == 0:
        return 0.5 * z
    if code == 1:
        return z if z < 0.0 else 0.0
    if code == 2:
        return z if z > 0.0 else 0.0
    if code == 3:
        if z >= 0.0:
            return -math.log1p(math.exp(-z))
        return z - math.log1p(math.exp(z))
    if z >= 0.0:
        return z + math.log1p(math.exp(-z))
    return math.log1p(math.exp(z))


@njit(**_opts)
def _accept(log_a, u):
    return log_a >= 0.0 or u < math.exp(log_a)


@njit(**_opts)
def _pick(indptr, indices, i, u):
    start = indptr[i]
    d = indptr[i + 1] - start
    return indices[start + int(u * d)]


@njit(**_opts)
def _log_mh(log_mu, log_exc, log_deg, alpha, i, j):
    lr = (log_mu[j] - log_mu[i]) - alpha * (log_exc[j] - log_exc[i])
    return lr + (log_deg[i] - log_deg[j])


@njit(**_opts)
def _logsumexp(vals, n):
    m = vals[0]
    for t in range(n):
        if vals[t] > m:
            m = vals[t]
    s = 0.0
    for t in range(n):
        s += math.exp(vals[t] - m)
    return m + math.log(s)


@njit(**_opts)
def _mh(indptr, indices, log_mu, log_exc, log_deg, alpha, i, prop, acc):
    j = _pick(indptr, indices, i, prop.random())
    log_a = _log_mh(log_mu, log_exc, log_deg, alpha, i, j)
    if _accept(log_a, acc.random()):
        return j, True
    return i, False


@njit(**_opts)
def _mtm(indptr, indices, log_mu, log_exc, log_deg, alpha, k, h, i, prop, acc, cands, lw, wbuf, back):
    for s in range(k):
        cands[s] = _pick(indptr, indices, i, prop.random())
    for s in range(k):
        lw[s] = _log_balance(h, _log_mh(log_mu, log_exc, log_deg, alpha, i, cands[s]))
    m = lw[0]
    for s in range(k):
        if lw[s] > m:
            m = lw[s]
    total = 0.0
    for s in range(k):
        wbuf[s] = math.exp(lw[s] - m)
    for s in range(k):
        total += wbuf[s]
    target = acc.random() * total
    sel = k - 1
    run = 0.0
    for s in range(k):
        run += wbuf[s]
        if target < run:
            sel = s
            break
    y = cands[sel]
    for s in range(k - 1):
        cands[s] = _pick(indptr, indices, y, prop.random())
    back[0] = _log_balance(h, _log_mh(log_mu, log_exc, log_deg, alpha, y, i))
    for s in range(k - 1):
        back[s + 1] = _log_balance(h, _log_mh(log_mu, log_exc, log_deg, alpha, y, cands[s]))
    log_a = _logsumexp(lw, k) - _logsumexp(back, k)
    if _accept(log_a, acc.random()):
        return y, True
    return i, False


@njit(**_opts)
def _mhda(indptr, indices, log_mu, log_exc, log_deg, alpha, i, last, prop, acc):
    """Returns (next, accepted, new_last, fired)."""
    start = indptr[i]
    d = indptr[i + 1] - start
    k = _pick(indptr, indices, i, prop.random())
    log_a = _log_mh(log_mu, log_exc, log_deg, alpha, i, k)
    if not _accept(log_a, acc.random()):
        return i, False, last, False
    if k != last or d <= 1:
        return k, True, i, False
    idx = int(prop.random() * (d - 1))
    pos = np.searchsorted(indices[start : start + d], k)
    if idx >= pos:
        idx += 1
    r = indices[start + idx]
    log_r = _log_mh(log_mu, log_exc, log_deg, alpha, i, r)
    log_q = 2.0 * (log_r if log_r < 0.0 else 0.0) + (-2.0 * log_a if log_a < 0.0 else 0.0)
    if _accept(log_q, acc.random()):
        return r, True, i, True
    return k, True, i, True


@njit(**_opts)
def _srrw(indptr, indices, log_mu, log_exc, log_deg, alpha, i, prop, nodes, probs, weights):
    """Returns (next, closed-neighborhood size, clamped)."""
    start = indptr[i]
    stop = indptr[i + 1]
    d = stop - start
    s = 0
    placed = False
    self_slot = d
    stay = 1.0
    for p in range(start, stop):
        j = indices[p]
        if not placed and j > i:
            nodes[s] = i
            self_slot = s
            s += 1
            placed = True
        z = (log_mu[j] - log_mu[i]) + (log_deg[i] - log_deg[j])
        pij = math.exp(z if z < 0.0 else 0.0) / d
        stay -= pij
        nodes[s] = j
        probs[s] = pij
        s += 1
    if not placed:
        nodes[s] = i
        self_slot = s
    clamped = stay < 0.0
    probs[self_slot] = 0.0 if clamped else stay
    top = -np.inf
    for s in range(d + 1):
        e = -alpha * log_exc[nodes[s]]
        weights[s] = e
        if e > top:
            top = e
    for s in range(d + 1):
        weights[s] = probs[s] * math.exp(weights[s] - top)
    total = 0.0
    for s in range(d + 1):
        total += weights[s]
    target = prop.random() * total
    run = 0.0
    chosen = -1
    for s in range(d + 1):
        if weights[s] > 0.0:
            run += weights[s]
            chosen = s
            if target < run:
                break
    return nodes[chosen], d + 1, clamped


@njit(**_opts)
def _record(emp, m, mu, f_sum, is_num, is_den, out_tvd, out_est, out_is, slot):
    if m == 0:
        out_tvd[slot] = np.nan
        out_est[slot] = np.nan
        out_is[slot] = np.nan
        return
    acc = 0.0
    for v in range(len(mu)):
        acc += abs(emp[v] / m - mu[v])
    out_tvd[slot] = 0.5 * acc
    out_est[slot] = f_sum / m
    out_is[slot] = is_num / is_den


@njit(**_opts)
def run_chain_kernel(
    kind,
    indptr,
    indices,
    log_mu,
    log_deg,
    counts,
    log_exc,
    alpha,
    mtm_k,
    mtm_h,
    x0,
    max_steps,
    budget,
    burn_steps,
    burn_cost,
    cost_indexed,
    snap_steps,
    snap_costs,
    mu,
    f,
    inv_mu_tilde,
    prop,
    acc,
    traj,
    emp,
    out_step,
    out_cost,
    out_tvd,
    out_est,
    out_is,
):
    """Run one chain; returns (steps, total cost, accepted moves, side events).

    ``counts``/``log_exc`` hold the HDT visit store and are updated in place;
    ``emp`` receives post-burn-in visit counts.
    """
    n = len(log_mu)
    for v in range(n):
        log_exc[v] = math.log(counts[v]) - log_mu[v]
    maxdeg = 0
    for v in range(n):
        if indptr[v + 1] - indptr[v] > maxdeg:
            maxdeg = indptr[v + 1] - indptr[v]
    kk = max(mtm_k, 1)
    cands = np.empty(kk, dtype=np.int64)
    lw = np.empty(kk)
    wbuf = np.empty(kk)
    back = np.empty(kk)
    nodes = np.empty(maxdeg + 1, dtype=np.int64)
    probs = np.empty(maxdeg + 1)
    weights = np.empty(maxdeg + 1)

    record = len(traj) > 0
    if record:
        traj[0] = x0
    cur = x0
    last = x0
    phase = 0
    cost = 0.0
    m = 0
    f_sum = 0.0
    is_num = 0.0
    is_den = 0.0
    accepted = 0
    events = 0
    ptr = 0
    nsnap = len(out_tvd)
    steps = 0
    while steps < max_steps:
        event = False
        new_last = last
        size = 0
        if kind == MHRW or (kind == TWO_CYCLE and phase == 0):
            nxt, ok = _mh(indptr, indices, log_mu, log_exc, log_deg, alpha, cur, prop, acc)
            c = 2.0
        elif kind == MTM or kind == TWO_CYCLE:
            nxt, ok = _mtm(indptr, indices, log_mu, log_exc, log_deg, alpha, mtm_k, mtm_h, cur, prop, acc, cands, lw, wbuf, back)
            c = 2.0 * mtm_k
        elif kind == MHDA:
            nxt, ok, new_last, event = _mhda(indptr, indices, log_mu, log_exc, log_deg, alpha, cur, last, prop, acc)
            c = 4.0 if event else 2.0
        else:
            nxt, size, event = _srrw(indptr, indices, log_mu, log_exc, log_deg, alpha, cur, prop, nodes, probs, weights)
            ok = nxt != cur
            c = 2.0 * size
        new_cost = cost + c
        if new_cost > budget:
            break
        if cost_indexed:
            while ptr < nsnap and snap_costs[ptr] < new_cost:
                out_step[ptr] = steps
                out_cost[ptr] = cost
                _record(emp, m, mu, f_sum, is_num, is_den, out_tvd, out_est, out_is, ptr)
                ptr += 1
        if kind == MHDA:
            last = new_last
        if kind == TWO_CYCLE:
            phase = 1 - phase
        cur = nxt
        cost = new_cost
        steps += 1
        if ok:
            accepted += 1
        if event:
            events += 1
        counts[cur] += 1.0
        log_exc[cur] = math.log(counts[cur]) - log_mu[cur]
        if record:
            traj[steps] = cur
        if steps > burn_steps and cost > burn_cost:
            emp[cur] += 1
            m += 1
            f_sum += f[cur]
            is_num += f[cur] * inv_mu_tilde[cur]
            is_den += inv_mu_tilde[cur]
        if not cost_indexed:
            if ptr < nsnap and snap_steps[ptr] == steps:
                out_step[ptr] = steps
                out_cost[ptr] = cost
                _record(emp, m, mu, f_sum, is_num, is_den, out_tvd, out_est, out_is, ptr)
                ptr += 1
    while ptr < nsnap:
        out_step[ptr] = steps
        out_cost[ptr] = cost
        _record(emp, m, mu, f_sum, is_num, is_den, out_tvd, out_est, out_is, ptr)
        ptr += 1
    return steps, cost, accepted, events
