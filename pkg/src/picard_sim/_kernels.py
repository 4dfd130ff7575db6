"""Compiled FO policy scorers and the lockstep Picard pass.

The Python-side policies call the same scorers, so the generic and compiled
passes make bit-identical decisions.
"""

from __future__ import annotations

import numpy as np
from numba import njit

NULL = -1
NONFINITE = -2

GREEDY = 0
PENALIZED = 1
DUAL = 2

EMPTY2 = np.zeros((0, 0), dtype=np.float64)
EMPTY1 = np.zeros(0, dtype=np.float64)


@njit(cache=True)
def greedy_choice(xrow, c, r):
    best = NULL
    best_r = -np.inf
    for j in range(c.shape[0]):
        if c[j] > 0 and xrow[j] > 0 and r[j] > best_r:
            best = j
            best_r = r[j]
    return best


@njit(cache=True)
def penalized_choice(xrow, c, r, gamma):
    cmax = 0
    for j in range(c.shape[0]):
        if c[j] > cmax:
            cmax = c[j]
    if cmax <= 0:
        return NULL
    best = NULL
    best_s = -np.inf
    for j in range(c.shape[0]):
        if c[j] > 0 and xrow[j] > 0:
            s = r[j] + gamma * (c[j] / cmax)
            if s > best_s:
                best = j
                best_s = s
    return best


@njit(cache=True)
def dual_prices(xrow, x1row, c, c1, tfrac, W1, b1, W2, b2, W3, b3):
    """Forward pass; returns the length-2J output (inventory prices, capacity prices)."""
    J = c.shape[0]
    feat = np.empty(2 * J + 1)
    for j in range(J):
        feat[j] = c[j] / c1[j] if c1[j] > 0 else 0.0
        feat[J + j] = xrow[j] / x1row[j] if x1row[j] > 0 else 0.0
    feat[2 * J] = tfrac
    h1 = np.empty(W1.shape[0])
    for a in range(W1.shape[0]):
        acc = b1[a]
        for q in range(W1.shape[1]):
            acc += W1[a, q] * feat[q]
        h1[a] = np.tanh(acc)
    h2 = np.empty(W2.shape[0])
    for a in range(W2.shape[0]):
        acc = b2[a]
        for q in range(W2.shape[1]):
            acc += W2[a, q] * h1[q]
        h2[a] = np.tanh(acc)
    out = np.empty(W3.shape[0])
    for a in range(W3.shape[0]):
        acc = b3[a]
        for q in range(W3.shape[1]):
            acc += W3[a, q] * h2[q]
        out[a] = acc
    return out


@njit(cache=True)
def dual_choice(xrow, x1row, c, c1, r, tfrac, W1, b1, W2, b2, W3, b3):
    J = c.shape[0]
    out = dual_prices(xrow, x1row, c, c1, tfrac, W1, b1, W2, b2, W3, b3)
    for a in range(out.shape[0]):
        if not np.isfinite(out[a]):
            return NONFINITE
    best = NULL
    best_s = -np.inf
    for j in range(J):
        if c[j] > 0 and xrow[j] > 0:
            s = r[j] - out[j] - out[J + j]
            if s > best_s:
                best = j
                best_s = s
    if best != NULL and best_s < 0.0:
        return NULL
    return best


@njit(cache=True)
def choose(kind, xrow, c, r, t, gamma, x1row, c1, horizon, W1, b1, W2, b2, W3, b3):
    if kind == GREEDY:
        return greedy_choice(xrow, c, r)
    if kind == PENALIZED:
        return penalized_choice(xrow, c, r, gamma)
    return dual_choice(xrow, x1row, c, c1, r, t / horizon, W1, b1, W2, b2, W3, b3)


@njit(cache=True)
def picard_pass(lo, hi, M, owner, products, rewards, cache, x_ck, c_ck,
                kind, gamma, x1, c1, horizon, W1, b1, W2, b2, W3, b3):
    """All processes of one Picard pass, run one after another on a shared buffer.

    Each process's inventory edits are undone from the checkpoint before the
    next process starts, so no process sees another's state.  Returns
    ``(new_cache, evals, bad_t)``; ``bad_t >= 0`` flags a non-finite score.
    ``x1``/``c1`` are only read by the dual policy but must index like ``x_ck``.
    """
    new_cache = cache.copy()
    evals = np.zeros(M, dtype=np.int64)
    loads = np.zeros(M, dtype=np.int64)
    for t in range(lo, hi):
        loads[owner[t]] += 1
    x = x_ck.copy()
    c = np.empty_like(c_ck)
    ti = np.empty(hi - lo, dtype=np.int64)
    tj = np.empty(hi - lo, dtype=np.int64)
    for m in range(M):
        if loads[m] == 0:
            continue
        c[:] = c_ck
        n = 0
        for t in range(lo, hi):
            i = products[t]
            if owner[t] == m:
                a = choose(kind, x[i], c, rewards[t], t, gamma, x1[i], c1, horizon,
                           W1, b1, W2, b2, W3, b3)
                evals[m] += 1
                if a == NONFINITE:
                    return new_cache, evals, t
                new_cache[t] = a
            else:
                a = cache[t]
                if a >= 0 and (c[a] <= 0 or x[i, a] <= 0):
                    a = NULL
            if a >= 0:
                c[a] -= 1
                x[i, a] -= 1
                ti[n] = i
                tj[n] = a
                n += 1
        for q in range(n):
            x[ti[q], tj[q]] = x_ck[ti[q], tj[q]]
    return new_cache, evals, -1
