"""Executable checks of the FO convergence theory, plus the speedup model.

Time indices here are 1-based to match the depletion-time definition:
``s_1`` is the initial state and ``tau_j`` is the first ``t`` in ``1..T``
with ``c_{t,j} = 0`` on the sequential trajectory (``T + 1`` if none).
``Q_t = {j : tau_j <= t}``.  Engine slots are 0-based, so slot ``t0``
serves order ``t0 + 1``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .core import PicardResult


@dataclass(frozen=True)
class DepletionProfile:
    tau: np.ndarray
    T: int

    @property
    def Q_T(self) -> frozenset[int]:
        return frozenset(int(j) for j in np.flatnonzero(self.tau <= self.T))

    @property
    def sorted_tau(self) -> np.ndarray:
        return np.sort(self.tau)

    def Q(self, t: int) -> frozenset[int]:
        return frozenset(int(j) for j in np.flatnonzero(self.tau <= t))

    def depleted_mask(self, t: int) -> np.ndarray:
        return self.tau <= t


def compute_depletion(capacities) -> DepletionProfile:
    """Depletion times from the ``(T+1, J)`` sequential capacity trajectory."""
    c = np.asarray(capacities)
    if c.ndim != 2 or c.shape[0] < 1:
        raise ValueError("capacities must be (T+1, J)")
    T = c.shape[0] - 1
    zero = c[:T] == 0
    tau = np.where(zero.any(axis=0), zero.argmax(axis=0) + 1, T + 1)
    return DepletionProfile(tau.astype(np.int64), T)


@dataclass(frozen=True)
class Violation:
    check: str
    k: int
    t: int
    m: int | None
    detail: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def write_violations(violations, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for v in violations:
            fh.write(v.to_json() + "\n")


def check_special_invariant(caches, oracle_actions, profile: DepletionProfile) -> list[Violation]:
    """Every cached action is the sequential one or a node already depleted by then.

    ``caches[k-1]`` is the cache after iteration ``k``.
    """
    seq = np.asarray(oracle_actions, dtype=np.int64)
    T = seq.size
    # allowed[t0, j]: node j depleted by order t0 + 1
    allowed = profile.tau[None, :] <= np.arange(1, T + 1)[:, None]
    out = []
    for k, cache in enumerate(caches, start=1):
        cache = np.asarray(cache, dtype=np.int64)
        bad = cache != seq
        is_node = cache >= 0
        ok_node = np.zeros(T, dtype=bool)
        ok_node[is_node] = allowed[np.flatnonzero(is_node), cache[is_node]]
        for t0 in np.flatnonzero(bad & ~ok_node):
            out.append(Violation("special_invariant", k, int(t0) + 1, None,
                                 f"cached {int(cache[t0])} vs sequential {int(seq[t0])}"))
    return out


def check_monotonicity_invariant(snapshots, oracle_states, profile: DepletionProfile
                                 ) -> list[Violation]:
    """Process-local stock and capacity never fall below sequential on live nodes.

    ``snapshots`` come from a Picard run with ``snapshot_stride > 0`` and hold
    full ``FOState`` copies; ``oracle_states[t0]`` is the sequential state
    entering slot ``t0``.
    """
    out = []
    for snap in snapshots:
        t0 = snap.t
        live = ~profile.depleted_mask(t0 + 1)
        seq = oracle_states[t0]
        x_bad = (snap.state.x < seq.x) & live[None, :]
        c_bad = (snap.state.c < seq.c) & live
        for i, j in zip(*np.nonzero(x_bad)):
            out.append(Violation("monotonicity_inventory", snap.k, t0 + 1, snap.m,
                                 f"x[{i},{j}]={int(snap.state.x[i, j])} < {int(seq.x[i, j])}"))
        for j in np.flatnonzero(c_bad):
            out.append(Violation("monotonicity_capacity", snap.k, t0 + 1, snap.m,
                                 f"c[{j}]={int(snap.state.c[j])} < {int(seq.c[j])}"))
    return out


@dataclass(frozen=True)
class BoundCheck:
    bound: int
    iterations: int | None
    satisfied: bool


def check_iteration_bound(result: PicardResult, profile: DepletionProfile) -> BoundCheck:
    """Iterations to the correct cache versus ``|Q_T| + 1``."""
    bound = len(profile.Q_T) + 1
    k = result.iterations_to_correct
    if k is None:
        raise ValueError("result carries no iterations_to_correct; run with oracle_actions")
    return BoundCheck(bound, k, k <= bound)


def speedup_model(eta: float, M: int, K: int) -> float:
    """``(eta + 1) / ((eta + 1/M) * K)`` for batch size ``M`` and ``K`` iterations.

    ``eta`` is transition cost over policy cost.
    """
    if eta < 0 or M < 1 or K < 1:
        raise ValueError("need eta >= 0, M >= 1, K >= 1")
    return (eta + 1.0) / ((eta + 1.0 / M) * K)


def evaluation_speedup_proxy(result, T: int) -> float:
    """``T`` over the critical-path policy-evaluation count."""
    if T < 1:
        raise ValueError("T must be >= 1")
    return T / result.policy_eval_count_sequential_equivalent

