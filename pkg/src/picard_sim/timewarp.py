"""Optimistic windowed baseline for FO (a Time Warp variant).

From a synchronized state at ``t0`` every process runs ahead over
``[t0, t0 + delta)``, evaluating the policy on its own orders and leaving
the rest unfulfilled.  The proposals are then replayed in time order on the
global state.  With product partitioning and an assumption-clean policy,
a window no longer than the smallest remaining capacity is safe: no node's
capacity sign can flip inside the window, so every proposal matches the
sequential decision.  The default window is the plain minimum capacity
over all nodes (at least 1); ``window_rule="live"`` ignores exhausted
nodes and gives far longer windows.  A proposal that turns out infeasible
on replay rolls the window back and re-runs it serially; uncertified
policies are checked against a serial re-run of every window.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import PartitionPlan
from .fo_env import NULL
from .instgen import Instance, make_product_partition
from .policies import FOSampler, check_assumptions


@dataclass(frozen=True)
class WindowRow:
    chunk_index: int
    k: int
    changed_slots: int
    max_evals: int
    t_reset: int
    window_length: int

    HEADER = ("chunk_index", "k", "changed_slots", "max_evals", "t_reset", "window_length")

    def as_row(self) -> tuple:
        return (self.chunk_index, self.k, self.changed_slots, self.max_evals, self.t_reset,
                self.window_length)


@dataclass
class TimeWarpResult:
    actions: np.ndarray
    sync_rounds: int
    rollbacks: int
    policy_eval_count_sequential_equivalent: int
    total_policy_evals: int
    window_lengths: list[int] = field(default_factory=list)
    trace: list[WindowRow] = field(default_factory=list)


def safe_window(c: np.ndarray, remaining: int, rule: str = "all") -> int:
    """Window length from capacities ``c``, clamped to ``[1, remaining]``.

    ``rule="live"`` takes the minimum over nodes with capacity left;
    ``rule="all"`` takes the plain minimum, which is zero (hence 1) once
    any node is exhausted.
    """
    if rule == "live":
        live = c[c > 0]
        delta = int(live.min()) if live.size else remaining
    elif rule == "all":
        delta = int(c.min()) if c.size else remaining
    else:
        raise ValueError(f"unknown window rule {rule!r}")
    return max(1, min(delta, remaining))


def is_product_partition(plan: PartitionPlan, products: np.ndarray) -> bool:
    first = {}
    for i, m in zip(products.tolist(), plan.owner.tolist()):
        if first.setdefault(i, m) != m:
            return False
    return True


def _undo(state, log):
    for i, a in reversed(log):
        state.c[a] += 1
        state.x[i, a] += 1


def time_warp_simulate(instance: Instance, policy, M: int, seed=0, *,
                       plan: PartitionPlan | None = None, check_preconditions: bool = True,
                       window_rule: str = "all", assumption_trials: int = 64,
                       record_trace: bool = False) -> TimeWarpResult:
    """Run the windowed optimistic baseline.

    With ``check_preconditions`` the plan must keep every product on one
    process and the policy must pass a seeded :func:`check_assumptions`
    battery; otherwise ``ValueError``.  Without it nothing certifies the
    proposals, so each window is re-derived serially on the synchronized
    state (the cost shows up in the eval counts) and any mismatch counts
    as a rollback.
    """
    verify = not check_preconditions
    orders = instance.orders
    T = len(orders)
    if plan is None:
        plan = make_product_partition(instance, M, seed)
    if plan.T != T or plan.M != M:
        raise ValueError("plan does not match instance horizon or M")
    if check_preconditions:
        if not is_product_partition(plan, orders.products):
            raise ValueError("time warp needs all orders of a product on one process")
        sampler = FOSampler(I=min(instance.I, 4), J=instance.J)
        report = check_assumptions(policy, sampler, assumption_trials, seed=seed)
        if not report.clean:
            raise ValueError(f"policy violates the structural assumptions: {report.violations}")

    env = instance.env()
    state = env.initial_state()
    actions = np.full(T, NULL, dtype=np.int64)
    owner = plan.owner
    rounds = rollbacks = seq_equiv = total = 0
    lengths: list[int] = []
    trace: list[WindowRow] = []

    t0 = 0
    while t0 < T:
        delta = safe_window(state.c, T - t0, window_rule)
        t1 = t0 + delta
        own = owner[t0:t1]
        loads = np.bincount(own, minlength=M)
        by_process = np.argsort(own, kind="stable") + t0
        proposals = np.full(delta, NULL, dtype=np.int64)

        start = 0
        for m in np.flatnonzero(loads):
            log = []
            for t in by_process[start:start + loads[m]].tolist():
                o = orders[t]
                a = policy.evaluate(state, o)
                if a != NULL:
                    env.apply(state, a, o)
                    log.append((o.product, a))
                proposals[t - t0] = a
            _undo(state, log)
            start += loads[m]
        max_load = int(loads.max())
        cost = max_load
        total += int(loads.sum())

        applied = []
        conflict = False
        changed = 0
        if verify:
            # uncertified policy: re-derive every decision on the synchronized state
            for t in range(t0, t1):
                o = orders[t]
                a = policy.evaluate(state, o)
                env.apply(state, a, o)
                if a != proposals[t - t0]:
                    conflict = True
                    changed += 1
                    proposals[t - t0] = a
            cost += delta
            total += delta
            rollbacks += conflict
        else:
            for t in range(t0, t1):
                o = orders[t]
                a = int(proposals[t - t0])
                if not env.feasible(state, o, a):
                    conflict = True
                    break
                env.apply(state, a, o)
                if a != NULL:
                    applied.append((o.product, a))
            if conflict:
                _undo(state, applied)
                rollbacks += 1
                serial = np.empty(delta, dtype=np.int64)
                for t in range(t0, t1):
                    o = orders[t]
                    a = policy.evaluate(state, o)
                    env.apply(state, a, o)
                    serial[t - t0] = a
                changed = int((serial != proposals).sum())
                proposals = serial
                cost += delta
                total += delta

        actions[t0:t1] = proposals
        seq_equiv += cost
        lengths.append(delta)
        if record_trace:
            trace.append(WindowRow(rounds, 2 if conflict else 1, changed, max_load, t0, delta))
        rounds += 1
        t0 = t1

    return TimeWarpResult(actions, rounds, rollbacks, seq_equiv, total, lengths, trace)
