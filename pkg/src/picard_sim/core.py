"""Environment-agnostic simulation engine.

The engine simulates one trajectory of a deterministic policy either serially
(the oracle) or by Picard iteration over an action cache shared by ``M``
logical processes.  Environments plug in by subclassing :class:`Environment`;
policies by subclassing :class:`Policy`.
"""

from __future__ import annotations

import bisect
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple, Sequence

import numpy as np

log = logging.getLogger(__name__)


class ContractViolation(RuntimeError):
    """A policy or cache produced an action that is infeasible where it was applied."""

    def __init__(self, message: str, t: int | None = None):
        super().__init__(message)
        self.t = t


class MaxIterationsExceeded(RuntimeError):
    """Picard iteration hit its safety cap.

    With a deterministic policy this cannot happen before ``T`` passes, so it
    points at hidden randomness in the policy or a broken environment.
    """

    def __init__(self, message: str, trace: list, cache: Sequence):
        super().__init__(message)
        self.trace = trace
        self.cache = cache


class Environment:
    """Deterministic dynamics ``f(s, a, omega)`` with an always-feasible null action.

    Subclasses must implement ``initial_state``, ``copy_state``, ``feasible``
    and ``apply``.  ``apply`` mutates a state in place; the engine only calls it
    on states it owns, so :meth:`transition` stays pure.
    """

    null_action: Any = None

    def initial_state(self):
        raise NotImplementedError

    def copy_state(self, state):
        raise NotImplementedError

    def feasible(self, state, omega, action) -> bool:
        raise NotImplementedError

    def apply(self, state, action, omega) -> None:
        raise NotImplementedError

    def transition(self, state, action, omega):
        if not self.feasible(state, omega, action):
            raise ContractViolation(f"infeasible action {action!r}")
        nxt = self.copy_state(state)
        self.apply(nxt, action, omega)
        return nxt

    def same_action(self, a, b) -> bool:
        return a == b

    def new_cache(self, actions: Sequence) -> list:
        return list(actions)

    def copy_cache(self, cache):
        return list(cache)

    def changed_slots(self, old, new, lo: int, hi: int) -> list[int]:
        return [t for t in range(lo, hi) if not self.same_action(old[t], new[t])]

    def actions_match(self, a: Sequence, b: Sequence) -> bool:
        if len(a) != len(b):
            return False
        return all(self.same_action(x, y) for x, y in zip(a, b))

    def picard_pass(self, policy, disturbances, plan, cache, lo, hi, checkpoint):
        """Optional accelerated Picard pass.

        Return ``(new_cache, evals_per_process)`` with exactly the semantics of
        the generic pass, or ``None`` to fall back to it.
        """
        return None


class Policy:
    """Deterministic map ``(state, omega) -> action``.

    ``cost_class`` is only used for bookkeeping; the engine counts every
    ``evaluate`` call regardless.
    """

    cost_class = "expensive"

    def evaluate(self, state, omega):
        raise NotImplementedError

    def __call__(self, state, omega):
        return self.evaluate(state, omega)


@dataclass(frozen=True)
class PartitionPlan:
    """Assignment of every time-step to one of ``M`` processes (0-based)."""

    owner: np.ndarray
    M: int

    def __post_init__(self):
        owner = np.ascontiguousarray(self.owner, dtype=np.int64)
        if self.M < 1:
            raise ValueError(f"M must be >= 1, got {self.M}")
        if owner.ndim != 1:
            raise ValueError("owner must be one-dimensional")
        if owner.size and (owner.min() < 0 or owner.max() >= self.M):
            raise ValueError("owner entries must lie in [0, M)")
        owner.setflags(write=False)
        object.__setattr__(self, "owner", owner)

    @property
    def T(self) -> int:
        return int(self.owner.size)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.owner, minlength=self.M)

    def loads(self, lo: int, hi: int) -> np.ndarray:
        return np.bincount(self.owner[lo:hi], minlength=self.M)

    def members(self, m: int) -> np.ndarray:
        return np.flatnonzero(self.owner == m)


def single_process_plan(T: int) -> PartitionPlan:
    return PartitionPlan(np.zeros(T, dtype=np.int64), 1)


def make_uniform_time_partition(T: int, M: int, seed) -> PartitionPlan:
    """Assign each time-step independently and uniformly to one of ``M`` processes."""
    if T < 0:
        raise ValueError("T must be >= 0")
    if M < 1:
        raise ValueError("M must be >= 1")
    rng = np.random.default_rng(seed)
    return PartitionPlan(rng.integers(0, M, size=T, dtype=np.int64), M)


@dataclass
class PicardConfig:
    """Knobs for :func:`picard_simulate`.

    ``max_steps=None`` means ``300 * M``; ``0`` runs every pass over the whole
    remaining horizon.  ``max_iterations=None`` means ``max(T, 1)``.
    ``snapshot_stride > 0`` records every process's state (through
    ``snapshot_fn``) at time-steps divisible by the stride; it forces the
    generic pass.
    """

    M: int | None = None
    max_steps: int | None = None
    max_iterations: int | None = None
    initial_cache: Sequence | None = None
    record_trace: bool = False
    record_caches: bool = False
    snapshot_stride: int = 0
    snapshot_fn: Callable | None = None
    threads: int = 1

    def window_width(self, M: int, T: int) -> int:
        steps = 300 * M if self.max_steps is None else self.max_steps
        if steps < 0:
            raise ValueError("max_steps must be >= 0")
        return T if steps == 0 else steps


@dataclass(frozen=True)
class TraceRow:
    chunk_index: int
    k: int
    changed_slots: int
    max_evals: int
    t_reset: int
    window_lo: int
    window_hi: int

    HEADER = ("chunk_index", "k", "changed_slots", "max_evals", "t_reset")

    def as_row(self) -> tuple:
        return (self.chunk_index, self.k, self.changed_slots, self.max_evals, self.t_reset)


@dataclass(frozen=True)
class Snapshot:
    k: int
    m: int
    t: int
    state: Any


@dataclass
class PicardResult:
    """``conflicts`` counts cache slots overwritten after an earlier pass had computed them."""

    actions: Sequence
    iterations_to_converged: int
    iterations_to_correct: int | None
    conflicts: int
    policy_eval_count_sequential_equivalent: int
    total_policy_evals: int
    trace: list[TraceRow] = field(default_factory=list)
    caches: list = field(default_factory=list)
    snapshots: list[Snapshot] = field(default_factory=list)


class SequentialRun(NamedTuple):
    actions: Sequence
    states: list | None


class IterationOutput(NamedTuple):
    cache: Sequence
    evals: np.ndarray
    changed: list[int]
    snapshots: list[Snapshot]


def sequential_simulate(env: Environment, policy: Policy, disturbances: Sequence,
                        keep_states: bool | Callable = True) -> SequentialRun:
    """Serial simulation; the ground truth every parallel scheme must reproduce.

    ``keep_states`` may be a callable projecting each state before it is
    stored (e.g. keep only capacities), or ``False`` to skip storage.
    """
    if keep_states is True:
        keep = env.copy_state
    elif keep_states is False:
        keep = None
    else:
        keep = keep_states
    state = env.copy_state(env.initial_state())
    states = [keep(state)] if keep else None
    actions = []
    for t, omega in enumerate(disturbances):
        a = policy.evaluate(state, omega)
        if not env.feasible(state, omega, a):
            raise ContractViolation(f"policy returned infeasible action {a!r} at t={t}", t=t)
        env.apply(state, a, omega)
        actions.append(a)
        if keep:
            states.append(keep(state))
    return SequentialRun(env.new_cache(actions), states)


def _process_pass(env, policy, disturbances, owner, cache, lo, hi, checkpoint, m,
                  snap_stride, snap_fn, k):
    state = env.copy_state(checkpoint)
    writes = {}
    evals = 0
    snaps = []
    null = env.null_action
    for t in range(lo, hi):
        omega = disturbances[t]
        if snap_stride and t % snap_stride == 0:
            snaps.append(Snapshot(k, m, t, snap_fn(state)))
        if owner[t] == m:
            a = policy.evaluate(state, omega)
            evals += 1
            if not env.feasible(state, omega, a):
                raise ContractViolation(
                    f"process {m} policy returned infeasible action {a!r} at t={t}", t=t)
            writes[t] = a
        else:
            a = cache[t]
            if not env.feasible(state, omega, a):
                a = null
        env.apply(state, a, omega)
    return writes, evals, snaps


def picard_iterate_once(env: Environment, policy: Policy, disturbances: Sequence,
                        plan: PartitionPlan, cache: Sequence, window: tuple[int, int],
                        checkpoint_state, *, threads: int = 1, k: int = 0,
                        snapshot_stride: int = 0,
                        snapshot_fn: Callable | None = None) -> IterationOutput:
    """One Picard pass over ``window = (lo, hi)`` against a frozen cache.

    ``checkpoint_state`` must be the state reached by applying ``cache[:lo]``.
    Every process starts from it, evaluates the policy on the slots it owns
    and replays cached actions (or the null action, where a cached one is
    infeasible locally) elsewhere.  Owned slots are published to a copy of
    the cache only after all processes finish.
    """
    lo, hi = window
    if not 0 <= lo <= hi <= len(cache):
        raise ValueError(f"bad window {window} for horizon {len(cache)}")
    M = plan.M

    if not snapshot_stride:
        fast = env.picard_pass(policy, disturbances, plan, cache, lo, hi, checkpoint_state)
        if fast is not None:
            new_cache, evals = fast
            return IterationOutput(new_cache, np.asarray(evals, dtype=np.int64),
                                   env.changed_slots(cache, new_cache, lo, hi), [])

    if snapshot_stride:
        snap_fn = snapshot_fn or env.copy_state
        active = range(M)
    else:
        snap_fn = None
        active = np.flatnonzero(plan.loads(lo, hi)).tolist()

    def run(m):
        return _process_pass(env, policy, disturbances, plan.owner, cache, lo, hi,
                             checkpoint_state, m, snapshot_stride, snap_fn, k)

    if threads > 1 and len(active) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(run, active))
    else:
        outputs = [run(m) for m in active]

    new_cache = env.copy_cache(cache)
    evals = np.zeros(M, dtype=np.int64)
    snaps = []
    for m, (writes, n, s) in zip(active, outputs):
        for t, a in writes.items():
            new_cache[t] = a
        evals[m] = n
        snaps.extend(s)
    return IterationOutput(new_cache, evals, env.changed_slots(cache, new_cache, lo, hi), snaps)


def picard_simulate(env: Environment, policy: Policy, disturbances: Sequence,
                    plan: PartitionPlan, config: PicardConfig | None = None,
                    oracle_actions: Sequence | None = None) -> PicardResult:
    """Simulate by Picard iteration; returns exactly the sequential actions.

    The pass window is ``[lo, min(T, lo + width))`` where ``lo`` is one past
    the first slot that changed in the previous pass (``t_reset + 1``): every
    slot up to and including ``t_reset`` is provably final.  A pass with no
    changes certifies its whole window.  When ``oracle_actions`` is given,
    ``iterations_to_correct`` records the first pass whose cache equals it.
    """
    config = config or PicardConfig()
    T = len(disturbances)
    if plan.T != T:
        raise ValueError(f"plan covers {plan.T} steps but horizon is {T}")
    M = plan.M
    if config.M is not None and config.M != M:
        raise ValueError(f"config.M={config.M} disagrees with plan.M={M}")
    if oracle_actions is not None and len(oracle_actions) != T:
        raise ValueError("oracle_actions length differs from horizon")
    width = config.window_width(M, T)
    max_iter = config.max_iterations if config.max_iterations is not None else max(T, 1)
    if max_iter < 1:
        raise ValueError("max_iterations must be >= 1")

    if config.initial_cache is not None:
        if len(config.initial_cache) != T:
            raise ValueError("initial_cache length differs from horizon")
        cache = env.new_cache(config.initial_cache)
    else:
        cache = env.new_cache([env.null_action] * T)

    correct_at = None
    if oracle_actions is not None and env.actions_match(cache, oracle_actions):
        correct_at = 0

    checkpoint = env.copy_state(env.initial_state())
    lo = 0
    k = 0
    chunk = 0
    conflicts = 0
    computed_hi = 0  # slots below this were written by an earlier pass
    seq_equiv = 0
    total = 0
    trace: list[TraceRow] = []
    caches = []
    snapshots: list[Snapshot] = []

    while lo < T:
        if k >= max_iter:
            raise MaxIterationsExceeded(
                f"no convergence after {k} iterations (certified prefix {lo}/{T})",
                trace, cache)
        hi = min(T, lo + width)
        k += 1
        chunk_index = chunk
        out = picard_iterate_once(env, policy, disturbances, plan, cache, (lo, hi), checkpoint,
                                  threads=config.threads, k=k,
                                  snapshot_stride=config.snapshot_stride,
                                  snapshot_fn=config.snapshot_fn)
        cache = out.cache
        max_evals = int(out.evals.max()) if M else 0
        seq_equiv += max_evals
        total += int(out.evals.sum())
        conflicts += bisect.bisect_left(out.changed, computed_hi)
        computed_hi = max(computed_hi, hi)
        if out.changed:
            t_reset = out.changed[0]
            new_lo = t_reset + 1
        else:
            t_reset = hi
            new_lo = hi
            chunk += 1
        for t in range(lo, new_lo):
            omega = disturbances[t]
            a = cache[t]
            if not env.feasible(checkpoint, omega, a):
                raise ContractViolation(f"certified cache action infeasible at t={t}", t=t)
            env.apply(checkpoint, a, omega)
        if config.record_trace:
            trace.append(TraceRow(chunk_index, k, len(out.changed),
                                  max_evals, t_reset, lo, hi))
        if config.record_caches:
            caches.append(env.copy_cache(cache))
        snapshots.extend(out.snapshots)
        if correct_at is None and oracle_actions is not None \
                and env.actions_match(cache, oracle_actions):
            correct_at = k
        log.debug("pass k=%d window=[%d,%d) changed=%d max_evals=%d",
                  k, lo, hi, len(out.changed), max_evals)
        lo = new_lo

    return PicardResult(
        actions=cache,
        iterations_to_converged=k,
        iterations_to_correct=correct_at,
        conflicts=conflicts,
        policy_eval_count_sequential_equivalent=seq_equiv,
        total_policy_evals=total,
        trace=trace,
        caches=caches,
        snapshots=snapshots,
    )


class OracleComparison(NamedTuple):
    equal: bool
    first_mismatch: int | None


def compare_to_oracle(result, oracle_actions: Sequence,
                      same_action: Callable | None = None) -> OracleComparison:
    """Exact element-wise comparison of Picard output with sequential actions."""
    actions = result.actions if isinstance(result, PicardResult) else result
    if len(actions) != len(oracle_actions):
        raise ValueError(f"length mismatch: {len(actions)} vs {len(oracle_actions)}")
    if same_action is None and isinstance(actions, np.ndarray) \
            and isinstance(oracle_actions, np.ndarray) and actions.ndim == 1:
        diff = np.flatnonzero(actions != oracle_actions)
        return OracleComparison(diff.size == 0, int(diff[0]) if diff.size else None)
    same = same_action or (lambda a, b: bool(np.all(a == b)))
    for t, (a, b) in enumerate(zip(actions, oracle_actions)):
        if not same(a, b):
            return OracleComparison(False, t)
    return OracleComparison(True, None)
