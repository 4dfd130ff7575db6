"""Fulfillment optimization (FO) dynamics.

Nodes are ``0..J-1`` and :data:`NULL` (``-1``) is the do-not-fulfill action.
Inventory is held as one length-``J`` row per product, so the state is an
``(I, J)`` integer array plus a length-``J`` capacity vector.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import ContractViolation, Environment

NULL = _kernels.NULL


@dataclass
class FOState:
    x: np.ndarray
    c: np.ndarray

    def copy(self) -> "FOState":
        return FOState(self.x.copy(), self.c.copy())


@dataclass(frozen=True)
class Order:
    t: int
    product: int
    rewards: np.ndarray
    origin: int = -1


class OrderSequence(Sequence):
    """Columnar disturbance sequence: one product id and one reward row per order."""

    def __init__(self, products, rewards, origins=None):
        products = np.ascontiguousarray(products, dtype=np.int64)
        rewards = np.ascontiguousarray(rewards, dtype=np.float64)
        if products.ndim != 1 or rewards.ndim != 2 or rewards.shape[0] != products.size:
            raise ValueError("products must be (T,) and rewards (T, J)")
        if not np.all(np.isfinite(rewards)):
            raise ValueError("rewards must be finite")
        if products.size and products.min() < 0:
            raise ValueError("product ids must be non-negative")
        if origins is None:
            origins = np.full(products.size, -1, dtype=np.int64)
        origins = np.ascontiguousarray(origins, dtype=np.int64)
        for arr in (products, rewards, origins):
            arr.setflags(write=False)
        self.products = products
        self.rewards = rewards
        self.origins = origins

    @property
    def J(self) -> int:
        return self.rewards.shape[1]

    def __len__(self) -> int:
        return self.products.size

    def __getitem__(self, t):
        if isinstance(t, slice):
            return OrderSequence(self.products[t], self.rewards[t], self.origins[t])
        if t < 0:
            t += len(self)
        return Order(t, int(self.products[t]), self.rewards[t], int(self.origins[t]))

    def counts(self, I: int) -> np.ndarray:
        return np.bincount(self.products, minlength=I)


def fo_feasible(state: FOState, order: Order, action: int) -> bool:
    if action == NULL:
        return True
    if not 0 <= action < state.c.shape[0]:
        return False
    return bool(state.c[action] > 0 and state.x[order.product, action] > 0)


def _apply(state: FOState, action: int, order: Order) -> None:
    if action != NULL:
        state.c[action] -= 1
        state.x[order.product, action] -= 1


def fo_transition(state: FOState, action: int, order: Order) -> FOState:
    """Fulfil ``order`` from node ``action`` (one unit of capacity and inventory)."""
    if not fo_feasible(state, order, action):
        raise ContractViolation(f"infeasible action {action} for order at t={order.t}", t=order.t)
    nxt = state.copy()
    _apply(nxt, action, order)
    return nxt


def fo_total_reward(orders: OrderSequence, actions) -> float:
    actions = np.asarray(actions, dtype=np.int64)
    if actions.size != len(orders):
        raise ValueError("orders and actions differ in length")
    hit = actions != NULL
    return float(orders.rewards[np.flatnonzero(hit), actions[hit]].sum())


def capacity_trajectory(c1, actions, J: int | None = None) -> np.ndarray:
    """``(T+1, J)`` capacities entering each step, replayed from ``actions``."""
    c1 = np.asarray(c1, dtype=np.int64)
    actions = np.asarray(actions, dtype=np.int64)
    J = c1.size if J is None else J
    used = np.zeros((actions.size + 1, J), dtype=np.int64)
    hit = np.flatnonzero(actions != NULL)
    used[hit + 1, actions[hit]] = 1
    return c1[None, :] - np.cumsum(used, axis=0)


class FOEnvironment(Environment):
    """FO dynamics bound to an initial inventory ``x1`` (I x J) and capacity ``c1`` (J)."""

    null_action = NULL

    def __init__(self, x1, c1):
        x1 = np.array(x1, dtype=np.int64)
        c1 = np.array(c1, dtype=np.int64)
        if x1.ndim != 2 or c1.ndim != 1 or x1.shape[1] != c1.size:
            raise ValueError("x1 must be (I, J) and c1 (J,)")
        if (x1 < 0).any() or (c1 < 0).any():
            raise ValueError("initial inventory and capacity must be non-negative")
        x1.setflags(write=False)
        c1.setflags(write=False)
        self.x1 = x1
        self.c1 = c1

    @property
    def I(self) -> int:
        return self.x1.shape[0]

    @property
    def J(self) -> int:
        return self.c1.size

    def initial_state(self) -> FOState:
        return FOState(self.x1.copy(), self.c1.copy())

    def copy_state(self, state: FOState) -> FOState:
        return state.copy()

    def feasible(self, state, omega, action) -> bool:
        return fo_feasible(state, omega, action)

    def apply(self, state, action, omega) -> None:
        _apply(state, action, omega)

    def transition(self, state, action, omega):
        return fo_transition(state, action, omega)

    def same_action(self, a, b) -> bool:
        return int(a) == int(b)

    def new_cache(self, actions):
        cache = np.array(actions, dtype=np.int64).reshape(-1)
        if cache.size and (cache.min() < NULL or cache.max() >= self.J):
            raise ValueError(f"cache actions must lie in [{NULL}, {self.J})")
        return cache

    def copy_cache(self, cache):
        return np.array(cache, dtype=np.int64)

    def changed_slots(self, old, new, lo, hi):
        return (np.flatnonzero(old[lo:hi] != new[lo:hi]) + lo).tolist()

    def actions_match(self, a, b) -> bool:
        return bool(np.array_equal(np.asarray(a), np.asarray(b)))

    def picard_pass(self, policy, disturbances, plan, cache, lo, hi, checkpoint):
        kernel_args = getattr(policy, "kernel_args", None)
        if kernel_args is None or not isinstance(disturbances, OrderSequence):
            return None
        kind, gamma, x1, c1, horizon, weights = kernel_args()
        if kind != _kernels.DUAL:
            x1, c1 = checkpoint.x, checkpoint.c
        new_cache, evals, bad_t = _kernels.picard_pass(
            lo, hi, plan.M, plan.owner, disturbances.products, disturbances.rewards,
            np.asarray(cache, dtype=np.int64), checkpoint.x, checkpoint.c,
            kind, float(gamma), x1, c1, float(horizon), *weights)
        if bad_t >= 0:
            raise ValueError(f"non-finite policy output at t={bad_t}")
        return new_cache, evals
