"""FO policies and an empirical checker for the structural assumptions.

All policies break ties toward the lowest node index and never prefer the
null action over a feasible node with the same score.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels
from .core import Policy
from .fo_env import NULL, FOState, Order

HIDDEN = 64

_ZERO_WEIGHTS = (_kernels.EMPTY2, _kernels.EMPTY1) * 3


class GreedyPolicy(Policy):
    """Highest-reward node with positive capacity and inventory."""

    def evaluate(self, state: FOState, order: Order) -> int:
        return int(_kernels.greedy_choice(state.x[order.product], state.c, order.rewards))

    def kernel_args(self):
        return _kernels.GREEDY, 0.0, None, None, 1.0, _ZERO_WEIGHTS


def greedy_evaluate(state: FOState, order: Order) -> int:
    return GreedyPolicy().evaluate(state, order)


class CapacityPenalizedPolicy(Policy):
    """Greedy on ``r_j + gamma * c_j / max(c)``.

    ``gamma=0`` is greedy; as ``gamma`` grows the choice tends to the feasible
    node with the most remaining capacity.
    """

    def __init__(self, gamma: float):
        if not gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {gamma}")
        self.gamma = float(gamma)

    def evaluate(self, state: FOState, order: Order) -> int:
        return int(_kernels.penalized_choice(state.x[order.product], state.c,
                                             order.rewards, self.gamma))

    def kernel_args(self):
        return _kernels.PENALIZED, self.gamma, None, None, 1.0, _ZERO_WEIGHTS


def capacity_penalized_evaluate(policy: CapacityPenalizedPolicy, state: FOState, order: Order) -> int:
    return policy.evaluate(state, order)


class DualNetworkPolicy(Policy):
    """Bid-price policy whose prices come from a two-hidden-layer tanh MLP.

    The network reads ``[c / c1, x_i / x1_i, t / T]`` (length ``2J + 1``) and
    emits ``2J`` prices: per-node inventory prices for the order's product,
    then per-node capacity prices.  The order goes to the feasible node with
    the largest ``r_j - price_inv_j - price_cap_j``, or nowhere if that is
    negative.
    """

    def __init__(self, layers, x1, c1, horizon: int):
        layers = [(np.ascontiguousarray(W, dtype=np.float64),
                   np.ascontiguousarray(b, dtype=np.float64)) for W, b in layers]
        if len(layers) != 3:
            raise ValueError("expected exactly three layers")
        x1 = np.ascontiguousarray(x1, dtype=np.int64)
        c1 = np.ascontiguousarray(c1, dtype=np.int64)
        J = c1.size
        sizes = layer_sizes(layers)
        if sizes[0] != 2 * J + 1 or sizes[-1] != 2 * J:
            raise ValueError(f"layer sizes {sizes} do not fit J={J}")
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.layers = layers
        self.x1 = x1
        self.c1 = c1
        self.horizon = int(horizon)
        self._flat = tuple(a for W, b in layers for a in (W, b))

    @classmethod
    def zeros(cls, x1, c1, horizon: int, hidden: int = HIDDEN) -> "DualNetworkPolicy":
        J = np.asarray(c1).size
        sizes = [2 * J + 1, hidden, hidden, 2 * J]
        layers = [(np.zeros((o, i)), np.zeros(o)) for i, o in zip(sizes[:-1], sizes[1:])]
        return cls(layers, x1, c1, horizon)

    @classmethod
    def random(cls, x1, c1, horizon: int, seed, scale: float = 0.1,
               hidden: int = HIDDEN) -> "DualNetworkPolicy":
        rng = np.random.default_rng(seed)
        J = np.asarray(c1).size
        sizes = [2 * J + 1, hidden, hidden, 2 * J]
        layers = [(rng.uniform(-scale, scale, (o, i)), rng.uniform(-scale, scale, o))
                  for i, o in zip(sizes[:-1], sizes[1:])]
        return cls(layers, x1, c1, horizon)

    def prices(self, state: FOState, order: Order) -> np.ndarray:
        i = order.product
        return _kernels.dual_prices(state.x[i], self.x1[i], state.c, self.c1,
                                    order.t / float(self.horizon), *self._flat)

    def evaluate(self, state: FOState, order: Order) -> int:
        i = order.product
        a = int(_kernels.dual_choice(state.x[i], self.x1[i], state.c, self.c1, order.rewards,
                                     order.t / float(self.horizon), *self._flat))
        if a == _kernels.NONFINITE:
            raise ValueError(f"non-finite network output at t={order.t}")
        return a

    def kernel_args(self):
        return _kernels.DUAL, 0.0, self.x1, self.c1, float(self.horizon), self._flat

    def to_bytes(self) -> bytes:
        return params_to_bytes(self.layers)

    @classmethod
    def from_bytes(cls, blob: bytes, x1, c1, horizon: int) -> "DualNetworkPolicy":
        return cls(params_from_bytes(blob), x1, c1, horizon)


def dual_network_evaluate(policy: DualNetworkPolicy, state: FOState, order: Order) -> int:
    return policy.evaluate(state, order)


def layer_sizes(layers) -> list[int]:
    sizes = [layers[0][0].shape[1]]
    for W, b in layers:
        if W.shape[1] != sizes[-1] or b.shape != (W.shape[0],):
            raise ValueError("inconsistent layer shapes")
        sizes.append(W.shape[0])
    return sizes


def params_to_bytes(layers) -> bytes:
    """Flat record: ``n`` then ``n`` layer widths (``<i4``), then per layer
    the row-major ``(out, in)`` weights and the ``out`` biases (``<f8``)."""
    sizes = layer_sizes(layers)
    parts = [struct.pack(f"<{len(sizes) + 1}i", len(sizes), *sizes)]
    for W, b in layers:
        parts.append(np.ascontiguousarray(W, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(parts)


def params_from_bytes(blob: bytes):
    (n,) = struct.unpack_from("<i", blob, 0)
    sizes = struct.unpack_from(f"<{n}i", blob, 4)
    offset = 4 * (n + 1)
    layers = []
    for i, o in zip(sizes[:-1], sizes[1:]):
        W = np.frombuffer(blob, dtype="<f8", count=o * i, offset=offset).reshape(o, i)
        offset += 8 * o * i
        b = np.frombuffer(blob, dtype="<f8", count=o, offset=offset)
        offset += 8 * o
        layers.append((W.astype(np.float64), b.astype(np.float64)))
    if offset != len(blob):
        raise ValueError(f"trailing bytes in parameter record ({len(blob) - offset})")
    return layers


class ConstantPolicy(Policy):
    def __init__(self, action=NULL):
        self.action = action

    def evaluate(self, state, order):
        return self.action


@dataclass
class FOSampler:
    """Random small FO states and orders for assumption probing."""

    I: int = 3
    J: int = 4
    max_inventory: int = 3
    max_capacity: int = 4

    def __call__(self, rng: np.random.Generator) -> tuple[FOState, Order]:
        x = rng.integers(0, self.max_inventory + 1, size=(self.I, self.J))
        c = rng.integers(0, self.max_capacity + 1, size=self.J)
        product = int(rng.integers(self.I))
        rewards = np.round(rng.random(self.J), 3)
        return FOState(x.astype(np.int64), c.astype(np.int64)), Order(0, product, rewards)


@dataclass
class AssumptionReport:
    trials: int
    checks: dict[int, int] = field(default_factory=lambda: {1: 0, 2: 0, 3: 0})
    violations: dict[int, int] = field(default_factory=lambda: {1: 0, 2: 0, 3: 0})
    witnesses: dict[int, dict] = field(default_factory=dict)

    @property
    def clean(self) -> bool:
        return not any(self.violations.values())

    def _record(self, which: int, ok: bool, **witness):
        self.checks[which] += 1
        if not ok:
            self.violations[which] += 1
            self.witnesses.setdefault(which, witness)


def _witness(state, order, perturbed, before, after):
    return {
        "x": state.x.tolist(), "c": state.c.tolist(),
        "product": order.product, "rewards": order.rewards.tolist(),
        "perturbed_x": perturbed.x.tolist(), "perturbed_c": perturbed.c.tolist(),
        "before": int(before), "after": int(after),
    }


def check_assumptions(policy: Policy, sampler: Callable, trials: int,
                      seed=0) -> AssumptionReport:
    """Probe inventory independence, consistency and monotonicity on random inputs.

    Violations are returned as data.  Each trial runs one inventory-independence
    probe, one consistency probe, and monotonicity probes on the chosen node's
    inventory and on every node with positive capacity.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    report = AssumptionReport(trials)
    for _ in range(trials):
        state, order = sampler(rng)
        I, J = state.x.shape
        i = order.product
        j = policy.evaluate(state, order)

        if I > 1:
            other = int(rng.choice([p for p in range(I) if p != i]))
            s1 = state.copy()
            s1.x[other] = rng.integers(0, int(state.x.max()) + 2, size=J)
            after = policy.evaluate(s1, order)
            report._record(1, after == j, **_witness(state, order, s1, j, after))

        choices = [q for q in range(J) if q != j]
        if choices:
            jp = int(rng.choice(choices))
            s2 = state.copy()
            while s2.x[i, jp] == state.x[i, jp] and s2.c[jp] == state.c[jp]:
                s2.x[i, jp] = rng.integers(0, int(state.x.max()) + 2)
                s2.c[jp] = rng.integers(0, int(state.c.max()) + 2)
            after = policy.evaluate(s2, order)
            report._record(2, after in (j, jp), **_witness(state, order, s2, j, after))

        if j != NULL:
            s3 = state.copy()
            s3.x[i, j] += 1
            after = policy.evaluate(s3, order)
            report._record(3, after == j, **_witness(state, order, s3, j, after))
        for q in np.flatnonzero(state.c > 0):
            s4 = state.copy()
            s4.c[q] += 1
            after = policy.evaluate(s4, order)
            report._record(3, after == j, **_witness(state, order, s4, j, after))
    return report
