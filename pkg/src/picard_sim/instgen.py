"""Synthetic FO instances and the partitioning strategies that go with them.

Nodes sit in the largest city of each of the 30 most populous US states and
carry the state's population as demand/stock weight.  Order origins are
nodes drawn by population; the reward for fulfilling from node ``j`` falls
linearly with great-circle distance, from 1 at the origin to 0 at the
farthest node.
"""

from __future__ import annotations

import csv
import hashlib
import heapq
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import PartitionPlan
from .fo_env import FOEnvironment, OrderSequence

EARTH_RADIUS_KM = 6371.0088

# (city, state, lat, lon, 2020 census state population)
NODE_TABLE = [
    ("Los Angeles", "CA", 34.0522, -118.2437, 39538223),
    ("Houston", "TX", 29.7604, -95.3698, 29145505),
    ("Jacksonville", "FL", 30.3322, -81.6557, 21538187),
    ("New York", "NY", 40.7128, -74.0060, 20201249),
    ("Philadelphia", "PA", 39.9526, -75.1652, 13002700),
    ("Chicago", "IL", 41.8781, -87.6298, 12812508),
    ("Columbus", "OH", 39.9612, -82.9988, 11799448),
    ("Atlanta", "GA", 33.7490, -84.3880, 10711908),
    ("Charlotte", "NC", 35.2271, -80.8431, 10439388),
    ("Detroit", "MI", 42.3314, -83.0458, 10077331),
    ("Newark", "NJ", 40.7357, -74.1724, 9288994),
    ("Virginia Beach", "VA", 36.8529, -75.9780, 8631393),
    ("Seattle", "WA", 47.6062, -122.3321, 7705281),
    ("Phoenix", "AZ", 33.4484, -112.0740, 7151502),
    ("Boston", "MA", 42.3601, -71.0589, 7029917),
    ("Nashville", "TN", 36.1627, -86.7816, 6910840),
    ("Indianapolis", "IN", 39.7684, -86.1581, 6785528),
    ("Baltimore", "MD", 39.2904, -76.6122, 6177224),
    ("Kansas City", "MO", 39.0997, -94.5786, 6154913),
    ("Milwaukee", "WI", 43.0389, -87.9065, 5893718),
    ("Denver", "CO", 39.7392, -104.9903, 5773714),
    ("Minneapolis", "MN", 44.9778, -93.2650, 5706494),
    ("Charleston", "SC", 32.7765, -79.9311, 5118425),
    ("Huntsville", "AL", 34.7304, -86.5861, 5024279),
    ("New Orleans", "LA", 29.9511, -90.0715, 4657757),
    ("Louisville", "KY", 38.2527, -85.7585, 4505836),
    ("Portland", "OR", 45.5152, -122.6784, 4237256),
    ("Oklahoma City", "OK", 35.4676, -97.5164, 3959353),
    ("Bridgeport", "CT", 41.1865, -73.1952, 3605944),
    ("Salt Lake City", "UT", 40.7608, -111.8910, 3271616),
]


def haversine_km(lat1, lon1, lat2, lon2):
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(lon2) - np.radians(lon1)
    h = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


@dataclass(frozen=True)
class NetworkGeometry:
    names: tuple[str, ...]
    lat: np.ndarray
    lon: np.ndarray
    population: np.ndarray
    distance: np.ndarray

    @classmethod
    def from_records(cls, records) -> "NetworkGeometry":
        names = tuple(f"{r[0]}, {r[1]}" for r in records)
        lat = np.array([r[2] for r in records], dtype=np.float64)
        lon = np.array([r[3] for r in records], dtype=np.float64)
        pop = np.array([r[4] for r in records], dtype=np.float64)
        if (pop <= 0).any():
            raise ValueError("populations must be positive")
        d = haversine_km(lat[:, None], lon[:, None], lat[None, :], lon[None, :])
        d = (d + d.T) / 2
        np.fill_diagonal(d, 0.0)
        return cls(names, lat, lon, pop, d)

    @classmethod
    def default(cls, J: int = 30) -> "NetworkGeometry":
        if not 1 <= J <= len(NODE_TABLE):
            raise ValueError(f"J must be in [1, {len(NODE_TABLE)}], got {J}")
        return cls.from_records(NODE_TABLE[:J])

    @property
    def J(self) -> int:
        return len(self.names)


def reward_vector(origin: int, geometry: NetworkGeometry) -> np.ndarray:
    """``(max_j d - d_j) / max_j d`` for an order placed at node ``origin``."""
    if not 0 <= origin < geometry.J:
        raise ValueError(f"origin {origin} outside geometry")
    return rewards_from_distances(geometry.distance[origin])


def rewards_from_distances(d) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    dmax = d.max()
    if dmax <= 0:
        # every node is at the origin
        return np.ones_like(d)
    return (dmax - d) / dmax


def round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def largest_remainder(total: int, weights) -> np.ndarray:
    """Integer split of ``total`` proportional to ``weights``; ties go to the lower index."""
    w = np.asarray(weights, dtype=np.float64)
    if total < 0 or w.sum() <= 0:
        raise ValueError("need total >= 0 and positive weight mass")
    quota = total * w / w.sum()
    base = np.floor(quota).astype(np.int64)
    short = int(total - base.sum())
    if short:
        order = np.argsort(-(quota - base), kind="stable")
        base[order[:short]] += 1
    return base


def demand_counts(I: int, T: int, beta: float) -> np.ndarray:
    """Orders per product, ``Q_i`` proportional to ``i^-|beta|`` and summing to ``T``."""
    weights = np.arange(1, I + 1, dtype=np.float64) ** (-abs(beta))
    return largest_remainder(T, weights)


@dataclass
class Instance:
    J: int
    I: int
    T: int
    x1: np.ndarray
    c1: np.ndarray
    orders: OrderSequence
    meta: dict = field(default_factory=dict)

    def env(self) -> FOEnvironment:
        return FOEnvironment(self.x1, self.c1)

    def demand(self) -> np.ndarray:
        return self.orders.counts(self.I)

    def with_unconstrained_inventory(self) -> "Instance":
        x1 = np.full((self.I, self.J), self.T, dtype=np.int64)
        meta = dict(self.meta, unconstrained_inventory=True)
        return Instance(self.J, self.I, self.T, x1, self.c1.copy(), self.orders, meta)


def generate_instance(J: int, I: int, T: int, beta: float = 0.0, coverage: float = 0.8,
                      seed=0, geometry: NetworkGeometry | None = None) -> Instance:
    """Build a seeded FO instance with stock and capacity for ``coverage`` of demand."""
    geometry = geometry or NetworkGeometry.default(J)
    if geometry.J != J:
        raise ValueError(f"geometry has {geometry.J} nodes, J={J}")
    if I < 1 or T < 1:
        raise ValueError("I and T must be >= 1")
    if not 0 < coverage <= 1:
        raise ValueError("coverage must lie in (0, 1]")
    if not np.isfinite(beta):
        raise ValueError("beta must be finite")
    rng = np.random.default_rng(seed)

    Q = demand_counts(I, T, beta)
    products = rng.permutation(np.repeat(np.arange(I, dtype=np.int64), Q))
    share = geometry.population / geometry.population.sum()
    origins = rng.choice(J, size=T, p=share)
    reward_table = np.round(np.stack([reward_vector(o, geometry) for o in range(J)]), 9)
    rewards = reward_table[origins]

    x1 = np.zeros((I, J), dtype=np.int64)
    stock = np.array([round_half_up(coverage * q) for q in Q], dtype=np.int64)
    # rows with equal stock share one split
    for units in np.unique(stock):
        if units:
            x1[stock == units] = largest_remainder(int(units), geometry.population)
    c1 = largest_remainder(round_half_up(coverage * T), geometry.population)

    meta = {"beta": float(beta), "coverage": float(coverage),
            "seed": seed if isinstance(seed, int) else str(seed),
            "nodes": list(geometry.names)}
    return Instance(J, I, T, x1, c1, OrderSequence(products, rewards, origins), meta)


def make_product_partition(instance: Instance, M: int, seed=0) -> PartitionPlan:
    """Put all orders of a product on one process, balancing order counts.

    Products are taken largest-demand first (seeded shuffle among equal
    demand) and each goes to the currently lightest process.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    Q = instance.demand()
    rng = np.random.default_rng(seed)
    shuffled = rng.permutation(instance.I)
    order = shuffled[np.argsort(-Q[shuffled], kind="stable")]
    heap = [(0, m) for m in range(M)]
    group = np.zeros(instance.I, dtype=np.int64)
    for i in order:
        if Q[i] == 0:
            continue
        load, m = heapq.heappop(heap)
        group[i] = m
        heapq.heappush(heap, (load + int(Q[i]), m))
    return PartitionPlan(group[instance.orders.products], M)


# --- serialization ---------------------------------------------------------

MANIFEST = "manifest.json"
ORDERS = "orders.csv"
INVENTORY = "inventory.csv"
CAPACITY = "capacity.csv"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def save_instance(instance: Instance, directory) -> Path:
    """Write manifest + orders/inventory/capacity CSVs; returns the manifest path."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    o = instance.orders
    order_rows = ([t, int(o.products[t]), int(o.origins[t])] + [f"{v:.9f}" for v in o.rewards[t]]
                  for t in range(len(o)))
    files = {
        ORDERS: _csv_text(["t", "product", "origin_node"] + [f"r{j}" for j in range(instance.J)],
                          order_rows),
        INVENTORY: _csv_text(["product", "node", "units"],
                             ([i, j, int(instance.x1[i, j])]
                              for i, j in zip(*np.nonzero(instance.x1)))),
        CAPACITY: _csv_text(["node", "units"], ([j, int(u)] for j, u in enumerate(instance.c1))),
    }
    checksums = {}
    for name, text in files.items():
        data = text.encode("utf-8")
        (out / name).write_bytes(data)
        checksums[name] = hashlib.sha256(data).hexdigest()
    manifest = {"J": instance.J, "I": instance.I, "T": instance.T, **instance.meta,
                "checksums": checksums}
    path = out / MANIFEST
    path.write_bytes((json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    return path


def load_instance(directory, verify: bool = True) -> Instance:
    src = Path(directory)
    manifest = json.loads((src / MANIFEST).read_text(encoding="utf-8"))
    if verify:
        for name, digest in manifest["checksums"].items():
            got = hashlib.sha256((src / name).read_bytes()).hexdigest()
            if got != digest:
                raise ValueError(f"checksum mismatch for {name}")
    J, I, T = manifest["J"], manifest["I"], manifest["T"]

    raw = np.loadtxt(src / ORDERS, delimiter=",", skiprows=1, ndmin=2, dtype=str)
    if raw.shape[0] != T:
        raise ValueError(f"expected {T} orders, found {raw.shape[0]}")
    products = raw[:, 1].astype(np.int64)
    origins = raw[:, 2].astype(np.int64)
    rewards = raw[:, 3:].astype(np.float64).reshape(T, J)

    x1 = np.zeros((I, J), dtype=np.int64)
    inv = np.loadtxt(src / INVENTORY, delimiter=",", skiprows=1, ndmin=2, dtype=np.int64)
    if inv.size:
        x1[inv[:, 0], inv[:, 1]] = inv[:, 2]
    cap = np.loadtxt(src / CAPACITY, delimiter=",", skiprows=1, ndmin=2, dtype=np.int64)
    c1 = np.zeros(J, dtype=np.int64)
    c1[cap[:, 0]] = cap[:, 1]

    meta = {k: v for k, v in manifest.items() if k not in ("J", "I", "T", "checksums")}
    return Instance(J, I, T, x1, c1, OrderSequence(products, rewards, origins), meta)
