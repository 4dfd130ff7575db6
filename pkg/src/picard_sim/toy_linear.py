"""Time-varying linear systems under linear feedback.

``s_{t+1} = A_t s_t + B_t a_t + w_t`` with ``a_t = G s_t``.  Used to study
how fast Picard iteration contracts outside the FO setting.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .core import Environment, PartitionPlan, Policy, picard_iterate_once

AGREE_RTOL = 1e-9
# Stopping on changes below AGREE_RTOL would leave up to rho / (1 - rho) times
# that much error, so change detection is stricter than agreement.
CHANGE_RTOL = 1e-12


class Step(NamedTuple):
    t: int
    w: np.ndarray


@dataclass
class LinearSystemSpec:
    A: np.ndarray  # (T, n, n)
    B: np.ndarray  # (T, n, p)
    G: np.ndarray  # (p, n)
    w: np.ndarray  # (T, n)
    s1: np.ndarray  # (n,)
    seed: int | None = None

    def __post_init__(self):
        self.w = np.atleast_2d(np.asarray(self.w, dtype=np.float64))
        T, n = self.w.shape
        self.A = _per_step(self.A, T, "A")
        self.B = _per_step(self.B, T, "B")
        self.G = np.atleast_2d(np.asarray(self.G, dtype=np.float64))
        self.s1 = np.asarray(self.s1, dtype=np.float64).reshape(-1)
        p = self.G.shape[0]
        if self.A.shape != (T, n, n) or self.B.shape != (T, n, p) \
                or self.G.shape != (p, n) or self.s1.shape != (n,):
            raise ValueError(f"dimension mismatch: A{self.A.shape} B{self.B.shape} "
                             f"G{self.G.shape} w{self.w.shape} s1{self.s1.shape}")

    @property
    def n(self) -> int:
        return self.w.shape[1]

    @property
    def p(self) -> int:
        return self.G.shape[0]

    @property
    def T(self) -> int:
        return self.w.shape[0]

    @property
    def rho(self) -> float:
        if self.T == 0:
            return 0.0
        closed = self.A + self.B @ self.G
        return float(max(np.linalg.norm(m, 2) for m in closed))

    @property
    def contractive(self) -> bool:
        return self.rho < 1.0

    def disturbances(self) -> list[Step]:
        return [Step(t, self.w[t]) for t in range(self.T)]


def _per_step(M, T, name):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim == 2:
        return np.broadcast_to(M, (T,) + M.shape).copy()
    if M.ndim != 3 or M.shape[0] != T:
        raise ValueError(f"{name} must be a matrix or a stack of {T} matrices")
    return M


def _haar_orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def make_linear_spec(n: int, T: int, rho: float, seed, p: int | None = None) -> LinearSystemSpec:
    """Random system whose closed loop has operator norm exactly ``rho`` at every step.

    Each step draws a Haar orthogonal ``H_t`` and a seeded split
    ``rho = a + b``; then ``A_t = a H_t`` and ``B_t G = b H_t``.  Sharing
    ``H_t`` makes ``||A_t + B_t G|| = rho`` and bounds the per-iteration
    shrink of trajectory error by ``b / (1 - a) <= rho``.
    """
    if not 0 <= rho < 1:
        raise ValueError("rho must lie in [0, 1)")
    p = n if p is None else p
    if p != n:
        raise ValueError("this generator needs a square gain (p == n)")
    rng = np.random.default_rng(seed)
    G = _haar_orthogonal(rng, n)
    A = np.empty((T, n, n))
    B = np.empty((T, n, n))
    for t in range(T):
        H = _haar_orthogonal(rng, n)
        a = rho * rng.uniform(0.2, 0.8)
        A[t] = a * H
        B[t] = (rho - a) * H @ G.T
    w = rng.standard_normal((T, n))
    s1 = rng.standard_normal(n)
    return LinearSystemSpec(A, B, G, w, s1, seed=seed if isinstance(seed, int) else None)


def _close_rows(a, b, rtol):
    """Row-wise ``||a - b|| <= rtol * max(||a||, ||b||)``."""
    diff = np.linalg.norm(a - b, axis=-1)
    scale = np.maximum(np.linalg.norm(a, axis=-1), np.linalg.norm(b, axis=-1))
    return diff <= rtol * scale


class LinearEnvironment(Environment):
    def __init__(self, spec: LinearSystemSpec):
        self.spec = spec
        self.null_action = np.zeros(spec.p)

    def initial_state(self):
        return self.spec.s1.copy()

    def copy_state(self, state):
        return state.copy()

    def feasible(self, state, omega, action) -> bool:
        return True

    def apply(self, state, action, omega) -> None:
        t = omega.t
        state[:] = self.spec.A[t] @ state + self.spec.B[t] @ action + omega.w

    def same_action(self, a, b) -> bool:
        return bool(_close_rows(np.atleast_2d(a), np.atleast_2d(b), CHANGE_RTOL).all())

    def new_cache(self, actions):
        return np.array(actions, dtype=np.float64).reshape(len(actions), self.spec.p)

    def copy_cache(self, cache):
        return np.array(cache, dtype=np.float64)

    def changed_slots(self, old, new, lo, hi):
        close = _close_rows(new[lo:hi], old[lo:hi], CHANGE_RTOL)
        return (np.flatnonzero(~close) + lo).tolist()

    def actions_match(self, a, b) -> bool:
        a, b = np.asarray(a), np.asarray(b)
        return a.shape == b.shape and bool(
            _close_rows(np.atleast_2d(a), np.atleast_2d(b), AGREE_RTOL).all())

    def picard_pass(self, policy, disturbances, plan, cache, lo, hi, checkpoint):
        if not isinstance(policy, LinearPolicy):
            return None
        spec = self.spec
        loads = plan.loads(lo, hi)
        active = np.flatnonzero(loads)
        row = np.full(plan.M, -1)
        row[active] = np.arange(active.size)
        S = np.tile(checkpoint, (active.size, 1))
        new_cache = self.copy_cache(cache)
        owner = plan.owner
        for t in range(lo, hi):
            acts = np.tile(cache[t], (active.size, 1))
            r = row[owner[t]]
            a = policy.gain @ S[r]
            acts[r] = a
            new_cache[t] = a
            S = S @ spec.A[t].T + acts @ spec.B[t].T + spec.w[t]
        return new_cache, loads


class LinearPolicy(Policy):
    cost_class = "expensive"

    def __init__(self, gain):
        self.gain = np.atleast_2d(np.asarray(gain, dtype=np.float64))

    def evaluate(self, state, omega):
        return self.gain @ state


def linear_env(spec: LinearSystemSpec) -> tuple[LinearEnvironment, LinearPolicy]:
    return LinearEnvironment(spec), LinearPolicy(spec.G)


def rollout(spec: LinearSystemSpec, actions) -> np.ndarray:
    """``(T+1, n)`` states from replaying ``actions`` open loop."""
    s = np.empty((spec.T + 1, spec.n))
    s[0] = spec.s1
    for t in range(spec.T):
        s[t + 1] = spec.A[t] @ s[t] + spec.B[t] @ actions[t] + spec.w[t]
    return s


def sequential_states(spec: LinearSystemSpec, gain=None) -> tuple[np.ndarray, np.ndarray]:
    """Closed-loop ``(actions, states)`` under ``gain`` (default ``spec.G``)."""
    G = spec.G if gain is None else np.asarray(gain)
    s = np.empty((spec.T + 1, spec.n))
    a = np.empty((spec.T, spec.p))
    s[0] = spec.s1
    for t in range(spec.T):
        a[t] = G @ s[t]
        s[t + 1] = spec.A[t] @ s[t] + spec.B[t] @ a[t] + spec.w[t]
    return a, s


def relative_rmse(candidate, reference, baseline=None) -> float:
    """``sum_t ||ref_t - cand_t|| / sum_t ||ref_t - base_t||``.

    Without ``baseline`` the denominator is ``sum_t ||ref_t||``.
    """
    cand = np.asarray(candidate, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if cand.shape != ref.shape:
        raise ValueError(f"shape mismatch {cand.shape} vs {ref.shape}")
    if ref.ndim == 1:
        cand, ref = cand[:, None], ref[:, None]
    num = np.linalg.norm(ref - cand, axis=1).sum()
    if baseline is None:
        den = np.linalg.norm(ref, axis=1).sum()
    else:
        base = np.asarray(baseline, dtype=np.float64).reshape(ref.shape)
        den = np.linalg.norm(ref - base, axis=1).sum()
    if den == 0:
        raise ValueError("zero denominator in relative RMSE")
    return float(num / den)


@dataclass
class ConvergenceCurve:
    rmse: list[float]
    iterations: int
    reached_tolerance: bool

    def ratios(self) -> list[float]:
        return [b / a for a, b in zip(self.rmse, self.rmse[1:]) if a > 0]


def picard_convergence_curve(spec: LinearSystemSpec, initial_cache=None, tol: float = 1e-3,
                             normalize: str = "draft", max_iterations: int | None = None
                             ) -> ConvergenceCurve:
    """Relative RMSE of the cache-induced trajectory after each full Picard pass.

    One process per time-step.  ``rmse[0]`` is the draft (initial cache) and
    ``rmse[k]`` follows pass ``k``.  ``normalize`` is ``"draft"`` (divide by
    the draft's error) or ``"reference"`` (divide by the reference norm).
    """
    if normalize not in ("draft", "reference"):
        raise ValueError("normalize must be 'draft' or 'reference'")
    env, policy = linear_env(spec)
    T = spec.T
    plan = PartitionPlan(np.arange(T), max(T, 1))
    steps = spec.disturbances()
    cache = env.new_cache([env.null_action] * T if initial_cache is None else initial_cache)
    _, ref = sequential_states(spec)
    draft = rollout(spec, cache)
    base = draft if normalize == "draft" else None

    def score(states):
        if base is not None and np.array_equal(base, ref):
            return 0.0
        return relative_rmse(states, ref, base)

    rmse = [score(draft)]
    limit = T if max_iterations is None else max_iterations
    k = 0
    while rmse[-1] > tol and k < limit:
        k += 1
        out = picard_iterate_once(env, policy, steps, plan, cache, (0, T), spec.s1.copy(), k=k)
        cache = out.cache
        rmse.append(score(rollout(spec, cache)))
    return ConvergenceCurve(rmse, k, rmse[-1] <= tol)


def iterations_needed(rho: float, tol: float = 1e-3) -> int:
    """``ceil(log(tol) / log(rho))``: passes for a ``rho``-contraction to reach ``tol``."""
    if rho <= 0:
        return 1
    return math.ceil(math.log(tol) / math.log(rho))


# --- serialization ---------------------------------------------------------

def _matrix_csv(stack: np.ndarray) -> str:
    buf = io.StringIO()
    stack = np.asarray(stack)
    if stack.ndim == 2:
        stack = stack[None]
    buf.write("t,row," + ",".join(f"c{j}" for j in range(stack.shape[2])) + "\n")
    for t, m in enumerate(stack):
        for r, vals in enumerate(m):
            buf.write(f"{t},{r}," + ",".join(repr(float(v)) for v in vals) + "\n")
    return buf.getvalue()


def _read_matrix_csv(text: str, T: int | None) -> np.ndarray:
    rows = np.loadtxt(io.StringIO(text), delimiter=",", skiprows=1, ndmin=2)
    if rows.size == 0:
        return rows
    t = rows[:, 0].astype(int)
    r = rows[:, 1].astype(int)
    out = np.empty((t.max() + 1, r.max() + 1, rows.shape[1] - 2))
    out[t, r] = rows[:, 2:]
    return out if T is None else out.reshape(T, out.shape[1], out.shape[2])


def save_linear_spec(spec: LinearSystemSpec, directory) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    files = {"A.csv": _matrix_csv(spec.A), "B.csv": _matrix_csv(spec.B),
             "G.csv": _matrix_csv(spec.G), "w.csv": _matrix_csv(spec.w),
             "s1.csv": _matrix_csv(spec.s1[None, :])}
    checksums = {}
    for name, text in files.items():
        data = text.encode("utf-8")
        (out / name).write_bytes(data)
        checksums[name] = hashlib.sha256(data).hexdigest()
    manifest = {"kind": "linear", "n": spec.n, "p": spec.p, "T": spec.T, "rho": spec.rho,
                "seed": spec.seed, "checksums": checksums}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_linear_spec(directory) -> LinearSystemSpec:
    src = Path(directory)
    manifest = json.loads((src / "manifest.json").read_text(encoding="utf-8"))
    text = {}
    for name, digest in manifest["checksums"].items():
        data = (src / name).read_bytes()
        if hashlib.sha256(data).hexdigest() != digest:
            raise ValueError(f"checksum mismatch for {name}")
        text[name] = data.decode("utf-8")
    T = manifest["T"]
    A = _read_matrix_csv(text["A.csv"], T)
    B = _read_matrix_csv(text["B.csv"], T)
    G = _read_matrix_csv(text["G.csv"], None)[0]
    w = _read_matrix_csv(text["w.csv"], None)[0]
    s1 = _read_matrix_csv(text["s1.csv"], None)[0][0]
    return LinearSystemSpec(A, B, G, w, s1, seed=manifest.get("seed"))
