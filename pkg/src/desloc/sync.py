"""Synchronization schedules and cross-worker averaging.

Quantities are named ``"x"`` (parameters), ``"u"`` and ``"v"`` (first and
second optimizer states) and ``"grad"`` (a gradient all-reduce, used to model
plain data parallelism). Every quantity has exactly one :class:`SyncPolicy`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from desloc import kernels

QUANTITIES = ("x", "u", "v", "grad")

# never averaged, but cleared together with their owner on a reset
LOCAL_OWNERS = {"v_tilde": "v"}


class SyncMode(str, Enum):
    PERIODIC = "periodic"
    PROBABILISTIC = "probabilistic"
    NEVER = "never"
    RESET_WITH_PARAMS = "reset_with_params"


@dataclass(frozen=True)
class SyncPolicy:
    mode: SyncMode
    period: int | None = None
    prob: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", SyncMode(self.mode))
        if self.mode is SyncMode.PERIODIC:
            if self.period is None or int(self.period) != self.period or self.period < 1:
                raise ValueError(f"periodic sync needs a period >= 1, got {self.period}")
        if self.mode is SyncMode.PROBABILISTIC:
            if self.prob is None or not 0.0 <= self.prob <= 1.0:
                raise ValueError(f"sync probability must lie in [0, 1], got {self.prob}")

    @classmethod
    def periodic(cls, K: int) -> SyncPolicy:
        return cls(SyncMode.PERIODIC, period=K)

    @classmethod
    def probabilistic(cls, p: float) -> SyncPolicy:
        return cls(SyncMode.PROBABILISTIC, prob=p)

    @classmethod
    def never(cls) -> SyncPolicy:
        return cls(SyncMode.NEVER)

    @classmethod
    def reset_with_params(cls) -> SyncPolicy:
        return cls(SyncMode.RESET_WITH_PARAMS)

    @property
    def nominal_period(self) -> int | None:
        """Period for periodic policies, ``round(1/p)`` for probabilistic ones."""
        if self.mode is SyncMode.PERIODIC:
            return int(self.period)
        if self.mode is SyncMode.PROBABILISTIC and self.prob > 0:
            return max(1, round(1.0 / self.prob))
        return None


def should_sync(t: int, policy: SyncPolicy, coin: np.random.Generator | None = None,
                params_fired: bool = False) -> bool:
    """Whether ``policy`` fires at step ``t``.

    Probabilistic policies consume exactly one uniform draw from ``coin`` per
    call. Reset policies follow the parameter decision.
    """
    if t < 0:
        raise ValueError("step index must be non-negative")
    mode = policy.mode
    if mode is SyncMode.PERIODIC:
        return t % policy.period == 0
    if mode is SyncMode.PROBABILISTIC:
        if coin is None:
            raise ValueError("probabilistic policy needs a random stream")
        return bool(coin.random() < policy.prob)
    if mode is SyncMode.RESET_WITH_PARAMS:
        return params_fired
    return False


def schedule_stream(seed: int, quantity: str) -> np.random.Generator:
    """Decision stream for one quantity, shared by all workers of a run."""
    ss = np.random.SeedSequence(seed, spawn_key=(2, QUANTITIES.index(quantity)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class SyncDecision:
    step: int
    fired: dict[str, bool]
    reset: frozenset[str] = frozenset()

    def averaged(self) -> list[str]:
        return [q for q, f in self.fired.items() if f and q not in self.reset]


class SyncSchedule:
    """Resolves one collective :class:`SyncDecision` per step."""

    def __init__(self, policies: dict[str, SyncPolicy], seed: int):
        unknown = set(policies) - set(QUANTITIES)
        if unknown:
            raise ValueError(f"unknown sync quantities: {sorted(unknown)}")
        if policies.get("x", SyncPolicy.never()).mode is SyncMode.RESET_WITH_PARAMS:
            raise ValueError("parameters cannot use reset_with_params")
        self.policies = dict(policies)
        self._coins = {
            q: schedule_stream(seed, q)
            for q, p in self.policies.items()
            if p.mode is SyncMode.PROBABILISTIC
        }

    def decide(self, t: int) -> SyncDecision:
        x_policy = self.policies.get("x", SyncPolicy.never())
        x_fired = should_sync(t, x_policy, self._coins.get("x"))
        fired = {}
        reset = set()
        for q in QUANTITIES:
            if q not in self.policies:
                continue
            if q == "x":
                fired[q] = x_fired
                continue
            p = self.policies[q]
            fired[q] = should_sync(t, p, self._coins.get(q), params_fired=x_fired)
            if p.mode is SyncMode.RESET_WITH_PARAMS and fired[q]:
                reset.add(q)
        return SyncDecision(step=t, fired=fired, reset=frozenset(reset))


@dataclass
class ReplicaSet:
    """Stacked per-worker copies, one row per worker."""

    x: np.ndarray
    states: dict[str, np.ndarray]
    local: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def M(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def quantity(self, name: str) -> np.ndarray:
        if name == "x":
            return self.x
        if name in self.states:
            return self.states[name]
        return self.local[name]

    def arrays(self) -> dict[str, np.ndarray]:
        return {"x": self.x, **self.states, **self.local}


def apply_sync(replicas: ReplicaSet, decision: SyncDecision, *, mean_rows=None) -> int:
    """Average (or reset) every fired quantity in place; return payload units.

    One unit is one d-sized quantity exchanged by all-reduce. Resets move no
    data and the initial step is free because replicas start identical, so
    neither is counted. Gradients are not part of the replica set; see
    :func:`allreduce_rows`.
    """
    mean_rows = mean_rows or kernels.mean_rows
    layout = None
    for name, arr in replicas.arrays().items():
        if layout is None:
            layout = arr.shape
        elif arr.shape != layout:
            raise ValueError(f"layout mismatch for {name}: {arr.shape} vs {layout}")
    units = 0
    for q, f in decision.fired.items():
        if not f or q == "grad":
            continue
        if q != "x" and q not in replicas.states:
            continue
        arr = replicas.quantity(q)
        if q in decision.reset:
            arr[...] = 0.0
            for name, owner in LOCAL_OWNERS.items():
                if owner == q and name in replicas.local:
                    replicas.local[name][...] = 0.0
            continue
        arr[...] = mean_rows(arr)
        if replicas.M > 1 and decision.step > 0:
            units += 1
    return units


def allreduce_rows(g: np.ndarray, *, mean_rows=None) -> np.ndarray:
    """Replace each row of ``g`` with the row mean (a gradient all-reduce)."""
    mean_rows = mean_rows or kernels.mean_rows
    g[...] = mean_rows(g)
    return g
