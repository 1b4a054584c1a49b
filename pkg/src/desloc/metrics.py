"""Diagnostics computed while a simulation runs.

Rows are emitted every ``record_every`` steps. Rate-of-change samples and
drift-bound checks are tracked on every step, independently of the recording
cadence.
"""

from __future__ import annotations

import logging
import math
from dataclasses import astuple, dataclass, field, fields

import numpy as np

from desloc.optim import drift_bound_first, drift_bound_second

log = logging.getLogger(__name__)

UNDEFINED = None


@dataclass(frozen=True)
class MetricsRow:
    step: int
    round: int
    worker_count: int
    loss_mean: float
    grad_norm_mean: float
    param_norm_mean: float
    dist_to_opt: float | None
    rel_change_u: float | None
    rel_change_v: float | None
    drift_u_observed: float | None
    drift_u_bound: float | None
    drift_v_observed: float | None
    drift_v_bound: float | None
    cum_payload_units: int
    eta: float

    def as_tuple(self) -> tuple:
        return astuple(self)


COLUMNS = tuple(f.name for f in fields(MetricsRow))


def relative_rate_of_change(s_prev, s_now) -> float | None:
    """``||s_now - s_prev||_2 / ||s_prev||_2``; ``None`` when ``s_prev`` is zero."""
    s_prev = np.asarray(s_prev, dtype=np.float64)
    s_now = np.asarray(s_now, dtype=np.float64)
    if s_prev.shape != s_now.shape:
        raise ValueError(f"dimension mismatch: {s_prev.shape} vs {s_now.shape}")
    denom = float(np.linalg.norm(s_prev))
    if denom == 0.0:
        return UNDEFINED
    return float(np.linalg.norm(s_now - s_prev)) / denom


def payload_units(decisions, worker_count: int = 2) -> list[int]:
    """Cumulative payload after each decision, counted like :func:`sync.apply_sync`.

    Resets are free, step 0 is free, and a single worker never communicates.
    """
    total = 0
    out = []
    for dec in decisions:
        if worker_count > 1 and dec.step > 0:
            total += sum(1 for q, f in dec.fired.items() if f and q not in dec.reset)
        out.append(total)
    return out


def expected_payload_units(periods, T: int) -> int:
    """Closed-form unit count for periodic quantities over steps ``0..T-1``."""
    return sum((T - 1) // int(k) for k in periods)


@dataclass
class DriftTracker:
    """Largest drift of one state since its last sync, per the clipped-gradient bound."""

    name: str
    beta: float
    rho: float
    second: bool
    baseline: np.ndarray
    steps: int = 0
    violations: int = 0
    worst_ratio: float = 0.0

    def rebase(self, current: np.ndarray) -> None:
        self.baseline = current.copy()
        self.steps = 0

    def observe(self, current: np.ndarray, step: int) -> tuple[float, float]:
        self.steps += 1
        observed = float(np.max(np.abs(current - self.baseline))) if current.size else 0.0
        if self.second:
            bound = drift_bound_second(self.rho, self.beta, self.steps)
        else:
            bound = drift_bound_first(self.rho, self.beta, self.steps)
        if observed > bound:
            self.violations += 1
            log.warning("drift bound violated for %s at step %d: %.17g > %.17g",
                        self.name, step, observed, bound)
        if bound > 0:
            self.worst_ratio = max(self.worst_ratio, observed / bound)
        return observed, bound


@dataclass
class RateTracker:
    """Relative rate of change of the cross-worker mean state over a fixed window."""

    window: int
    snapshot: np.ndarray | None = None
    samples: list[tuple[int, float | None]] = field(default_factory=list)

    def observe(self, step: int, mean_state: np.ndarray) -> float | None:
        if step % self.window != 0:
            return None
        rate = None
        if self.snapshot is not None:
            rate = relative_rate_of_change(self.snapshot, mean_state)
            self.samples.append((step, rate))
        self.snapshot = mean_state.copy()
        return rate

    def values(self) -> list[float]:
        return [r for _, r in self.samples if r is not None]


@dataclass
class MetricsStream:
    rows: list[MetricsRow] = field(default_factory=list)
    rates: dict[str, RateTracker] = field(default_factory=dict)
    drift: dict[str, DriftTracker] = field(default_factory=dict)
    payload_units: int = 0
    workers: list = field(default_factory=list)
    decisions: list = field(default_factory=list)
    final_mean_x: np.ndarray | None = None
    final_dist: float | None = None
    replicas: object = None

    @property
    def drift_violations(self) -> int:
        return sum(d.violations for d in self.drift.values())

    def column(self, name: str) -> list:
        idx = COLUMNS.index(name)
        return [r.as_tuple()[idx] for r in self.rows]

    def final_distance(self) -> float | None:
        return self.rows[-1].dist_to_opt if self.rows else None


def fsum_mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values)
