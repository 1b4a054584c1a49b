"""Multi-worker training loop over analytic noisy objectives.

Each step of :func:`run` does, in order: apply membership events scheduled for
this step, resolve the collective sync decision, compute noisy local gradients
at the *local* iterates, clip them, average (or reset) the fired quantities,
then apply the local optimizer update on top of the averaged values. This is
the desynced algorithm with ``E_m[s_{t-1}]`` and ``E_m[x_t]`` fed into the
local update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from desloc import kernels
from desloc.metrics import DriftTracker, MetricsRow, MetricsStream, RateTracker, fsum_mean
from desloc.optim import ClipMode, OptimizerKind, OptimizerSpec, OptimizerState, k_lcm
from desloc.sync import ReplicaSet, SyncPolicy, SyncSchedule, allreduce_rows, apply_sync

ROSENBROCK_START = (-1.2, 1.0)
NOISE_BLOCK = 256


class DivergenceError(RuntimeError):
    def __init__(self, step: int, quantity: str, stream: MetricsStream | None = None):
        super().__init__(f"non-finite values in {quantity!r} at step {step}")
        self.step = step
        self.quantity = quantity
        self.stream = stream


# --------------------------------------------------------------------------- objectives


class ObjectiveKind(str, Enum):
    ROSENBROCK = "rosenbrock"
    QUADRATIC = "quadratic"
    HETEROGENEOUS_QUADRATIC = "heterogeneous_quadratic"


class NoiseKind(str, Enum):
    IID_GAUSSIAN = "iid_gaussian"
    PER_WORKER_GAUSSIAN = "per_worker_gaussian"


@dataclass(frozen=True)
class Objective:
    """Analytic objective plus the Gaussian noise added to its exact gradient.

    ``quadratic`` is ``0.5 * sum(curvature * (x - center)**2)``. The
    heterogeneous variant gives worker ``m`` the center ``centers[m % len]`` so
    the global optimum is the mean of the active workers' centers.

    For ``per_worker_gaussian`` noise, ``sigma`` is the scale of the draw
    ``sigma_m = |N(0, sigma)|`` made once per worker.
    """

    kind: ObjectiveKind = ObjectiveKind.ROSENBROCK
    dim: int = 2
    x0: tuple[float, ...] | None = None
    center: tuple[float, ...] | None = None
    curvature: tuple[float, ...] | None = None
    centers: tuple[tuple[float, ...], ...] | None = None
    noise: NoiseKind = NoiseKind.IID_GAUSSIAN
    sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ObjectiveKind(self.kind))
        object.__setattr__(self, "noise", NoiseKind(self.noise))
        if self.kind is ObjectiveKind.ROSENBROCK and self.dim != 2:
            raise ValueError("rosenbrock is two-dimensional")
        if self.dim < 1:
            raise ValueError("dimension must be positive")
        if self.sigma < 0:
            raise ValueError("noise scale must be non-negative")
        if self.kind is ObjectiveKind.HETEROGENEOUS_QUADRATIC and not self.centers:
            raise ValueError("heterogeneous_quadratic needs per-worker centers")
        for name in ("x0", "center", "curvature"):
            val = getattr(self, name)
            if val is not None and len(val) != self.dim:
                raise ValueError(f"{name} must have length {self.dim}")
        if self.centers:
            for c in self.centers:
                if len(c) != self.dim:
                    raise ValueError(f"every center must have length {self.dim}")
        if self.curvature is not None and any(c <= 0 for c in self.curvature):
            raise ValueError("curvature must be positive")

    @property
    def start(self) -> np.ndarray:
        if self.x0 is not None:
            return np.array(self.x0, dtype=np.float64)
        if self.kind is ObjectiveKind.ROSENBROCK:
            return np.array(ROSENBROCK_START)
        return np.zeros(self.dim)

    def _curv(self) -> np.ndarray:
        return np.ones(self.dim) if self.curvature is None else np.array(self.curvature, float)

    def worker_centers(self, ids) -> np.ndarray:
        if self.kind is ObjectiveKind.HETEROGENEOUS_QUADRATIC:
            cs = np.array(self.centers, dtype=np.float64)
            return np.ascontiguousarray(cs[[i % len(cs) for i in ids]])
        c = np.zeros(self.dim) if self.center is None else np.array(self.center, float)
        return np.ascontiguousarray(np.tile(c, (len(ids), 1)))

    def optimum(self, ids) -> np.ndarray:
        if self.kind is ObjectiveKind.ROSENBROCK:
            return np.ones(2)
        return np.mean(self.worker_centers(ids), axis=0)

    def grad(self, x: np.ndarray, centers: np.ndarray, out: np.ndarray, kern=kernels) -> None:
        if self.kind is ObjectiveKind.ROSENBROCK:
            kern.rosenbrock_grad(x, out)
        else:
            kern.quadratic_grad(x, centers, self._curv(), out)

    def losses(self, x: np.ndarray, centers: np.ndarray) -> np.ndarray:
        if self.kind is ObjectiveKind.ROSENBROCK:
            x1, x2 = x[:, 0], x[:, 1]
            return (1.0 - x1) ** 2 + 100.0 * (x2 - x1 * x1) ** 2
        return 0.5 * np.sum(self._curv() * (x - centers) ** 2, axis=1)


def rosenbrock(x) -> float:
    x1, x2 = float(x[0]), float(x[1])
    return (1.0 - x1) ** 2 + 100.0 * (x2 - x1 * x1) ** 2


def worker_stream(seed: int, worker_id: int, purpose: int = 0) -> np.random.Generator:
    """Independent stream keyed only by ``(seed, purpose, worker_id)``."""
    ss = np.random.SeedSequence(seed, spawn_key=(purpose, worker_id))
    return np.random.Generator(np.random.Philox(ss))


def worker_sigma(objective: Objective, seed: int, worker_id: int) -> float:
    if objective.noise is NoiseKind.PER_WORKER_GAUSSIAN:
        # a negative std is meaningless, so the draw is folded
        return abs(float(worker_stream(seed, worker_id, purpose=1).normal(0.0, objective.sigma)))
    return float(objective.sigma)


class NoiseBank:
    """Per-worker Gaussian noise, drawn in fixed-size blocks from each worker's stream."""

    def __init__(self, objective: Objective, seed: int, ids):
        self.objective = objective
        self.seed = seed
        self.ids: list[int] = []
        self.gens: list[np.random.Generator] = []
        self.sigmas = np.zeros(0)
        self.buf = np.zeros((0, NOISE_BLOCK, objective.dim))
        self.pos = 0
        self.add(ids)

    def add(self, ids) -> None:
        ids = list(ids)
        gens = [worker_stream(self.seed, i) for i in ids]
        self.ids += ids
        self.gens += gens
        sig = np.array([worker_sigma(self.objective, self.seed, i) for i in ids])
        self.sigmas = np.concatenate([self.sigmas, sig])
        block = np.stack([g.standard_normal((NOISE_BLOCK, self.objective.dim)) for g in gens]) \
            if gens else np.zeros((0, NOISE_BLOCK, self.objective.dim))
        self.buf = np.concatenate([self.buf, block])

    def next(self) -> np.ndarray:
        if self.pos == NOISE_BLOCK:
            for m, g in enumerate(self.gens):
                self.buf[m] = g.standard_normal((NOISE_BLOCK, self.objective.dim))
            self.pos = 0
        z = self.buf[:, self.pos, :]
        self.pos += 1
        return self.sigmas[:, None] * z


# --------------------------------------------------------------------------- schedules


@dataclass(frozen=True)
class ConstantLR:
    eta: float

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("learning rate must be positive")


@dataclass(frozen=True)
class WSD:
    """Linear warmup, constant plateau, then a ``1 - sqrt`` decay over the last fraction."""

    eta_peak: float
    warmup_steps: int
    decay_fraction: float

    def __post_init__(self):
        if not self.eta_peak > 0:
            raise ValueError("peak learning rate must be positive")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be non-negative")
        if not 0.0 <= self.decay_fraction <= 1.0:
            raise ValueError("decay_fraction must lie in [0, 1]")

    def validate(self, T: int) -> None:
        if self.warmup_steps > T * (1.0 - self.decay_fraction):
            raise ValueError("warmup overlaps the decay phase")


def eta_at(t: int, schedule, T: int) -> float:
    if not 0 <= t < T:
        raise ValueError(f"step {t} outside [0, {T})")
    if isinstance(schedule, ConstantLR):
        return schedule.eta
    schedule.validate(T)
    if t < schedule.warmup_steps:
        return schedule.eta_peak * t / schedule.warmup_steps
    decay_start = T * (1.0 - schedule.decay_fraction)
    if t < decay_start:
        return schedule.eta_peak
    return schedule.eta_peak * (1.0 - math.sqrt((t - decay_start) / (T - decay_start)))


# --------------------------------------------------------------------------- workers and config


class JoinInit(str, Enum):
    MEAN_BROADCAST = "mean_broadcast"
    REPLICATE_WORKER_ZERO = "replicate_worker_zero"


@dataclass(frozen=True)
class MembershipEvent:
    step: int
    add_workers: int
    init: JoinInit = JoinInit.MEAN_BROADCAST

    def __post_init__(self):
        object.__setattr__(self, "init", JoinInit(self.init))
        if self.add_workers < 1:
            raise ValueError("add_workers must be positive")


@dataclass
class WorkerState:
    id: int
    x: np.ndarray
    opt: OptimizerState
    sigma: float


@dataclass
class SimConfig:
    M: int
    T: int
    optimizer: OptimizerSpec
    schedule: ConstantLR | WSD
    policies: dict[str, SyncPolicy]
    objective: Objective = field(default_factory=Objective)
    events: list[MembershipEvent] = field(default_factory=list)
    seed: int = 0
    record_every: int = 1
    threads: int = 1
    rate_window: int = 64
    backend: str | None = None

    def __post_init__(self):
        if self.M < 1 or self.T < 1 or self.record_every < 1:
            raise ValueError("M, T and record_every must be at least 1")
        if self.threads < 1 or self.rate_window < 1:
            raise ValueError("threads and rate_window must be at least 1")
        for ev in self.events:
            if not 0 < ev.step < self.T:
                raise ValueError(f"membership event step {ev.step} outside (0, {self.T})")
        if isinstance(self.schedule, WSD):
            self.schedule.validate(self.T)


def _state_layout(spec: OptimizerSpec) -> tuple[list[str], list[str]]:
    states = ["u"] if spec.kind is OptimizerKind.SGDM else ["u", "v"]
    local = ["v_tilde"] if spec.amsgrad else []
    return states, local


def init_replicas(config: SimConfig) -> ReplicaSet:
    d = config.objective.dim
    x = np.ascontiguousarray(np.tile(config.objective.start, (config.M, 1)))
    states, local = _state_layout(config.optimizer)
    return ReplicaSet(
        x=x,
        states={s: np.zeros((config.M, d)) for s in states},
        local={s: np.zeros((config.M, d)) for s in local},
    )


def apply_membership(replicas: ReplicaSet, event: MembershipEvent, *, mean_rows=None) -> ReplicaSet:
    """Grow every replicated array by ``event.add_workers`` rows."""
    mean_rows = mean_rows or kernels.mean_rows
    k = event.add_workers

    def grow(arr):
        if event.init is JoinInit.MEAN_BROADCAST:
            row = mean_rows(arr)
        else:
            row = arr[0].copy()
        return np.ascontiguousarray(np.vstack([arr, np.tile(row, (k, 1))]))

    return ReplicaSet(
        x=grow(replicas.x),
        states={n: grow(a) for n, a in replicas.states.items()},
        local={n: grow(a) for n, a in replicas.local.items()},
    )


def round_period(policies: dict[str, SyncPolicy]) -> int:
    periods = [p.nominal_period for q, p in policies.items() if q in ("x", "u", "v")]
    periods = [p for p in periods if p]
    return k_lcm(periods) if periods else 1


def local_step(spec: OptimizerSpec, replicas: ReplicaSet, g: np.ndarray, eta: float,
               kern=kernels, threads: int = 1) -> None:
    """Apply one local optimizer update to every row in place."""
    x, st = replicas.x, replicas.states
    if spec.kind is OptimizerKind.SGDM:
        kern.sgdm_step(x, st["u"], g, spec.beta1, eta, threads)
    elif spec.kind is OptimizerKind.ADOPT:
        kern.adopt_step(x, st["u"], st["v"], g, spec.beta1, spec.beta2, spec.epsilon, eta, threads)
    else:
        vt = replicas.local.get("v_tilde", st["v"])
        kern.adam_step(x, st["u"], st["v"], vt, g, spec.beta1, spec.beta2,
                       spec.lam * spec.lam, eta, spec.amsgrad, threads)


def clip_gradients(spec: OptimizerSpec, g: np.ndarray, kern=kernels) -> None:
    if spec.clip is ClipMode.COORDINATEWISE:
        kern.clip_rows(g, spec.rho)
    elif spec.clip is ClipMode.BY_NORM:
        kern.clip_rows_norm(g, spec.rho)


def check_finite(replicas: ReplicaSet, step: int, stream: MetricsStream | None = None) -> None:
    for name, arr in replicas.arrays().items():
        if not np.all(np.isfinite(arr)):
            raise DivergenceError(step, name, stream)


def worker_states(replicas: ReplicaSet, ids, sigmas) -> list[WorkerState]:
    out = []
    for m, wid in enumerate(ids):
        st = replicas.states
        opt = OptimizerState(
            u=st["u"][m].copy(),
            v=st["v"][m].copy() if "v" in st else None,
            v_tilde=replicas.local["v_tilde"][m].copy() if "v_tilde" in replicas.local else None,
        )
        out.append(WorkerState(id=wid, x=replicas.x[m].copy(), opt=opt, sigma=float(sigmas[m])))
    return out


def _make_trackers(config: SimConfig, replicas: ReplicaSet):
    spec = config.optimizer
    drift = {}
    if spec.clip is not ClipMode.NONE:
        if spec.kind is not OptimizerKind.ADOPT:
            # ADOPT's first moment is normalized, so the clipped-gradient bound does not apply
            drift["u"] = DriftTracker("u", spec.beta1, spec.rho, False, replicas.states["u"].copy())
        if spec.kind is not OptimizerKind.SGDM:
            drift["v"] = DriftTracker("v", spec.beta2, spec.rho, True, replicas.states["v"].copy())
    rates = {}
    for q in replicas.states:
        p = config.policies.get(q)
        window = p.period if p is not None and p.period else config.rate_window
        rates[q] = RateTracker(window=window)
    return drift, rates


def run(config: SimConfig, trace=None) -> MetricsStream:
    """Execute the simulation and return its metrics stream.

    ``trace``, when given, is called after every step as
    ``trace(t, replicas, g_hat, decision)`` with live (not copied) arrays.
    Overflow is reported as :class:`DivergenceError`, not as numpy warnings.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        return _run(config, trace)


def _run(config: SimConfig, trace) -> MetricsStream:
    kern = kernels.backend(config.backend)
    spec = config.optimizer
    objective = config.objective
    replicas = init_replicas(config)
    ids = list(range(config.M))
    centers = objective.worker_centers(ids)
    x_star = objective.optimum(ids)
    noise = NoiseBank(objective, config.seed, ids)
    schedule = SyncSchedule(config.policies, config.seed)
    stream = MetricsStream()
    stream.drift, stream.rates = _make_trackers(config, replicas)
    events = {}
    for ev in config.events:
        events.setdefault(ev.step, []).append(ev)
    k_round = round_period(config.policies)
    g = np.empty_like(replicas.x)
    cum = 0

    for t in range(config.T):
        for ev in events.get(t, ()):
            replicas = apply_membership(replicas, ev, mean_rows=kern.mean_rows)
            new_ids = list(range(len(ids), len(ids) + ev.add_workers))
            ids += new_ids
            noise.add(new_ids)
            centers = objective.worker_centers(ids)
            x_star = objective.optimum(ids)
            g = np.empty_like(replicas.x)
            for name, tr in stream.drift.items():
                tr.rebase(replicas.states[name])

        decision = schedule.decide(t)
        stream.decisions.append(decision)
        objective.grad(replicas.x, centers, g, kern)
        g += noise.next()
        recording = t % config.record_every == 0
        if recording:
            grad_norm = fsum_mean(kern.row_norms(g))
        if decision.fired.get("grad"):
            allreduce_rows(g, mean_rows=kern.mean_rows)
            if replicas.M > 1 and t > 0:
                cum += 1
        clip_gradients(spec, g, kern)
        cum += apply_sync(replicas, decision, mean_rows=kern.mean_rows)
        eta = eta_at(t, config.schedule, config.T)
        local_step(spec, replicas, g, eta, kern, config.threads)
        check_finite(replicas, t, stream)

        drift_vals = {}
        for name, tr in stream.drift.items():
            cur = replicas.states[name]
            if decision.fired.get(name):
                tr.rebase(cur)
                drift_vals[name] = (0.0, 0.0)
            else:
                drift_vals[name] = tr.observe(cur, t)
        rate_vals = {}
        for name, tr in stream.rates.items():
            if t % tr.window == 0:
                rate_vals[name] = tr.observe(t, kern.mean_rows(replicas.states[name]))

        if trace is not None:
            trace(t, replicas, g, decision)

        if recording:
            x = replicas.x
            mean_x = kern.mean_rows(x)
            du = drift_vals.get("u", (None, None))
            dv = drift_vals.get("v", (None, None))
            stream.rows.append(MetricsRow(
                step=t,
                round=t // k_round,
                worker_count=replicas.M,
                loss_mean=fsum_mean(objective.losses(x, centers)),
                grad_norm_mean=grad_norm,
                param_norm_mean=fsum_mean(kern.row_norms(x)),
                dist_to_opt=float(np.linalg.norm(mean_x - x_star)),
                rel_change_u=rate_vals.get("u"),
                rel_change_v=rate_vals.get("v"),
                drift_u_observed=du[0],
                drift_u_bound=du[1],
                drift_v_observed=dv[0],
                drift_v_bound=dv[1],
                cum_payload_units=cum,
                eta=eta,
            ))

    stream.payload_units = cum
    stream.final_mean_x = kern.mean_rows(replicas.x)
    stream.final_dist = float(np.linalg.norm(stream.final_mean_x - x_star))
    stream.workers = worker_states(replicas, ids, noise.sigmas)
    stream.replicas = replicas
    return stream
