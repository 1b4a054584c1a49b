"""Closed-form wall-clock and communication model for data-parallel training.

Time is ``t_compute + events * t_ring(d)`` where ``t_compute = 6 d D / (MFU S M)``
and one Ring-AllReduce of ``P`` parameters costs ``2 P / B * (1 - 1/M) + l``.
Bandwidth ``B`` is in parameters per second; :func:`bandwidth_from_gbps`
converts from link speed. Event counts use the continuous ``T / K`` form.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class CostModelParams:
    d: float
    D: float
    M: int
    S: float
    MFU: float
    B: float
    l: float
    T: float
    # fraction of communication time not hidden behind compute
    overlap_alpha: float = 1.0

    def __post_init__(self):
        for name in ("d", "D", "M", "S", "MFU", "B", "T"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.MFU > 1:
            raise ValueError("MFU cannot exceed 1")
        if self.l < 0:
            raise ValueError("latency must be non-negative")
        if not 0.0 <= self.overlap_alpha <= 1.0:
            raise ValueError("overlap_alpha must lie in [0, 1]")


def bandwidth_from_gbps(gbps: float, bytes_per_param: int = 4) -> float:
    """Convert a link speed in Gbit/s to parameters per second."""
    return gbps * 1e9 / 8.0 / bytes_per_param


def preset_1p7b(**overrides) -> CostModelParams:
    """1.7B-parameter model on 40B tokens with 2M-token global batches.

    Peak throughput and MFU are illustrative H100-class numbers; only ratios
    between methods are meaningful.
    """
    base = CostModelParams(
        d=1.7e9, D=40e9, M=4, S=989e12, MFU=0.4,
        B=bandwidth_from_gbps(100.0), l=1e-4, T=40e9 / 2**21,
    )
    return replace(base, **overrides)


@dataclass(frozen=True)
class Method:
    name: str
    periods: tuple[int, ...] = ()

    def events(self, T: float) -> float:
        if self.name == "ddp":
            return T
        if self.name == "fedavg":
            return T / self.periods[0]
        if self.name == "local_adam":
            return 3.0 * T / self.periods[0]
        if self.name == "des_loc":
            return sum(T / k for k in self.periods)
        raise ValueError(f"unknown method {self.name!r}")

    @property
    def label(self) -> str:
        if not self.periods:
            return self.name
        return f"{self.name}({','.join(str(k) for k in self.periods)})"


def DDP() -> Method:
    return Method("ddp")


def FedAvg(K: int) -> Method:
    return Method("fedavg", (K,))


def LocalAdam(K: int) -> Method:
    return Method("local_adam", (K,))


def DesLoc(Kx: int, Ku: int, Kv: int) -> Method:
    return Method("des_loc", (Kx, Ku, Kv))


def t_compute(p: CostModelParams) -> float:
    return 6.0 * p.d * p.D / (p.MFU * p.S * p.M)


def t_ring(P: float, p: CostModelParams) -> float:
    if P < 0:
        raise ValueError("payload must be non-negative")
    return 2.0 * P / p.B * (1.0 - 1.0 / p.M) + p.l


@dataclass(frozen=True)
class Breakdown:
    compute: float
    comms: float
    events: float

    @property
    def total(self) -> float:
        return self.compute + self.comms

    @property
    def utilization(self) -> float:
        return self.compute / self.total


def t_total(method: Method, p: CostModelParams) -> Breakdown:
    events = method.events(p.T)
    comms = p.overlap_alpha * events * t_ring(p.d, p)
    return Breakdown(compute=t_compute(p), comms=comms, events=events)


def utilization(method: Method, p: CostModelParams) -> float:
    return t_total(method, p).utilization


def comm_reduction(method: Method, baseline: Method, p: CostModelParams) -> float:
    """How many times less communication time ``method`` needs than ``baseline``."""
    return t_total(baseline, p).comms / t_total(method, p).comms


def bandwidth_sweep(methods, p: CostModelParams, bandwidths) -> list[dict]:
    rows = []
    for b in bandwidths:
        q = replace(p, B=float(b))
        for m in methods:
            br = t_total(m, q)
            rows.append({
                "bandwidth": float(b),
                "method": m.label,
                "t_compute": br.compute,
                "t_comms": br.comms,
                "t_total": br.total,
                "utilization": br.utilization,
            })
    return rows


def log_bandwidths(lo: float, hi: float, n: int) -> np.ndarray:
    return np.logspace(np.log10(lo), np.log10(hi), n)
