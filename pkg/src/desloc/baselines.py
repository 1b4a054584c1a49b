"""Sync-policy presets for DES-LOC and its baselines, plus a standalone Local Adam loop."""

from __future__ import annotations

import re
from dataclasses import replace

import numpy as np

from desloc import kernels
from desloc.sim import (
    NoiseBank,
    SimConfig,
    clip_gradients,
    eta_at,
    init_replicas,
    local_step,
)
from desloc.sync import SyncPolicy


def ddp() -> dict[str, SyncPolicy]:
    """Gradient all-reduce every step; replicas never drift apart."""
    return {
        "grad": SyncPolicy.periodic(1),
        "x": SyncPolicy.never(),
        "u": SyncPolicy.never(),
        "v": SyncPolicy.never(),
    }


def local_adam(K: int) -> dict[str, SyncPolicy]:
    return des_loc(K, K, K)


def des_loc(Kx: int, Ku: int, Kv: int) -> dict[str, SyncPolicy]:
    return {
        "x": SyncPolicy.periodic(Kx),
        "u": SyncPolicy.periodic(Ku),
        "v": SyncPolicy.periodic(Kv),
    }


def favg_plus_opt(K: int) -> dict[str, SyncPolicy]:
    """Parameter averaging with optimizer states kept local forever."""
    return {"x": SyncPolicy.periodic(K), "u": SyncPolicy.never(), "v": SyncPolicy.never()}


def favg_minus_opt(K: int) -> dict[str, SyncPolicy]:
    """Parameter averaging that zeroes optimizer states at every average."""
    return {
        "x": SyncPolicy.periodic(K),
        "u": SyncPolicy.reset_with_params(),
        "v": SyncPolicy.reset_with_params(),
    }


PRESETS = {
    "ddp": (ddp, 0),
    "local_adam": (local_adam, 1),
    "des_loc": (des_loc, 3),
    "favg_plus_opt": (favg_plus_opt, 1),
    "favg_minus_opt": (favg_minus_opt, 1),
}

_METHOD_RE = re.compile(r"^([a-z_]+)(?:[:(]([0-9, ]*)\)?)?$")


def parse_method(text: str) -> tuple[str, dict[str, SyncPolicy]]:
    """Parse ``name`` / ``name:K`` / ``name(Kx,Ku,Kv)`` into a label and policies."""
    m = _METHOD_RE.match(text.strip())
    if not m or m.group(1) not in PRESETS:
        raise ValueError(f"unknown method {text!r}; expected one of {sorted(PRESETS)}")
    name, argstr = m.group(1), m.group(2) or ""
    args = [int(a) for a in argstr.replace(" ", "").split(",") if a]
    factory, nargs = PRESETS[name]
    if len(args) != nargs:
        raise ValueError(f"{name} takes {nargs} period(s), got {len(args)}")
    label = name if not args else f"{name}({','.join(map(str, args))})"
    return label, factory(*args)


def with_policies(config: SimConfig, policies: dict[str, SyncPolicy]) -> SimConfig:
    return replace(config, policies=dict(policies))


def local_adam_reference(config: SimConfig, K: int, trace=None):
    """Local Adam written as its own loop: every K steps average x, u, v together.

    Shares the objective, noise streams and kernels with :func:`desloc.sim.run`
    but none of its scheduling code. Returns the final replica set.
    """
    if config.events:
        raise ValueError("the reference loop does not model membership events")
    kern = kernels.backend(config.backend)
    spec = config.optimizer
    objective = config.objective
    reps = init_replicas(config)
    ids = list(range(config.M))
    centers = objective.worker_centers(ids)
    noise = NoiseBank(objective, config.seed, ids)
    g = np.empty_like(reps.x)
    for t in range(config.T):
        objective.grad(reps.x, centers, g, kern)
        g += noise.next()
        clip_gradients(spec, g, kern)
        if t % K == 0:
            reps.x[...] = kern.mean_rows(reps.x)
            for arr in reps.states.values():
                arr[...] = kern.mean_rows(arr)
        local_step(spec, reps, g, eta_at(t, config.schedule, config.T), kern, config.threads)
        if trace is not None:
            trace(t, reps)
    return reps
