"""JSON experiment configs: schema, validation and conversion to :class:`SimConfig`."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from pathlib import Path

import jsonschema

from desloc.costmodel import CostModelParams, preset_1p7b
from desloc.optim import OptimizerSpec
from desloc.sim import WSD, ConstantLR, MembershipEvent, Objective, SimConfig
from desloc.sync import SyncMode, SyncPolicy

SEED_ENV = "DESLOC_SEED"

_pos_int = {"type": "integer", "minimum": 1}
_vector = {"type": "array", "items": {"type": "number"}, "minItems": 1}

_policy = {
    "type": "object",
    "additionalProperties": False,
    "required": ["mode"],
    "properties": {
        "mode": {"enum": [m.value for m in SyncMode]},
        "period": _pos_int,
        "prob": {"type": "number", "minimum": 0, "maximum": 1},
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["workers", "steps", "optimizer", "schedule", "sync"],
    "properties": {
        "workers": _pos_int,
        "steps": _pos_int,
        "seed": {"type": "integer", "minimum": 0},
        "threads": _pos_int,
        "rate_window": _pos_int,
        "optimizer": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["sgdm", "adam", "adopt"]},
                "beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "lambda": {"type": "number", "minimum": 0},
                "epsilon": {"type": "number", "exclusiveMinimum": 0},
                "amsgrad": {"type": "boolean"},
                "clip": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["mode"],
                    "properties": {
                        "mode": {"enum": ["coordinatewise", "by_norm", "none"]},
                        "rho": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
            },
        },
        "schedule": {
            "oneOf": [
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind", "eta"],
                    "properties": {
                        "kind": {"const": "constant"},
                        "eta": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind", "eta_peak", "warmup_steps", "decay_fraction"],
                    "properties": {
                        "kind": {"const": "wsd"},
                        "eta_peak": {"type": "number", "exclusiveMinimum": 0},
                        "warmup_steps": {"type": "integer", "minimum": 0},
                        "decay_fraction": {"type": "number", "minimum": 0, "maximum": 1},
                    },
                },
            ]
        },
        "sync": {
            "type": "object",
            "additionalProperties": False,
            "properties": {q: _policy for q in ("x", "u", "v", "grad")},
        },
        "objective": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["rosenbrock", "quadratic", "heterogeneous_quadratic"]},
                "dim": _pos_int,
                "x0": _vector,
                "center": _vector,
                "curvature": _vector,
                "centers": {"type": "array", "items": _vector, "minItems": 1},
                "noise": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["iid_gaussian", "per_worker_gaussian"]},
                        "sigma": {"type": "number", "minimum": 0},
                    },
                },
            },
        },
        "events": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["step", "add_workers"],
                "properties": {
                    "step": _pos_int,
                    "add_workers": _pos_int,
                    "init": {"enum": ["mean_broadcast", "replicate_worker_zero"]},
                },
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "format": {"enum": ["csv", "json"]},
                "path": {"type": "string"},
                "record_every": _pos_int,
            },
        },
        "cost_model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                k: {"type": "number", "exclusiveMinimum": 0}
                for k in ("d", "D", "S", "MFU", "B", "T")
            } | {
                "M": _pos_int,
                "l": {"type": "number", "minimum": 0},
                "overlap_alpha": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
    },
}


class ConfigError(ValueError):
    """Invalid experiment config; ``path`` names the offending key."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass
class OutputOptions:
    format: str = "csv"
    path: str | None = None
    record_every: int = 1


@dataclass
class Experiment:
    sim: SimConfig
    output: OutputOptions
    cost_model: CostModelParams | None = None


def _path(parts) -> str:
    return "/".join(str(p) for p in parts) or "<root>"


def validate(raw: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        raise ConfigError(err.message, _path(err.absolute_path))
    x = raw.get("sync", {}).get("x")
    if x and x["mode"] == "probabilistic" and x.get("prob", 0) == 0:
        raise ConfigError("p_x = 0: parameter sync probability 0 makes ψ unbounded", "sync/x/prob")


def _policy_from(d: dict, where: str) -> SyncPolicy:
    try:
        return SyncPolicy(d["mode"], period=d.get("period"), prob=d.get("prob"))
    except ValueError as e:
        raise ConfigError(str(e), where) from None


def build(raw: dict, seed_override: int | None = None) -> Experiment:
    validate(raw)
    opt = raw["optimizer"]
    clip = opt.get("clip", {"mode": "coordinatewise"})
    try:
        spec = OptimizerSpec(
            kind=opt["kind"],
            beta1=opt.get("beta1", 0.9),
            beta2=opt.get("beta2", 0.999),
            lam=opt.get("lambda", 1e-8),
            epsilon=opt.get("epsilon", 1e-6),
            amsgrad=opt.get("amsgrad", False),
            clip=clip["mode"],
            rho=clip.get("rho", 1.0),
        )
    except ValueError as e:
        raise ConfigError(str(e), "optimizer") from None

    sch = raw["schedule"]
    if sch["kind"] == "constant":
        schedule = ConstantLR(sch["eta"])
    else:
        schedule = WSD(sch["eta_peak"], sch["warmup_steps"], sch["decay_fraction"])

    policies = {q: _policy_from(p, f"sync/{q}") for q, p in raw["sync"].items()}

    obj = raw.get("objective", {"kind": "rosenbrock"})
    noise = obj.get("noise", {"kind": "iid_gaussian", "sigma": 0.0})
    dim = obj.get("dim", 2 if obj["kind"] == "rosenbrock" else len(obj.get("x0", [0.0])))
    as_tuple = lambda v: None if v is None else tuple(float(a) for a in v)  # noqa: E731
    try:
        objective = Objective(
            kind=obj["kind"],
            dim=dim,
            x0=as_tuple(obj.get("x0")),
            center=as_tuple(obj.get("center")),
            curvature=as_tuple(obj.get("curvature")),
            centers=tuple(as_tuple(c) for c in obj["centers"]) if "centers" in obj else None,
            noise=noise["kind"],
            sigma=noise.get("sigma", 0.0),
        )
    except ValueError as e:
        raise ConfigError(str(e), "objective") from None

    out = raw.get("output", {})
    output = OutputOptions(
        format=out.get("format", "csv"),
        path=out.get("path"),
        record_every=out.get("record_every", 1),
    )
    seed = raw.get("seed", 0)
    if seed_override is not None:
        seed = seed_override
    elif os.environ.get(SEED_ENV):
        seed = int(os.environ[SEED_ENV])
    try:
        sim = SimConfig(
            M=raw["workers"],
            T=raw["steps"],
            optimizer=spec,
            schedule=schedule,
            policies=policies,
            objective=objective,
            events=[MembershipEvent(**e) for e in raw.get("events", [])],
            seed=seed,
            record_every=output.record_every,
            threads=raw.get("threads", 1),
            rate_window=raw.get("rate_window", 64),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None

    cost = None
    if "cost_model" in raw:
        try:
            cost = preset_1p7b(**raw["cost_model"])
        except ValueError as e:
            raise ConfigError(str(e), "cost_model") from None
    return Experiment(sim=sim, output=output, cost_model=cost)


def load(path, seed_override: int | None = None) -> Experiment:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e}") from None
    return build(raw, seed_override)


def with_record_every(exp: Experiment, n: int) -> Experiment:
    exp.output.record_every = n
    exp.sim = replace(exp.sim, record_every=n)
    return exp
