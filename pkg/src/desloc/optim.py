"""Single-worker optimizer rules and closed-form helpers.

The Adam and ADOPT rules here follow the desynced algorithms literally: there
are no ``1 - beta**t`` bias-correction factors, Adam's stability term enters as
``sqrt(v + lambda**2)``, and ADOPT normalizes by the second moment from the
*previous* step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from desloc import vecmath


class OptimizerKind(str, Enum):
    SGDM = "sgdm"
    ADAM = "adam"
    ADOPT = "adopt"


class ClipMode(str, Enum):
    COORDINATEWISE = "coordinatewise"
    BY_NORM = "by_norm"
    NONE = "none"


@dataclass(frozen=True)
class OptimizerSpec:
    kind: OptimizerKind = OptimizerKind.ADAM
    beta1: float = 0.9
    beta2: float = 0.999
    lam: float = 1e-8
    epsilon: float = 1e-6
    amsgrad: bool = False
    clip: ClipMode = ClipMode.COORDINATEWISE
    rho: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", OptimizerKind(self.kind))
        object.__setattr__(self, "clip", ClipMode(self.clip))
        if not 0.0 <= self.beta1 < 1.0:
            raise ValueError(f"beta1 must lie in [0, 1), got {self.beta1}")
        if not 0.0 <= self.beta2 < 1.0:
            raise ValueError(f"beta2 must lie in [0, 1), got {self.beta2}")
        if self.lam < 0.0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if not self.epsilon > 0.0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.clip is not ClipMode.NONE and not self.rho > 0.0:
            raise ValueError(f"clipping radius must be positive, got {self.rho}")
        if self.amsgrad and self.kind is not OptimizerKind.ADAM:
            raise ValueError("amsgrad only applies to adam")

    @property
    def state_names(self) -> tuple[str, ...]:
        """Synchronizable states in update order."""
        if self.kind is OptimizerKind.SGDM:
            return ("u",)
        if self.kind is OptimizerKind.ADOPT:
            # v is updated first; m (stored as u) reads the pre-update v
            return ("v", "u")
        return ("u", "v")

    def clip_gradient(self, g) -> np.ndarray:
        if self.clip is ClipMode.COORDINATEWISE:
            return vecmath.clip_coordinatewise(g, self.rho)
        if self.clip is ClipMode.BY_NORM:
            return vecmath.clip_by_norm(g, self.rho)
        return np.array(g, dtype=np.float64)


@dataclass
class OptimizerState:
    """First moment ``u``, second moment ``v`` and the AMSGrad running max."""

    u: np.ndarray
    v: np.ndarray | None = None
    v_tilde: np.ndarray | None = None

    @classmethod
    def zeros(cls, dim: int, spec: OptimizerSpec) -> OptimizerState:
        v = None if spec.kind is OptimizerKind.SGDM else np.zeros(dim)
        vt = np.zeros(dim) if spec.amsgrad else None
        return cls(u=np.zeros(dim), v=v, v_tilde=vt)

    def copy(self) -> OptimizerState:
        return OptimizerState(
            u=self.u.copy(),
            v=None if self.v is None else self.v.copy(),
            v_tilde=None if self.v_tilde is None else self.v_tilde.copy(),
        )


@dataclass(frozen=True)
class TheoryParams:
    L: float = 1.0
    B2: float = 1.0
    G2: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError("L must be positive")
        if self.B2 < 1:
            raise ValueError("B2 must be at least 1")
        if self.G2 < 0 or self.sigma < 0:
            raise ValueError("G2 and sigma must be non-negative")


def _same_dim(*vs):
    d = vs[0].shape
    for v in vs[1:]:
        if v is not None and v.shape != d:
            raise ValueError(f"dimension mismatch: {v.shape} vs {d}")


def adam_update_states(state: OptimizerState, g_hat, spec: OptimizerSpec) -> OptimizerState:
    """One EMA step of both Adam moments (and the AMSGrad max when enabled)."""
    g = np.asarray(g_hat, dtype=np.float64)
    _same_dim(g, state.u, state.v)
    b1, b2 = spec.beta1, spec.beta2
    u = b1 * state.u + (1.0 - b1) * g
    v = b2 * state.v + (1.0 - b2) * (g * g)
    vt = None
    if spec.amsgrad:
        vt = np.maximum(state.v_tilde, v)
    return OptimizerState(u=u, v=v, v_tilde=vt)


def adam_param_step(x, state: OptimizerState, eta: float, spec: OptimizerSpec) -> np.ndarray:
    """``x - eta / sqrt(v + lambda**2) * u`` using the AMSGrad max when enabled."""
    x = np.asarray(x, dtype=np.float64)
    veff = state.v_tilde if spec.amsgrad else state.v
    _same_dim(x, state.u, veff)
    denom = veff + spec.lam * spec.lam
    if np.any(denom <= 0.0):
        raise ZeroDivisionError("lambda is zero and a second-moment coordinate is zero")
    return x - (eta / np.sqrt(denom)) * state.u


def adopt_update(x, state: OptimizerState, g_hat, eta: float,
                 spec: OptimizerSpec) -> tuple[np.ndarray, OptimizerState]:
    """One ADOPT step: normalize by the previous ``v``, then move by ``eta * m``."""
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(g_hat, dtype=np.float64)
    _same_dim(x, g, state.u, state.v)
    b1, b2 = spec.beta1, spec.beta2
    denom = np.maximum(np.sqrt(state.v), spec.epsilon)
    v = b2 * state.v + (1.0 - b2) * (g * g)
    m = b1 * state.u + (1.0 - b1) * (g / denom)
    return x - eta * m, OptimizerState(u=m, v=v)


def sgdm_update(x, state: OptimizerState, g, eta: float,
                beta: float) -> tuple[np.ndarray, OptimizerState]:
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    _same_dim(x, g, state.u)
    u = beta * state.u + (1.0 - beta) * g
    return x - eta * u, replace(state, u=u)


def half_life(beta: float, psi_frac: float = 0.5) -> float:
    """Steps until a state's weight decays to ``psi_frac``: ``ln(psi_frac) / ln(beta)``."""
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    if not 0.0 < psi_frac < 1.0:
        raise ValueError(f"psi_frac must lie in (0, 1), got {psi_frac}")
    return math.log(psi_frac) / math.log(beta)


def _check_drift_args(rho, beta, K):
    if not rho > 0:
        raise ValueError("rho must be positive")
    if not 0.0 <= beta < 1.0:
        raise ValueError("beta must lie in [0, 1)")
    if K < 0 or int(K) != K:
        raise ValueError("K must be a non-negative integer")


def drift_bound_first(rho: float, beta1: float, K: int) -> float:
    """Largest possible ``||u_{t+K} - u_t||_inf`` under clipping at ``rho``."""
    _check_drift_args(rho, beta1, K)
    return 2.0 * rho * (1.0 - beta1 ** K)


def drift_bound_second(rho: float, beta2: float, K: int) -> float:
    _check_drift_args(rho, beta2, K)
    return 2.0 * rho * rho * (1.0 - beta2 ** K)


def psi(p_x: float, p_u: float, beta: float) -> float:
    """Local-drift constant of probabilistic DES-LOC-SGDM.

    Zero when parameters sync every step; grows like ``1/p_x**2`` as parameter
    averaging becomes rare.
    """
    if not 0.0 < p_x <= 1.0:
        raise ValueError(f"p_x must lie in (0, 1], got {p_x}")
    if not 0.0 <= p_u <= 1.0:
        raise ValueError(f"p_u must lie in [0, 1], got {p_u}")
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"beta must lie in [0, 1), got {beta}")
    q = 1.0 - p_u
    return (4.0 * (1.0 - p_x) / (p_x * p_x)) * ((1.0 - beta) * q / (1.0 - q * beta))


def eta0(L: float, beta: float, B2: float, psi_val: float) -> float:
    """Largest step size covered by the SGDM convergence guarantee."""
    if not L > 0:
        raise ValueError("L must be positive")
    if not 0.0 <= beta < 1.0:
        raise ValueError("beta must lie in [0, 1)")
    if B2 < 0 or psi_val < 0:
        raise ValueError("B2 and psi must be non-negative")
    second = math.inf
    if psi_val > 0:
        second = 1.0 / (6.0 * math.sqrt(psi_val * max(1.0, B2 - 1.0)))
    return min(1.0 - beta, second) / (4.0 * L)


def k_lcm(periods) -> int:
    """Period after which every state and the parameters are synced together."""
    periods = list(periods)
    if not periods:
        raise ValueError("need at least one period")
    for k in periods:
        if int(k) != k or k < 1:
            raise ValueError(f"periods must be positive integers, got {k}")
    return math.lcm(*(int(k) for k in periods))


@dataclass
class SingleWorkerOptimizer:
    """Stateful convenience wrapper applying clip + update + step for one worker."""

    spec: OptimizerSpec
    dim: int
    state: OptimizerState = field(init=False)

    def __post_init__(self):
        self.state = OptimizerState.zeros(self.dim, self.spec)

    def step(self, x, g, eta: float) -> np.ndarray:
        g_hat = self.spec.clip_gradient(g)
        kind = self.spec.kind
        if kind is OptimizerKind.SGDM:
            x, self.state = sgdm_update(x, self.state, g_hat, eta, self.spec.beta1)
        elif kind is OptimizerKind.ADOPT:
            x, self.state = adopt_update(x, self.state, g_hat, eta, self.spec)
        else:
            self.state = adam_update_states(self.state, g_hat, self.spec)
            x = adam_param_step(x, self.state, eta, self.spec)
        return x
