"""gRDA / RDA / SGD iteration in mirror-descent form and the proximal maps it uses.

The iteration keeps a dual accumulator ``v`` and a primal iterate ``w``::

    v_{n+1} = v_n - gamma * grad f(w_n; Z_{n+1})
    w_{n+1} = prox(v_{n+1}, g(n+1, gamma))

where ``g`` is a tuning schedule.  With the zero schedule and no penalty this
is plain SGD.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence, Union

import numpy as np

from .errors import ConfigError, NonFiniteInputError

# Iterates beyond this magnitude are treated as diverged by the harness.
DIVERGENCE_LIMIT = 1e12


# ---------------------------------------------------------------------------
# Tuning schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Zero:
    """g = 0 (plain SGD)."""


@dataclass(frozen=True)
class Rda:
    """g = c0 * n * gamma (classical regularized dual averaging)."""

    c0: float

    def __post_init__(self):
        if not self.c0 >= 0:
            raise ConfigError(f"Rda.c0 must be non-negative, got {self.c0}")


@dataclass(frozen=True)
class PowerLaw:
    """g = c * sqrt(gamma) * (n*gamma - t0)_+ ** mu."""

    c: float
    mu: float
    t0: float = 0.0

    def __post_init__(self):
        if not self.c >= 0:
            raise ConfigError(f"PowerLaw.c must be non-negative, got {self.c}")
        if not self.mu >= 0:
            raise ConfigError(f"PowerLaw.mu must be non-negative, got {self.mu}")
        if not self.t0 >= 0:
            raise ConfigError(f"PowerLaw.t0 must be non-negative, got {self.t0}")


@dataclass(frozen=True)
class SimPowerLaw:
    """g = gamma ** (1/2 + mu) * n ** mu."""

    mu: float

    def __post_init__(self):
        if not self.mu >= 0:
            raise ConfigError(f"SimPowerLaw.mu must be non-negative, got {self.mu}")


TuningSchedule = Union[Zero, Rda, PowerLaw, SimPowerLaw]


def _pos_pow(x: float, mu: float) -> float:
    # (x)_+ ** mu with the convention 0 ** 0 = 1 only for strictly positive x
    if x <= 0.0:
        return 0.0
    return x**mu


def tuning_value(schedule: TuningSchedule, n: int, gamma: float) -> float:
    """Penalty level g(n, gamma) for step ``n``."""
    if not gamma > 0:
        raise ConfigError(f"gamma must be positive, got {gamma}")
    if isinstance(schedule, Zero):
        return 0.0
    if isinstance(schedule, Rda):
        return schedule.c0 * n * gamma
    if isinstance(schedule, PowerLaw):
        return schedule.c * math.sqrt(gamma) * _pos_pow(n * gamma - schedule.t0, schedule.mu)
    if isinstance(schedule, SimPowerLaw):
        if n <= 0:
            return 0.0
        return gamma ** (0.5 + schedule.mu) * float(n) ** schedule.mu
    raise ConfigError(f"unknown tuning schedule {schedule!r}")


# ---------------------------------------------------------------------------
# Penalties and proximal maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoPenalty:
    pass


@dataclass(frozen=True)
class L1:
    pass


@dataclass(frozen=True)
class ElasticNet:
    kappa: float

    def __post_init__(self):
        if not self.kappa > 0:
            raise ConfigError(f"ElasticNet.kappa must be positive, got {self.kappa}")


@dataclass(frozen=True)
class GroupLasso:
    groups: tuple

    def __init__(self, groups: Sequence[Sequence[int]]):
        object.__setattr__(self, "groups", tuple(tuple(int(i) for i in g) for g in groups))
        flat = [i for g in self.groups for i in g]
        if any(len(g) == 0 for g in self.groups):
            raise ConfigError("GroupLasso groups must be non-empty")
        if len(set(flat)) != len(flat):
            raise ConfigError("GroupLasso groups overlap")
        if sorted(flat) != list(range(len(flat))):
            raise ConfigError("GroupLasso groups must cover indices 0..d-1 exactly")

    @property
    def dim(self) -> int:
        return sum(len(g) for g in self.groups)


Penalty = Union[NoPenalty, L1, ElasticNet, GroupLasso]


def prox_l1(v, lam: float) -> np.ndarray:
    """Soft thresholding: sgn(v) * (|v| - lam)_+ coordinate-wise."""
    if lam < 0:
        raise ConfigError(f"penalty level must be non-negative, got {lam}")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)


def prox_elastic_net(v, lam: float, kappa: float) -> np.ndarray:
    """Minimizer of 0.5*(w - v)**2 + lam*(kappa*w**2/2 + |w|)."""
    if kappa <= 0:
        raise ConfigError(f"kappa must be positive, got {kappa}")
    return prox_l1(v, lam) / (1.0 + kappa * lam)


def prox_group_lasso(v, lam: float, groups) -> np.ndarray:
    """Block soft thresholding: each group is scaled by (1 - lam/||v_a||)_+."""
    if lam < 0:
        raise ConfigError(f"penalty level must be non-negative, got {lam}")
    if not isinstance(groups, GroupLasso):
        groups = GroupLasso(groups)
    v = np.asarray(v, dtype=float)
    if v.shape[0] != groups.dim:
        raise ConfigError(f"groups cover {groups.dim} coordinates but v has {v.shape[0]}")
    out = np.zeros_like(v)
    for g in groups.groups:
        idx = list(g)
        norm = math.sqrt(float(np.sum(v[idx] ** 2)))
        if norm > lam:
            out[idx] = (1.0 - lam / norm) * v[idx]
    return out


def prox(v, lam: float, penalty: Penalty) -> np.ndarray:
    if isinstance(penalty, NoPenalty):
        return np.array(v, dtype=float)
    if isinstance(penalty, L1):
        return prox_l1(v, lam)
    if isinstance(penalty, ElasticNet):
        return prox_elastic_net(v, lam, penalty.kappa)
    if isinstance(penalty, GroupLasso):
        return prox_group_lasso(v, lam, penalty)
    raise ConfigError(f"unknown penalty {penalty!r}")


# ---------------------------------------------------------------------------
# State and step
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerState:
    v: np.ndarray
    w: np.ndarray
    n: int
    gamma: float

    @classmethod
    def initial(cls, w0, gamma: float) -> "OptimizerState":
        if not gamma > 0:
            raise ConfigError(f"gamma must be positive, got {gamma}")
        w0 = np.array(w0, dtype=float)
        return cls(v=w0.copy(), w=w0.copy(), n=0, gamma=float(gamma))


def grda_step(state: OptimizerState, gradient, schedule: TuningSchedule, penalty: Penalty) -> OptimizerState:
    """One mirror-descent step; returns a new state."""
    gradient = np.asarray(gradient, dtype=float)
    if gradient.shape != state.v.shape:
        raise ConfigError(f"gradient shape {gradient.shape} does not match state {state.v.shape}")
    if not np.all(np.isfinite(gradient)):
        raise NonFiniteInputError(f"non-finite gradient at step {state.n + 1}", step=state.n + 1)
    n_next = state.n + 1
    v = state.v - state.gamma * gradient
    w = prox(v, tuning_value(schedule, n_next, state.gamma), penalty)
    return replace(state, v=v, w=w, n=n_next)


# ---------------------------------------------------------------------------
# Iterate averaging
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AverageAccumulator:
    sum: np.ndarray
    count: int = 0

    @classmethod
    def empty(cls, d: int) -> "AverageAccumulator":
        return cls(sum=np.zeros(d), count=0)

    @property
    def mean(self) -> np.ndarray:
        if self.count == 0:
            raise ValueError("mean of an empty accumulator")
        return self.sum / self.count


def update_average(acc: AverageAccumulator, w) -> AverageAccumulator:
    w = np.asarray(w, dtype=float)
    if w.shape != acc.sum.shape:
        raise ConfigError(f"iterate shape {w.shape} does not match accumulator {acc.sum.shape}")
    return AverageAccumulator(sum=acc.sum + w, count=acc.count + 1)
