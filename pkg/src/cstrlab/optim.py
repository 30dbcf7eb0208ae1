"""Adadelta and the warmup/step learning-rate scale."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping

import numpy as np

from .errors import ConfigError, NonFiniteGradientError
from .tensor import ParameterStore


class Adadelta:
    """Adadelta with running averages of squared grads and squared deltas.

    Defaults follow the usual rho=0.95, eps=1e-6, lr=1.0 setting. With
    fresh state and a unit gradient the first update is about -4.472e-3.
    """

    def __init__(self, params: ParameterStore, rho: float = 0.95,
                 eps: float = 1e-6, lr: float = 1.0) -> None:
        if not 0.0 <= rho < 1.0:
            raise ConfigError(f"rho must be in [0, 1), got {rho}")
        if eps <= 0:
            raise ConfigError(f"eps must be positive, got {eps}")
        self.params = params
        self.rho = rho
        self.eps = eps
        self.lr = lr
        self._eg: Dict[str, np.ndarray] = {}
        self._ed: Dict[str, np.ndarray] = {}
        for name, t in params.trainable_items():
            self._eg[name] = np.zeros_like(t.data)
            self._ed[name] = np.zeros_like(t.data)

    def step(self, grads: Mapping[str, np.ndarray],
             lr_scale: float = 1.0) -> None:
        """Apply one in-place update. Raises on any non-finite gradient."""
        for name, t in self.params.trainable_items():
            g = grads.get(name)
            if g is None:
                continue
            g = np.asarray(g, dtype=t.data.dtype)
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(
                    f"non-finite gradient for parameter {name!r}")
            eg = self._eg[name]
            ed = self._ed[name]
            eg *= self.rho
            eg += (1.0 - self.rho) * g * g
            delta = -np.sqrt(ed + self.eps) / np.sqrt(eg + self.eps) * g
            ed *= self.rho
            ed += (1.0 - self.rho) * delta * delta
            t.data += (self.lr * lr_scale) * delta

    def state(self) -> Dict[str, np.ndarray]:
        """Flat name->array view of the accumulators, for checkpointing."""
        out: Dict[str, np.ndarray] = {}
        for name in self._eg:
            out[f"{name}/eg"] = self._eg[name]
            out[f"{name}/ed"] = self._ed[name]
        return out

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        for name in self._eg:
            for suffix, table in (("eg", self._eg), ("ed", self._ed)):
                key = f"{name}/{suffix}"
                if key not in state:
                    raise ConfigError(f"optimizer state missing {key!r}")
                arr = np.asarray(state[key])
                if arr.shape != table[name].shape:
                    raise ConfigError(
                        f"optimizer state {key!r} has shape {arr.shape}, "
                        f"expected {table[name].shape}")
                table[name] = arr.astype(table[name].dtype).copy()


@dataclass(frozen=True)
class Schedule:
    """Linear warmup then two step decays of 10x each."""

    warmup: int
    milestone1: int
    milestone2: int
    total: int

    def validate(self) -> None:
        if not (0 < self.warmup < self.milestone1 < self.milestone2
                < self.total):
            raise ConfigError(
                "schedule needs 0 < warmup < milestone1 < milestone2 < total,"
                f" got {self}")


def lr_at(step: int, schedule: Schedule) -> float:
    """Learning-rate scale in [0, 1] for a given optimizer step."""
    schedule.validate()
    if step < 0:
        raise ConfigError(f"negative step {step}")
    if step < schedule.warmup:
        return step / schedule.warmup
    if step < schedule.milestone1:
        return 1.0
    if step < schedule.milestone2:
        return 0.1
    return 0.01


def schedule_from_total(total: int) -> Schedule:
    """Place warmup at 1% and the decays at 150/420 and 250/420 of total."""
    if total < 4:
        raise ConfigError(f"total steps must be >= 4, got {total}")
    warmup = max(1, round(0.01 * total))
    m1 = max(warmup + 1, round(total * 150 / 420))
    m2 = max(m1 + 1, round(total * 250 / 420))
    if m2 >= total:
        raise ConfigError(f"total {total} too small for the decay layout")
    sched = Schedule(warmup=warmup, milestone1=m1, milestone2=m2, total=total)
    sched.validate()
    return sched
