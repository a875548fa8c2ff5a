"""Epoch-wise full-batch GD and fixed-order mini-batch SGD."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .data import RngStream
from .errors import EmptySetError
from .models import Model

COMPUTE_BUDGET = 16 * 1024


@dataclass(frozen=True)
class Schedule:
    rates: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        if not self.rates:
            raise ValueError("a schedule needs at least one epoch")
        if any(not r > 0 for r in self.rates):
            raise ValueError("learning rates must be positive")

    def __len__(self) -> int:
        return len(self.rates)

    def __iter__(self):
        return iter(self.rates)

    def __getitem__(self, k):
        return self.rates[k]


def linear_decay(eta0: float, L: int) -> Schedule:
    """``eta_k = eta0 * (L - k + 1) / L`` for ``k = 1..L``; ends at ``eta0 / L``, not 0."""
    if L < 1:
        raise ValueError("L must be >= 1")
    return Schedule(tuple(eta0 * (L - k + 1) / L for k in range(1, L + 1)))


def constant(eta: float, L: int) -> Schedule:
    if L < 1:
        raise ValueError("L must be >= 1")
    return Schedule((float(eta),) * L)


def epochs_for_budget(n_train: int, budget: int = COMPUTE_BUDGET) -> int:
    """Constant-compute epoch count: ``round(budget / n_train)``, at least 1."""
    if n_train < 1:
        raise ValueError("n_train must be >= 1")
    return max(1, int(round(budget / n_train)))


@dataclass(frozen=True)
class FullBatch:
    pass


@dataclass(frozen=True)
class MiniBatch:
    batch_size: int
    order_seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


Mode = Union[FullBatch, MiniBatch]


@dataclass
class Trajectory:
    states: list[np.ndarray]
    schedule: Schedule
    mode: Mode = field(default_factory=FullBatch)

    @property
    def L(self) -> int:
        return len(self.states) - 1

    def __getitem__(self, k) -> np.ndarray:
        return self.states[k]

    def to_text(self) -> str:
        """One line per state: ``k, theta_1, ..., theta_p`` at 17 significant digits."""
        lines = []
        for k, th in enumerate(self.states):
            lines.append(", ".join([str(k)] + [format(float(v), ".17g") for v in th]))
        return "\n".join(lines) + "\n"

    @staticmethod
    def parse_states(text: str) -> list[np.ndarray]:
        states = []
        for ln in text.strip().split("\n"):
            vals = ln.split(",")
            states.append(np.array([float(v) for v in vals[1:]]))
        return states


def gd_epoch(model: Model, theta, data, eta_effective: float) -> np.ndarray:
    """One full-batch step ``theta - eta_effective * grad R(theta)``."""
    if len(data) == 0:
        raise EmptySetError("cannot train on an empty set")
    theta = model.check_theta(theta)
    if eta_effective == 0:
        return theta.copy()
    return theta - eta_effective * model.risk_grad(theta, data)


def sgd_epoch(model: Model, theta, data, eta: float, batch_size: int, rng: RngStream) -> np.ndarray:
    """One pass over a seeded shuffle in consecutive batches; the last batch may be short."""
    if len(data) == 0:
        raise EmptySetError("cannot train on an empty set")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    theta = model.check_theta(theta).copy()
    order = rng.generator().permutation(len(data))
    for start in range(0, len(data), batch_size):
        batch = data.subset(order[start : start + batch_size])
        theta = theta - eta * model.risk_grad(theta, batch)
    return theta


def run_epoch(model: Model, theta, data, eta: float, mode: Mode, rng: Optional[RngStream] = None) -> np.ndarray:
    if isinstance(mode, MiniBatch):
        if rng is None:
            rng = RngStream(mode.order_seed, "sgd")
        return sgd_epoch(model, theta, data, eta, mode.batch_size, rng)
    return gd_epoch(model, theta, data, eta)


def train(
    model: Model,
    theta0,
    data,
    schedule: Schedule,
    mode: Mode = FullBatch(),
    rate_scale: float = 1.0,
    rng: Optional[RngStream] = None,
) -> Trajectory:
    """Train for ``len(schedule)`` epochs, recording every state.

    ``rate_scale`` multiplies each rate (pass ``len(data)`` for the summed-loss
    step convention used by the theory code).  Mini-batch epochs draw their
    shuffle from ``rng.child("epoch", k)``.
    """
    theta = model.check_theta(theta0).copy()
    if isinstance(mode, MiniBatch) and rng is None:
        rng = RngStream(mode.order_seed, "sgd")
    states = [theta]
    for k, eta in enumerate(schedule, start=1):
        sub = rng.child("epoch", k) if rng is not None else None
        theta = run_epoch(model, theta, data, eta * rate_scale, mode, sub)
        states.append(theta)
    return Trajectory(states, schedule, mode)
