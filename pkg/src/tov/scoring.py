"""Train-on-validation scores (Methods A and B) and baseline scores.

All scores follow the loss-decrease orientation: a positive value means
the example's loss went *down* after the surrogate was tuned on the
validation set.  ``literal_sign=True`` reproduces the opposite orientation
(loss after tuning minus loss before) before ``F`` is applied.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .data import RngStream, Split, TokenData, TokenExample
from .errors import DimensionError, EpsilonRangeError
from .models import Model, ToyTokenModel
from .trainer import FullBatch, Mode, Schedule, Trajectory, run_epoch

DEFAULT_PROB_CLAMP = 1e-12


class FKind(str, enum.Enum):
    IDENTITY = "identity"
    ABS = "abs"
    POSITIVE = "positive"

    def __call__(self, y):
        y = np.asarray(y, dtype=np.float64)
        if self is FKind.IDENTITY:
            return y
        if self is FKind.ABS:
            return np.abs(y)
        return np.maximum(y, 0.0)


class ScoreMethod(str, enum.Enum):
    A = "A"
    B = "B"
    MAX_UNCERTAINTY = "MaxUncertainty"
    RANDOM = "Random"


@dataclass
class ScoreTable:
    method: ScoreMethod
    ids: np.ndarray
    per_epoch: np.ndarray  # shape (n, L)
    f_kind: Optional[FKind] = None
    epsilon: float = 0.0
    meta: dict = field(default_factory=dict)
    trajectory: Optional[Trajectory] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.per_epoch = np.asarray(self.per_epoch, dtype=np.float64)
        if self.per_epoch.ndim == 1:
            self.per_epoch = self.per_epoch[:, None]
        if self.per_epoch.shape[0] != self.ids.size:
            raise DimensionError("one row of per-epoch scores is needed per id")

    @property
    def scores(self) -> np.ndarray:
        L = self.per_epoch.shape[1]
        # running phi += phi_k / L, in epoch order
        total = np.zeros(self.ids.size)
        for k in range(L):
            total = total + self.per_epoch[:, k] / L
        return total

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.ids.tolist(), self.scores.tolist()))

    def with_scores(self, scores) -> "ScoreTable":
        """Copy whose final scores are ``scores`` (stored as a single epoch)."""
        return ScoreTable(self.method, self.ids.copy(), np.asarray(scores, dtype=np.float64)[:, None],
                          self.f_kind, self.epsilon, dict(self.meta))

    # -- export ---------------------------------------------------------------
    def write_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        L = self.per_epoch.shape[1]
        header = ["example_id", "score"] + [f"epoch_{k}" for k in range(1, L + 1)]
        scores = self.scores
        lines = [",".join(header)]
        for j, i in enumerate(self.ids.tolist()):
            row = [str(i), repr(float(scores[j]))] + [repr(float(v)) for v in self.per_epoch[j]]
            lines.append(",".join(row))
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
        meta = {
            "method": self.method.value,
            "f_kind": self.f_kind.value if self.f_kind else "none",
            "epsilon": repr(float(self.epsilon)),
            **{k: v for k, v in self.meta.items()},
        }
        write_sidecar(path.with_suffix(".meta"), meta)

    @classmethod
    def read_csv(cls, path) -> "ScoreTable":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            lines = [ln for ln in fh.read().split("\n") if ln]
        rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]]).reshape(len(lines) - 1, -1)
        meta = read_sidecar(path.with_suffix(".meta")) if path.with_suffix(".meta").exists() else {}
        method = ScoreMethod(meta.pop("method", "A"))
        fk = meta.pop("f_kind", "none")
        eps = float(meta.pop("epsilon", 0.0))
        return cls(method, rows[:, 0].astype(np.int64), rows[:, 2:],
                   None if fk == "none" else FKind(fk), eps, meta)


def write_sidecar(path, meta: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k in sorted(meta):
            fh.write(f"{k}={meta[k]}\n")


def read_sidecar(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for ln in fh:
            ln = ln.rstrip("\n")
            if ln and "=" in ln:
                k, v = ln.split("=", 1)
                out[k] = v
    return out


# ---------------------------------------------------------------------------
# Token-level comparison of two models
# ---------------------------------------------------------------------------


def _token_model(model: Model) -> ToyTokenModel:
    if not isinstance(model, ToyTokenModel):
        raise DimensionError("per-token scores need the token model family")
    return model


def token_deltas(model: Model, ex: TokenExample, theta, theta_prime) -> np.ndarray:
    """``log p_t(true | theta') - log p_t(true | theta)`` for every position."""
    m = _token_model(model)
    return m.token_logprobs(theta_prime, ex) - m.token_logprobs(theta, ex)


def delta_t(model: Model, ex: TokenExample, t: int, theta, theta_prime) -> float:
    """Per-token log-likelihood gain at 1-based position ``t``."""
    if not 1 <= t <= ex.T:
        raise DimensionError(f"position {t} outside 1..{ex.T}")
    return float(token_deltas(model, ex, theta, theta_prime)[t - 1])


def phi_example(model: Model, ex: TokenExample, theta, theta_prime, f: FKind = FKind.IDENTITY) -> float:
    return float(np.mean(FKind(f)(token_deltas(model, ex, theta, theta_prime))))


def scalar_delta(model: Model, ex, theta_sur, theta_val) -> float:
    """Loss decrease of one example when moving from ``theta_sur`` to ``theta_val``."""
    return float(model.loss(theta_sur, ex) - model.loss(theta_val, ex))


def epoch_scores(model: Model, data, theta_sur, theta_val, f: FKind = FKind.IDENTITY,
                 literal_sign: bool = False) -> np.ndarray:
    """Per-example epoch score for every example of ``data``.

    Token data is scored position-wise (F applied per token, then averaged);
    dense data applies F to the scalar loss decrease.
    """
    f = FKind(f)
    sign = -1.0 if literal_sign else 1.0
    if isinstance(data, TokenData):
        m = _token_model(model)
        out = np.empty(len(data))
        for j, ex in enumerate(data):
            d = m.token_logprobs(theta_val, ex) - m.token_logprobs(theta_sur, ex)
            out[j] = np.mean(f(sign * d))
        return out
    diff = model.losses(theta_sur, data) - model.losses(theta_val, data)
    return f(sign * diff)


# ---------------------------------------------------------------------------
# Methods A and B
# ---------------------------------------------------------------------------


def _check_eps(epsilon: float) -> None:
    if not 0.0 <= epsilon < 1.0:
        raise EpsilonRangeError(f"epsilon must lie in [0, 1), got {epsilon}")


def _scales(rate_scale: str, m: int, m_val: int, mode: Mode) -> tuple[float, float]:
    if rate_scale == "mean":
        return 1.0, 1.0
    if rate_scale == "sum":
        if not isinstance(mode, FullBatch):
            raise ValueError("the summed-loss step convention needs full-batch mode")
        return float(m), float(m_val)
    raise ValueError(f"unknown rate_scale {rate_scale!r}")


def _parts(data, split: Split):
    return data.subset(split.base_u), data.subset(split.validation), split.scored


def method_a_scores(
    model: Model,
    theta0,
    data,
    split: Split,
    schedule: Schedule,
    epsilon: float,
    f: FKind = FKind.IDENTITY,
    mode: Mode = FullBatch(),
    *,
    rate_scale: str = "mean",
    rng: Optional[RngStream] = None,
    literal_sign: bool = False,
) -> ScoreTable:
    """Method A: discard the validation branch after every epoch.

    The surrogate follows ``theta_k = epoch(theta_{k-1}, U, eta_k)``; each
    epoch a one-epoch branch on the validation set with rate
    ``epsilon * eta_k`` is scored against it and then thrown away.

    ``rate_scale="sum"`` multiplies base rates by ``|U|`` and validation
    rates by ``|val|`` (full-batch only), i.e. GD on summed losses.
    """
    _check_eps(epsilon)
    f = FKind(f)
    base, val, scored = _parts(data, split)
    targets = data.subset(scored)
    s_base, s_val = _scales(rate_scale, len(base), len(val), mode)
    rng = rng or RngStream(getattr(mode, "order_seed", 0), "method-a")

    theta = model.check_theta(theta0).copy()
    states = [theta]
    per_epoch = np.zeros((scored.size, len(schedule)))
    for k, eta in enumerate(schedule, start=1):
        theta = run_epoch(model, theta, base, eta * s_base, mode, rng.child("base", k))
        states.append(theta)
        if epsilon == 0.0:
            theta_val = theta
        else:
            theta_val = run_epoch(model, theta, val, epsilon * eta * s_val, mode, rng.child("val", k))
        per_epoch[:, k - 1] = epoch_scores(model, targets, theta, theta_val, f, literal_sign)
    table = ScoreTable(ScoreMethod.A, scored, per_epoch, f, epsilon,
                       meta={"rate_scale": rate_scale, "literal_sign": str(literal_sign).lower()})
    table.trajectory = Trajectory(states, schedule, mode)
    return table


def method_b_scores(
    model: Model,
    theta0,
    data,
    split: Split,
    schedule: Schedule,
    epsilon: float,
    mode: Mode = FullBatch(),
    *,
    rate_scale: str = "mean",
    rng: Optional[RngStream] = None,
) -> ScoreTable:
    """Method B: fold validation tuning into a coupled trajectory.

    The coupled model alternates an epoch on ``U`` and an epoch on the
    validation set (rate ``epsilon * eta_k``); a clean model trains on ``U``
    only.  The score is the raw epoch-averaged loss decrease from clean to
    coupled, with no ``F`` applied.
    """
    _check_eps(epsilon)
    base, val, scored = _parts(data, split)
    targets = data.subset(scored)
    s_base, s_val = _scales(rate_scale, len(base), len(val), mode)
    rng = rng or RngStream(getattr(mode, "order_seed", 0), "method-b")

    clean = model.check_theta(theta0).copy()
    coupled = clean.copy()
    states = [clean]
    per_epoch = np.zeros((scored.size, len(schedule)))
    for k, eta in enumerate(schedule, start=1):
        # both trajectories see the same base-set shuffle
        coupled = run_epoch(model, coupled, base, eta * s_base, mode, rng.child("base", k))
        if epsilon != 0.0:
            coupled = run_epoch(model, coupled, val, epsilon * eta * s_val, mode, rng.child("val", k))
        clean = run_epoch(model, clean, base, eta * s_base, mode, rng.child("base", k))
        states.append(clean)
        per_epoch[:, k - 1] = model.losses(clean, targets) - model.losses(coupled, targets)
    table = ScoreTable(ScoreMethod.B, scored, per_epoch, None, epsilon, meta={"rate_scale": rate_scale})
    table.trajectory = Trajectory(states, schedule, mode)
    return table


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------


def max_uncertainty_scores(model: Model, theta_final, data, ids=None,
                           clamp: float = DEFAULT_PROB_CLAMP) -> ScoreTable:
    """Mean over positions of ``log(p (1 - p))`` for the observed target.

    Probabilities are clamped to ``[clamp, 1 - clamp]`` so saturated
    predictions give a large negative but finite score.
    """
    ids = np.arange(len(data)) if ids is None else np.asarray(ids, dtype=np.int64)
    probs = model.true_token_probs(theta_final, data.subset(ids))
    out = np.empty(ids.size)
    for j, p in enumerate(probs):
        p = np.clip(p, clamp, 1.0 - clamp)
        out[j] = np.mean(np.log(p * (1.0 - p)))
    return ScoreTable(ScoreMethod.MAX_UNCERTAINTY, ids, out[:, None], meta={"clamp": repr(clamp)})


def random_scores(ids, rng: RngStream) -> ScoreTable:
    """Placeholder scores: a uniform random ranking of ``ids``."""
    ids = np.asarray(ids, dtype=np.int64)
    ranks = rng.generator().permutation(ids.size).astype(np.float64)
    return ScoreTable(ScoreMethod.RANDOM, ids, ranks[:, None])
