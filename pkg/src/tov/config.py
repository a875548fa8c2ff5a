"""Flat ``section.key=value`` experiment configuration.

Every key has a type and a default; unknown keys are errors.  The defaults
reproduce the synthetic logistic-regression experiment (p = 10, angle pi/2,
131072-example pool, 4096 base examples, 4 epochs at learning rate 0.5
with linear decay, epsilon = 0.1, 10 runs).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

from .errors import ConfigError


def _bool(v: str) -> bool:
    s = str(v).strip().lower()
    if s in {"1", "true", "yes", "on"}:
        return True
    if s in {"0", "false", "no", "off"}:
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _floats(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in str(v).split(",") if x.strip())


def _strs(v: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in str(v).split(",") if x.strip())


def sqrt2_budgets(lo: int = 128, hi: int = 8192) -> tuple[int, ...]:
    """Budgets from ``lo`` to ``hi`` in multiplicative steps of sqrt(2), rounded, deduplicated."""
    out, k = [], 0
    while True:
        n = int(round(lo * 2 ** (k / 2)))
        if n > hi:
            break
        if n not in out:
            out.append(n)
        k += 1
    return tuple(out)


def _budgets(v: str) -> tuple[int, ...]:
    s = str(v).strip()
    if s.startswith("sqrt2:"):
        _, lo, hi = s.split(":")
        return sqrt2_budgets(int(lo), int(hi))
    vals = tuple(int(x) for x in s.split(",") if x.strip())
    if not vals or min(vals) < 1:
        raise ValueError("budgets must be positive integers")
    return vals


def _epochs(v: str):
    s = str(v).strip()
    if s == "budget":
        return s
    n = int(s)
    if n < 1:
        raise ValueError("epochs must be >= 1")
    return n


def _choice(*allowed: str) -> Callable[[str], str]:
    def parse(v: str) -> str:
        s = str(v).strip()
        if s not in allowed:
            raise ValueError(f"{s!r} not in {allowed}")
        return s

    return parse


def _pos_int(v: str) -> int:
    n = int(v)
    if n < 1:
        raise ValueError("must be >= 1")
    return n


# key -> (parser, default)
SCHEMA: dict[str, tuple[Callable[[str], Any], Any]] = {
    "experiment.seed": (int, 0),
    "experiment.runs": (_pos_int, 10),
    "experiment.budgets": (_budgets, sqrt2_budgets(128, 8192)),
    "experiment.strategies": (_strs, ("ScoreOnly", "ScorePlusRandom", "RandomFromTop", "PureRandom")),
    "model.family": (_choice("logistic", "linear", "token"), "logistic"),
    "model.ridge": (float, 0.0),
    "model.p_out": (_pos_int, 50),
    "model.feature_seed": (int, 0),
    "data.generator": (_choice("mixture", "token", "files"), "mixture"),
    "data.p": (_pos_int, 10),
    "data.gamma": (float, math.pi / 2),
    "data.n_pool": (_pos_int, 128 * 1024),
    "data.m_base": (_pos_int, 4 * 1024),
    "data.m_val": (_pos_int, 1024),
    "data.m_test": (_pos_int, 10_000),
    "data.vocab": (_pos_int, 16),
    "data.max_T": (_pos_int, 12),
    "data.planted_scale": (float, 2.0),
    "data.pool_file": (str, ""),
    "data.val_file": (str, ""),
    "data.test_file": (str, ""),
    "scoring.method": (_choice("A", "B", "MaxUncertainty", "Random"), "B"),
    "scoring.f_kind": (_choice("identity", "abs", "positive"), "identity"),
    "scoring.epsilon": (float, 0.1),
    "scoring.mode": (_choice("full", "minibatch"), "full"),
    "scoring.batch_size": (_pos_int, 16),
    "scoring.literal_sign": (_bool, False),
    "schedule.kind": (_choice("linear_decay", "constant"), "linear_decay"),
    "schedule.eta0": (float, 0.5),
    "schedule.epochs": (_epochs, 4),
    "schedule.compute_budget": (_pos_int, 16 * 1024),
    "selection.length_bins": (_bool, False),
    "selection.n_bins": (_pos_int, 10),
    "selection.top_fraction": (float, 0.5),
    "selection.random_source": (_choice("base", "rest"), "base"),
    "final.epochs": (_epochs, 4),
    "final.eta0": (float, 0.5),
    "final.init": (_choice("theta0", "surrogate"), "theta0"),
    "sweep.lr_grid": (_floats, (3e-6, 1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2)),
}


def _render(v: Any) -> str:
    if isinstance(v, tuple):
        return ",".join(_render(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class ExperimentConfig:
    values: dict[str, Any] = field(default_factory=lambda: {k: d for k, (_, d) in SCHEMA.items()})

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def set(self, key: str, raw: Any) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        parser, _ = SCHEMA[key]
        try:
            self.values[key] = parser(raw) if isinstance(raw, str) else raw
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from exc

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "ExperimentConfig":
        cfg = cls()
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected key=value")
            key, raw = (s.strip() for s in line.split("=", 1))
            try:
                cfg.set(key, raw)
            except ConfigError as exc:
                raise ConfigError(f"{source}:{lineno}: {exc}") from exc
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: Optional[str]) -> "ExperimentConfig":
        if path is None:
            return cls()
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from exc
        return cls.from_text(text, str(p))

    def validate(self) -> None:
        v = self.values
        if v["data.m_base"] > v["data.n_pool"]:
            raise ConfigError("data.m_base exceeds data.n_pool")
        if not 0.0 <= v["scoring.epsilon"] < 1.0:
            raise ConfigError("scoring.epsilon must lie in [0, 1)")
        if v["data.generator"] == "files" and not (v["data.pool_file"] and v["data.val_file"] and v["data.test_file"]):
            raise ConfigError("data.generator=files needs data.pool_file, data.val_file and data.test_file")
        if (v["data.generator"] == "token") != (v["model.family"] == "token"):
            raise ConfigError("token data and the token model family go together")
        if not 0.0 < v["selection.top_fraction"] <= 1.0:
            raise ConfigError("selection.top_fraction must lie in (0, 1]")

    def section(self, prefix: str) -> dict[str, Any]:
        return {k: v for k, v in self.values.items() if k.startswith(prefix + ".")}

    def to_text(self, prefixes: Optional[tuple[str, ...]] = None) -> str:
        keys = sorted(k for k in self.values if prefixes is None or k.split(".")[0] in prefixes)
        return "".join(f"{k}={_render(self.values[k])}\n" for k in keys)
