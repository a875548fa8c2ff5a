"""Budgeted subset selection from a score table."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import RngStream, Split, TokenData, length_bins, sample_without_replacement
from .errors import SizeError
from .scoring import ScoreTable

logger = logging.getLogger(__name__)


class Strategy(str, enum.Enum):
    SCORE_ONLY = "ScoreOnly"
    SCORE_PLUS_RANDOM = "ScorePlusRandom"
    RANDOM_FROM_TOP = "RandomFromTop"
    PURE_RANDOM = "PureRandom"


class Provenance(str, enum.Enum):
    TOP_SCORE = "TopScore"
    RANDOM_FILL = "RandomFill"


@dataclass
class SelectionConfig:
    strategy: Strategy
    n: int
    use_length_bins: bool = False
    n_bins: int = 10
    top_fraction: float = 0.5
    rng: RngStream = field(default_factory=lambda: RngStream(0, "select"))
    # "base" draws ScorePlusRandom's random half from U; "rest" from the unselected scored set
    random_source: str = "base"

    def __post_init__(self):
        self.strategy = Strategy(self.strategy)
        if self.n < 0:
            raise SizeError("budget must be non-negative")
        if not 0.0 < self.top_fraction <= 1.0:
            raise ValueError("top_fraction must lie in (0, 1]")


@dataclass
class SelectionResult:
    selected: np.ndarray
    provenance: dict[int, Provenance]

    def write_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = ["example_id,provenance"] + [f"{i},{self.provenance[i].value}" for i in self.selected.tolist()]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")


def top_k(ids: np.ndarray, scores: np.ndarray, k: int) -> np.ndarray:
    """The ``k`` highest-scoring ids; ties go to the smaller id."""
    if k > ids.size:
        raise SizeError(f"cannot take the top {k} of {ids.size} examples")
    order = np.lexsort((ids, -scores))
    return np.sort(ids[order[:k]])


def _binned_top(ids, scores, n, bins_of_ids) -> np.ndarray:
    """Top-scoring examples with per-bin quotas differing by at most one."""
    n_bins = len(bins_of_ids)
    sizes = np.array([b.size for b in bins_of_ids])
    quotas = np.full(n_bins, n // n_bins)
    quotas[: n % n_bins] += 1
    if np.any(quotas > sizes):
        raise SizeError("a length bin is too small for its quota")
    pos = {i: j for j, i in enumerate(ids.tolist())}
    picked = []
    for b, q in zip(bins_of_ids, quotas):
        s = scores[[pos[i] for i in b.tolist()]]
        picked.append(top_k(b, s, int(q)))
    return np.sort(np.concatenate(picked)) if picked else np.zeros(0, np.int64)


def _top_candidates(ids, scores, n, cfg: SelectionConfig, data) -> np.ndarray:
    if cfg.use_length_bins:
        if isinstance(data, TokenData):
            bins = length_bins(data.subset(ids), cfg.n_bins, ids=ids)
            return _binned_top(ids, scores, n, bins)
        logger.info("length binning ignored for non-token data")
    return top_k(ids, scores, n)


def select(scores: ScoreTable, split: Split, cfg: SelectionConfig, data=None) -> SelectionResult:
    """Choose ``cfg.n`` examples according to ``cfg.strategy``.

    ``data`` is only consulted for output lengths when length binning is on.
    """
    ids, vals = scores.ids, scores.scores
    n = cfg.n
    strat = cfg.strategy
    if strat is Strategy.SCORE_ONLY:
        chosen = _top_candidates(ids, vals, n, cfg, data)
        return SelectionResult(chosen, {i: Provenance.TOP_SCORE for i in chosen.tolist()})

    if strat is Strategy.SCORE_PLUS_RANDOM:
        n_top, n_rand = math.ceil(n / 2), n // 2
        top = _top_candidates(ids, vals, n_top, cfg, data)
        if cfg.random_source == "base":
            source = split.base_u
        elif cfg.random_source == "rest":
            source = np.setdiff1d(ids, top)
        else:
            raise ValueError(f"unknown random_source {cfg.random_source!r}")
        if n_rand > source.size:
            raise SizeError(f"cannot draw {n_rand} random examples from {source.size}")
        rand = sample_without_replacement(source, n_rand, cfg.rng.child("fill"))
        prov = {i: Provenance.TOP_SCORE for i in top.tolist()}
        prov.update({i: Provenance.RANDOM_FILL for i in rand.tolist()})
        return SelectionResult(np.sort(np.concatenate([top, rand])), prov)

    if strat is Strategy.RANDOM_FROM_TOP:
        k = math.ceil(cfg.top_fraction * ids.size)
        if n > k:
            raise SizeError(f"budget {n} exceeds the top-{k} candidate set")
        cand = top_k(ids, vals, k)
        chosen = sample_without_replacement(cand, n, cfg.rng.child("from-top"))
        return SelectionResult(chosen, {i: Provenance.TOP_SCORE for i in chosen.tolist()})

    if strat is Strategy.PURE_RANDOM:
        if n > ids.size:
            raise SizeError(f"budget {n} exceeds the {ids.size} scored examples")
        chosen = sample_without_replacement(ids, n, cfg.rng.child("random"))
        return SelectionResult(chosen, {i: Provenance.RANDOM_FILL for i in chosen.tolist()})

    raise ValueError(f"unknown strategy {strat}")


def final_train_set(result: SelectionResult) -> np.ndarray:
    return result.selected.copy()
