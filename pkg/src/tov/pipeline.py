"""Experiment stages: generate, score, select/train/evaluate, sweep, plot data.

Every stage reads and writes plain files under one output directory::

    out/data/{pool,val,test}.txt + data.meta
    out/scores/run{r}.csv + .meta + .traj + .split
    out/report/rows.csv, summary.csv, report.meta
    out/sweep/sweep.csv, best_lr.csv
    out/plot/plot_data.csv

Independent cells run on a thread pool; results are assembled in a fixed
order, so the worker count changes speed only.
"""

from __future__ import annotations

import hashlib
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import ExperimentConfig
from .data import (
    DenseData,
    RngStream,
    Split,
    TokenData,
    concat_all,
    make_split,
    read_dataset,
    write_dataset,
)
from .errors import ConfigError, SizeError
from .models import FeatureMap, FeaturizedLinearModel, LogisticModel, Model, ToyTokenModel
from .scoring import (
    FKind,
    ScoreTable,
    max_uncertainty_scores,
    method_a_scores,
    method_b_scores,
    random_scores,
    read_sidecar,
    write_sidecar,
)
from .selection import SelectionConfig, Strategy, select
from .synthetic import LogisticMixtureSpec, gen_mixture_pool, gen_toy_token_corpus, planted_token_model
from .trainer import FullBatch, MiniBatch, Schedule, Trajectory, constant, epochs_for_budget, linear_decay, train

logger = logging.getLogger(__name__)

DATA_FILES = ("pool.txt", "val.txt", "test.txt")


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def text_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _map(fn, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _write_lines(path: Path, lines: Iterable[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------


def cmd_generate(cfg: ExperimentConfig, out) -> Path:
    """Write pool/val/test files plus a metadata sidecar under ``out/data``."""
    out = Path(out) / "data"
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg["experiment.seed"]
    gen = cfg["data.generator"]
    meta: dict[str, str] = {"generator": gen, "seed": str(seed)}
    if gen == "mixture":
        spec = LogisticMixtureSpec(p=cfg["data.p"], gamma=cfg["data.gamma"], n_pool=cfg["data.n_pool"],
                                   m_val=cfg["data.m_val"], m_test=cfg["data.m_test"], seed=seed)
        mix = gen_mixture_pool(spec)
        parts = (mix.pool, mix.val, mix.test)
        meta.update({
            "p": str(spec.p),
            "gamma": repr(spec.gamma),
            "theta_star": " ".join(repr(float(v)) for v in mix.theta_star),
            "theta_prime": " ".join(repr(float(v)) for v in mix.theta_prime),
            "component_labels": "".join(str(int(c)) for c in mix.component),
        })
    elif gen == "token":
        V = cfg["data.vocab"]
        root = RngStream(seed, "data-gen")
        planted = planted_token_model(V, root.child("planted"), cfg["data.planted_scale"])
        sizes = (cfg["data.n_pool"], cfg["data.m_val"], cfg["data.m_test"])
        parts = tuple(gen_toy_token_corpus(V, n, cfg["data.max_T"], planted, root.child(name))
                      for n, name in zip(sizes, ("pool", "val", "test")))
        meta.update({"vocab": str(V), "max_T": str(cfg["data.max_T"]),
                     "planted_model": " ".join(repr(float(v)) for v in planted)})
    else:
        raise ConfigError("data.generator=files has nothing to generate; point the score stage at the files")
    for name, data in zip(DATA_FILES, parts):
        write_dataset(out / name, data)
    meta["sizes"] = ",".join(str(len(d)) for d in parts)
    write_sidecar(out / "data.meta", meta)
    return out


def _data_paths(cfg: ExperimentConfig, out) -> list[Path]:
    if cfg["data.generator"] == "files":
        return [Path(cfg[k]) for k in ("data.pool_file", "data.val_file", "data.test_file")]
    return [Path(out) / "data" / name for name in DATA_FILES]


@dataclass
class Corpus:
    """Pool, validation and test sets stacked into one id space."""

    data: DenseData | TokenData
    n_pool: int
    m_val: int
    m_test: int
    hashes: tuple[str, ...]


def load_corpus(cfg: ExperimentConfig, out) -> Corpus:
    paths = _data_paths(cfg, out)
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise FileNotFoundError("missing dataset files (run `generate` first): " + ", ".join(missing))
    parts = [read_dataset(p) for p in paths]
    return Corpus(concat_all(parts), len(parts[0]), len(parts[1]), len(parts[2]),
                  tuple(file_hash(p) for p in paths))


def build_model(cfg: ExperimentConfig, data) -> Model:
    fam = cfg["model.family"]
    if fam == "token":
        return ToyTokenModel(cfg["data.vocab"])
    if not isinstance(data, DenseData):
        raise ConfigError("dense model families need dense data")
    if fam == "logistic":
        return LogisticModel(data.dim, ridge=cfg["model.ridge"])
    return FeaturizedLinearModel(FeatureMap(data.dim, cfg["model.p_out"], cfg["model.feature_seed"]))


def build_schedule(kind: str, eta0: float, L: int) -> Schedule:
    return linear_decay(eta0, L) if kind == "linear_decay" else constant(eta0, L)


def _mode(cfg: ExperimentConfig):
    if cfg["scoring.mode"] == "minibatch":
        return MiniBatch(cfg["scoring.batch_size"], cfg["experiment.seed"])
    return FullBatch()


def _scoring_epochs(cfg: ExperimentConfig) -> int:
    L = cfg["schedule.epochs"]
    return epochs_for_budget(cfg["data.m_base"], cfg["schedule.compute_budget"]) if L == "budget" else L


def run_split(cfg: ExperimentConfig, corpus: Corpus, run: int) -> Split:
    """Base set for one run; resampled freshly per run from the shared pool."""
    return make_split(corpus.n_pool, cfg["data.m_base"], corpus.m_val, corpus.m_test,
                      RngStream(cfg["experiment.seed"], f"split/run{run}"))


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------


def _score_key(cfg: ExperimentConfig, corpus: Corpus) -> str:
    text = cfg.to_text(("model", "scoring", "schedule")) + cfg.to_text(("data",))
    text += f"seed={cfg['experiment.seed']}\n" + "".join(h + "\n" for h in corpus.hashes)
    return text_hash(text)


def score_run(cfg: ExperimentConfig, corpus: Corpus, model: Model, run: int) -> tuple[ScoreTable, Split]:
    split = run_split(cfg, corpus, run)
    data = corpus.data
    L = _scoring_epochs(cfg)
    sched = build_schedule(cfg["schedule.kind"], cfg["schedule.eta0"], L)
    mode = _mode(cfg)
    rng = RngStream(cfg["experiment.seed"], f"score/run{run}")
    method = cfg["scoring.method"]
    theta0 = model.zeros()
    if method == "A":
        table = method_a_scores(model, theta0, data, split, sched, cfg["scoring.epsilon"],
                                FKind(cfg["scoring.f_kind"]), mode, rng=rng,
                                literal_sign=cfg["scoring.literal_sign"])
    elif method == "B":
        table = method_b_scores(model, theta0, data, split, sched, cfg["scoring.epsilon"], mode, rng=rng)
    else:
        traj = train(model, theta0, data.subset(split.base_u), sched, mode, rng=rng.child("base"))
        if method == "MaxUncertainty":
            table = max_uncertainty_scores(model, traj.states[-1], data, split.scored)
        else:
            table = random_scores(split.scored, rng.child("random"))
        table.trajectory = traj
    return table, split


def _score_paths(out, run: int) -> dict[str, Path]:
    base = Path(out) / "scores"
    return {k: base / f"run{run}.{k}" for k in ("csv", "meta", "traj", "split")}


def cmd_score(cfg: ExperimentConfig, out, threads: int = 1) -> list[Path]:
    """Score every run; files whose cache key matches are reused untouched."""
    corpus = load_corpus(cfg, out)
    model = build_model(cfg, corpus.data)
    key = _score_key(cfg, corpus)
    runs = list(range(cfg["experiment.runs"]))

    def cached(run: int) -> bool:
        paths = _score_paths(out, run)
        if not all(p.exists() for p in paths.values()):
            return False
        return read_sidecar(paths["meta"]).get("cache_key") == key

    def work(run: int) -> Path:
        paths = _score_paths(out, run)
        if cached(run):
            logger.info("run %d: scores cached", run)
            return paths["csv"]
        table, split = score_run(cfg, corpus, model, run)
        table.meta.update({
            "cache_key": key,
            "run": str(run),
            "seed": str(cfg["experiment.seed"]),
            "schedule": ",".join(repr(r) for r in table.trajectory.schedule.rates),
            "model": model.family,
        })
        table.write_csv(paths["csv"])
        _write_lines(paths["traj"], [table.trajectory.to_text().rstrip("\n")])
        _write_lines(paths["split"], [
            "base_u=" + " ".join(map(str, split.base_u.tolist())),
            f"n_pool={corpus.n_pool}",
            f"m_val={corpus.m_val}",
            f"m_test={corpus.m_test}",
        ])
        return paths["csv"]

    return _map(work, runs, threads)


def _load_run(out, run: int, corpus: Corpus) -> tuple[ScoreTable, Split, list[np.ndarray]]:
    paths = _score_paths(out, run)
    if not paths["csv"].exists():
        raise FileNotFoundError(f"missing {paths['csv']} (run `score` first)")
    table = ScoreTable.read_csv(paths["csv"])
    info = read_sidecar(paths["split"])
    base_u = np.array([int(v) for v in info["base_u"].split()], dtype=np.int64)
    n = corpus.n_pool
    split = Split(np.arange(n), base_u, np.arange(n, n + corpus.m_val),
                  np.arange(n + corpus.m_val, n + corpus.m_val + corpus.m_test))
    states = Trajectory.parse_states(paths["traj"].read_text(encoding="utf-8"))
    return table, split, states


# ---------------------------------------------------------------------------
# Final training and evaluation
# ---------------------------------------------------------------------------


def final_epochs(cfg: ExperimentConfig, n: int) -> int:
    L = cfg["final.epochs"]
    return epochs_for_budget(n, cfg["schedule.compute_budget"]) if L == "budget" else L


def train_and_eval(cfg: ExperimentConfig, model: Model, corpus: Corpus, train_ids, theta_init,
                   eta0: float, n: int, rng: RngStream) -> float:
    sched = build_schedule(cfg["schedule.kind"], eta0, final_epochs(cfg, n))
    mode = _mode(cfg)
    traj = train(model, theta_init, corpus.data.subset(train_ids), sched, mode, rng=rng)
    n0 = corpus.n_pool + corpus.m_val
    test = corpus.data.subset(np.arange(n0, n0 + corpus.m_test))
    return model.risk(traj.states[-1], test)


def _fmt(v: float) -> str:
    return repr(float(v))


def summarize(rows: list[tuple[int, str, int, float]]) -> list[tuple[int, str, int, float, float]]:
    """Mean and standard error (sample sd / sqrt(runs)) per (budget, strategy)."""
    groups: dict[tuple[int, str], list[float]] = {}
    for n, strat, _run, val in rows:
        groups.setdefault((n, strat), []).append(val)
    out = []
    for (n, strat) in sorted(groups):
        v = np.array(groups[(n, strat)])
        se = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else float("nan")
        out.append((n, strat, v.size, float(np.mean(v)), se))
    return out


def cmd_select_train_eval(cfg: ExperimentConfig, out, threads: int = 1) -> Path:
    corpus = load_corpus(cfg, out)
    model = build_model(cfg, corpus.data)
    runs = range(cfg["experiment.runs"])
    loaded = {r: _load_run(out, r, corpus) for r in runs}
    seed = cfg["experiment.seed"]
    cells = [(n, s, r) for n in cfg["experiment.budgets"] for s in cfg["experiment.strategies"] for r in runs]

    def work(cell):
        n, strat, run = cell
        table, split, states = loaded[run]
        sel_cfg = SelectionConfig(Strategy(strat), n, use_length_bins=cfg["selection.length_bins"],
                                  n_bins=cfg["selection.n_bins"], top_fraction=cfg["selection.top_fraction"],
                                  rng=RngStream(seed, f"select/run{run}/n{n}/{strat}"),
                                  random_source=cfg["selection.random_source"])
        try:
            result = select(table, split, sel_cfg, corpus.data)
        except SizeError as exc:
            logger.warning("skipping n=%d %s run %d: %s", n, strat, run, exc)
            return None
        init = states[-1] if cfg["final.init"] == "surrogate" else model.zeros()
        loss = train_and_eval(cfg, model, corpus, result.selected, init, cfg["final.eta0"], n,
                              RngStream(seed, f"final/run{run}/n{n}/{strat}"))
        return (n, strat, run, loss)

    rows = [r for r in _map(work, cells, threads) if r is not None]
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    rep = Path(out) / "report"
    _write_lines(rep / "rows.csv", ["budget,strategy,run,test_logloss"] +
                 [f"{n},{s},{r},{_fmt(v)}" for n, s, r, v in rows])
    _write_lines(rep / "summary.csv", ["budget,strategy,runs,mean,stderr"] +
                 [f"{n},{s},{k},{_fmt(m)},{_fmt(se)}" for n, s, k, m, se in summarize(rows)])
    score_keys = [read_sidecar(_score_paths(out, r)["meta"]).get("cache_key", "") for r in runs]
    meta = {f"config.{k}": v for k, v in (ln.split("=", 1) for ln in cfg.to_text().splitlines())}
    meta["input_hash"] = text_hash("".join(corpus.hashes) + "".join(score_keys))
    write_sidecar(rep / "report.meta", meta)
    return rep / "rows.csv"


# ---------------------------------------------------------------------------
# Learning-rate sweep
# ---------------------------------------------------------------------------


def cmd_sweep(cfg: ExperimentConfig, out, threads: int = 1) -> Path:
    """Mean test loss per (budget, lr) over random selections; argmin per budget."""
    grid = cfg["sweep.lr_grid"]
    if not grid:
        raise ConfigError("sweep.lr_grid is empty")
    corpus = load_corpus(cfg, out)
    model = build_model(cfg, corpus.data)
    seed = cfg["experiment.seed"]
    runs = range(cfg["experiment.runs"])
    cells = [(n, lr, r) for n in cfg["experiment.budgets"] for lr in grid for r in runs]

    def work(cell):
        n, lr, run = cell
        split = run_split(cfg, corpus, run)
        table = random_scores(split.scored, RngStream(seed, f"sweep/run{run}/scores"))
        res = select(table, split, SelectionConfig(Strategy.PURE_RANDOM, n,
                                                   rng=RngStream(seed, f"sweep/run{run}/n{n}")))
        return train_and_eval(cfg, model, corpus, res.selected, model.zeros(), lr, n,
                              RngStream(seed, f"sweep-final/run{run}/n{n}/{lr!r}"))

    losses = _map(work, cells, threads)
    table: dict[tuple[int, float], list[float]] = {}
    for (n, lr, _), v in zip(cells, losses):
        table.setdefault((n, lr), []).append(v)
    lines = ["budget,lr,runs,mean,stderr"]
    best = ["budget,best_lr,mean"]
    for n in cfg["experiment.budgets"]:
        stats = []
        for lr in grid:
            v = np.array(table[(n, lr)])
            se = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else float("nan")
            stats.append((lr, float(np.mean(v)), se, v.size))
            lines.append(f"{n},{_fmt(lr)},{v.size},{_fmt(np.mean(v))},{_fmt(se)}")
        lr_best, m_best, _, _ = min(stats, key=lambda s: (s[1], s[0]))
        best.append(f"{n},{_fmt(lr_best)},{_fmt(m_best)}")
    sw = Path(out) / "sweep"
    _write_lines(sw / "sweep.csv", lines)
    _write_lines(sw / "best_lr.csv", best)
    write_sidecar(sw / "sweep.meta", {"runs_per_grid_point": str(len(runs)), "strategy": "PureRandom"})
    return sw / "best_lr.csv"


# ---------------------------------------------------------------------------
# Plot data
# ---------------------------------------------------------------------------


def read_rows(path) -> list[tuple[int, str, int, float]]:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().split("\n") if ln]
    if not lines or lines[0] != "budget,strategy,run,test_logloss":
        raise ValueError(f"{path}: not a report rows file")
    out = []
    for ln in lines[1:]:
        n, s, r, v = ln.split(",")
        out.append((int(n), s, int(r), float(v)))
    return out


def cmd_plotdata(report_files: Sequence, out) -> Path:
    if not report_files:
        raise FileNotFoundError("no report files given; expected one or more report/rows.csv files "
                                "written by `select-train-eval`")
    rows = []
    for f in report_files:
        rows.extend(read_rows(f))
    if not rows:
        raise ValueError("report files contain no rows")
    path = Path(out) / "plot" / "plot_data.csv"
    _write_lines(path, ["n,strategy,mean,stderr"] +
                 [f"{n},{s},{_fmt(m)},{_fmt(se)}" for n, s, _k, m, se in summarize(rows)])
    return path
