"""Acceptance criteria 1-11, one test each.

Every test prints a single ``[PASS]``/``[FAIL]`` line with the measured
quantity, visible in ``pytest -v`` output.  Running this file directly
(``python3 tests/test_acceptance.py``) evaluates all criteria and prints
the same lines without pytest.

Criteria 1 and 11 run the full default pipeline (131072-example pool,
10 runs, 13 budgets, 4 strategies) through the CLI; each run takes
roughly half a minute on one core.
"""

from __future__ import annotations

import filecmp
import math
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

from tov import verify
from tov.cli import main
from tov.data import RngStream, TokenExample
from tov.models import ToyTokenModel
from tov.scoring import FKind, method_a_scores, method_b_scores
from tov.trainer import MiniBatch, linear_decay

sys.path.insert(0, str(Path(__file__).resolve().parent))
from conftest import FAMILIES, small_problem  # noqa: E402
import test_models  # noqa: E402
import test_selection  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
DEFAULT_CONFIG = ROOT / "configs" / "logistic_mixture.cfg"


def report(n: int, passed: bool, detail: str) -> None:
    print(f"[{'PASS' if passed else 'FAIL'}] criterion {n}: {detail}", flush=True)


def run_pipeline(out: Path, threads: int) -> Path:
    args = ["--config", str(DEFAULT_CONFIG), "--out", str(out), "--threads", str(threads)]
    for cmd in ("generate", "score", "select-train-eval"):
        code = main([cmd, *args])
        if code != 0:
            raise RuntimeError(f"`tov {cmd}` exited with {code}")
    return out


# ---------------------------------------------------------------------------
# Criteria
# ---------------------------------------------------------------------------


def criterion_1(out: Path) -> tuple[bool, str]:
    """ScorePlusRandom beats PureRandom at n in {256, 1024, 4096}; gap >= 1 SE at 1024."""
    stats = {}
    for ln in (out / "report" / "summary.csv").read_text().splitlines()[1:]:
        n, strat, _runs, mean, se = ln.split(",")
        stats[(int(n), strat)] = (float(mean), float(se))
    ok, parts = True, []
    for n in (256, 1024, 4096):
        spr, pr = stats[(n, "ScorePlusRandom")], stats[(n, "PureRandom")]
        ok &= spr[0] <= pr[0]
        parts.append(f"n={n}: {spr[0]:.4f} vs {pr[0]:.4f}")
    spr, pr = stats[(1024, "ScorePlusRandom")], stats[(1024, "PureRandom")]
    se_diff = math.hypot(spr[1], pr[1])
    gap = pr[0] - spr[0]
    ok &= gap >= se_diff
    parts.append(f"gap@1024={gap:.4f} ({gap / se_diff:.1f} SE of the difference)")
    return ok, "; ".join(parts)


def _suite(name: str) -> tuple[bool, str]:
    res = verify.run_suite(name, seed=0)
    detail = ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in sorted(res.measured.items()))
    return res.passed, f"{name}: {detail}"


def criterion_2() -> tuple[bool, str]:
    return _suite("duality")


def criterion_3() -> tuple[bool, str]:
    return _suite("thm32")


def criterion_4() -> tuple[bool, str]:
    return _suite("prop31")


def criterion_5() -> tuple[bool, str]:
    return _suite("thm33")


def criterion_6() -> tuple[bool, str]:
    return _suite("thm34")


def criterion_7() -> tuple[bool, str]:
    """Scores are exactly zero at epsilon = 0 for every family, method, F and mode."""
    checked, bad = 0, []
    for family in FAMILIES:
        model, data, split = small_problem(family)
        theta0 = 0.1 * np.ones(model.p)
        sched = linear_decay(0.5, 3)
        for mode_kw in ({}, {"mode": MiniBatch(5, 1)}):
            for f in FKind:
                t = method_a_scores(model, theta0, data, split, sched, 0.0, f, **mode_kw)
                checked += 1
                if np.any(t.per_epoch != 0.0):
                    bad.append(f"A/{family}/{f.value}")
            b = method_b_scores(model, theta0, data, split, sched, 0.0, **mode_kw)
            checked += 1
            if np.any(b.per_epoch != 0.0):
                bad.append(f"B/{family}")
            # the clean trajectory must not depend on epsilon either
            b2 = method_b_scores(model, theta0, data, split, sched, 0.1, **mode_kw)
            if any(not np.array_equal(x, y) for x, y in zip(b.trajectory.states, b2.trajectory.states)):
                bad.append(f"B-trajectory/{family}")
    return not bad, f"{checked} score tables checked, nonzero: {bad or 'none'}"


def criterion_8() -> tuple[bool, str]:
    """Gradient (1e-5) and Hessian-vector (1e-4) finite differences, 100 draws per family."""
    worst = {}
    for family, draw in test_models.DRAWS.items():
        gen = RngStream(8, f"acceptance-fd/{family}").generator()
        g_err = h_err = 0.0
        for _ in range(test_models.N_DRAWS):
            model, ex, theta = draw(gen)
            fd = test_models.fd_grad(lambda t: model.loss(t, ex), theta)
            g_err = max(g_err, test_models.rel_err(model.grad(theta, ex), fd))
            v = gen.standard_normal(theta.size)
            fdh = test_models.fd_hess_vec(lambda t: model.grad(t, ex), theta, v)
            h_err = max(h_err, test_models.rel_err(model.hessian(theta, ex) @ v, fdh))
        worst[family] = (g_err, h_err)
    ok = all(g < test_models.GRAD_TOL and h < test_models.HESS_TOL for g, h in worst.values())
    return ok, ", ".join(f"{k}: grad {g:.1e}, hess {h:.1e}" for k, (g, h) in worst.items())


def criterion_9() -> tuple[bool, str]:
    """Softmax normalisation, loss = -mean log-prob and F identities, all to 1e-12."""
    gen = RngStream(9, "acceptance-token").generator()
    norm_err = agg_err = pos_err = 0.0
    abs_min = math.inf
    for _ in range(200):
        V = int(gen.integers(2, 7))
        model = ToyTokenModel(V)
        T = int(gen.integers(1, 9))
        ex = TokenExample(tuple(gen.integers(0, V, int(gen.integers(1, 6))).tolist()), tuple(gen.integers(0, V, T).tolist()))
        th, th2 = 5 * gen.standard_normal(model.p), 5 * gen.standard_normal(model.p)
        norm_err = max(norm_err, float(np.max(np.abs(model.predictive(th, ex).sum(axis=1) - 1.0))))
        agg_err = max(agg_err, abs(model.loss(th, ex) + float(np.mean(model.token_logprobs(th, ex)))))
        d = model.token_logprobs(th2, ex) - model.token_logprobs(th, ex)
        abs_min = min(abs_min, float(np.min(FKind.ABS(d))))
        pos_err = max(pos_err, float(np.max(np.abs(FKind.POSITIVE(d) - (FKind.IDENTITY(d) + FKind.ABS(d)) / 2))))
    ok = norm_err <= 1e-12 and agg_err <= 1e-12 and abs_min >= 0 and pos_err <= 1e-12
    return ok, f"softmax {norm_err:.1e}, aggregation {agg_err:.1e}, min |d| {abs_min:.1e}, positive-part {pos_err:.1e}"


def criterion_10() -> tuple[bool, str]:
    """Selection property tests, each run over at least 200 generated cases."""
    test_selection.CALLS.clear()
    test_selection.check_exact_size()
    test_selection.check_rank_invariance()
    test_selection.check_bin_quotas()
    test_selection.check_provenance_partition()
    counts = dict(test_selection.CALLS)
    ok = len(counts) == 4 and min(counts.values()) >= 200
    return ok, ", ".join(f"{k.removeprefix('check_')}={v}" for k, v in sorted(counts.items()))


def criterion_11(a: Path, b: Path) -> tuple[bool, str]:
    """Report, score and data files are byte-identical across thread counts."""
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    other = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    differ = [str(p) for p in files if not filecmp.cmp(a / p, b / p, shallow=False)] if files == other else ["file sets"]
    return not differ and bool(files), f"{len(files)} files compared, differing: {differ or 'none'}"


# ---------------------------------------------------------------------------
# pytest wrappers
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    return run_pipeline(root / "threads1", 1), run_pipeline(root / "threads4", 4)


def _check(capsys, n, result):
    ok, detail = result
    with capsys.disabled():
        print()
        report(n, ok, detail)
    assert ok, detail


@pytest.mark.slow
def test_criterion_01_default_config_ordering(pipeline_runs, capsys):
    _check(capsys, 1, criterion_1(pipeline_runs[0]))


def test_criterion_02_duality(capsys):
    _check(capsys, 2, criterion_2())


def test_criterion_03_epsilon_order(capsys):
    _check(capsys, 3, criterion_3())


def test_criterion_04_sample_size_scaling(capsys):
    _check(capsys, 4, criterion_4())


def test_criterion_05_long_horizon_agreement(capsys):
    _check(capsys, 5, criterion_5())


def test_criterion_06_overparam_closed_form(capsys):
    _check(capsys, 6, criterion_6())


def test_criterion_07_exact_zero(capsys):
    _check(capsys, 7, criterion_7())


def test_criterion_08_finite_differences(capsys):
    _check(capsys, 8, criterion_8())


def test_criterion_09_token_machinery(capsys):
    _check(capsys, 9, criterion_9())


def test_criterion_10_selection_properties(capsys):
    _check(capsys, 10, criterion_10())


@pytest.mark.slow
def test_criterion_11_thread_determinism(pipeline_runs, capsys):
    _check(capsys, 11, criterion_11(*pipeline_runs))


if __name__ == "__main__":
    results = []
    with tempfile.TemporaryDirectory() as tmp:
        a = run_pipeline(Path(tmp) / "threads1", 1)
        b = run_pipeline(Path(tmp) / "threads4", 4)
        checks = [(1, lambda: criterion_1(a))] + [(k, globals()[f"criterion_{k}"]) for k in range(2, 11)]
        checks.append((11, lambda: criterion_11(a, b)))
        for n, fn in checks:
            ok, detail = fn()
            report(n, ok, detail)
            results.append(ok)
    sys.exit(0 if all(results) else 1)
