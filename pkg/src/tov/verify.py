"""Self-contained numerical verification suites for the influence theory.

Each suite builds a seeded instance, measures the relevant quantities and
compares them against a fixed tolerance window.  Failures are reported,
never raised.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import spearmanr

from . import theory
from .data import DenseData, RngStream, Split, make_split
from .models import FeaturizedLinearModel, LogisticModel
from .scoring import FKind, method_a_scores, method_b_scores
from .synthetic import LogisticMixtureSpec, gen_featurized_instance, gen_mixture_pool
from .trainer import constant

SUITES = ("duality", "thm32", "prop31", "thm33", "thm34")


@dataclass
class SuiteResult:
    suite: str
    passed: bool
    measured: dict = field(default_factory=dict)
    tolerance: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.suite}: " + json.dumps(self.measured, sort_keys=True)


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(lx, ly, 1)[0])


def _mixture_instance(seed: int, n_pool: int, m_val: int, p: int = 10):
    """Mixture pool with a target-distribution validation set, returned as one dataset."""
    mix = gen_mixture_pool(LogisticMixtureSpec(p=p, n_pool=n_pool, m_val=m_val, m_test=1, seed=seed))
    return mix


def _stack(pool: DenseData, val: DenseData, test: DenseData) -> DenseData:
    return pool.concat(val).concat(test)


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------


def suite_duality(seed: int = 0, n_scored: int = 32, m: int = 256, m_val: int = 256,
                  eta: float = 0.5, epsilon: float = 1e-3, step: float = 1e-3,
                  threshold: float = 0.95) -> SuiteResult:
    """Method A scores vs. brute-force validation improvement from one step on each example."""
    mix = _mixture_instance(seed, m + n_scored, m_val)
    data = _stack(mix.pool, mix.val, mix.test)
    split = make_split(m + n_scored, m, m_val, 1, RngStream(seed, "split"))
    model = LogisticModel(mix.pool.dim)
    sched = constant(eta, 1)
    table = method_a_scores(model, model.zeros(), data, split, sched, epsilon, FKind.IDENTITY)
    theta1 = table.trajectory[1]
    val = data.subset(split.validation)
    targets = data.subset(table.ids)
    base_loss = model.risk(theta1, val)  # run 1 of 33
    brute = np.empty(len(targets))
    for j in range(len(targets)):  # runs 2..33
        th = theta1 - step * model.grad(theta1, targets.example(j))
        brute[j] = base_loss - model.risk(th, val)
    rho = float(spearmanr(table.scores, brute).statistic)
    return SuiteResult("duality", rho >= threshold, {"spearman": rho, "n_scored": n_scored},
                       {"spearman_min": threshold})


def _min_eig(model, states, base) -> float:
    """Smallest base-risk Hessian eigenvalue over a trajectory."""
    return float(min(np.linalg.eigvalsh(model.risk_hessian(th, base))[0] for th in states))


def _theory_instance(seed: int, m: int, m_val: int, n_probe: int, ridge: float = 0.1, p: int = 10):
    mix = _mixture_instance(seed, m + n_probe, m_val, p)
    base = mix.pool.subset(np.arange(m))
    probes = mix.pool.subset(np.arange(m, m + n_probe))
    return LogisticModel(p, ridge=ridge), base, mix.val, probes


def suite_thm32(seed: int = 0, m: int = 512, m_val: int = 64, L: int = 8, eta_m: float = 0.5,
                n_probe: int = 20, eps_grid=(0.02, 0.04, 0.08, 0.16), window=(1.7, 2.3),
                min_fraction: float = 0.9) -> SuiteResult:
    """Quadratic-in-epsilon error of the linearized ToV scores (Methods A and B)."""
    model, base, val, probes = _theory_instance(seed, m, m_val, n_probe)
    data = base.concat(probes).concat(val)
    split = Split(pool=np.arange(m + n_probe), base_u=np.arange(m),
                  validation=np.arange(m + n_probe, m + n_probe + m_val), test=np.zeros(0, np.int64))
    eta = eta_m / m
    sched = constant(eta, L)
    theta0 = model.zeros()
    states = theory.gd_states(model, theta0, base, eta * m, L)
    ops = theory.propagation(model, states, base, eta)
    ups_lin = theory.upsilon_lin(model, ops, states, val, probes, eta)
    phi_lin = theory.phi_lin(model, states, val, probes, eta)
    err_b, err_a = [], []
    for eps in eps_grid:
        tb = method_b_scores(model, theta0, data, split, sched, eps, rate_scale="sum")
        ta = method_a_scores(model, theta0, data, split, sched, eps, FKind.IDENTITY, rate_scale="sum")
        err_b.append(np.abs(tb.scores - eps * ups_lin))
        err_a.append(np.abs(ta.scores - eps * phi_lin))
    err_b, err_a = np.array(err_b), np.array(err_a)
    slopes_b = np.array([loglog_slope(eps_grid, err_b[:, j]) for j in range(n_probe)])
    slopes_a = np.array([loglog_slope(eps_grid, err_a[:, j]) for j in range(n_probe)])
    inside = lambda s: float(np.mean((s >= window[0]) & (s <= window[1])))
    frac_b, frac_a = inside(slopes_b), inside(slopes_a)
    return SuiteResult(
        "thm32",
        frac_b >= min_fraction and frac_a >= min_fraction,
        {"fraction_in_window_upsilon": frac_b, "fraction_in_window_phi": frac_a,
         "median_slope_upsilon": float(np.median(slopes_b)), "median_slope_phi": float(np.median(slopes_a))},
        {"slope_window": list(window), "min_fraction": min_fraction},
    )


def suite_prop31(seed: int = 0, ms=(128, 256, 512, 1024), m_val: int = 256, L: int = 8, eta_m: float = 0.5,
                 n_probe: int = 20, max_slope: float = -1.5) -> SuiteResult:
    """Ideal vs. linearized score gap shrinks like ``1/m^2``."""
    m_max = max(ms)
    model, base_all, val, probes = _theory_instance(seed, m_max, m_val, n_probe)
    theta0 = model.zeros()
    gaps, min_eig = [], np.inf
    for m in ms:
        base = base_all.subset(np.arange(m))
        eta = eta_m / m
        states = theory.gd_states(model, theta0, base, eta * m, L)
        min_eig = min(min_eig, _min_eig(model, states, base))
        ops = theory.propagation(model, states, base, eta)
        s_lin = theory.s_lin(model, ops, states, val, probes, eta)
        s_ideal = theory.ideal_scores(model, theta0, base, val, probes, eta, L, base_states=states)
        gaps.append(np.abs(s_ideal - s_lin))
    gaps = np.array(gaps)
    slopes = np.array([loglog_slope(ms, gaps[:, j]) for j in range(n_probe)])
    med = float(np.median(slopes))
    # strong convexity floor set by the ridge term
    c0 = model.ridge
    return SuiteResult("prop31", med <= max_slope and min_eig >= c0,
                       {"median_slope": med, "min_slope": float(slopes.min()), "max_slope": float(slopes.max()),
                        "min_hessian_eig": min_eig},
                       {"median_slope_max": max_slope, "min_hessian_eig_floor": c0})


def suite_thm33(seed: int = 0, m: int = 256, m_val: int = 256, L: int = 2000, eta_m: float = 2.0,
                n_probe: int = 10, rtol: float = 1e-2) -> SuiteResult:
    """Long-horizon agreement of the two linearized scores with the classical influence."""
    model, base, val, probes = _theory_instance(seed, m, m_val, n_probe)
    eta = eta_m / m
    states = theory.gd_states(model, model.zeros(), base, eta * m, L)
    ops = theory.propagation(model, states, base, eta)
    ups = theory.upsilon_lin(model, ops, states, val, probes, eta) / len(val)
    slin = theory.s_lin(model, ops, states, val, probes, eta)
    cls = theory.classical_influence(model, base, val, probes, states[-1])
    rel = lambda a, b: np.abs(a - b) / np.maximum(np.abs(a), np.abs(b))
    worst = float(max(rel(ups, slin).max(), rel(ups, cls).max(), rel(slin, cls).max()))
    eigs = [np.linalg.eigvalsh(model.risk_hessian(th, base)) for th in states]
    min_eig = float(min(e[0] for e in eigs))
    step_curv = float(eta_m * max(e[-1] for e in eigs))
    c0 = model.ridge
    return SuiteResult("thm33", worst <= rtol and step_curv <= 1.0 and min_eig >= c0,
                       {"max_pairwise_rel_diff": worst, "min_hessian_eig": min_eig, "step_times_max_eig": step_curv},
                       {"rtol": rtol, "step_times_max_eig_max": 1.0, "min_hessian_eig_floor": c0})


def suite_thm34(seed: int = 0, p_out: int = 50, m: int = 20, m_val: int = 10, noise_sd: float = 0.1,
                L: int = 10_000, n_probe: int = 5, rtol: float = 2e-2, zero_atol: float = 1e-10) -> SuiteResult:
    """Cesaro limit of the linearized scores for overparametrized least squares."""
    inst = gen_featurized_instance(p_out, m, m_val, noise_sd, seed)
    model = FeaturizedLinearModel(inst.feature_map)
    gen = RngStream(seed, "thm34-probes").generator()
    Xp = gen.standard_normal((n_probe, inst.feature_map.d))
    yp = inst.feature_map(Xp) @ inst.theta_plant + noise_sd * gen.standard_normal(n_probe)
    probes = DenseData(Xp, yp)
    Psi = model.features(inst.base)
    op = theory.OverparamInstance.build(Psi, inst.base.y)
    eta = 1.0 / op.op_norm_sq  # GD on the summed loss is stable for eta < 2 / ||Psi||^2
    # the mean-risk step eta * m equals eta on the summed loss
    states = theory.gd_states(model, model.zeros(), inst.base, eta * m, L)
    ops = theory.propagation(model, states, inst.base, eta)
    ups = theory.upsilon_lin(model, ops, states, inst.val, probes, eta) / (L * m_val)
    slin = theory.s_lin(model, ops, states, inst.val, probes, eta) / L
    limit = theory.overparam_limit(model, inst.base, inst.val, probes, eta)
    rel_u = float(np.max(np.abs(ups - limit) / np.abs(limit)))
    rel_s = float(np.max(np.abs(slin - limit) / np.abs(limit)))

    Psi_val = inst.feature_map(inst.val.X)
    # r(i) = 0: response equal to the interpolant's prediction
    psi0 = inst.feature_map(Xp[0])
    zero_r = theory.overparam_limit_features(op, Psi_val, inst.val.y, psi0, float(psi0 @ op.theta_hat), eta)
    # P psi = 0: feature vector in the row space of Psi, off-interpolant response
    psi_row = Psi.T @ gen.standard_normal(m)
    zero_p = theory.overparam_limit_features(op, Psi_val, inst.val.y, psi_row, 1.0 + float(psi_row @ op.theta_hat), eta)
    passed = rel_u <= rtol and rel_s <= rtol and abs(zero_r) <= zero_atol and abs(zero_p) <= zero_atol
    return SuiteResult("thm34", passed,
                       {"max_rel_err_upsilon": rel_u, "max_rel_err_slin": rel_s,
                        "zero_residual_case": abs(zero_r), "zero_projection_case": abs(zero_p)},
                       {"rtol": rtol, "zero_atol": zero_atol})


_RUNNERS: dict[str, Callable[..., SuiteResult]] = {
    "duality": suite_duality,
    "thm32": suite_thm32,
    "prop31": suite_prop31,
    "thm33": suite_thm33,
    "thm34": suite_thm34,
}


def run_suite(name: str, seed: int = 0) -> SuiteResult:
    if name not in _RUNNERS:
        raise KeyError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    return _RUNNERS[name](seed=seed)


def report_json(results: list[SuiteResult]) -> str:
    return json.dumps({r.suite: asdict(r) for r in results}, indent=2, sort_keys=True) + "\n"
