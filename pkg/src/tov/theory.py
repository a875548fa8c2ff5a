"""Exact influence quantities along full-batch GD trajectories.

Conventions follow the two-trajectory GD used throughout: the base model
steps by ``eta * m * grad R_U`` (summed loss over the ``m`` base examples)
and the model that also sees example ``i`` steps by
``eta * (m + 1) * grad R_{U+i}``.  Validation tuning at rate ``epsilon``
steps by ``epsilon * eta * m_val * grad R_val``.

Double sums over epoch pairs are evaluated through the recursions

    b_t = H_{t-1} b_{t-1} + g_{t-1}          (training-side propagation)
    a_s = H_{s-1} a_{s-1} + grad R_val(theta_s)   (validation-side propagation)

which cost ``O(L p^2)`` instead of ``O(L^2 p^3)``; the literal double-sum
forms are kept as ``*_direct`` functions for cross-checking.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .data import DenseData
from .errors import DimensionError, RankError, SingularHessianError
from .models import FeaturizedLinearModel, Model

__all__ = [
    "gd_states",
    "ideal_scores",
    "ideal_score",
    "PropagationOperators",
    "propagation",
    "s_lin",
    "s_lin_direct",
    "upsilon_lin",
    "upsilon_lin_direct",
    "phi_lin",
    "classical_influence",
    "OverparamInstance",
    "overparam_limit",
    "overparam_limit_features",
]


def gd_states(model: Model, theta0, data, eta_effective: float, L: int, extra_grad=None) -> list[np.ndarray]:
    """``L`` full-batch steps of ``theta - eta_effective * grad R(theta)``.

    ``extra_grad(theta)``, if given, is added to the mean gradient before
    scaling; used to fold one extra example into a summed-loss step.
    """
    theta = model.check_theta(theta0).copy()
    states = [theta]
    for _ in range(L):
        g = model.risk_grad(theta, data)
        if extra_grad is not None:
            g = g + extra_grad(theta)
        theta = theta - eta_effective * g
        states.append(theta)
    return states


# ---------------------------------------------------------------------------
# Ideal (leave-one-in) scores
# ---------------------------------------------------------------------------


def ideal_scores(model: Model, theta0, base: DenseData, val, targets, eta: float, L: int,
                 base_states: Optional[list] = None) -> np.ndarray:
    """Epoch-averaged validation-risk gap between training on ``U`` and on ``U + i``.

    ``targets`` holds the candidate examples ``x_i``; one augmented
    trajectory is run per candidate.
    """
    m = len(base)
    if base_states is None:
        base_states = gd_states(model, theta0, base, eta * m, L)
    base_val = np.array([model.risk(th, val) for th in base_states[1 : L + 1]])
    out = np.empty(len(targets))
    for j in range(len(targets)):
        ex = targets.example(j)
        # (m + 1) * grad R_{U+i} = m * grad R_U + grad l_i
        aug = gd_states(model, theta0, base, eta * m, L, extra_grad=lambda th, ex=ex: model.grad(th, ex) / m)
        aug_val = np.array([model.risk(th, val) for th in aug[1 : L + 1]])
        out[j] = np.mean(base_val - aug_val) if L > 0 else 0.0
    return out


def ideal_score(i: int, model: Model, theta0, data, split, eta: float, L: int) -> float:
    """Ideal score of pool example ``i`` (which must lie outside the base set)."""
    if i in set(split.base_u.tolist()):
        raise IndexError(f"example {i} belongs to the base set")
    base, val = data.subset(split.base_u), data.subset(split.validation)
    return float(ideal_scores(model, theta0, base, val, data.subset([i]), eta, L)[0])


# ---------------------------------------------------------------------------
# Propagation operators
# ---------------------------------------------------------------------------


@dataclass
class PropagationOperators:
    """``H_k = I - eta * m * Hess R_U(theta_k)`` for ``k = 0..L-1``.

    Products ``M_{t,r} = H_{t-1} ... H_r`` are formed on demand by
    :meth:`M`; storing all of them is quadratic in ``L``.
    """

    hessians: list[np.ndarray]

    @property
    def L(self) -> int:
        return len(self.hessians)

    @property
    def p(self) -> int:
        return self.hessians[0].shape[0]

    def M(self, t: int, r: int) -> np.ndarray:
        if not 0 <= r <= t <= self.L:
            raise IndexError(f"M_{{{t},{r}}} needs 0 <= r <= t <= {self.L}")
        out = np.eye(self.p)
        for k in range(r, t):
            out = self.hessians[k] @ out
        return out

    def products(self) -> dict[tuple[int, int], np.ndarray]:
        """All ``M_{t,r}``, built by the recursion ``M_{t,r} = H_{t-1} M_{t-1,r}``."""
        out = {}
        for r in range(self.L + 1):
            cur = np.eye(self.p)
            out[(r, r)] = cur
            for t in range(r + 1, self.L + 1):
                cur = self.hessians[t - 1] @ cur
                out[(t, r)] = cur
        return out


def propagation(model: Model, base_states: Sequence[np.ndarray], base, eta: float, m: Optional[int] = None,
                constant_hessian: Optional[bool] = None) -> PropagationOperators:
    """Exact ``H_k`` along a full-batch base trajectory of length ``L``.

    For the squared-loss model the Hessian does not depend on ``theta`` and a
    single matrix is shared by every step.
    """
    m = len(base) if m is None else m
    L = len(base_states) - 1
    if constant_hessian is None:
        constant_hessian = isinstance(model, FeaturizedLinearModel)
    I = np.eye(model.p)
    if constant_hessian:
        H = I - eta * m * model.risk_hessian(base_states[0], base)
        return PropagationOperators([H] * L)
    return PropagationOperators([I - eta * m * model.risk_hessian(base_states[k], base) for k in range(L)])


# ---------------------------------------------------------------------------
# Linearized scores
# ---------------------------------------------------------------------------


def _val_grads(model, states, val):
    return [model.risk_grad(th, val) for th in states]


def _example_grads(model, states, targets):
    return [model.grads(th, targets) for th in states]


def s_lin(model: Model, ops: PropagationOperators, base_states, val, targets, eta: float) -> np.ndarray:
    """Linearized ideal score for every example of ``targets``.

    ``(eta / L) * sum_{0 <= s < t <= L} <grad R_val(theta_t), M_{t,s+1} grad l(theta_s; x_i)>``
    """
    L = ops.L
    B = np.zeros((len(targets), model.p))
    total = np.zeros(len(targets))
    for t in range(1, L + 1):
        G_prev = model.grads(base_states[t - 1], targets)
        B = B @ ops.hessians[t - 1].T + G_prev
        total = total + B @ model.risk_grad(base_states[t], val)
    return eta * total / L


def upsilon_lin(model: Model, ops: PropagationOperators, base_states, val, targets, eta: float,
                m_val: Optional[int] = None) -> np.ndarray:
    """Small-epsilon slope of the Method B score.

    ``(eta m_val / L) * sum_{0 <= t < s <= L} <grad R_val(theta_{t+1}), M_{s,t+1}^T g_{s,i}>``
    """
    m_val = len(val) if m_val is None else m_val
    L = ops.L
    a = np.zeros(model.p)
    total = np.zeros(len(targets))
    for s in range(1, L + 1):
        a = ops.hessians[s - 1] @ a + model.risk_grad(base_states[s], val)
        total = total + model.grads(base_states[s], targets) @ a
    return eta * m_val * total / L


def phi_lin(model: Model, base_states, val, targets, eta: float, m_val: Optional[int] = None) -> np.ndarray:
    """Small-epsilon slope of the Method A score (loss-decrease orientation)."""
    m_val = len(val) if m_val is None else m_val
    L = len(base_states) - 1
    total = np.zeros(len(targets))
    for s in range(1, L + 1):
        total = total + model.grads(base_states[s], targets) @ model.risk_grad(base_states[s], val)
    return eta * m_val * total / L


def s_lin_direct(model, ops, base_states, val, targets, eta) -> np.ndarray:
    L = ops.L
    M = ops.products()
    rv = _val_grads(model, base_states, val)
    G = _example_grads(model, base_states, targets)
    total = np.zeros(len(targets))
    for s in range(L):
        for t in range(s + 1, L + 1):
            total += (G[s] @ M[(t, s + 1)].T) @ rv[t]
    return eta * total / L


def upsilon_lin_direct(model, ops, base_states, val, targets, eta, m_val=None) -> np.ndarray:
    m_val = len(val) if m_val is None else m_val
    L = ops.L
    M = ops.products()
    rv = _val_grads(model, base_states, val)
    G = _example_grads(model, base_states, targets)
    total = np.zeros(len(targets))
    for t in range(L):
        for s in range(t + 1, L + 1):
            total += G[s] @ (M[(s, t + 1)] @ rv[t + 1])
    return eta * m_val * total / L


# ---------------------------------------------------------------------------
# Large-L limits
# ---------------------------------------------------------------------------


def classical_influence(model: Model, base, val, targets, theta_inf, min_eig: float = 1e-8) -> np.ndarray:
    """M-estimator influence ``(1/m) <grad R_val, Q^{-1} grad l_i>`` at ``theta_inf``."""
    m = len(base)
    Q = model.risk_hessian(theta_inf, base)
    Q = 0.5 * (Q + Q.T)
    lam = np.linalg.eigvalsh(Q)[0]
    if not lam > min_eig:
        raise SingularHessianError(f"base-risk Hessian has minimum eigenvalue {lam:.3e}")
    w = scipy.linalg.solve(Q, model.risk_grad(theta_inf, val), assume_a="pos")
    return model.grads(theta_inf, targets) @ w / m


@dataclass
class OverparamInstance:
    """Minimum-norm interpolation pieces derived from the base features."""

    Psi: np.ndarray
    y: np.ndarray
    theta_hat: np.ndarray
    kernel_projector: np.ndarray
    rank: int
    op_norm_sq: float

    @classmethod
    def build(cls, Psi, y, rtol: float = 1e-10) -> "OverparamInstance":
        Psi = np.asarray(Psi, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        m, p = Psi.shape
        if p <= m:
            raise DimensionError(f"overparametrized regime needs p > m, got p={p}, m={m}")
        U, sv, Vt = np.linalg.svd(Psi, full_matrices=False)
        rank = int(np.sum(sv > rtol * sv[0]))
        if rank < m:
            raise RankError(f"feature matrix has rank {rank} < {m} rows")
        theta_hat = Vt.T @ ((U.T @ y) / sv)
        P = np.eye(p) - Vt.T @ Vt
        return cls(Psi, y, theta_hat, P, rank, float(sv[0] ** 2))


def overparam_limit_features(inst: OverparamInstance, Psi_val, y_val, psi_i, y_i, eta: float,
                             check_step: bool = True) -> float:
    """Cesaro limit of ``upsilon_lin / (L m_val)`` and ``s_lin / L`` for squared loss.

    ``(eta / (2 m_val)) * r(i) * <r_val, Psi_val P psi_i>`` where ``P`` projects
    onto the kernel of the base feature matrix and residuals are taken at the
    minimum-norm interpolant.
    """
    if check_step and not 0 < eta < 2.0 / inst.op_norm_sq:
        raise ValueError(f"step {eta} outside the GD stability range (0, {2.0 / inst.op_norm_sq:.4g})")
    Psi_val = np.asarray(Psi_val, dtype=np.float64)
    y_val = np.asarray(y_val, dtype=np.float64)
    psi_i = np.asarray(psi_i, dtype=np.float64)
    r_i = float(y_i) - float(psi_i @ inst.theta_hat)
    r_val = y_val - Psi_val @ inst.theta_hat
    m_val = Psi_val.shape[0]
    return 0.5 * eta / m_val * r_i * float(r_val @ (Psi_val @ (inst.kernel_projector @ psi_i)))


def overparam_limit(model: FeaturizedLinearModel, base: DenseData, val: DenseData, targets: DenseData,
                    eta: float) -> np.ndarray:
    inst = OverparamInstance.build(model.features(base), base.y)
    Psi_val = model.feature_map(val.X)
    Psi_t = model.feature_map(targets.X)
    return np.array([overparam_limit_features(inst, Psi_val, val.y, Psi_t[j], targets.y[j], eta)
                     for j in range(len(targets))])
