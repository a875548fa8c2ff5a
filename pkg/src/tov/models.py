"""Per-example losses with exact gradients and Hessians.

Three model families share one flat parameter vector ``theta``:

* :class:`LogisticModel` -- binary cross-entropy with an optional ridge term;
* :class:`FeaturizedLinearModel` -- squared loss on a frozen random feature map;
* :class:`ToyTokenModel` -- a causal token model with bigram logits plus an
  input-averaged context matrix, small enough for exact Hessians.

Batch reductions (:meth:`Model.risk`, :meth:`Model.risk_grad`) use exactly
rounded summation, so their value does not depend on example order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import expit, log_expit, logsumexp

from .data import DenseData, DenseExample, TokenExample
from .errors import DimensionCapError, DimensionError, EmptySetError

DEFAULT_HESSIAN_CAP = 512

__all__ = [
    "Model",
    "LogisticModel",
    "FeatureMap",
    "FeaturizedLinearModel",
    "ToyTokenModel",
    "exact_mean",
    "exact_column_mean",
    "model_from_name",
]


def exact_mean(values) -> float:
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise EmptySetError("mean over an empty set")
    return math.fsum(values.tolist()) / values.size


def exact_column_mean(rows: np.ndarray) -> np.ndarray:
    """Correctly rounded column sums divided by the row count."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.shape[0] == 0:
        raise EmptySetError("mean over an empty set")
    return np.array([math.fsum(col) for col in rows.T.tolist()]) / rows.shape[0]


class Model:
    """Common interface; subclasses define per-example and vectorised pieces."""

    p: int
    family: str
    hessian_cap: int = DEFAULT_HESSIAN_CAP

    def check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.p,):
            raise DimensionError(f"expected theta of shape ({self.p},), got {theta.shape}")
        return theta

    def zeros(self) -> np.ndarray:
        return np.zeros(self.p)

    # per-example -----------------------------------------------------------
    def loss(self, theta, ex) -> float:
        raise NotImplementedError

    def grad(self, theta, ex) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, theta, ex) -> np.ndarray:
        raise NotImplementedError

    # vectorised ------------------------------------------------------------
    def losses(self, theta, data) -> np.ndarray:
        """Per-example losses, in dataset order."""
        raise NotImplementedError

    def grads(self, theta, data) -> np.ndarray:
        """Per-example gradients stacked as rows, shape ``(n, p)``."""
        raise NotImplementedError

    def risk(self, theta, data) -> float:
        if len(data) == 0:
            raise EmptySetError("risk over an empty set")
        return exact_mean(self.losses(theta, data))

    def risk_grad(self, theta, data) -> np.ndarray:
        if len(data) == 0:
            raise EmptySetError("gradient over an empty set")
        return exact_column_mean(self.grads(theta, data))

    def risk_hessian(self, theta, data) -> np.ndarray:
        if len(data) == 0:
            raise EmptySetError("Hessian over an empty set")
        self._check_cap()
        H = np.zeros((self.p, self.p))
        for i in range(len(data)):
            H += self.hessian(theta, data.example(i))
        return H / len(data)

    def true_token_probs(self, theta, data) -> list[np.ndarray]:
        """Probability assigned to each observed target, one array per example."""
        raise NotImplementedError

    def _check_cap(self) -> None:
        if self.p > self.hessian_cap:
            raise DimensionCapError(
                f"exact Hessians are limited to p <= {self.hessian_cap}, model has p = {self.p}"
            )

    def describe(self) -> dict:
        return {"family": self.family, "p": self.p}


# ---------------------------------------------------------------------------
# Logistic regression
# ---------------------------------------------------------------------------


class LogisticModel(Model):
    family = "logistic"

    def __init__(self, p: int, ridge: float = 0.0, hessian_cap: int = DEFAULT_HESSIAN_CAP):
        if ridge < 0:
            raise ValueError("ridge must be non-negative")
        self.p = int(p)
        self.ridge = float(ridge)
        self.hessian_cap = hessian_cap

    def _xy(self, ex: DenseExample):
        x = np.asarray(ex.x, dtype=np.float64)
        if x.shape != (self.p,):
            raise DimensionError(f"feature dimension {x.shape} does not match p = {self.p}")
        return x, float(ex.y)

    def _check_data(self, data: DenseData) -> None:
        if not isinstance(data, DenseData) or data.dim != self.p:
            raise DimensionError("logistic model needs dense data with matching dimension")

    def _penalty(self, theta) -> float:
        return 0.5 * self.ridge * float(theta @ theta) if self.ridge else 0.0

    def loss(self, theta, ex) -> float:
        theta = self.check_theta(theta)
        x, y = self._xy(ex)
        z = float(x @ theta)
        return float(np.logaddexp(0.0, z) - y * z) + self._penalty(theta)

    def grad(self, theta, ex) -> np.ndarray:
        theta = self.check_theta(theta)
        x, y = self._xy(ex)
        return (float(expit(x @ theta)) - y) * x + self.ridge * theta

    def hessian(self, theta, ex) -> np.ndarray:
        self._check_cap()
        theta = self.check_theta(theta)
        x, _ = self._xy(ex)
        s = float(expit(x @ theta))
        return s * (1.0 - s) * np.outer(x, x) + self.ridge * np.eye(self.p)

    def losses(self, theta, data) -> np.ndarray:
        theta = self.check_theta(theta)
        self._check_data(data)
        z = data.X @ theta
        return np.logaddexp(0.0, z) - data.y * z + self._penalty(theta)

    def grads(self, theta, data) -> np.ndarray:
        theta = self.check_theta(theta)
        self._check_data(data)
        r = expit(data.X @ theta) - data.y
        return r[:, None] * data.X + self.ridge * theta

    def risk_hessian(self, theta, data) -> np.ndarray:
        self._check_cap()
        theta = self.check_theta(theta)
        self._check_data(data)
        if len(data) == 0:
            raise EmptySetError("Hessian over an empty set")
        s = expit(data.X @ theta)
        w = s * (1.0 - s)
        H = (data.X * w[:, None]).T @ data.X / len(data)
        return H + self.ridge * np.eye(self.p)

    def true_token_probs(self, theta, data) -> list[np.ndarray]:
        theta = self.check_theta(theta)
        self._check_data(data)
        z = data.X @ theta
        logp = np.where(data.y > 0.5, log_expit(z), log_expit(-z))
        return [np.array([v]) for v in np.exp(logp)]

    def describe(self) -> dict:
        return {"family": self.family, "p": self.p, "ridge": self.ridge}


# ---------------------------------------------------------------------------
# Featurized linear regression
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureMap:
    """Random Fourier features ``sqrt(2/p_out) * cos(W x + b)`` frozen by ``seed``."""

    d: int
    p_out: int
    seed: int
    kind: str = "rff"

    @cached_property
    def _weights(self):
        from .data import RngStream

        gen = RngStream(self.seed, "feature-map").generator()
        W = gen.standard_normal((self.p_out, self.d))
        b = gen.uniform(0.0, 2.0 * np.pi, self.p_out)
        return W, b

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "identity":
            return x.copy()
        W, b = self._weights
        return np.sqrt(2.0 / self.p_out) * np.cos(x @ W.T + b)

    @property
    def feature_map_id(self) -> str:
        return f"{self.kind}(d={self.d},p_out={self.p_out},seed={self.seed})"


class FeaturizedLinearModel(Model):
    family = "linear"

    def __init__(self, feature_map: FeatureMap, hessian_cap: int = DEFAULT_HESSIAN_CAP):
        self.feature_map = feature_map
        self.p = feature_map.p_out
        self.hessian_cap = hessian_cap
        self._cache = (None, None)

    def features(self, data: DenseData) -> np.ndarray:
        if not isinstance(data, DenseData) or data.dim != self.feature_map.d:
            raise DimensionError("featurized model needs dense data with matching input dimension")
        # consecutive GD steps reuse the same data object; one tuple swap keeps threads consistent
        key, feats = self._cache
        if key is not data:
            feats = self.feature_map(data.X)
            self._cache = (data, feats)
        return feats

    def _psi(self, ex: DenseExample) -> np.ndarray:
        x = np.asarray(ex.x, dtype=np.float64)
        if x.shape != (self.feature_map.d,):
            raise DimensionError("input dimension does not match the feature map")
        return self.feature_map(x)

    def loss(self, theta, ex) -> float:
        theta = self.check_theta(theta)
        r = float(ex.y) - float(self._psi(ex) @ theta)
        return 0.5 * r * r

    def grad(self, theta, ex) -> np.ndarray:
        theta = self.check_theta(theta)
        psi = self._psi(ex)
        return -(float(ex.y) - float(psi @ theta)) * psi

    def hessian(self, theta, ex) -> np.ndarray:
        self._check_cap()
        self.check_theta(theta)
        psi = self._psi(ex)
        return np.outer(psi, psi)

    def losses(self, theta, data) -> np.ndarray:
        theta = self.check_theta(theta)
        r = data.y - self.features(data) @ theta
        return 0.5 * r * r

    def grads(self, theta, data) -> np.ndarray:
        theta = self.check_theta(theta)
        Psi = self.features(data)
        return -(data.y - Psi @ theta)[:, None] * Psi

    def risk_hessian(self, theta, data) -> np.ndarray:
        self._check_cap()
        self.check_theta(theta)
        Psi = self.features(data)
        return Psi.T @ Psi / len(data)

    def describe(self) -> dict:
        return {"family": self.family, "p": self.p, "feature_map": self.feature_map.feature_map_id}


# ---------------------------------------------------------------------------
# Toy token model
# ---------------------------------------------------------------------------


class ToyTokenModel(Model):
    """Causal toy model over a vocabulary of size ``V``.

    ``theta`` flattens ``(Lmat, Cmat)``, both ``V x V``.  At output position
    ``t`` the logits are ``Lmat[prev] + Cmat @ e_in`` where ``prev`` is the
    previous output token (row 0 plays the begin-of-sequence role at
    ``t = 1``) and ``e_in`` is the mean one-hot encoding of the input tokens.
    """

    family = "token"

    def __init__(self, V: int, hessian_cap: int = DEFAULT_HESSIAN_CAP):
        if V < 2:
            raise ValueError("vocabulary needs at least two tokens")
        self.V = int(V)
        self.p = 2 * self.V * self.V
        self.hessian_cap = hessian_cap

    def unpack(self, theta):
        theta = self.check_theta(theta)
        V2 = self.V * self.V
        return theta[:V2].reshape(self.V, self.V), theta[V2:].reshape(self.V, self.V)

    def _parts(self, ex: TokenExample):
        if not isinstance(ex, TokenExample):
            raise DimensionError("token model needs token examples")
        out = np.asarray(ex.output_tokens, dtype=np.int64)
        inp = np.asarray(ex.input_tokens, dtype=np.int64)
        if out.size and (out.min() < 0 or out.max() >= self.V):
            raise DimensionError("output token id outside the vocabulary")
        if inp.size and (inp.min() < 0 or inp.max() >= self.V):
            raise DimensionError("input token id outside the vocabulary")
        e_in = np.bincount(inp, minlength=self.V) / inp.size if inp.size else np.zeros(self.V)
        prev = np.concatenate([[0], out[:-1]])
        return out, prev, e_in

    def _logprob_matrix(self, theta, ex):
        Lm, Cm = self.unpack(theta)
        out, prev, e_in = self._parts(ex)
        logits = Lm[prev] + (Cm @ e_in)[None, :]
        return logits - logsumexp(logits, axis=1, keepdims=True), out, prev, e_in

    def predictive(self, theta, ex: TokenExample) -> np.ndarray:
        """Full predictive distributions, shape ``(T, V)``."""
        logp, *_ = self._logprob_matrix(theta, ex)
        return np.exp(logp)

    def token_logprobs(self, theta, ex: TokenExample) -> np.ndarray:
        logp, out, _, _ = self._logprob_matrix(theta, ex)
        return logp[np.arange(out.size), out]

    def loss(self, theta, ex) -> float:
        return -float(np.mean(self.token_logprobs(theta, ex)))

    def grad(self, theta, ex) -> np.ndarray:
        logp, out, prev, e_in = self._logprob_matrix(theta, ex)
        T = out.size
        G = np.exp(logp)
        G[np.arange(T), out] -= 1.0
        G /= T
        dL = np.zeros((self.V, self.V))
        np.add.at(dL, prev, G)
        dC = np.outer(G.sum(axis=0), e_in)
        return np.concatenate([dL.ravel(), dC.ravel()])

    def hessian(self, theta, ex) -> np.ndarray:
        self._check_cap()
        logp, out, prev, e_in = self._logprob_matrix(theta, ex)
        V, V2 = self.V, self.V * self.V
        T = out.size
        H = np.zeros((self.p, self.p))
        rows = np.arange(V)
        for t in range(T):
            pt = np.exp(logp[t])
            S = np.diag(pt) - np.outer(pt, pt)
            J = np.zeros((V, self.p))
            J[rows, prev[t] * V + rows] = 1.0
            for v in range(V):
                J[v, V2 + v * V : V2 + (v + 1) * V] = e_in
            H += J.T @ S @ J
        return H / T

    def losses(self, theta, data) -> np.ndarray:
        return np.array([self.loss(theta, ex) for ex in data])

    def grads(self, theta, data) -> np.ndarray:
        if len(data) == 0:
            return np.zeros((0, self.p))
        return np.vstack([self.grad(theta, ex) for ex in data])

    def true_token_probs(self, theta, data) -> list[np.ndarray]:
        return [np.exp(self.token_logprobs(theta, ex)) for ex in data]

    def describe(self) -> dict:
        return {"family": self.family, "p": self.p, "V": self.V}


def model_from_name(family: str, **kw) -> Model:
    if family == "logistic":
        return LogisticModel(kw["p"], ridge=kw.get("ridge", 0.0))
    if family == "linear":
        fm = FeatureMap(kw["d"], kw["p_out"], kw.get("feature_seed", 0), kw.get("feature_kind", "rff"))
        return FeaturizedLinearModel(fm)
    if family == "token":
        return ToyTokenModel(kw["V"])
    raise ValueError(f"unknown model family {family!r}")
