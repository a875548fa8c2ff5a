"""Synthetic data: logistic mixtures, overparametrized regression, toy token corpora."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import DenseData, RngStream, TokenData, TokenExample
from .errors import DegenerateError, RankError
from .models import FeatureMap, ToyTokenModel


def sample_unit_vector(p: int, rng: RngStream) -> np.ndarray:
    if p < 1:
        raise ValueError("p must be >= 1")
    gen = rng.generator()
    while True:
        v = gen.standard_normal(p)
        nrm = np.linalg.norm(v)
        if nrm > 0:
            return v / nrm


def vector_at_angle(anchor, gamma: float, rng: RngStream) -> np.ndarray:
    """Unit vector at angle ``gamma`` from ``anchor``, uniform over the admissible circle."""
    anchor = np.asarray(anchor, dtype=np.float64)
    if not 0.0 <= gamma <= np.pi:
        raise ValueError("gamma must lie in [0, pi]")
    if gamma == 0.0:
        return anchor.copy()
    if gamma == np.pi:
        return -anchor
    if anchor.size == 1:
        raise DegenerateError("no direction at an intermediate angle exists in one dimension")
    gen = rng.generator()
    while True:
        w = gen.standard_normal(anchor.size)
        w = w - (w @ anchor) * anchor
        nrm = np.linalg.norm(w)
        if nrm > 1e-8:
            break
    u = w / nrm
    u = u - (u @ anchor) * anchor
    u /= np.linalg.norm(u)
    return np.cos(gamma) * anchor + np.sin(gamma) * u


def sample_logistic(theta, n: int, rng: RngStream) -> DenseData:
    """``x ~ N(0, I)``, ``P(y = 1 | x) = sigmoid(x . theta)``."""
    theta = np.asarray(theta, dtype=np.float64)
    if n < 1:
        raise ValueError("n must be >= 1")
    gen = rng.generator()
    X = gen.standard_normal((n, theta.size))
    y = (gen.random(n) < expit(X @ theta)).astype(np.float64)
    return DenseData(X, y)


@dataclass(frozen=True)
class LogisticMixtureSpec:
    p: int = 10
    gamma: float = np.pi / 2
    n_pool: int = 128 * 1024
    m_val: int = 1024
    m_test: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.p < 2:
            raise ValueError("p must be >= 2")
        if not 0.0 <= self.gamma <= np.pi:
            raise ValueError("gamma must lie in [0, pi]")


@dataclass
class MixtureData:
    pool: DenseData
    val: DenseData
    test: DenseData
    theta_star: np.ndarray
    theta_prime: np.ndarray
    # 1 where the pool example came from the target component
    component: np.ndarray


def gen_mixture_pool(spec: LogisticMixtureSpec) -> MixtureData:
    """Pool from the half/half mixture of target and shifted components; val/test from target."""
    root = RngStream(spec.seed, "data-gen")
    theta_star = sample_unit_vector(spec.p, root.child("theta-star"))
    theta_prime = vector_at_angle(theta_star, spec.gamma, root.child("theta-prime"))
    gen = root.child("pool").generator()
    component = (gen.random(spec.n_pool) < 0.5).astype(np.int64)
    X = gen.standard_normal((spec.n_pool, spec.p))
    w = np.where(component[:, None] == 1, theta_star, theta_prime)
    margins = np.einsum("ij,ij->i", X, w)
    y = (gen.random(spec.n_pool) < expit(margins)).astype(np.float64)
    pool = DenseData(X, y)
    val = sample_logistic(theta_star, spec.m_val, root.child("val"))
    test = sample_logistic(theta_star, spec.m_test, root.child("test"))
    return MixtureData(pool, val, test, theta_star, theta_prime, component)


@dataclass
class FeaturizedInstance:
    base: DenseData
    val: DenseData
    feature_map: FeatureMap
    theta_plant: np.ndarray


def gen_featurized_instance(p_out: int, m: int, m_val: int, noise_sd: float, seed: int,
                            d: int = 5) -> FeaturizedInstance:
    """Overparametrized regression fixture: ``y = <psi(x), theta_plant> + noise``."""
    if p_out <= m:
        raise ValueError("p_out must exceed m")
    root = RngStream(seed, "featurized")
    fmap = FeatureMap(d, p_out, seed)
    gen = root.generator()
    theta_plant = gen.standard_normal(p_out)
    Xb = gen.standard_normal((m, d))
    Xv = gen.standard_normal((m_val, d))
    yb = fmap(Xb) @ theta_plant + noise_sd * gen.standard_normal(m)
    yv = fmap(Xv) @ theta_plant + noise_sd * gen.standard_normal(m_val)
    Psi = fmap(Xb)
    sv = np.linalg.svd(Psi, compute_uv=False)
    if np.sum(sv > 1e-10 * sv[0]) < m:
        raise RankError("feature matrix lost rank; choose another seed")
    return FeaturizedInstance(DenseData(Xb, yb), DenseData(Xv, yv), fmap, theta_plant)


def gen_toy_token_corpus(V: int, n: int, max_T: int, planted_model, rng: RngStream,
                         max_in: int = 8) -> TokenData:
    """Uniform inputs; outputs sampled autoregressively from the planted toy model.

    Output lengths are uniform on ``[1, max_T]``; input lengths uniform on
    ``[1, max_in]``.
    """
    if V < 2 or max_T < 1:
        raise ValueError("need V >= 2 and max_T >= 1")
    model = ToyTokenModel(V)
    Lm, Cm = model.unpack(planted_model)
    gen = rng.generator()
    out = []
    for _ in range(n):
        n_in = int(gen.integers(1, max_in + 1))
        inp = gen.integers(0, V, n_in)
        T = int(gen.integers(1, max_T + 1))
        e_in = np.bincount(inp, minlength=V) / n_in
        ctx = Cm @ e_in
        prev, toks = 0, []
        for _t in range(T):
            logits = Lm[prev] + ctx
            pr = np.exp(logits - logits.max())
            pr /= pr.sum()
            tok = int(gen.choice(V, p=pr))
            toks.append(tok)
            prev = tok
        out.append(TokenExample(tuple(int(t) for t in inp), tuple(toks)))
    return TokenData(out)


def planted_token_model(V: int, rng: RngStream, scale: float = 2.0) -> np.ndarray:
    return scale * rng.generator().standard_normal(2 * V * V)
