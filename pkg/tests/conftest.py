import numpy as np
import pytest

from tov.data import DenseData, RngStream, make_split
from tov.models import FeatureMap, FeaturizedLinearModel, LogisticModel, ToyTokenModel
from tov.synthetic import gen_toy_token_corpus, planted_token_model


def small_problem(family: str, seed: int = 0):
    """(model, data, split) with a 40-example pool, 12 base, 8 validation, 4 test."""
    n = 40 + 8 + 4
    gen = RngStream(seed, f"small/{family}").generator()
    if family == "logistic":
        X = gen.standard_normal((n, 4))
        y = (X @ np.array([1.0, -1.0, 0.5, 0.0]) + 0.5 * gen.standard_normal(n) > 0).astype(float)
        model, data = LogisticModel(4, ridge=0.01), DenseData(X, y)
    elif family == "linear":
        fmap = FeatureMap(3, 16, seed)
        X = gen.standard_normal((n, 3))
        y = fmap(X) @ gen.standard_normal(16) + 0.1 * gen.standard_normal(n)
        model, data = FeaturizedLinearModel(fmap), DenseData(X, y)
    elif family == "token":
        V = 4
        planted = planted_token_model(V, RngStream(seed, "planted"))
        model = ToyTokenModel(V)
        data = gen_toy_token_corpus(V, n, 6, planted, RngStream(seed, "corpus"))
    else:
        raise ValueError(family)
    split = make_split(40, 12, 8, 4, RngStream(seed, "split"))
    return model, data, split


FAMILIES = ("logistic", "linear", "token")


@pytest.fixture(params=FAMILIES)
def family_problem(request):
    return request.param, small_problem(request.param)
