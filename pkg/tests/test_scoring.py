"""ToV scores: Methods A and B, F variants, token deltas and baselines."""

import numpy as np
import pytest

from tov.data import DenseData, RngStream, TokenData, TokenExample
from tov.errors import DimensionError, EpsilonRangeError
from tov.models import LogisticModel, ToyTokenModel
from tov.scoring import (
    FKind,
    ScoreMethod,
    ScoreTable,
    delta_t,
    epoch_scores,
    max_uncertainty_scores,
    method_a_scores,
    method_b_scores,
    phi_example,
    random_scores,
    token_deltas,
)
from tov.trainer import MiniBatch, linear_decay

from conftest import small_problem


class TestFKinds:
    def test_identities(self):
        y = np.random.default_rng(0).standard_normal(1000)
        assert np.all(FKind.ABS(y) >= 0)
        np.testing.assert_allclose(FKind.POSITIVE(y), (FKind.IDENTITY(y) + FKind.ABS(y)) / 2, atol=1e-12)

    def test_from_string(self):
        assert FKind("positive") is FKind.POSITIVE


class TestExactZero:
    @pytest.mark.parametrize("mode", [None, MiniBatch(5, 3)])
    def test_epsilon_zero(self, family_problem, mode):
        _, (model, data, split) = family_problem
        kw = {} if mode is None else {"mode": mode}
        theta0 = 0.1 * np.ones(model.p)
        for f in FKind:
            a = method_a_scores(model, theta0, data, split, linear_decay(0.5, 3), 0.0, f, **kw)
            assert np.all(a.per_epoch == 0.0)
        b = method_b_scores(model, theta0, data, split, linear_decay(0.5, 3), 0.0, **kw)
        assert np.all(b.per_epoch == 0.0)

    def test_epsilon_range(self):
        model, data, split = small_problem("logistic")
        for eps in (-0.1, 1.0):
            with pytest.raises(EpsilonRangeError):
                method_a_scores(model, model.zeros(), data, split, linear_decay(0.5, 2), eps)


class TestMethodA:
    def test_matches_manual_loop(self):
        model, data, split = small_problem("logistic")
        sched = linear_decay(0.5, 3)
        eps = 0.1
        table = method_a_scores(model, model.zeros(), data, split, sched, eps)
        base, val, tgt = data.subset(split.base_u), data.subset(split.validation), data.subset(split.scored)
        th, acc = model.zeros(), np.zeros(split.scored.size)
        for eta in sched:
            th = th - eta * model.risk_grad(th, base)
            thv = th - eps * eta * model.risk_grad(th, val)
            acc += (model.losses(th, tgt) - model.losses(thv, tgt)) / 3
        np.testing.assert_allclose(table.scores, acc, rtol=1e-12, atol=1e-16)
        assert table.method is ScoreMethod.A
        assert table.ids.tolist() == split.scored.tolist()

    def test_literal_sign_flips(self):
        model, data, split = small_problem("logistic")
        kw = dict(epsilon=0.1, f=FKind.IDENTITY)
        a = method_a_scores(model, model.zeros(), data, split, linear_decay(0.5, 2), **kw)
        b = method_a_scores(model, model.zeros(), data, split, linear_decay(0.5, 2), literal_sign=True, **kw)
        np.testing.assert_array_equal(a.scores, -b.scores)

    def test_trajectory_is_plain_training(self):
        model, data, split = small_problem("logistic")
        t = method_a_scores(model, model.zeros(), data, split, linear_decay(0.5, 2), 0.1).trajectory
        b = method_b_scores(model, model.zeros(), data, split, linear_decay(0.5, 2), 0.1).trajectory
        for x, y in zip(t.states, b.states):
            np.testing.assert_array_equal(x, y)


class TestMethodB:
    def test_coupled_trajectory(self):
        model, data, split = small_problem("logistic")
        sched = linear_decay(0.5, 2)
        table = method_b_scores(model, model.zeros(), data, split, sched, 0.1)
        base, val, tgt = data.subset(split.base_u), data.subset(split.validation), data.subset(split.scored)
        clean, coupled, acc = model.zeros(), model.zeros(), 0.0
        for eta in sched:
            coupled = coupled - eta * model.risk_grad(coupled, base)
            coupled = coupled - 0.1 * eta * model.risk_grad(coupled, val)
            clean = clean - eta * model.risk_grad(clean, base)
            acc = acc + (model.losses(clean, tgt) - model.losses(coupled, tgt)) / 2
        np.testing.assert_allclose(table.scores, acc, rtol=1e-12, atol=1e-16)

    def test_sum_convention_needs_full_batch(self):
        model, data, split = small_problem("logistic")
        with pytest.raises(ValueError):
            method_b_scores(model, model.zeros(), data, split, linear_decay(0.5, 2), 0.1,
                            mode=MiniBatch(4), rate_scale="sum")


class TestTokenScores:
    def setup_method(self):
        self.model = ToyTokenModel(4)
        gen = np.random.default_rng(0)
        self.th = gen.standard_normal(self.model.p)
        self.th2 = gen.standard_normal(self.model.p)
        self.ex = TokenExample((1, 3), (2, 0, 3, 3))

    def test_delta_definition(self):
        lp1 = self.model.token_logprobs(self.th, self.ex)
        lp2 = self.model.token_logprobs(self.th2, self.ex)
        for t in range(1, 5):
            assert delta_t(self.model, self.ex, t, self.th, self.th2) == pytest.approx(lp2[t - 1] - lp1[t - 1], abs=1e-14)
        with pytest.raises(DimensionError):
            delta_t(self.model, self.ex, 5, self.th, self.th2)

    def test_identity_phi_is_loss_decrease(self):
        phi = phi_example(self.model, self.ex, self.th, self.th2, FKind.IDENTITY)
        drop = self.model.loss(self.th, self.ex) - self.model.loss(self.th2, self.ex)
        assert abs(phi - drop) < 1e-12

    def test_f_variants_per_token(self):
        d = token_deltas(self.model, self.ex, self.th, self.th2)
        assert phi_example(self.model, self.ex, self.th, self.th2, FKind.ABS) == pytest.approx(np.abs(d).mean(), abs=1e-14)
        pos = phi_example(self.model, self.ex, self.th, self.th2, FKind.POSITIVE)
        ide = phi_example(self.model, self.ex, self.th, self.th2, FKind.IDENTITY)
        ab = phi_example(self.model, self.ex, self.th, self.th2, FKind.ABS)
        assert abs(pos - (ide + ab) / 2) < 1e-12

    def test_epoch_scores_token_data(self):
        data = TokenData([self.ex, TokenExample((0,), (1,))])
        s = epoch_scores(self.model, data, self.th, self.th2, FKind.ABS)
        assert s[0] == pytest.approx(phi_example(self.model, self.ex, self.th, self.th2, FKind.ABS))

    def test_token_helpers_reject_dense_model(self):
        with pytest.raises(DimensionError):
            token_deltas(LogisticModel(2), self.ex, np.zeros(2), np.zeros(2))


class TestBaselines:
    def test_max_uncertainty_logistic(self):
        model, data, _ = small_problem("logistic")
        th = np.array([0.3, -0.1, 0.2, 0.5])
        t = max_uncertainty_scores(model, th, data, ids=[0, 1])
        p = model.true_token_probs(th, data.subset([0]))[0][0]
        assert t.scores[0] == pytest.approx(np.log(p * (1 - p)))

    def test_max_uncertainty_clamped(self):
        model = LogisticModel(1)
        data = DenseData(np.array([[1.0]]), np.array([1.0]))
        s = max_uncertainty_scores(model, np.array([500.0]), data).scores[0]
        assert np.isfinite(s) and s == pytest.approx(np.log(1e-12 * (1 - 1e-12)))

    def test_max_uncertainty_token_is_mean(self):
        model, data, _ = small_problem("token")
        th = np.random.default_rng(2).standard_normal(model.p)
        s = max_uncertainty_scores(model, th, data, ids=[3]).scores[0]
        p = model.true_token_probs(th, data.subset([3]))[0]
        assert s == pytest.approx(np.mean(np.log(p * (1 - p))))

    def test_random_scores_are_ranks(self):
        t = random_scores(np.arange(10, 20), RngStream(0, "r"))
        assert sorted(t.scores.tolist()) == list(range(10))


class TestScoreTable:
    def test_csv_roundtrip(self, tmp_path):
        model, data, split = small_problem("logistic")
        t = method_a_scores(model, model.zeros(), data, split, linear_decay(0.5, 3), 0.1, FKind.ABS)
        t.write_csv(tmp_path / "s.csv")
        header = (tmp_path / "s.csv").read_text().splitlines()[0]
        assert header == "example_id,score,epoch_1,epoch_2,epoch_3"
        back = ScoreTable.read_csv(tmp_path / "s.csv")
        np.testing.assert_array_equal(back.per_epoch, t.per_epoch)
        np.testing.assert_array_equal(back.scores, t.scores)
        assert back.f_kind is FKind.ABS and back.epsilon == 0.1

    def test_shape_check(self):
        with pytest.raises(DimensionError):
            ScoreTable(ScoreMethod.A, [1, 2], np.zeros((3, 1)))

    def test_minibatch_scores_reproducible(self):
        model, data, split = small_problem("token")
        kw = dict(mode=MiniBatch(4, 9), rng=RngStream(9, "score"))
        a = method_b_scores(model, model.zeros(), data, split, linear_decay(0.5, 2), 0.1, **kw)
        b = method_b_scores(model, model.zeros(), data, split, linear_decay(0.5, 2), 0.1, **kw)
        np.testing.assert_array_equal(a.scores, b.scores)
        assert np.any(a.scores != 0)
