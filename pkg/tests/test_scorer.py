import math

import numpy as np
import pytest

from app.models.schemas import EncoderConfig, ModelPool, ScoreVector, TrainingHyper
from app.services.scorer import (
    EncoderParams,
    ScorerModel,
    encode,
    hashed_features,
    initialize_scorer,
    label_sets,
    loss_sample_llm,
    loss_sample_sample,
    sample_llm_loss_grad,
    sample_sample_loss_grad,
    score,
    score_batch,
)
from app.services.training import ContrastiveBatch, objective_and_grad
from app.utils.exceptions import (
    DegenerateSetsError,
    EmptyOutGroupError,
    EmptyQueryError,
    LabelLengthMismatchError,
    PoolMismatchError,
)
from tests.conftest import make_profile


def _with_keys(model: ScorerModel, keys: np.ndarray) -> ScorerModel:
    return ScorerModel(
        encoder=model.encoder,
        keys=keys,
        hyper=model.hyper,
        pool_fingerprint=model.pool_fingerprint
    )


def _brute_llm_loss(z, positives, negatives):
    total = 0.0
    for p in positives:
        denominator = math.exp(z[p]) + sum(math.exp(z[n]) for n in negatives)
        total += -math.log(math.exp(z[p]) / denominator)
    return total


def _brute_ss_loss(e, e_pos, e_negs):
    numerator = math.exp(float(e @ e_pos))
    denominator = numerator + sum(math.exp(float(e @ n)) for n in e_negs)
    return -math.log(numerator / denominator)


def _close(analytic, numeric, rtol=1e-4):
    return abs(analytic - numeric) <= rtol * max(abs(analytic), abs(numeric)) + 1e-9


class TestEncoder:

    def test_deterministic(self, small_scorer):
        a = encode(small_scorer.encoder, "what is the derivative of x^2")
        b = encode(small_scorer.encoder, "what is the derivative of x^2")
        assert np.array_equal(a, b)

    def test_zero_projection_gives_zero_vector(self, small_encoder):
        params = EncoderParams(
            config=small_encoder,
            projection=np.zeros((small_encoder.feature_dim, small_encoder.embed_dim))
        )
        assert not np.any(encode(params, "qualquer consulta"))

    def test_one_character_changes_embedding(self, small_scorer):
        a = encode(small_scorer.encoder, "solve the equation x + 1 = 3")
        b = encode(small_scorer.encoder, "solve the equation x + 2 = 3")
        assert not np.allclose(a, b)

    def test_features_are_unit_norm(self, small_encoder):
        features = hashed_features(small_encoder, ["abc def", "outra consulta maior"]).toarray()
        assert np.allclose(np.linalg.norm(features, axis=1), 1.0)

    def test_hash_seed_changes_features(self, small_encoder):
        other = small_encoder.model_copy(update={"hash_seed": 99})
        a = hashed_features(small_encoder, ["polynomial roots"]).toarray()
        b = hashed_features(other, ["polynomial roots"]).toarray()
        assert not np.array_equal(a, b)

    def test_empty_query(self, small_scorer):
        with pytest.raises(EmptyQueryError):
            encode(small_scorer.encoder, "   ")

    def test_projection_is_read_only(self, small_scorer):
        with pytest.raises(ValueError):
            small_scorer.encoder.projection[0, 0] = 1.0


class TestScore:

    def test_zero_keys_give_one_half(self, small_scorer):
        model = _with_keys(small_scorer, np.zeros_like(small_scorer.keys))
        assert score(model, "any query").values == (0.5,) * model.N

    def test_logit_two(self, small_scorer):
        e = encode(small_scorer.encoder, "integral of sin x")
        keys = np.zeros_like(small_scorer.keys)
        keys[1] = 2.0 * e / (e @ e)
        result = score(_with_keys(small_scorer, keys), "integral of sin x")
        assert result[1] == pytest.approx(0.8808, abs=1e-4)
        assert result[0] == 0.5

    def test_scores_strictly_inside_unit_interval(self, small_scorer):
        keys = np.full_like(small_scorer.keys, 1e6)
        keys[0] = -1e6
        values = score(_with_keys(small_scorer, keys), "integral of sin x").values
        assert all(0.0 < v < 1.0 for v in values)

    def test_pool_mismatch(self, small_scorer):
        reordered = ModelPool(profiles=tuple(make_profile(f"m{i}", 4 - i) for i in range(5)))
        with pytest.raises(PoolMismatchError):
            score(small_scorer, "query", reordered)

    def test_batch_matches_single(self, small_scorer):
        queries = ["first query", "a second one", "third"]
        batch = score_batch(small_scorer, queries)
        for row, query in zip(batch, queries):
            assert np.allclose(row, score(small_scorer, query).as_array())


class TestLabelSets:

    def test_top_and_bottom(self):
        positives, negatives = label_sets([0.1, 0.9, 0.5, 0.7, 0.0], 2, 2)
        assert positives.tolist() == [1, 3]
        assert negatives.tolist() == [0, 4]

    def test_ties_break_by_index_without_overlap(self):
        positives, negatives = label_sets([0.5] * 4, 2, 2)
        assert positives.tolist() == [0, 1]
        assert negatives.tolist() == [2, 3]

    @pytest.mark.parametrize("k_plus,k_minus", [(0, 1), (1, 0), (3, 3)])
    def test_degenerate(self, k_plus, k_minus):
        with pytest.raises(DegenerateSetsError):
            label_sets([0.1, 0.2, 0.3, 0.4, 0.5], k_plus, k_minus)


class TestSampleLlmLoss:

    def test_uniform_logits(self):
        loss, _, _ = sample_llm_loss_grad(np.ones(4), np.zeros((3, 4)), np.array([0]), np.array([1]))
        assert loss == pytest.approx(math.log(2))

    def test_large_positive_logit(self):
        keys = np.array([[50.0, 0.0], [0.0, 0.0]])
        loss, _, _ = sample_llm_loss_grad(np.array([1.0, 0.0]), keys, np.array([0]), np.array([1]))
        assert loss < 1e-20

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            e = rng.normal(size=6)
            keys = rng.normal(size=(7, 6))
            order = rng.permutation(7)
            positives, negatives = order[:3], order[3:6]
            loss, _, _ = sample_llm_loss_grad(e, keys, positives, negatives)
            assert loss == pytest.approx(_brute_llm_loss(keys @ e, positives, negatives), abs=1e-10)

    def test_label_length_mismatch(self, small_scorer):
        with pytest.raises(LabelLengthMismatchError):
            loss_sample_llm(small_scorer, "query", [0.5, 0.5])

    def test_model_level_loss(self, small_scorer):
        labels = ScoreVector(values=(0.9, 0.1, 0.8, 0.2, 0.5))
        e = encode(small_scorer.encoder, "query")
        expected = _brute_llm_loss(small_scorer.keys @ e, [0, 2], [1, 3])
        assert loss_sample_llm(small_scorer, "query", labels) == pytest.approx(expected, abs=1e-10)


class TestSampleSampleLoss:

    def test_identical_positive_orthogonal_negative(self):
        e = np.array([0.6, 0.8, 0.0])
        loss, _, _, _ = sample_sample_loss_grad(e, e.copy(), np.array([[0.0, 0.0, 1.0]]))
        norm2 = float(e @ e)
        assert loss == pytest.approx(-math.log(math.exp(norm2) / (math.exp(norm2) + 1.0)))

    def test_equal_dot_products(self):
        e = np.array([1.0, 0.0])
        loss, _, _, _ = sample_sample_loss_grad(e, np.array([0.3, 1.0]), np.array([[0.3, -2.0]]))
        assert loss == pytest.approx(math.log(2))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            e, e_pos = rng.normal(size=(2, 5))
            e_negs = rng.normal(size=(4, 5))
            loss, _, _, _ = sample_sample_loss_grad(e, e_pos, e_negs)
            assert loss == pytest.approx(_brute_ss_loss(e, e_pos, e_negs), abs=1e-10)

    def test_empty_out_group(self, small_scorer):
        with pytest.raises(EmptyOutGroupError):
            loss_sample_sample(small_scorer, "a query", "similar query", [])


class TestGradients:
    """Gradientes analíticos contra diferenças centrais (h=1e-5)"""

    H = 1e-5

    def test_sample_llm_gradients(self):
        rng = np.random.default_rng(3)
        e = rng.normal(size=16)
        keys = rng.normal(scale=0.5, size=(5, 16))
        positives, negatives = np.array([0, 3]), np.array([1, 4])
        _, grad_e, grad_keys = sample_llm_loss_grad(e, keys, positives, negatives)

        def loss_at(e_, keys_):
            return sample_llm_loss_grad(e_, keys_, positives, negatives)[0]

        for i in rng.choice(16, size=8, replace=False):
            step = np.zeros(16)
            step[i] = self.H
            numeric = (loss_at(e + step, keys) - loss_at(e - step, keys)) / (2 * self.H)
            assert _close(grad_e[i], numeric)

        for j, i in zip(rng.integers(5, size=8), rng.integers(16, size=8)):
            plus, minus = keys.copy(), keys.copy()
            plus[j, i] += self.H
            minus[j, i] -= self.H
            numeric = (loss_at(e, plus) - loss_at(e, minus)) / (2 * self.H)
            assert _close(grad_keys[j, i], numeric)

    def test_sample_sample_gradients(self):
        rng = np.random.default_rng(4)
        e, e_pos = rng.normal(scale=0.5, size=(2, 16))
        e_negs = rng.normal(scale=0.5, size=(3, 16))
        _, grad_e, grad_pos, grad_negs = sample_sample_loss_grad(e, e_pos, e_negs)

        def central(fn, array, index):
            plus, minus = array.copy(), array.copy()
            plus[index] += self.H
            minus[index] -= self.H
            return (fn(plus) - fn(minus)) / (2 * self.H)

        for i in range(0, 16, 4):
            assert _close(grad_e[i], central(lambda x: sample_sample_loss_grad(x, e_pos, e_negs)[0], e, i))
            assert _close(grad_pos[i], central(lambda x: sample_sample_loss_grad(e, x, e_negs)[0], e_pos, i))
            assert _close(
                grad_negs[1, i],
                central(lambda x: sample_sample_loss_grad(e, e_pos, x)[0], e_negs, (1, i))
            )

    def test_total_objective_gradient(self):
        """Objetivo completo do lote (N=5, d=16) em 25 coordenadas aleatórias"""
        rng = np.random.default_rng(5)
        config = EncoderConfig(feature_dim=64, embed_dim=16, ngram_min=2, ngram_max=3)
        queries = ["solve x^2 = 4", "write a python loop", "summarize the passage", "prime numbers below 20"]
        features = hashed_features(config, queries)

        projection = rng.normal(scale=0.3, size=(64, 16))
        keys = rng.normal(scale=0.3, size=(5, 16))
        batch = ContrastiveBatch(
            features=features,
            anchors=np.array([0, 1, 2]),
            labels=rng.uniform(size=(3, 5)),
            positives=np.array([3, -1, 0]),
            negatives=[np.array([1, 2]), np.empty(0, dtype=int), np.array([1])]
        )

        def objective(p, k):
            return objective_and_grad(p, k, batch, 2, 2, 0.2)[0]

        _, grad_projection, grad_keys = objective_and_grad(projection, keys, batch, 2, 2, 0.2)
        active = np.unique(features.indices)

        for _ in range(25):
            plus_p, minus_p = projection.copy(), projection.copy()
            plus_k, minus_k = keys.copy(), keys.copy()
            if rng.random() < 0.6:
                index = (int(rng.choice(active)), int(rng.integers(16)))
                plus_p[index] += self.H
                minus_p[index] -= self.H
                analytic = grad_projection[index]
            else:
                index = (int(rng.integers(5)), int(rng.integers(16)))
                plus_k[index] += self.H
                minus_k[index] -= self.H
                analytic = grad_keys[index]

            numeric = (objective(plus_p, plus_k) - objective(minus_p, minus_k)) / (2 * self.H)
            assert _close(analytic, numeric), (index, analytic, numeric)


def test_initialize_scorer_shapes(pool5, small_encoder):
    model = initialize_scorer(pool5, small_encoder, TrainingHyper(rng_seed=1))
    assert model.encoder.projection.shape == (256, 8)
    assert model.keys.shape == (5, 8)
    assert model.pool_fingerprint == pool5.fingerprint()
