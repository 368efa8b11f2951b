import numpy as np
import pytest

from app.services.clustering import cluster_embeddings, cluster_queries
from app.utils.exceptions import TooFewQueriesError


def two_clouds(rng, size=20):
    left = rng.normal(loc=-10.0, scale=0.1, size=(size, 4))
    right = rng.normal(loc=10.0, scale=0.1, size=(size, 4))
    return np.vstack([left, right])


def test_single_cluster():
    assert cluster_embeddings(np.random.default_rng(0).normal(size=(7, 3)), 1).tolist() == [0] * 7


def test_separated_clouds_are_pure():
    assignment = cluster_embeddings(two_clouds(np.random.default_rng(1)), 2, seed=0)
    assert len(set(assignment[:20])) == 1
    assert len(set(assignment[20:])) == 1
    assert assignment[0] != assignment[20]


def test_deterministic_with_seed():
    embeddings = np.random.default_rng(2).normal(size=(30, 5))
    assert np.array_equal(cluster_embeddings(embeddings, 4, seed=3), cluster_embeddings(embeddings, 4, seed=3))


def test_too_few_queries():
    with pytest.raises(TooFewQueriesError):
        cluster_embeddings(np.zeros((2, 3)), 3)


def test_cluster_queries_uses_scorer_encoder(small_scorer):
    queries = ["integral of x", "integral of y", "python recursion", "python loops"]
    assignment = cluster_queries(small_scorer, queries, 2)
    assert len(assignment) == 4
    assert set(assignment) <= {0, 1}
    assert assignment == cluster_queries(small_scorer.encoder, queries, 2, seed=small_scorer.hyper.rng_seed)
