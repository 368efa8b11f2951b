"""
Scorer leve: embedding da consulta por n-gramas de caracteres com hashing
seguido de projeção linear treinável, score por modelo = sigmoid(E(x)·k_j).

As perdas contrastivas (amostra-LLM e amostra-amostra) e seus gradientes
analíticos também vivem aqui; o laço de treino está em services/training.py.
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.special import expit, logsumexp
from sklearn.feature_extraction.text import HashingVectorizer
from sklearn.utils import murmurhash3_32

from app.models.schemas import EncoderConfig, ModelPool, ScoreVector, TrainingHyper
from app.utils.exceptions import (
    DegenerateSetsError,
    EmptyOutGroupError,
    EmptyQueryError,
    LabelLengthMismatchError,
    PoolMismatchError,
)

logger = logging.getLogger(__name__)

# Sigmoid saturada ainda precisa ficar estritamente dentro de (0, 1)
_PROB_LOW = float(np.nextafter(0.0, 1.0))
_PROB_HIGH = float(np.nextafter(1.0, 0.0))


@dataclass(frozen=True)
class EncoderParams:
    config: EncoderConfig
    projection: np.ndarray  # F x d

    def __post_init__(self):
        expected = (self.config.feature_dim, self.config.embed_dim)
        if self.projection.shape != expected:
            raise ValueError(f"Projeção com forma {self.projection.shape}, esperado {expected}")
        if not np.all(np.isfinite(self.projection)):
            raise ValueError("Projeção contém valores não finitos")
        self.projection.setflags(write=False)

    @property
    def feature_dim(self) -> int:
        return self.config.feature_dim

    @property
    def embed_dim(self) -> int:
        return self.config.embed_dim


@dataclass(frozen=True)
class ScorerModel:
    encoder: EncoderParams
    keys: np.ndarray  # N x d, linha j = k_j
    hyper: TrainingHyper
    pool_fingerprint: str
    training_history: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.keys.ndim != 2 or self.keys.shape[1] != self.encoder.embed_dim:
            raise ValueError(f"Chaves com forma {self.keys.shape} incompatível com d={self.encoder.embed_dim}")
        if not np.all(np.isfinite(self.keys)):
            raise ValueError("Chaves contêm valores não finitos")
        self.keys.setflags(write=False)

    @property
    def N(self) -> int:
        return self.keys.shape[0]


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------

@lru_cache(maxsize=8)
def _char_analyzer(ngram_min: int, ngram_max: int):
    vectorizer = HashingVectorizer(
        analyzer="char",
        ngram_range=(ngram_min, ngram_max),
        lowercase=False
    )
    return vectorizer.build_analyzer()


def _require_query(query: str):
    if query is None or not query.strip():
        raise EmptyQueryError("Consulta vazia")


def hashed_features(config: EncoderConfig, queries: Sequence[str]) -> sparse.csr_matrix:
    """Contagens de n-gramas por hashing, normalizadas em L2 (uma linha por consulta)"""
    analyzer = _char_analyzer(*config.ngram_range)
    rows, cols, data = [], [], []

    for i, query in enumerate(queries):
        _require_query(query)
        counts = Counter(
            murmurhash3_32(gram, seed=config.hash_seed, positive=True) % config.feature_dim
            for gram in analyzer(query)
        )
        if not counts:
            continue
        norm = math.sqrt(sum(c * c for c in counts.values()))
        for index in sorted(counts):
            rows.append(i)
            cols.append(index)
            data.append(counts[index] / norm)

    return sparse.csr_matrix(
        (np.asarray(data, dtype=float), (rows, cols)),
        shape=(len(queries), config.feature_dim)
    )


def embed(params: EncoderParams, queries: Sequence[str]) -> np.ndarray:
    features = hashed_features(params.config, queries)
    return np.asarray(features @ params.projection)


def encode(params: EncoderParams, query: str) -> np.ndarray:
    """E(x) = projeçãoᵀ · contagens normalizadas"""
    return embed(params, [query])[0]


def initialize_scorer(
    pool: ModelPool,
    encoder_config: EncoderConfig,
    hyper: Optional[TrainingHyper] = None,
    rng: Optional[np.random.Generator] = None
) -> ScorerModel:
    """Scorer com parâmetros aleatórios (ponto de partida do treino)"""
    hyper = hyper or TrainingHyper()
    rng = rng or np.random.default_rng(hyper.rng_seed)
    scale = encoder_config.init_scale or 1.0 / math.sqrt(encoder_config.embed_dim)

    projection = rng.normal(0.0, scale, size=(encoder_config.feature_dim, encoder_config.embed_dim))
    keys = rng.normal(0.0, scale, size=(pool.N, encoder_config.embed_dim))

    return ScorerModel(
        encoder=EncoderParams(config=encoder_config, projection=projection),
        keys=keys,
        hyper=hyper,
        pool_fingerprint=pool.fingerprint()
    )


# ---------------------------------------------------------------------------
# Score
# ---------------------------------------------------------------------------

def ensure_pool(model: ScorerModel, pool: ModelPool):
    if model.N != pool.N or model.pool_fingerprint != pool.fingerprint():
        raise PoolMismatchError(
            f"Scorer treinado para outro pool (fingerprint {model.pool_fingerprint[:12]}, "
            f"pool {pool.fingerprint()[:12]})"
        )


def logits(model: ScorerModel, query: str) -> np.ndarray:
    return model.keys @ encode(model.encoder, query)


def _to_probabilities(z: np.ndarray) -> np.ndarray:
    return np.clip(expit(z), _PROB_LOW, _PROB_HIGH)


def score(model: ScorerModel, query: str, pool: Optional[ModelPool] = None) -> ScoreVector:
    """s_j = sigmoid(E(x)·k_j) para todo o pool"""
    if pool is not None:
        ensure_pool(model, pool)
    return ScoreVector.from_array(_to_probabilities(logits(model, query)))


def score_batch(model: ScorerModel, queries: Sequence[str]) -> np.ndarray:
    embeddings = embed(model.encoder, queries)
    return _to_probabilities(embeddings @ model.keys.T)


# ---------------------------------------------------------------------------
# Perdas contrastivas
# ---------------------------------------------------------------------------

def label_sets(labels: Sequence[float], k_plus: int, k_minus: int) -> Tuple[np.ndarray, np.ndarray]:
    """I+ (top-K+) e I- (bottom-K-) numa única ordem total: rótulo desc, key_index asc"""
    n = len(labels)
    if k_plus < 1 or k_minus < 1:
        raise DegenerateSetsError(f"K+={k_plus} e K-={k_minus} devem ser >= 1")
    if k_plus + k_minus > n:
        raise DegenerateSetsError(f"K+ + K- = {k_plus + k_minus} excede N={n}")

    order = sorted(range(n), key=lambda j: (-labels[j], j))
    return np.asarray(order[:k_plus], dtype=int), np.asarray(order[n - k_minus:], dtype=int)


def sample_llm_loss_grad(
    e: np.ndarray,
    keys: np.ndarray,
    positives: np.ndarray,
    negatives: np.ndarray
) -> Tuple[float, np.ndarray, np.ndarray]:
    """Perda amostra-LLM somada sobre I+, com gradientes em relação a E(x) e às chaves"""
    z = keys @ e
    grad_z = np.zeros_like(z)
    loss = 0.0

    for p in positives:
        candidates = np.concatenate(([p], negatives))
        zz = z[candidates]
        lse = logsumexp(zz)
        loss += lse - z[p]
        grad_z[candidates] += np.exp(zz - lse)
        grad_z[p] -= 1.0

    return float(loss), keys.T @ grad_z, np.outer(grad_z, e)


def sample_sample_loss_grad(
    e: np.ndarray,
    e_pos: np.ndarray,
    e_negs: np.ndarray
) -> Tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Perda amostra-amostra com gradientes para âncora, positivo e negativos"""
    sims = np.concatenate(([e @ e_pos], e_negs @ e))
    lse = logsumexp(sims)
    loss = lse - sims[0]

    weights = np.exp(sims - lse)
    weights[0] -= 1.0

    grad_e = weights[0] * e_pos + weights[1:] @ e_negs
    grad_pos = weights[0] * e
    grad_negs = np.outer(weights[1:], e)
    return float(loss), grad_e, grad_pos, grad_negs


def loss_sample_llm(model: ScorerModel, query: str, labels) -> float:
    values = labels.values if isinstance(labels, ScoreVector) else tuple(labels)
    if len(values) != model.N:
        raise LabelLengthMismatchError(f"{len(values)} rótulos para N={model.N}")

    positives, negatives = label_sets(values, model.hyper.k_plus, model.hyper.k_minus)
    loss, _, _ = sample_llm_loss_grad(encode(model.encoder, query), model.keys, positives, negatives)
    return loss


def loss_sample_sample(
    model: ScorerModel,
    query: str,
    in_group_query: str,
    out_group_queries: Sequence[str]
) -> float:
    if not out_group_queries:
        raise EmptyOutGroupError("Conjunto fora do grupo vazio")

    embeddings = embed(model.encoder, [query, in_group_query, *out_group_queries])
    loss, _, _, _ = sample_sample_loss_grad(embeddings[0], embeddings[1], embeddings[2:])
    return loss
