"""
Treino do scorer: perda amostra-LLM + alpha * perda amostra-amostra,
otimizada com AdamW sobre a projeção do encoder e as chaves dos modelos.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import sparse

from app.models.schemas import EncoderConfig, LabeledExample, ModelPool, TrainingHyper
from app.services.clustering import cluster_embeddings
from app.services.scorer import (
    EncoderParams,
    ScorerModel,
    hashed_features,
    label_sets,
    sample_llm_loss_grad,
    sample_sample_loss_grad,
)
from app.utils.exceptions import (
    DegenerateSetsError,
    EmptyDatasetError,
    LabelLengthMismatchError,
    TooFewQueriesError,
)
from app.utils.logger import PerformanceLogger

logger = logging.getLogger(__name__)


class AdamW:
    """AdamW com decaimento de peso desacoplado e correção de viés"""

    def __init__(
        self,
        params: Dict[str, np.ndarray],
        lr: float,
        weight_decay: float = 0.01,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8
    ):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p) for name, p in params.items()}
        self.v = {name: np.zeros_like(p) for name, p in params.items()}

    def step(self, grads: Dict[str, np.ndarray]):
        self.step_count += 1
        bias1 = 1.0 - self.beta1 ** self.step_count
        bias2 = 1.0 - self.beta2 ** self.step_count

        for name, param in self.params.items():
            grad = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad

            param *= 1.0 - self.lr * self.weight_decay
            param -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


@dataclass
class ContrastiveBatch:
    """Lote de treino; índices apontam para linhas de `features`"""
    features: sparse.csr_matrix
    anchors: np.ndarray
    labels: np.ndarray  # B x N
    positives: np.ndarray  # -1 = sem termo amostra-amostra
    negatives: List[np.ndarray] = field(default_factory=list)


def objective_and_grad(
    projection: np.ndarray,
    keys: np.ndarray,
    batch: ContrastiveBatch,
    k_plus: int,
    k_minus: int,
    alpha: float
):
    """
    Média no lote de L_llm + alpha * L_ss e gradientes analíticos

    Returns:
        (perda, gradiente da projeção, gradiente das chaves)
    """
    negatives = batch.negatives or [np.empty(0, dtype=int)] * len(batch.anchors)
    used = [batch.anchors, batch.positives[batch.positives >= 0], *negatives]
    rows = np.unique(np.concatenate(used).astype(int))
    local = {int(row): i for i, row in enumerate(rows)}

    sub = batch.features[rows]
    embeddings = np.asarray(sub @ projection)
    grad_embeddings = np.zeros_like(embeddings)
    grad_keys = np.zeros_like(keys)
    total = 0.0

    for b, anchor in enumerate(batch.anchors):
        a = local[int(anchor)]
        e = embeddings[a]

        pos_set, neg_set = label_sets(batch.labels[b], k_plus, k_minus)
        loss, grad_e, grad_k = sample_llm_loss_grad(e, keys, pos_set, neg_set)
        total += loss
        grad_embeddings[a] += grad_e
        grad_keys += grad_k

        if alpha > 0 and batch.positives[b] >= 0 and len(negatives[b]) > 0:
            p = local[int(batch.positives[b])]
            ns = [local[int(n)] for n in negatives[b]]
            loss, grad_e, grad_p, grad_n = sample_sample_loss_grad(e, embeddings[p], embeddings[ns])
            total += alpha * loss
            grad_embeddings[a] += alpha * grad_e
            grad_embeddings[p] += alpha * grad_p
            np.add.at(grad_embeddings, ns, alpha * grad_n)

    size = len(batch.anchors)
    grad_projection = np.asarray(sub.T @ grad_embeddings) / size
    return total / size, grad_projection, grad_keys / size


def _sample_contrast(
    indices: np.ndarray,
    assignment: np.ndarray,
    members: Dict[int, np.ndarray],
    out_group_size: int,
    rng: np.random.Generator
):
    """x+ do mesmo cluster (ou a própria consulta) e X- de outros clusters do lote"""
    positives = np.empty(len(indices), dtype=int)
    negatives = []
    batch_clusters = assignment[indices]

    for b, i in enumerate(indices):
        cluster = assignment[i]
        same = members[cluster][members[cluster] != i]
        positives[b] = rng.choice(same) if len(same) else i

        out_batch = indices[batch_clusters != cluster]
        if len(out_batch) == 0:
            # lote inteiro no mesmo cluster: recorre ao dataset todo
            out_batch = np.flatnonzero(assignment != cluster)
        if len(out_batch) > out_group_size:
            out_batch = rng.choice(out_batch, size=out_group_size, replace=False)
        negatives.append(np.asarray(out_batch, dtype=int))

    return positives, negatives


def _check_dataset(dataset: Sequence[LabeledExample], pool: ModelPool, hyper: TrainingHyper):
    if not dataset:
        raise EmptyDatasetError("Dataset de treino vazio")
    for i, example in enumerate(dataset):
        if len(example.labels) != pool.N:
            raise LabelLengthMismatchError(
                f"Exemplo {i}: {len(example.labels)} rótulos para N={pool.N}"
            )
    if hyper.k_plus < 1 or hyper.k_minus < 1 or hyper.k_plus + hyper.k_minus > pool.N:
        raise DegenerateSetsError(
            f"K+={hyper.k_plus}, K-={hyper.k_minus} inválidos para N={pool.N}"
        )
    if hyper.use_sample_sample and hyper.num_clusters > len(dataset):
        raise TooFewQueriesError(f"{len(dataset)} consultas para {hyper.num_clusters} clusters")


def train(
    dataset: Sequence[LabeledExample],
    pool: ModelPool,
    hyper: Optional[TrainingHyper] = None,
    encoder_config: Optional[EncoderConfig] = None
) -> ScorerModel:
    """
    Treina o scorer a partir de parâmetros aleatórios

    Determinístico dado hyper.rng_seed: inicialização, ordem dos lotes e
    amostragem de contraste usam fluxos separados da mesma semente, então
    alpha=0 e use_sample_sample=False percorrem a mesma trajetória.
    """
    hyper = hyper or TrainingHyper()
    encoder_config = encoder_config or EncoderConfig()
    _check_dataset(dataset, pool, hyper)

    init_seq, order_seq, sample_seq = np.random.SeedSequence(hyper.rng_seed).spawn(3)
    init_rng = np.random.default_rng(init_seq)
    order_rng = np.random.default_rng(order_seq)
    sample_rng = np.random.default_rng(sample_seq)

    d = encoder_config.embed_dim
    scale = encoder_config.init_scale or 1.0 / math.sqrt(d)
    projection = init_rng.normal(0.0, scale, size=(encoder_config.feature_dim, d))
    keys = init_rng.normal(0.0, scale, size=(pool.N, d))

    n = len(dataset)
    features = hashed_features(encoder_config, [ex.query for ex in dataset])
    labels = np.asarray([ex.labels for ex in dataset], dtype=float)

    assignment = None
    members: Dict[int, np.ndarray] = {}
    if hyper.use_sample_sample:
        # clusters fixos, calculados uma vez sobre o encoder inicial
        assignment = cluster_embeddings(
            np.asarray(features @ projection), hyper.num_clusters, seed=hyper.rng_seed
        )
        members = {c: np.flatnonzero(assignment == c) for c in range(hyper.num_clusters)}

    optimizer = AdamW(
        {"projection": projection, "keys": keys},
        lr=hyper.learning_rate,
        weight_decay=hyper.weight_decay,
        beta1=hyper.beta1,
        beta2=hyper.beta2,
        eps=hyper.adam_eps
    )

    logger.info(
        f"Treinando scorer: {n} exemplos, N={pool.N}, d={d}, "
        f"{hyper.epochs} épocas, lote {hyper.batch_size}"
    )

    history: List[float] = []
    for epoch in range(1, hyper.epochs + 1):
        with PerformanceLogger("scorer.train_epoch", epoch=epoch):
            order = order_rng.permutation(n)
            weighted = 0.0

            for start in range(0, n, hyper.batch_size):
                indices = order[start:start + hyper.batch_size]

                if assignment is not None:
                    positives, negatives = _sample_contrast(
                        indices, assignment, members, hyper.effective_out_group_size, sample_rng
                    )
                else:
                    positives = np.full(len(indices), -1, dtype=int)
                    negatives = [np.empty(0, dtype=int)] * len(indices)

                batch = ContrastiveBatch(
                    features=features,
                    anchors=indices,
                    labels=labels[indices],
                    positives=positives,
                    negatives=negatives
                )
                loss, grad_projection, grad_keys = objective_and_grad(
                    projection, keys, batch, hyper.k_plus, hyper.k_minus, hyper.alpha
                )
                optimizer.step({"projection": grad_projection, "keys": grad_keys})
                weighted += loss * len(indices)

        epoch_loss = weighted / n
        if not math.isfinite(epoch_loss):
            raise FloatingPointError(f"Perda não finita na época {epoch}")
        history.append(epoch_loss)
        logger.info(f"Época {epoch}/{hyper.epochs}: perda média {epoch_loss:.6f}")

    return ScorerModel(
        encoder=EncoderParams(config=encoder_config, projection=projection.copy()),
        keys=keys.copy(),
        hyper=hyper,
        pool_fingerprint=pool.fingerprint(),
        training_history=tuple(history)
    )
