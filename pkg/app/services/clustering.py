import logging
from typing import List, Optional, Sequence, Union

import numpy as np
from sklearn.cluster import KMeans

from app.services.scorer import EncoderParams, ScorerModel, embed
from app.utils.exceptions import TooFewQueriesError

logger = logging.getLogger(__name__)


def cluster_embeddings(embeddings: np.ndarray, num_clusters: int, seed: int = 0) -> np.ndarray:
    """
    Agrupa embeddings com k-means (inicialização k-means++)

    Returns:
        Array com o índice do cluster de cada linha
    """
    n = len(embeddings)
    if num_clusters < 1:
        raise ValueError(f"num_clusters deve ser >= 1 (recebido {num_clusters})")
    if n < num_clusters:
        raise TooFewQueriesError(f"{n} consultas para {num_clusters} clusters")

    if num_clusters == 1:
        return np.zeros(n, dtype=int)

    kmeans = KMeans(n_clusters=num_clusters, init="k-means++", n_init=10, random_state=seed)
    assignment = kmeans.fit_predict(np.asarray(embeddings, dtype=float))

    sizes = np.bincount(assignment, minlength=num_clusters)
    logger.debug(f"k-means: {num_clusters} clusters, tamanhos {sizes.tolist()}")
    return assignment.astype(int)


def cluster_queries(
    model: Union[ScorerModel, EncoderParams],
    queries: Sequence[str],
    num_clusters: int,
    seed: Optional[int] = None
) -> List[int]:
    """Atribuição de cluster por consulta usando o encoder do scorer"""
    if isinstance(model, ScorerModel):
        encoder = model.encoder
        if seed is None:
            seed = model.hyper.rng_seed
    else:
        encoder = model

    if len(queries) < num_clusters:
        raise TooFewQueriesError(f"{len(queries)} consultas para {num_clusters} clusters")

    embeddings = embed(encoder, queries)
    return cluster_embeddings(embeddings, num_clusters, seed=seed or 0).tolist()
