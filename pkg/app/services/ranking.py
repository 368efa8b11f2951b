from typing import List

from app.models.schemas import ModelPool, ScoreVector
from app.utils.exceptions import BadKError, LengthMismatchError


def rank_models(scores: ScoreVector, pool: ModelPool) -> List[str]:
    """
    Ordem de preferência: score desc, preço de saída, preço de entrada,
    latência estimada e por fim key_index (todos asc)
    """
    if len(scores) != pool.N:
        raise LengthMismatchError(f"{len(scores)} scores para N={pool.N}")

    ordered = sorted(
        pool.profiles,
        key=lambda p: (
            -scores[p.key_index],
            p.output_price,
            p.input_price,
            p.latency_estimate,
            p.key_index,
        )
    )
    return [p.model_id for p in ordered]


def select_top_k(ranked: List[str], k: int) -> List[str]:
    if not 1 <= k <= len(ranked):
        raise BadKError(f"k={k} fora de [1, {len(ranked)}]")
    return list(ranked[:k])


def should_stop(scores: ScoreVector, s_th: float, layer: int, max_layers: int) -> bool:
    """Para quando max(scores) > s_th (estrito) ou o limite de camadas foi atingido"""
    if layer >= max_layers:
        return True
    return max(scores.values) > s_th


def choose_aggregator(scores: ScoreVector, pool: ModelPool) -> str:
    return rank_models(scores, pool)[0]
