from typing import Iterable

from app.models.schemas import UsageRecord


def accumulate_usage(records: Iterable[UsageRecord]) -> UsageRecord:
    """Soma campo a campo (tokens, custo e latência).

    A regra de latência do pipeline (máximo dentro da camada, soma entre
    camadas) é aplicada por quem chama; aqui tudo é somado.
    """
    input_tokens = 0
    output_tokens = 0
    cost = 0.0
    wall_latency = 0.0
    estimated = False

    for record in records:
        input_tokens += record.input_tokens
        output_tokens += record.output_tokens
        cost += record.cost
        wall_latency += record.wall_latency
        estimated = estimated or record.estimated_tokens

    return UsageRecord(
        input_tokens=input_tokens,
        output_tokens=output_tokens,
        cost=cost,
        wall_latency=wall_latency,
        estimated_tokens=estimated
    )
