"""
Orquestrador em camadas

Camada 1: scorer -> top-k -> prompt da primeira camada.
Camada l >= 2: funde s1 com auto-avaliações (l-1) e avaliação cruzada do
juiz (sobre l-2), decide parada, seleciona top-k e roda o prompt
intermediário. No fim, um único agregador sintetiza as últimas respostas.
"""

import json
import logging
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.config import settings
from app.models.schemas import (
    AggregationRecord,
    AssessmentState,
    LayerKind,
    LayerTranscript,
    ModelPool,
    RoutingConfig,
    RunResult,
    ScoreVector,
    StopReason,
    UsageRecord,
)
from app.services.accounting import accumulate_usage
from app.services.backends.registry import BackendSet
from app.services.judges import fuse, parse_response, select_cross_judge
from app.services.prompts import build_guarded_prompt
from app.services.ranking import choose_aggregator, rank_models, select_top_k, should_stop
from app.services.scorer import ScorerModel, score
from app.utils.exceptions import AllModelsFailedError, EmptyQueryError, EngineError, LengthMismatchError
from app.utils.logger import PerformanceLogger
from app.utils.validators import validate_routing

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Políticas de seleção
# ---------------------------------------------------------------------------

class SelectionPolicy(ABC):

    @abstractmethod
    def select(self, scores: ScoreVector, pool: ModelPool, k: int) -> List[str]:
        ...

    @abstractmethod
    def aggregator(self, scores: ScoreVector, pool: ModelPool) -> str:
        ...


class RankedSelection(SelectionPolicy):
    """Top-k pelo ranking de desempenho/custo/latência"""

    def select(self, scores: ScoreVector, pool: ModelPool, k: int) -> List[str]:
        return select_top_k(rank_models(scores, pool), k)

    def aggregator(self, scores: ScoreVector, pool: ModelPool) -> str:
        return choose_aggregator(scores, pool)


class RandomSelection(SelectionPolicy):
    """k modelos uniformes por camada e agregador aleatório (baseline)"""

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def select(self, scores: ScoreVector, pool: ModelPool, k: int) -> List[str]:
        chosen = self.rng.choice(pool.N, size=k, replace=False)
        return [pool.model_ids[i] for i in chosen]

    def aggregator(self, scores: ScoreVector, pool: ModelPool) -> str:
        return pool.model_ids[int(self.rng.integers(pool.N))]


# ---------------------------------------------------------------------------
# Camada
# ---------------------------------------------------------------------------

def run_layer(
    layer_index: int,
    layer_kind: LayerKind,
    query: str,
    prev_answers: Sequence[str],
    selected: Sequence[str],
    pool: ModelPool,
    backends: BackendSet,
    fused_scores: ScoreVector,
    max_in_flight: Optional[int] = None,
    cross_judge: Optional[str] = None
) -> LayerTranscript:
    """Chama todos os modelos selecionados com a mesma entrada, em paralelo"""
    if not selected:
        raise ValueError("Camada sem modelos selecionados")

    expected_peers = len(prev_answers) if layer_kind == LayerKind.INTERMEDIATE else 0

    def call(model_id: str):
        profile = pool.get(model_id)
        try:
            text, _ = build_guarded_prompt(
                layer_kind,
                query,
                prev_answers,
                profile.context_limit,
                counter=lambda t: backends.count_tokens(profile, t)
            )
            response, usage = backends.call(profile, text)
        except Exception as e:
            logger.warning(f"Camada {layer_index}: {model_id} falhou ({type(e).__name__}: {e})")
            return None, None, UsageRecord()
        return response.text, parse_response(response.text, expected_peers), usage

    workers = max(1, min(max_in_flight or settings.MAX_IN_FLIGHT, len(selected)))
    with PerformanceLogger("pipeline.layer", layer=layer_index, models=len(selected)):
        with ThreadPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(call, selected))

    raw_responses = [raw for raw, _, _ in results]
    parsed = [p for _, p, _ in results]
    usage = [u for _, _, u in results]
    forwarded = [m for m, raw in zip(selected, raw_responses) if raw is not None]

    if not forwarded:
        raise AllModelsFailedError(f"Todos os {len(selected)} modelos da camada {layer_index} falharam")

    return LayerTranscript(
        layer_index=layer_index,
        kind=layer_kind,
        selected_models=list(selected),
        raw_responses=raw_responses,
        parsed=parsed,
        fused_scores=fused_scores,
        usage=usage,
        layer_latency=max(u.wall_latency for u in usage),
        forwarded_models=forwarded,
        cross_judge=cross_judge
    )


# ---------------------------------------------------------------------------
# Orquestrador
# ---------------------------------------------------------------------------

class Orchestrator:
    """Estado imutável compartilhado (pool, scorer, backends); cada route() é independente"""

    def __init__(
        self,
        pool: ModelPool,
        scorer: Optional[ScorerModel],
        config: RoutingConfig,
        backends: BackendSet,
        policy: Optional[SelectionPolicy] = None,
        max_in_flight: Optional[int] = None
    ):
        self.pool = pool
        self.scorer = scorer
        self.config = validate_routing(config, pool)
        self.backends = backends
        self.policy = policy or RankedSelection()
        self.max_in_flight = max_in_flight or settings.MAX_IN_FLIGHT

    def _fuse(self, s1: ScoreVector, transcripts: List[LayerTranscript], layer: int) -> Tuple[ScoreVector, Optional[str]]:
        prev = transcripts[-1]

        self_by_model: Dict[str, float] = {}
        if self.config.use_self_assessment:
            for model_id, parsed in zip(prev.selected_models, prev.parsed):
                if parsed is not None and parsed.parse_ok:
                    self_by_model[model_id] = parsed.self_score

        cross_by_model: Dict[str, float] = {}
        judge = None
        if layer > 2 and self.config.use_cross_assessment:
            judge = select_cross_judge(prev.forwarded_models, prev.fused_scores, self.pool)
            judge_parsed = prev.parsed[prev.selected_models.index(judge)]
            older = transcripts[-2]
            if judge_parsed is not None and judge_parsed.peer_scores is not None:
                # peer_scores[i] refere-se ao i-ésimo modelo repassado pela camada l-2
                cross_by_model = dict(zip(older.forwarded_models, judge_parsed.peer_scores))
            else:
                logger.warning(f"Camada {layer}: juiz {judge} sem peer_scores utilizáveis")

        state = AssessmentState(
            s1=s1,
            self_by_model=self_by_model,
            cross_by_model=cross_by_model,
            layer=layer,
            index_of=self.pool.index_of(),
            normalization=self.config.normalization
        )
        return fuse(state), judge

    def _initial_scores(self, query: str, initial_scores: Optional[ScoreVector]) -> ScoreVector:
        if initial_scores is not None:
            if len(initial_scores) != self.pool.N:
                raise LengthMismatchError(f"{len(initial_scores)} scores iniciais para N={self.pool.N}")
            return initial_scores
        if self.scorer is None:
            raise EngineError("Nenhum scorer carregado")
        return score(self.scorer, query, self.pool)

    def _aggregate(
        self,
        query: str,
        scores: ScoreVector,
        last: LayerTranscript,
        policy: SelectionPolicy
    ) -> Tuple[str, AggregationRecord]:
        aggregator = policy.aggregator(scores, self.pool)
        profile = self.pool.get(aggregator)

        try:
            text, _ = build_guarded_prompt(
                LayerKind.FINAL,
                query,
                last.forwarded_answers,
                profile.context_limit,
                counter=lambda t: self.backends.count_tokens(profile, t)
            )
            response, usage = self.backends.call(profile, text)
        except Exception as e:
            # sem nova chamada: usa a resposta do melhor proponente da última camada
            logger.warning(f"Agregador {aggregator} falhou ({e}); usando melhor resposta da última camada")
            index_of = self.pool.index_of()
            best = min(last.forwarded_models, key=lambda m: (-scores[index_of[m]], index_of[m]))
            answer = last.parsed[last.selected_models.index(best)].answer.strip()
            return answer, AggregationRecord(model_id=aggregator, raw_response=None, usage=UsageRecord(), fallback=True)

        parsed = parse_response(response.text)
        answer = parsed.answer.strip() if parsed.parse_ok else response.text.strip()
        return answer, AggregationRecord(model_id=aggregator, raw_response=response.text, usage=usage)

    def route(
        self,
        query: str,
        initial_scores: Optional[ScoreVector] = None,
        policy: Optional[SelectionPolicy] = None
    ) -> RunResult:
        """
        Executa as camadas até o limiar ou o teto de camadas e agrega

        Se o limiar é superado na mesma camada em que o teto é atingido,
        o motivo de parada registrado é THRESHOLD.
        """
        if not query or not query.strip():
            raise EmptyQueryError("Consulta vazia")

        policy = policy or self.policy
        config = self.config
        k = config.models_per_layer

        s1 = self._initial_scores(query, initial_scores)
        selected = policy.select(s1, self.pool, k)
        transcripts = [
            run_layer(1, LayerKind.FIRST, query, [], selected, self.pool, self.backends, s1, self.max_in_flight)
        ]

        while True:
            layer = len(transcripts) + 1
            fused, judge = self._fuse(s1, transcripts, layer)

            if should_stop(fused, config.stop_threshold, len(transcripts), config.max_layers):
                stop_reason = (
                    StopReason.THRESHOLD if max(fused.values) > config.stop_threshold
                    else StopReason.MAX_LAYERS
                )
                break

            selected = policy.select(fused, self.pool, k)
            transcripts.append(run_layer(
                layer,
                LayerKind.INTERMEDIATE,
                query,
                transcripts[-1].forwarded_answers,
                selected,
                self.pool,
                self.backends,
                fused,
                self.max_in_flight,
                cross_judge=judge
            ))

        final_answer, aggregation = self._aggregate(query, fused, transcripts[-1], policy)

        member_usage = [u for t in transcripts for u in t.usage] + [aggregation.usage]
        summed = accumulate_usage(member_usage)
        total_latency = sum(t.layer_latency for t in transcripts) + aggregation.usage.wall_latency
        total_usage = summed.model_copy(update={"wall_latency": total_latency})

        model_calls = sum(len(t.selected_models) for t in transcripts) + 1
        logger.info(
            f"Consulta roteada: {len(transcripts)} camada(s), {model_calls} chamadas, "
            f"custo {total_usage.cost:.6f}, latência {total_latency:.2f}s, parada {stop_reason.value}"
        )

        return RunResult(
            query=query,
            final_answer=final_answer,
            transcripts=transcripts,
            aggregation=aggregation,
            total_usage=total_usage,
            stop_reason=stop_reason,
            model_calls=model_calls
        )


def route(
    query: str,
    pool: ModelPool,
    scorer: Optional[ScorerModel],
    config: RoutingConfig,
    backends: BackendSet,
    **kwargs
) -> RunResult:
    return Orchestrator(pool, scorer, config, backends).route(query, **kwargs)


def write_transcript(result: RunResult, path: Union[str, Path]) -> Path:
    """Um registro por camada, seguido do registro da agregação"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as f:
        for transcript in result.transcripts:
            record = {"record": "layer", "query": result.query, **transcript.model_dump(mode="json")}
            f.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
        record = {
            "record": "aggregation",
            "query": result.query,
            "final_answer": result.final_answer,
            "stop_reason": result.stop_reason.value,
            "total_usage": result.total_usage.model_dump(mode="json"),
            **result.aggregation.model_dump(mode="json"),
        }
        f.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
    return path
