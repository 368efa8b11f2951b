"""
Mistura de juízes: extrai resposta e auto/peer scores das saídas dos modelos
e funde o score prévio do scorer com as avaliações posteriores.
"""

import json
import logging
import math
from typing import Dict, List, Optional, Sequence

import numpy as np

from app.models.schemas import AssessmentState, ModelPool, NormalizationMode, ParsedResponse, ScoreVector
from app.utils.exceptions import EmptyLayerError, LayerTooEarlyError

logger = logging.getLogger(__name__)


def _first_balanced_object(text: str) -> Optional[str]:
    """Primeiro trecho {...} balanceado, ignorando chaves dentro de strings"""
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
            elif ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    return text[start:i + 1]
        start = text.find("{", start + 1)
    return None


def _as_score(value, name: str, warnings: List[str]) -> Optional[float]:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        try:
            value = float(value)
        except (TypeError, ValueError):
            warnings.append(f"{name} não numérico: {value!r}")
            return None
    value = float(value)
    if not math.isfinite(value):
        warnings.append(f"{name} não finito")
        return None
    if value < 0.0 or value > 1.0:
        clamped = min(1.0, max(0.0, value))
        warnings.append(f"{name}={value} fora de [0, 1], ajustado para {clamped}")
        return clamped
    return value


def _failed(raw: str, reason: str) -> ParsedResponse:
    return ParsedResponse(answer=raw, parse_ok=False, raw=raw, warnings=[reason])


def parse_response(raw: Optional[str], expected_peers: int = 0) -> ParsedResponse:
    """
    Interpreta a saída estruturada de um modelo

    Nunca levanta exceção: em caso de falha devolve parse_ok=False com a
    resposta igual ao texto bruto.
    """
    raw = raw or ""
    candidate = _first_balanced_object(raw)
    if candidate is None:
        return _failed(raw, "nenhum objeto JSON encontrado")

    try:
        data = json.loads(candidate)
    except json.JSONDecodeError as e:
        return _failed(raw, f"JSON inválido: {e}")
    if not isinstance(data, dict):
        return _failed(raw, "JSON não é um objeto")

    answer = data.get("answer")
    if isinstance(answer, (int, float)) and not isinstance(answer, bool):
        answer = str(answer)
    if not isinstance(answer, str) or not answer.strip():
        return _failed(raw, "campo answer ausente ou vazio")

    warnings: List[str] = []
    if "self_score" not in data:
        return _failed(raw, "campo self_score ausente")
    self_score = _as_score(data["self_score"], "self_score", warnings)
    if self_score is None:
        return _failed(raw, warnings[-1])

    peer_scores = None
    if "peer_scores" in data:
        values = data["peer_scores"]
        if not isinstance(values, list):
            warnings.append("peer_scores não é uma lista")
        elif len(values) != expected_peers:
            warnings.append(f"peer_scores com {len(values)} itens, esperado {expected_peers}")
        else:
            parsed = [_as_score(v, f"peer_scores[{i}]", warnings) for i, v in enumerate(values)]
            if all(v is not None for v in parsed):
                peer_scores = parsed

    for warning in warnings:
        logger.warning(f"Resposta do modelo: {warning}")

    return ParsedResponse(
        answer=answer,
        self_score=self_score,
        peer_scores=peer_scores,
        parse_ok=True,
        raw=raw,
        warnings=warnings
    )


def select_cross_judge(
    prev_layer_models: Sequence[str],
    s_prev: ScoreVector,
    pool: ModelPool
) -> str:
    """Modelo ativo da camada anterior com maior score; empate pelo menor key_index"""
    if not prev_layer_models:
        raise EmptyLayerError("Camada anterior sem modelos ativos")

    index_of = pool.index_of()
    return min(prev_layer_models, key=lambda m: (-s_prev[index_of[m]], index_of[m]))


def _normalize(values: Dict[int, float], mode: NormalizationMode) -> Dict[int, float]:
    if mode == NormalizationMode.CLAMP or not values:
        return {j: min(1.0, max(0.0, v)) for j, v in values.items()}

    low = min(values.values())
    high = max(values.values())
    if high - low <= 0.0:
        return dict(values)
    return {j: (v - low) / (high - low) for j, v in values.items()}


def fuse(state: AssessmentState) -> ScoreVector:
    """
    Funde s1 com self (camada l-1) e cross (camada l-2, apenas para l > 2)

    Cada modelo recebe a média das fontes disponíveis para ele; sem sinal
    posterior o score fica igual a s1.
    """
    if state.layer < 2:
        raise LayerTooEarlyError(f"Fusão exige camada >= 2 (recebido {state.layer})")

    n = len(state.s1)
    sources = [_normalize(dict(enumerate(state.s1.values)), state.normalization)]

    self_scores = {state.index_of[m]: v for m, v in state.self_by_model.items()}
    if self_scores:
        sources.append(_normalize(self_scores, state.normalization))

    if state.layer > 2 and state.cross_by_model:
        cross = {state.index_of[m]: v for m, v in state.cross_by_model.items()}
        sources.append(_normalize(cross, state.normalization))

    fused = np.empty(n)
    for j in range(n):
        available = [source[j] for source in sources if j in source]
        if min(available) == max(available):
            fused[j] = available[0]
        else:
            fused[j] = math.fsum(available) / len(available)

    return ScoreVector.from_array(np.clip(fused, 0.0, 1.0))
