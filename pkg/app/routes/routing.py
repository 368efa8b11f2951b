from typing import Optional
import logging

from fastapi import APIRouter, HTTPException
from pydantic import ValidationError

from app.config import settings
from app.models.schemas import QueryRequest, RouteRequest, RunResult, ScoreResponse
from app.services.engine import Engine
from app.services.ranking import rank_models
from app.services.scorer import score
from app.utils.exceptions import EngineError, ValidationFailure
from app.utils.validators import validate_routing

router = APIRouter()
logger = logging.getLogger(__name__)

# Instância única, montada no lifespan
_engine: Optional[Engine] = None


def set_engine(engine: Optional[Engine]):
    global _engine
    _engine = engine


def get_engine() -> Engine:
    """Obter o motor carregado"""
    if _engine is None:
        raise HTTPException(
            status_code=503,
            detail="Motor de roteamento não carregado. Verifique ENGINE_CONFIG_PATH."
        )
    return _engine


def _require_scorer(engine: Engine):
    if engine.scorer is None:
        raise HTTPException(status_code=503, detail="Nenhum checkpoint de scorer carregado")


@router.get("/pool")
def get_pool():
    """Pool validado (ordem de key_index) e configuração de roteamento"""
    engine = get_engine()
    return {
        "models": [p.model_dump() for p in engine.pool.by_key_index()],
        "routing": engine.config.routing.model_dump(by_alias=True),
        "fingerprint": engine.pool.fingerprint(),
        "scorer_loaded": engine.scorer is not None,
    }


@router.post("/score", response_model=ScoreResponse)
def score_query(request: QueryRequest):
    """Scores prévios do scorer e ranking resultante"""
    engine = get_engine()
    _require_scorer(engine)

    try:
        scores = score(engine.scorer, request.query, engine.pool)
    except ValidationFailure as e:
        raise HTTPException(status_code=400, detail=str(e))

    return ScoreResponse(
        scores={p.model_id: scores[p.key_index] for p in engine.pool.by_key_index()},
        ranking=rank_models(scores, engine.pool)
    )


@router.post("/route", response_model=RunResult)
def route_query(request: RouteRequest):
    """Executa o pipeline completo para uma consulta"""
    engine = get_engine()
    _require_scorer(engine)

    overrides = {
        name: value
        for name, value in (
            ("max_layers", request.max_layers),
            ("models_per_layer", request.models_per_layer),
            ("stop_threshold", request.stop_threshold),
        )
        if value is not None
    }

    try:
        routing = engine.config.routing.model_copy(update=overrides)
        validate_routing(routing, engine.pool)
        return engine.orchestrator(routing=routing).route(request.query)
    except (ValidationFailure, ValidationError) as e:
        raise HTTPException(status_code=400, detail=str(e))
    except EngineError as e:
        logger.error(f"Erro ao rotear consulta: {e}", exc_info=settings.DEBUG)
        raise HTTPException(status_code=500, detail=f"Falha no roteamento: {e}")
