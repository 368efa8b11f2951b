import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from app.config import load_engine_config, settings
from app.models.schemas import EngineConfig, ModelPool, RoutingConfig
from app.services.backends.registry import BackendSet, build_backends
from app.services.checkpoint import load_scorer
from app.services.pipeline import Orchestrator, SelectionPolicy
from app.services.scorer import ScorerModel, initialize_scorer
from app.utils.exceptions import ConfigError
from app.utils.validators import validate_pool, validate_routing

logger = logging.getLogger(__name__)


@dataclass
class Engine:
    """Pool validado, scorer, backends e configuração de roteamento"""
    config: EngineConfig
    pool: ModelPool
    backends: BackendSet
    scorer: Optional[ScorerModel] = None

    @classmethod
    def from_config(
        cls,
        config: EngineConfig,
        scorer_path: Optional[Union[str, Path]] = None,
        backends: Optional[BackendSet] = None,
        require_scorer: bool = False,
        allow_untrained: bool = False
    ) -> "Engine":
        """
        Monta o motor a partir da configuração validada

        Um scorer_path explícito inexistente é sempre erro. Com require_scorer,
        a falta de checkpoint também é erro, a menos que allow_untrained peça
        um scorer com pesos aleatórios.
        """
        pool = validate_pool(config.pool())
        validate_routing(config.routing, pool)

        if scorer_path and not Path(scorer_path).is_file():
            raise ConfigError(f"Checkpoint do scorer não encontrado: {scorer_path}")

        scorer = None
        checkpoint = scorer_path or config.scorer.checkpoint or settings.SCORER_PATH
        if checkpoint and Path(checkpoint).is_file():
            scorer = load_scorer(checkpoint, pool)
        elif require_scorer and allow_untrained:
            logger.warning("Checkpoint do scorer ausente; usando scorer não treinado")
            scorer = initialize_scorer(pool, config.scorer.encoder, config.training)
        elif require_scorer:
            raise ConfigError(
                f"Checkpoint do scorer não encontrado: {checkpoint or '(não configurado)'}. "
                "Treine com 'train' ou use --allow-untrained"
            )
        elif checkpoint:
            logger.warning(f"Checkpoint do scorer não encontrado: {checkpoint}")

        return cls(
            config=config,
            pool=pool,
            backends=backends or build_backends(config),
            scorer=scorer
        )

    @classmethod
    def from_path(cls, path: Union[str, Path], **kwargs) -> "Engine":
        return cls.from_config(load_engine_config(path), **kwargs)

    def orchestrator(
        self,
        routing: Optional[RoutingConfig] = None,
        policy: Optional[SelectionPolicy] = None
    ) -> Orchestrator:
        return Orchestrator(
            self.pool,
            self.scorer,
            routing or self.config.routing,
            self.backends,
            policy=policy,
            max_in_flight=settings.MAX_IN_FLIGHT
        )
