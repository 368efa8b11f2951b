import logging
from typing import Dict, Tuple

from app.models.schemas import BackendKind, ChatRequest, ChatResponse, EngineConfig, ModelProfile, UsageRecord
from app.services.backends.base import ChatBackend
from app.services.backends.chat_client import ChatCompletionsClient
from app.services.backends.simulator import SimulatedBackend
from app.utils.exceptions import BackendUnavailableError

logger = logging.getLogger(__name__)


class BackendSet:
    """Backends indexados por nome (backend_ref dos perfis)"""

    def __init__(self, backends: Dict[str, ChatBackend]):
        self.backends = dict(backends)

    def for_model(self, profile: ModelProfile) -> ChatBackend:
        backend = self.backends.get(profile.backend_ref)
        if backend is None:
            raise BackendUnavailableError(
                f"Backend '{profile.backend_ref}' de {profile.model_id} não configurado"
            )
        return backend

    def count_tokens(self, profile: ModelProfile, text: str) -> int:
        return self.for_model(profile).count_tokens(text)

    def call(
        self,
        profile: ModelProfile,
        user_content: str,
        system_prompt: str = "",
        max_output_tokens: int = 1024
    ) -> Tuple[ChatResponse, UsageRecord]:
        request = ChatRequest(
            model_id=profile.model_id,
            system_prompt=system_prompt,
            user_content=user_content,
            max_output_tokens=max_output_tokens
        )
        response = self.for_model(profile).complete(request)
        usage = UsageRecord.for_call(
            profile,
            response.input_tokens,
            response.output_tokens,
            response.wall_latency,
            response.estimated_tokens
        )
        return response, usage


def build_backends(config: EngineConfig) -> BackendSet:
    backends: Dict[str, ChatBackend] = {}
    for name, backend_config in config.backends.items():
        if backend_config.kind == BackendKind.SIMULATOR:
            backends[name] = SimulatedBackend(backend_config.models, seed=backend_config.seed, name=name)
        else:
            backends[name] = ChatCompletionsClient.from_config(name, backend_config)
        logger.info(f"Backend '{name}' ({backend_config.kind.value}) configurado")

    missing = {p.backend_ref for p in config.models} - set(backends)
    if missing:
        logger.warning(f"Modelos referenciam backends inexistentes: {', '.join(sorted(missing))}")
    return BackendSet(backends)
