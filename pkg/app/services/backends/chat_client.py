import logging
import os
import threading
import time
from typing import Optional, Tuple

import requests
from requests.adapters import HTTPAdapter

from app.services.backends.base import ChatBackend, count_tokens
from app.config import settings
from app.models.schemas import BackendConfig, ChatRequest, ChatResponse
from app.utils.exceptions import (
    BackendHttpError,
    BackendTimeoutError,
    BackendUnavailableError,
    MalformedProviderResponseError,
)

logger = logging.getLogger(__name__)


class ChatCompletionsClient(ChatBackend):
    """Cliente HTTP para provedores compatíveis com /chat/completions"""

    RETRYABLE_STATUS = {408, 425, 429, 500, 502, 503, 504}

    def __init__(
        self,
        base_url: str,
        api_key: Optional[str] = None,
        max_retries: int = 2,
        backoff_seconds: float = 1.0,
        timeout: Tuple[float, float] = (10.0, 120.0),
        max_connections: int = 8,
        session: Optional[requests.Session] = None,
        name: str = "chat"
    ):
        self.name = name
        self.base_url = base_url.rstrip("/")
        self.max_retries = max_retries
        self.backoff_seconds = backoff_seconds
        self.timeout = timeout  # (connect timeout, read timeout)

        self.session = session or requests.Session()
        adapter = HTTPAdapter(pool_connections=max_connections, pool_maxsize=max_connections)
        self.session.mount("https://", adapter)
        self.session.mount("http://", adapter)
        self.session.headers.update({
            "User-Agent": "MoaRouter/1.0",
            "Content-Type": "application/json",
        })
        if api_key:
            self.session.headers["Authorization"] = f"Bearer {api_key}"

        self._slots = threading.BoundedSemaphore(max_connections)
        self._sleep = time.sleep

    @classmethod
    def from_config(cls, name: str, config: BackendConfig) -> "ChatCompletionsClient":
        key_env = config.api_key_env or settings.LLM_API_KEY_ENV
        api_key = os.getenv(key_env)
        if not api_key:
            logger.warning(f"Backend '{name}': variável {key_env} não definida; chamadas sem credencial")

        return cls(
            base_url=config.base_url or settings.LLM_BASE_URL,
            api_key=api_key,
            max_retries=settings.HTTP_MAX_RETRIES if config.max_retries is None else config.max_retries,
            backoff_seconds=settings.HTTP_BACKOFF_SECONDS,
            timeout=(settings.HTTP_TIMEOUT_CONNECT, settings.HTTP_TIMEOUT_READ),
            max_connections=config.max_connections,
            name=name
        )

    @staticmethod
    def _payload(request: ChatRequest) -> dict:
        messages = []
        if request.system_prompt:
            messages.append({"role": "system", "content": request.system_prompt})
        messages.append({"role": "user", "content": request.user_content})
        return {
            "model": request.model_id,
            "messages": messages,
            "max_tokens": request.max_output_tokens,
            "temperature": request.temperature,
        }

    def complete(self, request: ChatRequest) -> ChatResponse:
        url = f"{self.base_url}/chat/completions"
        payload = self._payload(request)
        start = time.perf_counter()
        attempt = 0

        while True:
            try:
                with self._slots:
                    response = self.session.post(url, json=payload, timeout=self.timeout)
            except requests.exceptions.Timeout as e:
                error = BackendTimeoutError(f"{request.model_id}: tempo esgotado ({e})")
            except requests.exceptions.ConnectionError as e:
                error = BackendUnavailableError(f"{request.model_id}: falha de conexão ({e})")
            else:
                if response.status_code == 200:
                    return self._parse(response, request, time.perf_counter() - start)

                error = BackendHttpError(response.status_code, (response.text or "")[:200])
                if response.status_code not in self.RETRYABLE_STATUS:
                    logger.error(f"{request.model_id}: {error}")
                    raise error

            if attempt >= self.max_retries:
                logger.error(f"{request.model_id}: desistindo após {attempt + 1} tentativas: {error}")
                raise error

            delay = self.backoff_seconds * (2 ** attempt)
            logger.warning(
                f"{request.model_id}: tentativa {attempt + 1}/{self.max_retries + 1} falhou "
                f"({error}); nova tentativa em {delay:.1f}s"
            )
            self._sleep(delay)
            attempt += 1

    def _parse(self, response, request: ChatRequest, elapsed: float) -> ChatResponse:
        try:
            body = response.json()
        except ValueError as e:
            raise MalformedProviderResponseError(f"{request.model_id}: corpo não é JSON") from e

        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as e:
            raise MalformedProviderResponseError(
                f"{request.model_id}: resposta sem choices[0].message.content"
            ) from e
        if not isinstance(text, str):
            raise MalformedProviderResponseError(f"{request.model_id}: conteúdo não textual")

        usage = body.get("usage") or {}
        input_tokens = usage.get("prompt_tokens")
        output_tokens = usage.get("completion_tokens")
        estimated = False
        if not isinstance(input_tokens, int) or not isinstance(output_tokens, int):
            logger.warning(f"{request.model_id}: provedor sem contagem de tokens; usando estimativa")
            input_tokens = count_tokens(request.system_prompt) + count_tokens(request.user_content)
            output_tokens = count_tokens(text)
            estimated = True

        return ChatResponse(
            text=text,
            input_tokens=input_tokens,
            output_tokens=output_tokens,
            wall_latency=elapsed,
            estimated_tokens=estimated
        )
