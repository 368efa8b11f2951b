import re
from abc import ABC, abstractmethod

from app.models.schemas import ChatRequest, ChatResponse

# Palavras e sinais de pontuação isolados; aproximação estável de tokens
TOKEN_PATTERN = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def count_tokens(text: str) -> int:
    if not text:
        return 0
    return len(TOKEN_PATTERN.findall(text))


class ChatBackend(ABC):
    """Backend capaz de atender uma requisição de chat para um model_id"""

    name: str = "backend"

    @abstractmethod
    def complete(self, request: ChatRequest) -> ChatResponse:
        ...

    def count_tokens(self, text: str) -> int:
        return count_tokens(text)
