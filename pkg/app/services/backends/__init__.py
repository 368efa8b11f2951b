from app.services.backends.base import ChatBackend, count_tokens
from app.services.backends.chat_client import ChatCompletionsClient
from app.services.backends.registry import BackendSet, build_backends
from app.services.backends.simulator import SimulatedBackend, gold_answer_for, task_marker

__all__ = [
    "BackendSet",
    "ChatBackend",
    "ChatCompletionsClient",
    "SimulatedBackend",
    "build_backends",
    "count_tokens",
    "gold_answer_for",
    "task_marker",
]
