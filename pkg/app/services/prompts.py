"""
Prompts das camadas do pipeline e da geração de dados de treino.

Os textos são fixos: o simulador e o parser dos juízes dependem das chaves
"answer", "self_score" e "peer_scores" exatamente como aparecem aqui.
"""

import logging
from typing import Callable, List, Optional, Sequence, Tuple

from app.models.schemas import LayerKind
from app.services.backends.base import count_tokens
from app.utils.exceptions import MissingAnswersError

logger = logging.getLogger(__name__)

FIRST_LAYER_PROMPT = (
    "You are participating in a multi-agent reasoning task.\n"
    "\n"
    "**Your objectives**\n"
    "1. Produce the best possible answer to the user's query.\n"
    "2. Critically evaluate your own answer and give it a quality score **between 0 and 1**  \n"
    "    (0 = completely wrong, 1 = perfect).\n"
    "\n"
    "**Output format** - return **ONLY** a valid JSON object:\n"
    "```json\n"
    "{\n"
    '    "answer": "<your answer>",\n'
    '    "self_score": <float between 0 and 1>\n'
    "}\n"
    "'''\n"
    "\n"
    "Do **not** add any keys, comments or extra text."
)

INTERMEDIATE_LAYER_PROMPT = (
    "You are participating in a multi-agent reasoning task.Here are several answers from other LLMs:\n"
    "\n"
    "{answer_block}\n"
    "\n"
    "**Your objectives**\n"
    "1. Taking every answer in the previous round into account and produce an improved answer to the user's query.\n"
    "2. Critically evaluate your own answer and give it a quality score **between 0 and 1**  \n"
    "    (0 = completely wrong, 1 = perfect).\n"
    "3. Critically evaluate **each** ANSWER_i above with a value in [0, 1] representing its quality.\n"
    "    (0 = completely wrong, 1 = perfect)\n"
    "\n"
    "**Output format** - return **ONLY** a valid JSON object:\n"
    "```json\n"
    "{\n"
    '    "answer": "<your improved answer>",\n'
    '    "self_score": <float>,\n'
    '    "peer_scores": [<float_score_for_ANSWER_0>, <float_score_for_ANSWER_1>, ...]\n'
    "}\n"
    "'''\n"
    "Do not include any other text."
)

FINAL_LAYER_PROMPT = (
    "You have been provided with a set of responses from various open-source "
    "models to the latest user query. Your task is to synthesise these "
    "responses into a single, high-quality answer. Critically evaluate the "
    "information given, correct any mistakes, and produce a coherent, "
    "well-structured response that meets the highest standards of accuracy.\n"
    "\n"
    "Responses from models:\n"
    "{responses}"
)

AGGREGATED_DATA_PROMPT = (
    "You have been provided with a set of responses from various open-source models to the "
    "latest user query. Your task is to synthesize these responses into a single, high-quality "
    "response. It is crucial to critically evaluate the information provided in these responses, "
    "recognizing that some of it may be biased or incorrect. Your response should not simply "
    "replicate the given answers but should offer a refined, accurate, and comprehensive reply "
    "to the instruction. Ensure your response is well-structured, coherent, and adheres to the "
    "highest standards of accuracy and reliability.\n"
    "\n"
    "This is the original question answered by these models:\n"
    "{query}\n"
    "\n"
    "Responses from models:\n"
    "{responses}"
)

_MULTIPLE_CHOICE = (
    "Answer the following multiple choice question. The last line of your response should be "
    "of the following format: 'ANSWER: $LETTER' (without quotes) where LETTER is one of ABCD. "
    "Think step by step before answering.\n"
    "{query}"
)
_BOXED = "{query}\nPlease reason step by step, and put your final answer within \\boxed{}."
_PYTHON = "You are an expert Python programmer, and here is your task:\n{query}"

# Convenção de prompt direto por dataset (task_tag)
DIRECT_PROMPTS = {
    "math": _MULTIPLE_CHOICE,
    "gsm8k": _BOXED,
    "arc-c": _BOXED,
    "mbpp": _PYTHON,
    "race-high": _MULTIPLE_CHOICE,
    "mmlu-biomed": _MULTIPLE_CHOICE,
}

TRUNCATION_MARKER = "[...]"


def answer_block(answers: Sequence[str]) -> str:
    return "\n\n".join(f"ANSWER_{i}: {answer}" for i, answer in enumerate(answers))


def enumerate_responses(answers: Sequence[str]) -> str:
    return "\n".join(f"{i}.{answer}" for i, answer in enumerate(answers, start=1))


def _render(layer_kind: LayerKind, answers: Sequence[str]) -> str:
    if layer_kind == LayerKind.FIRST:
        return FIRST_LAYER_PROMPT
    if layer_kind == LayerKind.INTERMEDIATE:
        return INTERMEDIATE_LAYER_PROMPT.replace("{answer_block}", answer_block(answers))
    return FINAL_LAYER_PROMPT.replace("{responses}", enumerate_responses(answers))


def build_prompt(layer_kind: LayerKind, user_query: str, prev_answers: Sequence[str] = ()) -> str:
    """
    Monta a entrada de uma camada: template preenchido + consulta original

    A consulta do usuário acompanha toda camada, concatenada após o template.
    """
    layer_kind = LayerKind(layer_kind)
    if layer_kind == LayerKind.FIRST:
        if prev_answers:
            raise MissingAnswersError("Primeira camada não recebe respostas anteriores")
    elif not prev_answers:
        raise MissingAnswersError(f"Camada {layer_kind.value} sem respostas anteriores")

    return f"{_render(layer_kind, prev_answers)}\n\n{user_query}"


def build_guarded_prompt(
    layer_kind: LayerKind,
    user_query: str,
    prev_answers: Sequence[str],
    context_limit: int,
    counter: Callable[[str], int] = count_tokens
) -> Tuple[str, int]:
    """
    build_prompt respeitando o limite de contexto do modelo

    Respostas mais antigas na enumeração são trocadas por TRUNCATION_MARKER
    até o texto caber. Retorna (texto, quantidade de respostas truncadas).
    """
    answers: List[str] = list(prev_answers)
    text = build_prompt(layer_kind, user_query, answers)
    truncated = 0

    while counter(text) > context_limit and truncated < len(answers):
        answers[truncated] = TRUNCATION_MARKER
        truncated += 1
        text = build_prompt(layer_kind, user_query, answers)

    if truncated:
        logger.warning(
            f"Entrada excedia o contexto ({context_limit} tokens): "
            f"{truncated} resposta(s) anteriores truncadas"
        )
    if counter(text) > context_limit:
        logger.warning(f"Entrada ainda excede o contexto ({counter(text)} > {context_limit} tokens)")

    return text, truncated


def build_direct_prompt(user_query: str, task_tag: Optional[str] = None) -> str:
    """Prompt de resposta direta segundo a convenção do dataset; tag desconhecida = consulta pura"""
    template = DIRECT_PROMPTS.get((task_tag or "").lower())
    if template is None:
        return user_query
    return template.replace("{query}", user_query)


def build_aggregated_data_prompt(user_query: str, responses: Sequence[str]) -> str:
    if not responses:
        raise MissingAnswersError("Prompt de agregação sem respostas de referência")
    return (
        AGGREGATED_DATA_PROMPT
        .replace("{query}", user_query)
        .replace("{responses}", enumerate_responses(responses))
    )
