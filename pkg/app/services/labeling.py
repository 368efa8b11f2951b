"""
Geração do dataset de treino do scorer: coleta as respostas de todos os
modelos do pool para cada consulta e converte em rótulos
s_j = λ·1(correto) + (1-λ)·recompensa.
"""

import logging
import math
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence

from app.config import settings
from app.models.schemas import (
    AnswerChecker,
    CollectionMode,
    LabeledExample,
    ModelPool,
    RawExample,
    ResponseSet,
)
from app.services.backends.registry import BackendSet
from app.services.prompts import build_aggregated_data_prompt, build_direct_prompt
from app.utils.exceptions import ConfigError, LabelLengthMismatchError, RewardOutOfRangeError
from app.utils.logger import PerformanceLogger

logger = logging.getLogger(__name__)

RewardOracle = Callable[[str, str, str], float]
ExternalChecker = Callable[[str, str], bool]

_ANSWER_LINE = re.compile(r"ANSWER:\s*(.+)")
_NUMBER = re.compile(r"-?\d+(?:,\d{3})*(?:\.\d+)?(?:[eE][-+]?\d+)?")


# ---------------------------------------------------------------------------
# Verificação de respostas
# ---------------------------------------------------------------------------

def _boxed_content(text: str) -> Optional[str]:
    start = text.rfind("\\boxed{")
    if start == -1:
        return None
    i = start + len("\\boxed{")
    depth = 1
    for j in range(i, len(text)):
        if text[j] == "{":
            depth += 1
        elif text[j] == "}":
            depth -= 1
            if depth == 0:
                return text[i:j]
    return None


def extract_final_answer(text: str) -> str:
    """Resposta final: última linha 'ANSWER: X', senão último \\boxed{...}, senão o texto"""
    matches = _ANSWER_LINE.findall(text)
    if matches:
        return matches[-1].strip()
    boxed = _boxed_content(text)
    if boxed is not None:
        return boxed.strip()
    return text.strip()


def normalize_answer(text: str) -> str:
    text = " ".join(text.strip().lower().split())
    return text.strip(" .'\"`")


def _last_number(text: str) -> Optional[float]:
    numbers = _NUMBER.findall(text)
    if not numbers:
        return None
    try:
        return float(numbers[-1].replace(",", ""))
    except ValueError:
        return None


def is_correct(
    response: Optional[str],
    gold: str,
    checker: AnswerChecker,
    external: Optional[ExternalChecker] = None
) -> bool:
    if response is None:
        return False

    if checker == AnswerChecker.EXTERNAL:
        if external is None:
            raise ConfigError("answer_checker 'external' exige um verificador configurado")
        return bool(external(response, gold))

    answer = extract_final_answer(response)

    if checker == AnswerChecker.NUMERIC_MATCH:
        predicted = _last_number(answer)
        expected = _last_number(gold)
        if predicted is None or expected is None:
            return False
        return math.isclose(predicted, expected, rel_tol=1e-6, abs_tol=1e-9)

    if checker == AnswerChecker.CONTAINS:
        return normalize_answer(gold) in normalize_answer(response)

    return normalize_answer(answer) == normalize_answer(extract_final_answer(gold))


# ---------------------------------------------------------------------------
# Recompensa
# ---------------------------------------------------------------------------

def _tokens(text: str) -> List[str]:
    return re.sub(r"[^a-z0-9]+", " ", text.lower()).split()


def builtin_reward_oracle(query: str, gold: str, response: str) -> float:
    """F1 de sobreposição de tokens entre resposta e gabarito"""
    gold_tokens = _tokens(gold)
    response_tokens = _tokens(response or "")
    if not gold_tokens and not response_tokens:
        return 1.0
    if not gold_tokens or not response_tokens:
        return 0.0

    overlap = sum((Counter(gold_tokens) & Counter(response_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(response_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


# ---------------------------------------------------------------------------
# Coleta
# ---------------------------------------------------------------------------

def _ask_all(
    backends: BackendSet,
    pool: ModelPool,
    contents: Sequence[str],
    max_in_flight: int
) -> List[Optional[str]]:
    """Envia um conteúdo por modelo (ordem de key_index); falha vira None"""
    profiles = pool.by_key_index()

    def ask(args):
        profile, content = args
        try:
            response, _ = backends.call(profile, content)
            return response.text
        except Exception as e:
            logger.warning(f"Sem resposta de {profile.model_id}: {e}")
            return None

    with ThreadPoolExecutor(max_workers=max_in_flight) as executor:
        return list(executor.map(ask, zip(profiles, contents)))


def collect_responses(
    backends: BackendSet,
    pool: ModelPool,
    raws: Sequence[RawExample],
    mode: CollectionMode = CollectionMode.DIRECT,
    max_in_flight: Optional[int] = None
) -> List[ResponseSet]:
    """
    Coleta a resposta de cada modelo do pool para cada consulta

    No modo agregado, cada modelo recebe o prompt de agregação com as
    respostas diretas de todos os modelos (ausentes são omitidas).
    """
    mode = CollectionMode(mode)
    workers = max_in_flight or settings.MAX_IN_FLIGHT
    results: List[ResponseSet] = []

    with PerformanceLogger("labeling.collect", mode=mode.value, examples=len(raws)):
        for raw in raws:
            direct = _ask_all(
                backends, pool, [build_direct_prompt(raw.query, raw.task_tag)] * pool.N, workers
            )

            if mode == CollectionMode.DIRECT:
                responses = direct
            else:
                references = [r for r in direct if r is not None]
                if references:
                    prompt = build_aggregated_data_prompt(raw.query, references)
                    responses = _ask_all(backends, pool, [prompt] * pool.N, workers)
                else:
                    logger.warning("Nenhuma resposta direta; exemplo agregado sem respostas")
                    responses = [None] * pool.N

            missing = sum(r is None for r in responses)
            if missing:
                logger.warning(f"{missing}/{pool.N} respostas ausentes para a consulta")
            results.append(ResponseSet(query=raw.query, responses=responses, mode=mode))

    return results


# ---------------------------------------------------------------------------
# Rótulos
# ---------------------------------------------------------------------------

def score_labels(
    raws: Sequence[RawExample],
    responses: Sequence[ResponseSet],
    reward_oracle: RewardOracle = builtin_reward_oracle,
    lam: float = 0.5,
    external_checker: Optional[ExternalChecker] = None
) -> List[LabeledExample]:
    if not 0.0 < lam < 1.0:
        raise ConfigError(f"lambda deve estar em (0, 1) (recebido {lam})")
    if len(raws) != len(responses):
        raise LabelLengthMismatchError(f"{len(raws)} exemplos e {len(responses)} conjuntos de respostas")

    labeled = []
    for raw, response_set in zip(raws, responses):
        labels = []
        correct_flags = []
        for response in response_set.responses:
            if response is None:
                labels.append(0.0)
                correct_flags.append(False)
                continue

            correct = is_correct(response, raw.gold_answer, raw.answer_checker, external_checker)
            reward = float(reward_oracle(raw.query, raw.gold_answer, response))
            if not math.isfinite(reward) or reward < 0.0 or reward > 1.0:
                raise RewardOutOfRangeError(f"Recompensa fora de [0, 1]: {reward}")

            labels.append(min(1.0, max(0.0, lam * float(correct) + (1.0 - lam) * reward)))
            correct_flags.append(correct)

        labeled.append(LabeledExample(
            query=raw.query,
            labels=labels,
            correct=correct_flags,
            gold_answer=raw.gold_answer,
            task_tag=raw.task_tag,
            answer_checker=raw.answer_checker,
            mode=response_set.mode
        ))

    logger.info(f"{len(labeled)} exemplos rotulados (lambda={lam})")
    return labeled
