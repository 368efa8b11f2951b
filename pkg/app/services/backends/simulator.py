"""
Backend determinístico para testes e para o cenário simulado

Cada consulta carrega um marcador `[task:<tag>|qid:<id>]`. A resposta correta
é `A-<id>`; um modelo erra com `W-<id>-<model_id>`. A probabilidade de acerto
vem da competência do modelo na tag. O tipo de pedido (direto, primeira
camada, intermediária, agregação) é inferido do texto do prompt.
"""

import hashlib
import json
import logging
import re
from enum import Enum
from typing import Iterable, Optional, Tuple

import numpy as np

from app.services.backends.base import ChatBackend, count_tokens
from app.models.schemas import ChatRequest, ChatResponse, SimModelSpec
from app.utils.exceptions import UnknownSimModelError

logger = logging.getLogger(__name__)

TASK_MARKER = re.compile(r"\[task:(?P<tag>[^|\]\s]+)\|qid:(?P<qid>[^\]\s]+)\]")
ANSWER_LINE = re.compile(r"^ANSWER_(\d+): (.*)$", re.MULTILINE)


class RequestKind(str, Enum):
    DIRECT = "direct"
    FIRST = "first"
    INTERMEDIATE = "intermediate"
    AGGREGATE = "aggregate"


def task_marker(task_tag: str, qid: str) -> str:
    return f"[task:{task_tag}|qid:{qid}]"


def gold_answer_for(qid: str) -> str:
    return f"A-{qid}"


def wrong_answer_for(qid: str, model_id: str) -> str:
    return f"W-{qid}-{model_id}"


def parse_marker(text: str) -> Tuple[Optional[str], str]:
    match = TASK_MARKER.search(text)
    if match:
        return match.group("tag"), match.group("qid")
    # sem marcador: identificador estável derivado do texto
    return None, hashlib.sha256(text.encode("utf-8")).hexdigest()[:10]


def detect_request_kind(text: str) -> RequestKind:
    if '"peer_scores"' in text:
        return RequestKind.INTERMEDIATE
    if '"self_score"' in text:
        return RequestKind.FIRST
    if "Responses from models:" in text:
        return RequestKind.AGGREGATE
    return RequestKind.DIRECT


def _clip(value: float) -> float:
    return round(min(1.0, max(0.0, float(value))), 4)


class SimulatedBackend(ChatBackend):

    def __init__(self, specs: Iterable[SimModelSpec], seed: int = 0, name: str = "simulator"):
        self.name = name
        self.seed = seed
        self.specs = {spec.model_id: spec for spec in specs}

    def _rng(self, model_id: str, content: str) -> np.random.Generator:
        key = f"{self.seed}\x1f{model_id}\x1f{content}".encode("utf-8")
        return np.random.default_rng(int.from_bytes(hashlib.sha256(key).digest()[:8], "little"))

    def complete(self, request: ChatRequest) -> ChatResponse:
        spec = self.specs.get(request.model_id)
        if spec is None:
            raise UnknownSimModelError(f"Modelo '{request.model_id}' não registrado no simulador")

        content = request.user_content
        if request.system_prompt:
            content = f"{request.system_prompt}\n{content}"

        kind = detect_request_kind(content)
        tag, qid = parse_marker(content)
        gold = gold_answer_for(qid)
        rng = self._rng(spec.model_id, content)

        # ordem fixa de sorteios: acerto, formato, ruído próprio, ruído dos pares
        competence = spec.competence.get(tag, spec.default_competence) if tag else spec.default_competence
        correct = rng.random() < competence
        answer = gold if correct else wrong_answer_for(qid, spec.model_id)

        if kind in (RequestKind.FIRST, RequestKind.INTERMEDIATE):
            obeys = rng.random() < spec.obeys_format_prob
            self_score = _clip(float(correct) + rng.normal(0.0, spec.self_calibration_noise))
            payload = {"answer": answer, "self_score": self_score}

            if kind == RequestKind.INTERMEDIATE:
                references = [m.group(2).strip() for m in ANSWER_LINE.finditer(content)]
                payload["peer_scores"] = [
                    _clip(float(gold in ref) + rng.normal(0.0, spec.peer_calibration_noise))
                    for ref in references
                ]

            if obeys:
                text = "```json\n" + json.dumps(payload) + "\n```"
            else:
                text = f"I believe the answer is {answer}."
        else:
            text = answer

        logger.debug(f"Simulador: {spec.model_id} {kind.value} qid={qid} correto={correct}")

        return ChatResponse(
            text=text,
            input_tokens=count_tokens(content),
            output_tokens=count_tokens(text),
            wall_latency=spec.sim_latency
        )
