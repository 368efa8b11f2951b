"""
Cenário simulado empacotado: pool de especialistas por task_tag servido pelo
backend simulador, mais consultas de treino e de teste com marcador de tarefa.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import yaml

from app.models.schemas import (
    AnswerChecker,
    BackendConfig,
    BackendKind,
    EncoderConfig,
    EngineConfig,
    ModelProfile,
    RawExample,
    RoutingConfig,
    ScorerSettings,
    SimModelSpec,
    TrainingHyper,
)
from app.services.backends.simulator import gold_answer_for, task_marker
from app.services.datasets import write_jsonl

logger = logging.getLogger(__name__)

SIM_BACKEND = "sim"

# Vocabulário disjunto por tarefa
TAG_VOCABULARY: Dict[str, Tuple[str, ...]] = {
    "math": ("integral", "derivative", "polynomial", "matrix", "prime", "equation", "limit", "vector"),
    "code": ("function", "python", "recursion", "array", "compile", "pointer", "regex", "module"),
    "reading": ("passage", "author", "paragraph", "narrator", "theme", "article", "tone", "summary"),
    "reasoning": ("puzzle", "deduce", "premise", "syllogism", "riddle", "inference", "clue", "logic"),
    "biomed": ("protein", "enzyme", "genome", "neuron", "vaccine", "cell", "tissue", "antibody"),
}

# Latência (s) dos três especialistas de cada tarefa
TAG_LATENCIES: Dict[str, Tuple[float, ...]] = {
    "math": (4.0, 5.0, 6.0),
    "code": (0.8, 1.0, 1.2),
    "reading": (0.6, 0.8, 1.0),
    "reasoning": (0.9, 1.1, 1.3),
    "biomed": (0.7, 0.9, 1.1),
}

_INPUT_PRICES = (0.1, 0.3, 0.6)
_OUTPUT_PRICES = (0.4, 1.0, 2.0)


@dataclass
class Scenario:
    engine_config: EngineConfig
    train: List[RawExample]
    test: List[RawExample]


def build_pool(
    tags: Sequence[str],
    specialists_per_tag: int = 3,
    own_competence: float = 0.95,
    other_competence: float = 0.25
) -> Tuple[List[ModelProfile], List[SimModelSpec]]:
    profiles = []
    specs = []
    for tag in tags:
        latencies = TAG_LATENCIES.get(tag, (1.0,))
        for i in range(specialists_per_tag):
            model_id = f"{tag}-expert-{i}"
            latency = latencies[i % len(latencies)]
            profiles.append(ModelProfile(
                model_id=model_id,
                backend_ref=SIM_BACKEND,
                input_price=_INPUT_PRICES[i % len(_INPUT_PRICES)],
                output_price=_OUTPUT_PRICES[i % len(_OUTPUT_PRICES)],
                latency_estimate=latency,
                context_limit=8192,
                key_index=len(profiles)
            ))
            specs.append(SimModelSpec(
                model_id=model_id,
                competence={tag: own_competence},
                default_competence=other_competence,
                self_calibration_noise=0.1,
                peer_calibration_noise=0.1,
                sim_latency=latency,
                obeys_format_prob=0.95
            ))
    return profiles, specs


def make_queries(
    tags: Sequence[str],
    count: int,
    prefix: str,
    rng: np.random.Generator,
    words_per_query: int = 6
) -> List[RawExample]:
    examples = []
    for i in range(count):
        tag = tags[i % len(tags)]
        words = rng.choice(TAG_VOCABULARY.get(tag, (tag,)), size=words_per_query)
        qid = f"{prefix}{i:05d}"
        examples.append(RawExample(
            query=f"{task_marker(tag, qid)} {' '.join(words)}?",
            gold_answer=gold_answer_for(qid),
            task_tag=tag,
            answer_checker=AnswerChecker.EXACT_MATCH
        ))
    return examples


def build_scenario(
    n_tags: int = 5,
    specialists_per_tag: int = 3,
    n_train: int = 600,
    n_test: int = 200,
    seed: int = 0
) -> Scenario:
    tags = list(TAG_VOCABULARY)[:n_tags]
    profiles, specs = build_pool(tags, specialists_per_tag)

    config = EngineConfig(
        routing=RoutingConfig(max_layers=3, models_per_layer=3, stop_threshold=0.8),
        models=profiles,
        backends={SIM_BACKEND: BackendConfig(kind=BackendKind.SIMULATOR, seed=seed, models=specs)},
        scorer=ScorerSettings(
            checkpoint="scorer.bin",
            encoder=EncoderConfig(feature_dim=4096, embed_dim=64, hash_seed=seed)
        ),
        training=TrainingHyper(
            k_plus=specialists_per_tag,
            k_minus=min(6, len(profiles) - specialists_per_tag),
            learning_rate=5e-3,
            epochs=10,
            rng_seed=seed
        )
    )

    rng = np.random.default_rng(seed)
    train = make_queries(tags, n_train, "tr", rng)
    test = make_queries(tags, n_test, "te", rng)
    logger.info(f"Cenário: {len(profiles)} modelos, {len(train)} consultas de treino, {len(test)} de teste")
    return Scenario(engine_config=config, train=train, test=test)


def write_scenario(scenario: Scenario, out_dir: Union[str, Path]) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    config_path = out_dir / "engine.yaml"
    data = scenario.engine_config.model_dump(mode="json", by_alias=True, exclude_none=True)
    config_path.write_text(yaml.safe_dump(data, sort_keys=False, allow_unicode=True), encoding="utf-8")

    return {
        "config": config_path,
        "train": write_jsonl(scenario.train, out_dir / "train_raw.jsonl"),
        "test": write_jsonl(scenario.test, out_dir / "test_raw.jsonl"),
    }
