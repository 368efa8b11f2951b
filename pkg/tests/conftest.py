import os
import threading
from collections import Counter
from pathlib import Path

os.environ.setdefault("LOG_TO_FILE", "false")
os.environ.setdefault("ENVIRONMENT", "test")

import pytest

from app.models.schemas import (
    ChatRequest,
    EncoderConfig,
    ModelPool,
    ModelProfile,
    RoutingConfig,
    SimModelSpec,
    TrainingHyper,
)
from app.services.backends.base import ChatBackend
from app.services.backends.registry import BackendSet
from app.services.backends.simulator import SimulatedBackend, task_marker
from app.services.scorer import initialize_scorer

GOLDEN_DIR = Path(__file__).parent / "golden"


class CountingBackend(ChatBackend):
    """Repassa para outro backend contando chamadas por modelo"""

    def __init__(self, inner: ChatBackend, fail_models=()):
        self.inner = inner
        self.name = inner.name
        self.fail_models = set(fail_models)
        self.calls = Counter()
        self.requests = []
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest):
        with self._lock:
            self.calls[request.model_id] += 1
            self.requests.append(request)
        if request.model_id in self.fail_models:
            raise TimeoutError(f"{request.model_id} indisponível")
        return self.inner.complete(request)

    @property
    def total_calls(self) -> int:
        return sum(self.calls.values())


def make_profile(model_id, key_index, **overrides):
    data = dict(
        model_id=model_id,
        backend_ref="sim",
        input_price=0.1,
        output_price=0.2,
        latency_estimate=1.0,
        context_limit=8192,
        key_index=key_index,
    )
    data.update(overrides)
    return ModelProfile(**data)


def make_pool(n=3, **overrides) -> ModelPool:
    return ModelPool(profiles=tuple(make_profile(f"m{i}", i, **overrides) for i in range(n)))


def make_specs(pool: ModelPool, tag="math", competence=None, **overrides):
    competence = competence or {}
    specs = []
    for profile in pool.by_key_index():
        data = dict(
            model_id=profile.model_id,
            competence={tag: competence.get(profile.model_id, 0.5)},
            default_competence=0.0,
            self_calibration_noise=0.0,
            peer_calibration_noise=0.0,
            sim_latency=profile.latency_estimate,
            obeys_format_prob=1.0,
        )
        data.update(overrides)
        specs.append(SimModelSpec(**data))
    return specs


def marked_query(qid="q1", tag="math", text="what is the integral of x"):
    return f"{task_marker(tag, qid)} {text}"


@pytest.fixture
def pool():
    return make_pool(3)


@pytest.fixture
def pool5():
    return ModelPool(profiles=tuple(
        make_profile(f"m{i}", i, latency_estimate=1.0 + i) for i in range(5)
    ))


@pytest.fixture
def routing():
    return RoutingConfig(max_layers=3, models_per_layer=2, stop_threshold=0.8)


@pytest.fixture
def small_encoder():
    return EncoderConfig(feature_dim=256, embed_dim=8, ngram_min=2, ngram_max=3)


@pytest.fixture
def small_scorer(pool5, small_encoder):
    return initialize_scorer(pool5, small_encoder, TrainingHyper(k_plus=2, k_minus=2, rng_seed=3))


@pytest.fixture
def sim_backends(pool5):
    specs = make_specs(pool5, competence={"m0": 1.0, "m1": 1.0, "m2": 0.0, "m3": 0.0, "m4": 0.5})
    counting = CountingBackend(SimulatedBackend(specs, seed=11, name="sim"))
    return BackendSet({"sim": counting}), counting


@pytest.fixture
def golden():
    def read(name: str) -> str:
        return (GOLDEN_DIR / name).read_text(encoding="utf-8").removesuffix("\n")
    return read
