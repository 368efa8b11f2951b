import hashlib
import math
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


def _check_unit_interval(values, what: str):
    for i, v in enumerate(values):
        if not math.isfinite(v) or v < 0.0 or v > 1.0:
            raise ValueError(f"{what}[{i}] = {v} fora de [0, 1]")
    return values


# ---------------------------------------------------------------------------
# Núcleo: pool, scores, configuração de roteamento, custo
# ---------------------------------------------------------------------------

class ModelProfile(BaseModel):
    model_config = ConfigDict(
        frozen=True,
        protected_namespaces=(),
        json_schema_extra={
            "example": {
                "model_id": "qwen3-8b",
                "backend_ref": "gateway",
                "input_price": 0.05,
                "output_price": 0.2,
                "latency_estimate": 3.5,
                "context_limit": 32768,
                "key_index": 0
            }
        }
    )

    model_id: str = Field(..., min_length=1, description="Identificador único do modelo")
    backend_ref: str = Field(..., description="Backend que atende o modelo")
    input_price: float = Field(..., description="Preço por 1e6 tokens de entrada")
    output_price: float = Field(..., description="Preço por 1e6 tokens de saída")
    latency_estimate: float = Field(..., description="Latência típica por chamada (s)")
    context_limit: int = Field(..., description="Limite de contexto em tokens")
    key_index: int = Field(..., description="Linha do embedding do modelo no scorer")


class ModelPool(BaseModel):
    """Pool ordenado de modelos; a ordem é fixada no carregamento"""
    model_config = ConfigDict(frozen=True)

    profiles: Tuple[ModelProfile, ...] = Field(..., description="Perfis na ordem canônica")

    @property
    def N(self) -> int:
        return len(self.profiles)

    @property
    def model_ids(self) -> List[str]:
        return [p.model_id for p in self.profiles]

    def by_key_index(self) -> List[ModelProfile]:
        return sorted(self.profiles, key=lambda p: p.key_index)

    def get(self, model_id: str) -> ModelProfile:
        for profile in self.profiles:
            if profile.model_id == model_id:
                return profile
        raise KeyError(model_id)

    def index_of(self) -> Dict[str, int]:
        return {p.model_id: p.key_index for p in self.profiles}

    def fingerprint(self) -> str:
        """Hash que amarra um scorer a esta associação modelo -> linha"""
        canonical = "\n".join(f"{p.key_index}\t{p.model_id}" for p in self.by_key_index())
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class ScoreVector(BaseModel):
    """Scores por modelo, indexados por key_index; fora de [0,1] é rejeitado"""
    model_config = ConfigDict(frozen=True)

    values: Tuple[float, ...] = Field(..., description="Um score em [0,1] por modelo")

    @field_validator("values")
    @classmethod
    def validate_values(cls, v):
        return _check_unit_interval(v, "score")

    @classmethod
    def from_array(cls, values) -> "ScoreVector":
        return cls(values=tuple(float(x) for x in np.asarray(values, dtype=float).ravel()))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, index: int) -> float:
        return self.values[index]


class NormalizationMode(str, Enum):
    CLAMP = "clamp"
    MINMAX = "minmax"


class RoutingConfig(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    max_layers: int = Field(..., ge=2, description="Máximo de camadas propositoras (L)")
    models_per_layer: int = Field(..., ge=1, description="Modelos ativos por camada (k)")
    stop_threshold: float = Field(..., ge=0.0, le=1.0, description="Limiar s_th de parada antecipada")
    lambda_: float = Field(0.5, gt=0.0, lt=1.0, alias="lambda", description="Peso da corretude nos rótulos")
    alpha: float = Field(0.2, ge=0.0, description="Peso da perda sample-sample")
    use_self_assessment: bool = Field(True, description="Usa auto-avaliação na fusão")
    use_cross_assessment: bool = Field(True, description="Usa avaliação cruzada na fusão")
    normalization: NormalizationMode = Field(NormalizationMode.CLAMP, description="Normalização das fontes")


class UsageRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    input_tokens: int = Field(0, ge=0)
    output_tokens: int = Field(0, ge=0)
    cost: float = Field(0.0, ge=0.0)
    wall_latency: float = Field(0.0, ge=0.0)
    estimated_tokens: bool = Field(False, description="Contagem estimada localmente")

    @classmethod
    def for_call(
        cls,
        profile: ModelProfile,
        input_tokens: int,
        output_tokens: int,
        wall_latency: float,
        estimated_tokens: bool = False
    ) -> "UsageRecord":
        cost = (
            input_tokens * profile.input_price / 1e6
            + output_tokens * profile.output_price / 1e6
        )
        return cls(
            input_tokens=input_tokens,
            output_tokens=output_tokens,
            cost=cost,
            wall_latency=wall_latency,
            estimated_tokens=estimated_tokens
        )


# ---------------------------------------------------------------------------
# Scorer
# ---------------------------------------------------------------------------

class EncoderConfig(BaseModel):
    """Encoder de n-gramas de caracteres com hashing + projeção linear treinável"""
    model_config = ConfigDict(frozen=True)

    feature_dim: int = Field(32768, ge=1, description="Tamanho do espaço de hashing (F)")
    embed_dim: int = Field(768, ge=1, description="Dimensão do embedding (d)")
    ngram_min: int = Field(3, ge=1)
    ngram_max: int = Field(5, ge=1)
    hash_seed: int = Field(0, ge=0)
    init_scale: Optional[float] = Field(None, gt=0.0, description="Desvio da inicialização (padrão 1/sqrt(d))")

    @model_validator(mode="after")
    def check_dims(self):
        if self.feature_dim < self.embed_dim:
            raise ValueError("feature_dim deve ser >= embed_dim")
        if self.ngram_min > self.ngram_max:
            raise ValueError("ngram_min deve ser <= ngram_max")
        return self

    @property
    def ngram_range(self) -> Tuple[int, int]:
        return (self.ngram_min, self.ngram_max)


class TrainingHyper(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(0.2, ge=0.0, description="Peso da perda sample-sample")
    k_plus: int = Field(3, ge=0, description="Tamanho de I+")
    k_minus: int = Field(3, ge=0, description="Tamanho de I-")
    num_clusters: int = Field(6, ge=1, description="Clusters Q do k-means")
    out_group_size: Optional[int] = Field(None, ge=1, description="H (padrão min(8, batch-1))")
    learning_rate: float = Field(5e-5, gt=0.0)
    weight_decay: float = Field(0.01, ge=0.0)
    batch_size: int = Field(64, ge=1)
    epochs: int = Field(10, ge=1)
    rng_seed: int = Field(0)
    use_sample_sample: bool = Field(True, description="Desliga o termo sample-sample por completo")
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-8, gt=0.0)

    @property
    def effective_out_group_size(self) -> int:
        if self.out_group_size is not None:
            return self.out_group_size
        return max(1, min(8, self.batch_size - 1))


# ---------------------------------------------------------------------------
# Rotulagem
# ---------------------------------------------------------------------------

class AnswerChecker(str, Enum):
    EXACT_MATCH = "exact_match"
    NUMERIC_MATCH = "numeric_match"
    CONTAINS = "contains"
    EXTERNAL = "external"


class CollectionMode(str, Enum):
    DIRECT = "direct"
    AGGREGATED = "aggregated"


class RawExample(BaseModel):
    query: str = Field(..., description="Consulta x")
    gold_answer: str = Field(..., description="Resposta de referência")
    task_tag: str = Field("general", description="Dataset/categoria")
    answer_checker: AnswerChecker = Field(AnswerChecker.EXACT_MATCH)

    @field_validator("query", "gold_answer")
    @classmethod
    def not_blank(cls, v):
        if not v or not v.strip():
            raise ValueError("campo não pode ser vazio")
        return v


class ResponseSet(BaseModel):
    query: str
    responses: List[Optional[str]] = Field(..., description="Uma resposta por modelo (None = ausente)")
    mode: CollectionMode = CollectionMode.DIRECT


class LabeledExample(BaseModel):
    query: str = Field(..., min_length=1)
    labels: List[float] = Field(..., description="Score s_j por modelo, ordem de key_index")
    correct: Optional[List[bool]] = Field(None, description="Corretude por modelo")
    gold_answer: Optional[str] = None
    task_tag: Optional[str] = None
    answer_checker: Optional[AnswerChecker] = None
    mode: Optional[CollectionMode] = None

    @field_validator("labels")
    @classmethod
    def validate_labels(cls, v):
        return _check_unit_interval(v, "label")

    @model_validator(mode="after")
    def check_correct_length(self):
        if self.correct is not None and len(self.correct) != len(self.labels):
            raise ValueError("correct e labels devem ter o mesmo tamanho")
        return self

    def as_scores(self) -> ScoreVector:
        return ScoreVector(values=tuple(self.labels))


# ---------------------------------------------------------------------------
# Juízes
# ---------------------------------------------------------------------------

class ParsedResponse(BaseModel):
    model_config = ConfigDict(frozen=True)

    answer: str
    self_score: Optional[float] = None
    peer_scores: Optional[List[float]] = None
    parse_ok: bool = False
    raw: str = ""
    warnings: List[str] = Field(default_factory=list)


class AssessmentState(BaseModel):
    model_config = ConfigDict(frozen=True)

    s1: ScoreVector
    self_by_model: Dict[str, float] = Field(default_factory=dict)
    cross_by_model: Dict[str, float] = Field(default_factory=dict)
    layer: int
    index_of: Dict[str, int] = Field(..., description="model_id -> key_index")
    normalization: NormalizationMode = NormalizationMode.CLAMP


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------

class ChatRequest(BaseModel):
    model_config = ConfigDict(frozen=True, protected_namespaces=())

    model_id: str
    system_prompt: str = ""
    user_content: str = Field(..., min_length=1)
    max_output_tokens: int = Field(1024, ge=1)
    temperature: float = Field(0.0, ge=0.0)


class ChatResponse(BaseModel):
    model_config = ConfigDict(frozen=True)

    text: str
    input_tokens: int = Field(..., ge=0)
    output_tokens: int = Field(..., ge=0)
    wall_latency: float = Field(..., ge=0.0)
    estimated_tokens: bool = False


class SimModelSpec(BaseModel):
    model_config = ConfigDict(frozen=True, protected_namespaces=())

    model_id: str
    competence: Dict[str, float] = Field(default_factory=dict, description="task_tag -> P(correto)")
    default_competence: float = Field(0.0, ge=0.0, le=1.0, description="Para tags ausentes")
    self_calibration_noise: float = Field(0.0, ge=0.0)
    peer_calibration_noise: float = Field(0.0, ge=0.0)
    sim_latency: float = Field(1.0, gt=0.0)
    obeys_format_prob: float = Field(1.0, ge=0.0, le=1.0)

    @field_validator("competence")
    @classmethod
    def validate_competence(cls, v):
        for tag, p in v.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"competência de '{tag}' fora de [0, 1]: {p}")
        return v


class BackendKind(str, Enum):
    CHAT = "chat"
    SIMULATOR = "simulator"


class BackendConfig(BaseModel):
    kind: BackendKind
    base_url: Optional[str] = None
    api_key_env: Optional[str] = Field(None, description="Variável de ambiente com a credencial")
    max_connections: int = Field(8, ge=1)
    max_retries: Optional[int] = Field(None, ge=0)
    seed: int = 0
    models: List[SimModelSpec] = Field(default_factory=list)


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

class LayerKind(str, Enum):
    FIRST = "first"
    INTERMEDIATE = "intermediate"
    FINAL = "final"


class StopReason(str, Enum):
    THRESHOLD = "threshold"
    MAX_LAYERS = "max_layers"


class LayerTranscript(BaseModel):
    layer_index: int = Field(..., ge=1)
    kind: LayerKind
    selected_models: List[str]
    raw_responses: List[Optional[str]]
    parsed: List[Optional[ParsedResponse]]
    fused_scores: ScoreVector = Field(..., description="s_l usado para selecionar esta camada")
    usage: List[UsageRecord]
    layer_latency: float = Field(..., ge=0.0)
    forwarded_models: List[str] = Field(default_factory=list, description="Respostas repassadas adiante")
    cross_judge: Optional[str] = None

    @model_validator(mode="after")
    def check_lengths(self):
        n = len(self.selected_models)
        if not (len(self.raw_responses) == len(self.parsed) == len(self.usage) == n):
            raise ValueError("listas da camada com tamanhos diferentes")
        return self

    @property
    def forwarded_answers(self) -> List[str]:
        answers = []
        for model_id, parsed in zip(self.selected_models, self.parsed):
            if parsed is not None and model_id in self.forwarded_models:
                answers.append(parsed.answer)
        return answers


class AggregationRecord(BaseModel):
    model_id: str
    raw_response: Optional[str]
    usage: UsageRecord
    fallback: bool = Field(False, description="Agregador falhou; resposta de melhor proponente")


class RunResult(BaseModel):
    query: str
    final_answer: str
    transcripts: List[LayerTranscript]
    aggregation: AggregationRecord
    total_usage: UsageRecord
    stop_reason: StopReason
    model_calls: int = Field(..., ge=2)


# ---------------------------------------------------------------------------
# Configuração do motor (arquivo YAML)
# ---------------------------------------------------------------------------

class ScorerSettings(BaseModel):
    checkpoint: Optional[str] = Field(None, description="Caminho do checkpoint binário")
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)


class EngineConfig(BaseModel):
    routing: RoutingConfig
    models: List[ModelProfile] = Field(..., min_length=1)
    backends: Dict[str, BackendConfig]
    scorer: ScorerSettings = Field(default_factory=ScorerSettings)
    training: TrainingHyper = Field(default_factory=TrainingHyper)

    def pool(self) -> ModelPool:
        return ModelPool(profiles=tuple(self.models))


# ---------------------------------------------------------------------------
# API
# ---------------------------------------------------------------------------

class QueryRequest(BaseModel):
    query: str = Field(..., min_length=1, description="Consulta do usuário")


class RouteRequest(QueryRequest):
    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "query": "Qual é a derivada de x^3?",
                "models_per_layer": 3,
                "stop_threshold": 0.9
            }
        }
    )

    max_layers: Optional[int] = Field(None, ge=2)
    models_per_layer: Optional[int] = Field(None, ge=1)
    stop_threshold: Optional[float] = Field(None, ge=0.0, le=1.0)


class ScoreResponse(BaseModel):
    scores: Dict[str, float] = Field(..., description="s_1 por model_id")
    ranking: List[str] = Field(..., description="Modelos na ordem de preferência")


class HealthResponse(BaseModel):
    status: str
    service: str
    environment: str
    timestamp: str
    scorer_loaded: bool
