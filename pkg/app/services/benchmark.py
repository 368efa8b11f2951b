"""
Execução comparativa sobre um conjunto de teste rotulado: acurácia, custo
total e latência média por método e por task_tag.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import pandas as pd

from app.models.schemas import (
    AnswerChecker,
    EncoderConfig,
    LabeledExample,
    ModelPool,
    RawExample,
    ResponseSet,
    RoutingConfig,
    ScoreVector,
    TrainingHyper,
)
from app.services.engine import Engine
from app.services.labeling import RewardOracle, builtin_reward_oracle, is_correct, score_labels
from app.services.metrics_calculator import MetricsCalculator
from app.services.pipeline import RandomSelection
from app.services.prompts import build_direct_prompt
from app.services.ranking import rank_models
from app.services.scorer import score, score_batch
from app.services.training import train
from app.utils.exceptions import DatasetFormatError, EmptyTestsetError, EngineError, ValidationFailure
from app.utils.logger import PerformanceLogger

logger = logging.getLogger(__name__)

METHODS = (
    "routemoa",
    "dense_moa",
    "random_k",
    "single_model",
    "oracle",
    "routemoa_no_self",
    "routemoa_no_cross",
)
DEFAULT_METHODS = ("routemoa", "dense_moa", "random_k", "single_model")
ALL_TAGS = "all"

_COLUMNS = ["method", "task_tag", "n_queries", "accuracy", "total_cost", "mean_latency", "mean_calls"]
_SWEEP_COLUMNS = ["alpha", "lambda", "n_cases", "top1_hit", "top3_hit", "top3_agree"]


@dataclass
class BenchmarkReport:
    rows: pd.DataFrame
    scorer_quality: Dict[str, Optional[float]] = field(default_factory=dict)

    def row(self, method: str, task_tag: str = ALL_TAGS) -> Dict:
        match = self.rows[(self.rows["method"] == method) & (self.rows["task_tag"] == task_tag)]
        if match.empty:
            raise KeyError(f"{method}/{task_tag}")
        return match.iloc[0].to_dict()

    def to_records(self) -> List[Dict]:
        records = [
            {
                "record": "method",
                "method": r["method"],
                "task_tag": r["task_tag"],
                "n_queries": int(r["n_queries"]),
                "accuracy": round(float(r["accuracy"]), 6),
                "total_cost": round(float(r["total_cost"]), 9),
                "mean_latency": round(float(r["mean_latency"]), 6),
                "mean_calls": round(float(r["mean_calls"]), 6),
            }
            for r in self.rows.to_dict(orient="records")
        ]
        if self.scorer_quality:
            quality = {
                k: (round(v, 6) if isinstance(v, float) else v)
                for k, v in self.scorer_quality.items()
            }
            records.append({"record": "scorer_quality", **quality})
        return records

    def to_table(self) -> str:
        table = self.rows[_COLUMNS].to_string(
            index=False,
            formatters={
                "accuracy": "{:.2f}".format,
                "total_cost": "{:.6f}".format,
                "mean_latency": "{:.3f}".format,
                "mean_calls": "{:.2f}".format,
            }
        )
        if self.scorer_quality:
            parts = [
                f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}"
                for k, v in self.scorer_quality.items()
            ]
            table += "\n\nscorer: " + ", ".join(parts)
        return table + "\n"

    def write(self, path: Union[str, Path], fmt: str = "records") -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == "table":
            path.write_text(self.to_table(), encoding="utf-8")
        else:
            lines = [json.dumps(r, sort_keys=True) for r in self.to_records()]
            path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        logger.info(f"Relatório gravado em {path}")
        return path


def _query_seed(seed: int, index: int, query: str) -> int:
    digest = hashlib.sha256(f"{seed}|{index}|{query}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def _routing_for(method: str, routing: RoutingConfig, n_models: int) -> RoutingConfig:
    if method == "dense_moa":
        return routing.model_copy(update={"models_per_layer": n_models, "stop_threshold": 1.0})
    if method == "routemoa_no_self":
        return routing.model_copy(update={"use_self_assessment": False})
    if method == "routemoa_no_cross":
        return routing.model_copy(update={"use_cross_assessment": False})
    return routing


def _uniform_scores(n_models: int) -> ScoreVector:
    return ScoreVector(values=(0.5,) * n_models)


def _run_single_model(engine: Engine, example: LabeledExample) -> Dict:
    """Uma chamada ao melhor modelo segundo o scorer, com o prompt direto do dataset"""
    scores = score(engine.scorer, example.query, engine.pool)
    profile = engine.pool.get(rank_models(scores, engine.pool)[0])
    response, usage = engine.backends.call(profile, build_direct_prompt(example.query, example.task_tag))
    return {
        "answer": response.text,
        "cost": usage.cost,
        "latency": usage.wall_latency,
        "calls": 1,
    }


def _run_one(engine: Engine, method: str, example: LabeledExample, index: int, seed: int) -> Dict:
    if method == "single_model":
        return _run_single_model(engine, example)

    routing = _routing_for(method, engine.config.routing, engine.pool.N)
    orchestrator = engine.orchestrator(routing=routing)

    # dense_moa e random_k não dependem do scorer para escolher modelos
    initial = None if engine.scorer is not None else _uniform_scores(engine.pool.N)

    if method == "oracle":
        result = orchestrator.route(example.query, initial_scores=example.as_scores())
    elif method == "random_k":
        policy = RandomSelection(_query_seed(seed, index, example.query))
        result = orchestrator.route(example.query, initial_scores=initial, policy=policy)
    elif method == "dense_moa":
        result = orchestrator.route(example.query, initial_scores=initial)
    else:
        result = orchestrator.route(example.query)

    return {
        "answer": result.final_answer,
        "cost": result.total_usage.cost,
        "latency": result.total_usage.wall_latency,
        "calls": result.model_calls,
    }


def _check_testset(testset: Sequence[LabeledExample], methods: Iterable[str], engine: Engine):
    if not testset:
        raise EmptyTestsetError("Conjunto de teste vazio")
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValidationFailure(f"Métodos desconhecidos: {', '.join(sorted(unknown))}")
    for i, example in enumerate(testset):
        if not example.gold_answer:
            raise DatasetFormatError(f"Exemplo {i} sem gold_answer")
        if len(example.labels) != engine.pool.N:
            raise DatasetFormatError(f"Exemplo {i}: {len(example.labels)} rótulos para N={engine.pool.N}")
    needs_scorer = {"routemoa", "single_model", "routemoa_no_self", "routemoa_no_cross"}
    if engine.scorer is None and needs_scorer & set(methods):
        raise EngineError("Métodos roteados exigem um scorer carregado")


def summarize(records: List[Dict], methods: Sequence[str]) -> pd.DataFrame:
    """Agrega por (método, task_tag) e adiciona a linha 'all' de cada método"""
    df = pd.DataFrame(records)
    aggregations = {
        "n_queries": ("correct", "size"),
        "accuracy": ("correct", "mean"),
        "total_cost": ("cost", "sum"),
        "mean_latency": ("latency", "mean"),
        "mean_calls": ("calls", "mean"),
    }

    per_tag = df.groupby(["method", "task_tag"]).agg(**aggregations).reset_index()
    overall = df.groupby(["method"]).agg(**aggregations).reset_index()
    overall["task_tag"] = ALL_TAGS

    rows = pd.concat([per_tag, overall[_COLUMNS]], ignore_index=True)
    rows["accuracy"] = rows["accuracy"] * 100.0

    order = {m: i for i, m in enumerate(methods)}
    rows["_method_order"] = rows["method"].map(order)
    rows["_all_last"] = rows["task_tag"] == ALL_TAGS
    rows = rows.sort_values(["_method_order", "_all_last", "task_tag"]).reset_index(drop=True)
    return rows[_COLUMNS]


def run_benchmark(
    testset: Sequence[LabeledExample],
    engine: Engine,
    methods: Sequence[str] = DEFAULT_METHODS,
    seed: int = 0
) -> BenchmarkReport:
    methods = list(dict.fromkeys(methods))
    _check_testset(testset, methods, engine)

    records = []
    for method in methods:
        with PerformanceLogger("benchmark.method", method=method, queries=len(testset)):
            for index, example in enumerate(testset):
                try:
                    outcome = _run_one(engine, method, example, index, seed)
                    checker = example.answer_checker or AnswerChecker.EXACT_MATCH
                    correct = is_correct(outcome["answer"], example.gold_answer, checker)
                except EngineError as e:
                    logger.error(f"{method}: consulta {index} falhou: {e}")
                    outcome = {"cost": 0.0, "latency": 0.0, "calls": 0}
                    correct = False

                records.append({
                    "method": method,
                    "task_tag": example.task_tag or "general",
                    "correct": float(correct),
                    "cost": outcome["cost"],
                    "latency": outcome["latency"],
                    "calls": outcome["calls"],
                })

        logger.info(f"Benchmark {method}: {len(testset)} consultas concluídas")

    quality: Dict[str, Optional[float]] = {}
    if engine.scorer is not None:
        predictions = score_batch(engine.scorer, [ex.query for ex in testset])
        quality = MetricsCalculator.scorer_quality(list(predictions), testset)

    return BenchmarkReport(rows=summarize(records, methods), scorer_quality=quality)


def sweep_scorer_quality(
    raws: Sequence[RawExample],
    responses: Sequence[ResponseSet],
    testset: Sequence[LabeledExample],
    pool: ModelPool,
    alphas: Sequence[float],
    lambdas: Sequence[float],
    hyper: Optional[TrainingHyper] = None,
    encoder_config: Optional[EncoderConfig] = None,
    reward_oracle: RewardOracle = builtin_reward_oracle
) -> pd.DataFrame:
    """
    Qualidade do scorer para cada par (alpha, lambda)

    O treino é rerrotulado com cada lambda e treinado do zero com cada alpha;
    o conjunto de teste fica fixo para as linhas serem comparáveis.
    """
    if not alphas or not lambdas:
        raise ValidationFailure("Varredura exige ao menos um alpha e um lambda")
    if not testset:
        raise EmptyTestsetError("Conjunto de teste vazio")

    hyper = hyper or TrainingHyper()
    queries = [ex.query for ex in testset]

    rows = []
    for lam in lambdas:
        labeled = score_labels(raws, responses, reward_oracle, lam=lam)
        for alpha in alphas:
            with PerformanceLogger("benchmark.sweep", alpha=alpha, lam=lam):
                model = train(labeled, pool, hyper.model_copy(update={"alpha": alpha}), encoder_config)
                quality = MetricsCalculator.scorer_quality(list(score_batch(model, queries)), testset)
            rows.append({"alpha": float(alpha), "lambda": float(lam), **quality})
            logger.info(f"Varredura alpha={alpha} lambda={lam}: Top-1-Hit {quality['top1_hit']}")

    return pd.DataFrame(rows, columns=_SWEEP_COLUMNS)
