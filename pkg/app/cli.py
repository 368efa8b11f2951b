"""
Linha de comando do motor

    python -m app.cli simulate --out scenario
    python -m app.cli label    --config scenario/engine.yaml --input scenario/train_raw.jsonl --out scenario/train.jsonl
    python -m app.cli train    --config scenario/engine.yaml --input scenario/train.jsonl
    python -m app.cli route    --config scenario/engine.yaml --query "..."
    python -m app.cli eval     --config scenario/engine.yaml --input scenario/test.jsonl --out scenario/report.jsonl

Saída 0 em sucesso, 1 em erro de validação, 2 em falha de execução.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from app.config import load_engine_config, settings
from app.models.schemas import CollectionMode
from app.services.benchmark import DEFAULT_METHODS, run_benchmark
from app.services.checkpoint import save_scorer
from app.services.datasets import read_labeled, read_raw, write_jsonl
from app.services.engine import Engine
from app.services.labeling import collect_responses, score_labels
from app.services.pipeline import write_transcript
from app.services.scenario import build_scenario, write_scenario
from app.services.training import train
from app.utils.exceptions import ConfigError, ValidationFailure
from app.utils.logger import setup_logging
from app.utils.validators import validate_pool

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _require_config(args) -> Path:
    if not args.config:
        raise ConfigError("--config é obrigatório para este comando")
    return Path(args.config)


def cmd_simulate(args) -> int:
    scenario = build_scenario(n_train=args.train, n_test=args.test, seed=args.seed or 0)
    paths = write_scenario(scenario, args.out or "scenario")
    for name, path in paths.items():
        print(f"{name}: {path}")
    return EXIT_OK


def cmd_label(args) -> int:
    engine = Engine.from_path(_require_config(args))
    raws = read_raw(args.input)
    mode = CollectionMode(args.mode)
    lam = engine.config.routing.lambda_ if args.lam is None else args.lam

    responses = collect_responses(engine.backends, engine.pool, raws, mode)
    labeled = score_labels(raws, responses, lam=lam)
    out = write_jsonl(labeled, args.out or Path(args.input).with_suffix(".labeled.jsonl"))
    print(f"{len(labeled)} exemplos rotulados em {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    config_path = _require_config(args)
    config = load_engine_config(config_path)
    dataset = read_labeled(args.input)

    hyper = config.training
    updates = {}
    if args.seed is not None:
        updates["rng_seed"] = args.seed
    if args.epochs is not None:
        updates["epochs"] = args.epochs
    if updates:
        hyper = hyper.model_copy(update=updates)

    pool = validate_pool(config.pool())
    model = train(dataset, pool, hyper, config.scorer.encoder)

    out = args.out or config.scorer.checkpoint or settings.SCORER_PATH
    if not out:
        raise ConfigError("Informe --out ou scorer.checkpoint na configuração")
    save_scorer(model, out)
    print(f"Scorer salvo em {out} (perda final {model.training_history[-1]:.6f})")
    return EXIT_OK


def cmd_route(args) -> int:
    if not args.query:
        raise ValidationFailure("--query é obrigatório")
    engine = Engine.from_path(
        _require_config(args),
        scorer_path=args.scorer,
        require_scorer=True,
        allow_untrained=args.allow_untrained
    )
    result = engine.orchestrator().route(args.query)

    if args.out:
        write_transcript(result, args.out)

    if args.format == "records":
        print(json.dumps(result.model_dump(mode="json"), ensure_ascii=False, sort_keys=True))
    else:
        usage = result.total_usage
        print(result.final_answer)
        print(
            f"camadas={len(result.transcripts)} chamadas={result.model_calls} "
            f"custo={usage.cost:.6f} latência={usage.wall_latency:.3f}s "
            f"tokens={usage.input_tokens}/{usage.output_tokens} parada={result.stop_reason.value}"
        )
    return EXIT_OK


def cmd_eval(args) -> int:
    engine = Engine.from_path(_require_config(args), scorer_path=args.scorer)
    testset = read_labeled(args.input)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]

    report = run_benchmark(testset, engine, methods, seed=args.seed or 0)
    if args.out:
        report.write(args.out, args.format)
        print(f"Relatório gravado em {args.out}")
    else:
        print(report.to_table() if args.format == "table" else "\n".join(
            json.dumps(r, sort_keys=True) for r in report.to_records()
        ))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Arquivo YAML do motor")
    common.add_argument("--seed", type=int, default=None, help="Semente")
    common.add_argument("--out", help="Arquivo/diretório de saída")
    common.add_argument("--format", choices=["records", "table"], default="table")
    common.add_argument("--log-level", default=None)

    parser = argparse.ArgumentParser(prog="moarouter", description="Roteamento em camadas de múltiplos LLMs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="Gera cenário simulado")
    p.add_argument("--train", type=int, default=600)
    p.add_argument("--test", type=int, default=200)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("label", parents=[common], help="Dataset bruto -> rotulado")
    p.add_argument("--input", required=True)
    p.add_argument("--mode", choices=[m.value for m in CollectionMode], default=CollectionMode.DIRECT.value)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.set_defaults(handler=cmd_label)

    p = sub.add_parser("train", parents=[common], help="Treina o scorer")
    p.add_argument("--input", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("route", parents=[common], help="Roteia uma consulta")
    p.add_argument("--query", required=False)
    p.add_argument("--scorer", default=None)
    p.add_argument("--allow-untrained", action="store_true",
                   help="Usa scorer com pesos aleatórios se não houver checkpoint")
    p.set_defaults(handler=cmd_route)

    p = sub.add_parser("eval", parents=[common], help="Benchmark comparativo")
    p.add_argument("--input", required=True)
    p.add_argument("--scorer", default=None)
    p.add_argument("--methods", default=",".join(DEFAULT_METHODS))
    p.set_defaults(handler=cmd_eval)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(level=args.log_level, stream=sys.stderr)

    try:
        return args.handler(args)
    except (ValidationFailure, ValidationError) as e:
        logger.error(f"Erro de validação: {e}")
        print(f"erro: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as e:
        logger.error(f"Falha na execução: {e}", exc_info=True)
        print(f"falha: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
