import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import networkx as nx
import pandas as pd
from loguru import logger

from agents.memory_agent import MemoryAgent
from agents.synthesis_agent import SynthesisError
from config.settings import ABLATION_STAGES, Settings, apply_ablation, load_settings
from database.database import DatabaseManager
from evaluation.dataset import load_dataset, write_dataset
from evaluation.harness import (
    check_thresholds,
    parse_sweep,
    reports_table,
    run_ablations,
    run_eval,
    run_sweep,
    write_report,
)
from evaluation.synthetic import gen_synthetic
from memory.exceptions import MemoryGraphError
from memory.graph import MemoryGraph
from memory.stream import StreamError, load_stream
from services.embedding_service import EmbeddingError
from services.extraction_service import ExtractionError

EXIT_ERROR = 1
EXIT_THRESHOLD = 2

# flag → (seção, campo) nas configurações
FLAG_FIELDS = {
    "lambda_red": ("gate", "lambda_red"),
    "delta_short": ("gate", "delta_short"),
    "lambda_coal": ("coarsen", "lambda_coal"),
    "lambda_ovlp": ("coarsen", "lambda_ovlp"),
    "window_size": ("ingestion", "window_size"),
    "k_sem": ("retrieval", "k_sem"),
    "k_lex": ("retrieval", "k_lex"),
    "delta_time": ("retrieval", "delta_time"),
    "bridge_gap_min": ("retrieval", "bridge_gap_min"),
    "bridge_gap_max": ("retrieval", "bridge_gap_max"),
    "bridge_candidates": ("retrieval", "bridge_candidates"),
    "max_hops": ("retrieval", "max_hops"),
    "budget_min": ("retrieval", "budget_min"),
    "budget_max": ("retrieval", "budget_max"),
    "tokenizer": ("synthesis", "tokenizer"),
    "max_path_lines": ("synthesis", "max_path_lines"),
    "embedder": ("embedder", "kind"),
    "extractor": ("extractor", "kind"),
    "generator": ("generator", "kind"),
    "workers": ("eval", "workers"),
}

FLAG_TYPES = {
    "lambda_red": float, "lambda_coal": float, "lambda_ovlp": float,
    "window_size": int, "k_sem": int, "k_lex": int, "bridge_candidates": int, "max_hops": int,
    "budget_min": int, "budget_max": int, "max_path_lines": int, "workers": int,
}


def configure_logging(level: str, log_file: Optional[str]):
    logger.remove()
    logger.add(sys.stderr, level=level.upper())
    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        logger.add(log_file, rotation="1 day", level="INFO")


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="arquivo JSON de configuração")
    common.add_argument("--memory", help="arquivo da memória (JSON Lines)")
    common.add_argument("--print-config", action="store_true", help="mostra a configuração efetiva")
    common.add_argument("--trace", action="store_true", help="rastro detalhado da consulta")
    common.add_argument("--ablate", choices=ABLATION_STAGES + ["all"], help="desliga um estágio")
    common.add_argument("--log-level", help="nível de log no terminal")
    tuning = common.add_argument_group("parâmetros")
    for name in FLAG_FIELDS:
        tuning.add_argument(f"--{name.replace('_', '-')}", dest=name, type=FLAG_TYPES.get(name, str))
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(prog="memgraph", description="Memória em grafo para agentes de diálogo")
    commands = parser.add_subparsers(dest="command", required=True)

    ingest = commands.add_parser("ingest", parents=[common], help="ingere um fluxo de diálogo")
    ingest.add_argument("stream", help="fluxo .jsonl ou dataset .json")

    query = commands.add_parser("query", parents=[common], help="responde uma pergunta")
    query.add_argument("question")

    evaluate = commands.add_parser("eval", parents=[common], help="avalia F1/BLEU/tokens")
    evaluate.add_argument("dataset", nargs="?", help="dataset .json/.jsonl")
    evaluate.add_argument("--synthetic", type=int, metavar="SEED", help="gera o dataset sintético")
    evaluate.add_argument("--save-dataset", help="grava o dataset sintético gerado")
    evaluate.add_argument("--sweep", help="varredura, ex.: k_sem=1,10,20")
    evaluate.add_argument("--report-dir", help="diretório dos relatórios")
    evaluate.add_argument("--no-timings", action="store_true", help="omite tempos (relatório determinístico)")
    evaluate.add_argument("--record", action="store_true", help="grava a execução no histórico")
    evaluate.add_argument("--history", type=int, metavar="N", help="mostra as últimas N execuções")

    inspect = commands.add_parser("inspect", parents=[common], help="resume a memória")
    inspect.add_argument("--export", help="exporta o grafo (.graphml, .gexf ou JSON node-link)")
    return parser


def collect_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    for flag, (section, name) in FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides.setdefault(section, {})[name] = value
    if args.memory:
        overrides["memory_path"] = args.memory
    if args.log_level:
        overrides["log_level"] = args.log_level
    return overrides


def settings_from_args(args: argparse.Namespace) -> Settings:
    cfg = load_settings(args.config, collect_overrides(args))
    if args.ablate and args.ablate != "all":
        cfg = apply_ablation(cfg, args.ablate)
    return cfg


# =================== COMANDOS ===================
def cmd_ingest(args: argparse.Namespace, cfg: Settings) -> int:
    source = Path(args.stream)
    items = load_stream(source) if source.suffix == ".jsonl" else load_dataset(source).all_items()
    agent = MemoryAgent.open(cfg, cfg.memory_path)
    report = agent.ingest(items)
    agent.save(cfg.memory_path)
    print(f"items: {report.items}")
    print(f"gated_out: {report.gated_out}")
    print(f"extracted: {report.extracted}")
    print(f"merged: {report.merged}")
    print(f"linked: {report.linked}")
    print(f"added: {report.added}")
    print(f"skipped_windows: {report.skipped_windows}")
    print(f"entries: {len(agent.graph)}")
    print(f"construction_seconds: {report.construction_seconds:.3f}")
    return 0


def _require_memory(cfg: Settings) -> Path:
    path = Path(cfg.memory_path)
    if not path.exists():
        raise FileNotFoundError(f"memória não encontrada: {path}")
    return path


def cmd_query(args: argparse.Namespace, cfg: Settings) -> int:
    agent = MemoryAgent.open(cfg, _require_memory(cfg))
    result = agent.answer(args.question)
    if args.trace:
        print("\n".join(result.trace_lines()))
    else:
        print(result.answer)
    return 0


def cmd_eval(args: argparse.Namespace, cfg: Settings) -> int:
    if args.history:
        rows = DatabaseManager(cfg.database_url).history_rows(args.history)
        print(reports_table_from_rows(rows))
        return 0

    if args.synthetic is not None:
        dataset = gen_synthetic(args.synthetic)
        if args.save_dataset:
            write_dataset(dataset, args.save_dataset)
        source = f"synthetic:{args.synthetic}"
    else:
        source = args.dataset or cfg.dataset_path
        if not source:
            raise ValueError("informe o dataset (ou --synthetic SEED)")
        dataset = load_dataset(source)

    if args.sweep:
        name, values = parse_sweep(args.sweep)
        reports = run_sweep(dataset, cfg, name, values)
    elif args.ablate == "all":
        reports = run_ablations(dataset, cfg, ABLATION_STAGES)
    else:
        reports = [run_eval(dataset, cfg, Settings.ABLATIONS[args.ablate or "full"])]

    print(reports_table(reports).to_string())
    include_timings = cfg.eval.include_timings and not args.no_timings
    write_report(reports, args.report_dir or cfg.report_dir, include_timings)

    if args.record or cfg.eval.record_history:
        db = DatabaseManager(cfg.database_url)
        for report in reports:
            db.save_report(report, str(source), cfg.public_dump())

    misses = check_thresholds(reports[0], cfg.eval)
    for miss in misses:
        logger.error(f"❌ Limite não atingido: {miss}")
    return EXIT_THRESHOLD if misses else 0


def reports_table_from_rows(rows: List[Dict[str, Any]]) -> str:
    if not rows:
        return "(nenhuma execução registrada)"
    return pd.DataFrame(rows).set_index("run").to_string()


def export_graph(graph: nx.MultiDiGraph, target: Path):
    target.parent.mkdir(parents=True, exist_ok=True)
    suffix = target.suffix.lower()
    if suffix == ".graphml":
        nx.write_graphml(graph, target)
    elif suffix == ".gexf":
        nx.write_gexf(graph, target)
    else:
        target.write_text(json.dumps(nx.node_link_data(graph), indent=2, ensure_ascii=False), encoding="utf-8")


def cmd_inspect(args: argparse.Namespace, cfg: Settings) -> int:
    graph = MemoryGraph.load(_require_memory(cfg), cfg.embedder.dimension)
    view = graph.snapshot()
    print(f"entries: {len(view)}")
    for kind, count in view.edge_counts().items():
        print(f"edges[{kind}]: {count}")
    chains = view.update_chains()
    print(f"update_chains: {len(chains)}")
    for chain in chains:
        print(f"  {' → '.join(chain)} (length {len(chain)})")
    if args.export:
        target = Path(args.export)
        export_graph(view.to_networkx(), target)
        print(f"exported: {target}")
    return 0


COMMANDS = {"ingest": cmd_ingest, "query": cmd_query, "eval": cmd_eval, "inspect": cmd_inspect}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = settings_from_args(args)
    except ValueError as e:
        configure_logging("INFO", None)
        logger.error(f"❌ Configuração inválida: {e}")
        return EXIT_ERROR
    configure_logging(cfg.log_level, cfg.log_file)

    if args.print_config:
        print(json.dumps(cfg.public_dump(), indent=2, sort_keys=True))

    try:
        cfg.validate_settings()
        return COMMANDS[args.command](args, cfg)
    except (OSError, ValueError, StreamError, MemoryGraphError, SynthesisError, EmbeddingError,
            ExtractionError) as e:
        logger.error(f"❌ {args.command} falhou: {e}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
