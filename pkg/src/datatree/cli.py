"""Command line front end.

Exit codes: 0 success, 2 configuration or argument problem, 3 fatal
executor failure (the baseline evaluation), 4 corrupted event log.
Verbosity comes from DATATREE_LOG_LEVEL (error, info, debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

from . import orchestrator
from .analytics import build_report
from .config import ConfigError, load_config
from .events import CorruptedLogError, read_events
from .leakage import AuditError, audit, read_corpus
from .pool import DataPool
from .simenv import WorldError, generate_world, load_world, oracle_best, write_world

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_EXECUTOR = 3
EXIT_CORRUPTED = 4

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

log = logging.getLogger("datatree")


class _CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _setup_logging() -> None:
    raw = os.environ.get("DATATREE_LOG_LEVEL", "error").lower()
    if raw not in LOG_LEVELS:
        raise _CliError(
            f"DATATREE_LOG_LEVEL must be one of {', '.join(sorted(LOG_LEVELS))}; got {raw!r}",
            EXIT_CONFIG,
        )
    logging.basicConfig(level=LOG_LEVELS[raw], format="%(levelname)s %(name)s: %(message)s")


def _overrides(args: argparse.Namespace) -> dict:
    return {
        "seed": getattr(args, "seed", None),
        "rounds": getattr(args, "rounds", None),
        "parallelism": getattr(args, "parallelism", None),
        "out": getattr(args, "out", None),
        "wall_limit": getattr(args, "wall_limit", None),
    }


def _print_json(obj: dict) -> None:
    print(json.dumps(obj, ensure_ascii=False, indent=2))


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, overrides=_overrides(args))
    log.info("run starting: task=%s seed=%d T=%d", cfg.task.task_id, cfg.schedule.seed, cfg.schedule.T)
    state = orchestrator.run(cfg)
    summary = {
        "run_dir": str(state.run_dir),
        "rounds_used": state.ledger.rounds_used,
        "nodes": len(state.tree),
        "pool_entries": len(state.pool),
        "initial_score": state.tree.node(state.tree.root_id).raw_score,
        "best_score": state.report.get("best_score") if state.report else None,
        "report": str(state.run_dir / orchestrator.REPORT_FILE),
    }
    _print_json(summary)
    return EXIT_OK


def _cmd_resume(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    if not (run_dir / orchestrator.RUN_FILE).exists():
        raise _CliError(f"{run_dir} is not a run directory (missing {orchestrator.RUN_FILE})", EXIT_CONFIG)
    state = orchestrator.resume(run_dir)
    _print_json(
        {
            "run_dir": str(state.run_dir),
            "rounds_used": state.ledger.rounds_used,
            "nodes": len(state.tree),
            "best_score": state.report.get("best_score") if state.report else None,
        }
    )
    return EXIT_OK


def _cmd_status(args: argparse.Namespace) -> int:
    _print_json(orchestrator.status_summary(Path(args.run_dir)))
    return EXIT_OK


def _cmd_analyze(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    loop = orchestrator.replay(run_dir)
    events = read_events(str(run_dir / orchestrator.EVENTS_FILE))
    report = build_report(
        loop.tree,
        loop.cfg.task.direction,
        events=events,
        gold=loop.cfg.gold_score,
        median=loop.cfg.median_score,
    ).to_dict()
    if args.out:
        Path(args.out).write_text(
            json.dumps(report, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )
        log.info("report written to %s", args.out)
    _print_json(report)
    return EXIT_OK


def _cmd_audit(args: argparse.Namespace) -> int:
    try:
        train = read_corpus(args.train)
        test = read_corpus(args.test)
    except OSError as exc:
        raise _CliError(f"cannot read corpus: {exc}", EXIT_CONFIG) from None
    pool = None
    if args.pool:
        try:
            pool = DataPool.read_manifest(args.pool)
        except OSError as exc:
            raise _CliError(f"cannot read pool manifest: {exc}", EXIT_CONFIG) from None
    report = audit(train, test, pool=pool, threshold=args.threshold)
    out = report.to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(out, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    _print_json(out)
    return EXIT_OK


def _cmd_simgen(args: argparse.Namespace) -> int:
    world = generate_world(
        seed=args.seed,
        num_datasets=args.datasets,
        max_select=args.max_select,
        red_fail_rate=args.red_fail_rate,
        black_fail_rate=args.black_fail_rate,
    )
    write_world(world, args.out)
    info = {"world": args.out, "datasets": args.datasets, "seed": args.seed}
    if args.show_oracle:
        selection, score = oracle_best(load_world(args.out))
        info["oracle_selection"] = selection
        info["oracle_score"] = round(score, 6)
    _print_json(info)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="datatree", description="budgeted tree search over external data"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="start a fresh search run")
    run_p.add_argument("--config", required=True, help="TOML run configuration")
    run_p.add_argument("--seed", type=int, help="override schedule seed")
    run_p.add_argument("--rounds", type=int, help="override round budget T")
    run_p.add_argument("--wall-limit", type=float, dest="wall_limit", help="wall seconds budget")
    run_p.add_argument("--parallelism", type=int, help="concurrent executions")
    run_p.add_argument("--out", help="run directory (overrides config output_dir)")
    run_p.set_defaults(fn=_cmd_run)

    resume_p = sub.add_parser("resume", help="continue an interrupted run")
    resume_p.add_argument("run_dir", help="existing run directory")
    resume_p.set_defaults(fn=_cmd_resume)

    status_p = sub.add_parser("status", help="summarize a run directory")
    status_p.add_argument("run_dir", help="existing run directory")
    status_p.set_defaults(fn=_cmd_status)

    analyze_p = sub.add_parser("analyze", help="recompute metrics from the event log")
    analyze_p.add_argument("run_dir", help="existing run directory")
    analyze_p.add_argument("--out", help="write the report JSON here as well")
    analyze_p.set_defaults(fn=_cmd_analyze)

    audit_p = sub.add_parser("audit", help="contamination audit between two corpora")
    audit_p.add_argument("--train", required=True, help="training corpus (jsonl or plain lines)")
    audit_p.add_argument("--test", required=True, help="evaluation corpus")
    audit_p.add_argument("--pool", help="pool manifest for provenance checks")
    audit_p.add_argument("--threshold", type=float, default=0.8, help="fuzzy Jaccard threshold")
    audit_p.add_argument("--out", help="write the audit report JSON here")
    audit_p.set_defaults(fn=_cmd_audit)

    simgen_p = sub.add_parser("simgen", help="generate a simulated world file")
    simgen_p.add_argument("--seed", type=int, required=True)
    simgen_p.add_argument("--out", required=True, help="world JSON path")
    simgen_p.add_argument("--datasets", type=int, default=12)
    simgen_p.add_argument("--max-select", type=int, default=5, dest="max_select")
    simgen_p.add_argument("--red-fail-rate", type=float, default=0.0, dest="red_fail_rate")
    simgen_p.add_argument("--black-fail-rate", type=float, default=0.0, dest="black_fail_rate")
    simgen_p.add_argument("--show-oracle", action="store_true", help="also print the oracle answer")
    simgen_p.set_defaults(fn=_cmd_simgen)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        return args.fn(args)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (orchestrator.LockError, orchestrator.OrchestratorError) as exc:
        if isinstance(exc, orchestrator.BaselineError):
            print(f"executor error: {exc}", file=sys.stderr)
            return EXIT_EXECUTOR
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CorruptedLogError as exc:
        print(f"corrupted event log: {exc}", file=sys.stderr)
        return EXIT_CORRUPTED
    except (AuditError, WorldError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
