"""Command-line entry points.

    grmfilter collect --config run.yaml --tasks tasks.jsonl --out runs/a --seed 0
    grmfilter easy-filter --tasks tasks.jsonl --out survivors.jsonl
    grmfilter analyze runs/a/accepted.jsonl runs/b/accepted.jsonl --out reports/
    grmfilter sim tasks --n 200 --out tasks.jsonl --seed 0
    grmfilter sim experiment --n 200 --seed 0 --out runs/exp
    grmfilter report runs/a runs/b
    grmfilter validate-config --config run.yaml --set N=4
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import secrets
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .actors import CapabilityError, RolloutAborted
from .analyzer import compare_reports, corpus_metrics, load_registry
from .config import AppConfig, ConfigError, load_config
from .dataset import (
    ACCEPTED,
    MANIFEST,
    DatasetError,
    DatasetManifest,
    collect_dataset,
    default_actor_factory,
    filter_easy_tasks,
    read_dataset,
    read_tasks,
    sim_task_specs,
    write_tasks,
)

logger = logging.getLogger("grmfilter")

SNAPSHOT_NAME = "config.snapshot.yaml"
EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _resolve_seed(cfg: AppConfig, cli_seed: int | None) -> AppConfig:
    if cli_seed is not None:
        return cfg.with_seed(cli_seed)
    if cfg.seed is None:
        seed = secrets.randbelow(2**31)
        print(f"seed: {seed}")
        return cfg.with_seed(seed)
    return cfg


def _load(args: argparse.Namespace) -> AppConfig:
    cfg = load_config(args.config, args.overrides or [])
    return _resolve_seed(cfg, getattr(args, "seed", None))


def _write_snapshot(cfg: AppConfig, directory: Path) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / SNAPSHOT_NAME
    path.write_text(cfg.to_yaml(), encoding="utf-8")
    return path


def _gateway_client(cfg: AppConfig, out: Path):
    if cfg.actor != "gateway":
        return None
    from .gateway import AuditLog, GatewayClient

    return GatewayClient(cfg.gateway, AuditLog(out / "audit.jsonl"))


def cmd_collect(args: argparse.Namespace) -> int:
    cfg = _load(args)
    tasks_path = args.tasks or cfg.tasks
    out = Path(args.out or cfg.output_dir or "run")
    if not tasks_path:
        print("error: no task file (use --tasks or set 'tasks' in the config)", file=sys.stderr)
        return EXIT_CONFIG
    cfg = dataclasses.replace(cfg, tasks=str(tasks_path), output_dir=str(out))
    tasks = read_tasks(tasks_path)
    _write_snapshot(cfg, out)
    client = _gateway_client(cfg, out)
    try:
        manifest = collect_dataset(tasks, cfg, out, default_actor_factory(cfg, client))
    except CapabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    finally:
        if client is not None:
            client.close()
    c = manifest.counts
    print(
        f"accepted={c['accepted']} rejected={c['rejected']} unevaluated={c['unevaluated']} "
        f"aborted={c['aborted']} fallbacks={c['fallback_selections']} sha256={manifest.sha256}"
    )
    return EXIT_OK


def cmd_easy_filter(args: argparse.Namespace) -> int:
    cfg = _load(args)
    if args.trials is not None:
        cfg = dataclasses.replace(cfg, trials=args.trials)
    tasks = read_tasks(args.tasks)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_snapshot(cfg, out.parent)
    client = _gateway_client(cfg, out.parent)
    try:
        survivors, log = filter_easy_tasks(
            tasks, default_actor_factory(cfg, client), cfg.T, cfg.seed, cfg.trials, cfg.workers
        )
    finally:
        if client is not None:
            client.close()
    write_tasks(out, survivors)
    log_path = out.with_name(out.name + ".trials.jsonl")
    log_path.write_text("".join(json.dumps(e) + "\n" for e in log), encoding="utf-8")
    if not survivors:
        logger.warning("no tasks survived the easy-task filter")
    print(f"kept {len(survivors)} of {len(tasks)} tasks ({cfg.trials} trials each)")
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    registry = load_registry(args.patterns)
    names = args.names or [Path(p).parent.name or Path(p).stem for p in args.inputs]
    if len(names) != len(args.inputs) or len(set(names)) != len(names):
        print("error: need one unique --name per input", file=sys.stderr)
        return EXIT_CONFIG
    reports = []
    for name, path in zip(names, args.inputs):
        corpus = read_dataset(path)
        if not corpus:
            print(f"error: {path} holds no trajectories", file=sys.stderr)
            return EXIT_FAIL
        reports.append((name, corpus_metrics(corpus, registry)))
    comparison = compare_reports(reports)
    text = comparison.to_text()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for name, report in reports:
            (out / f"{name}.report.json").write_text(
                json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8"
            )
        (out / "comparison.json").write_text(comparison.to_json(), encoding="utf-8")
        (out / "comparison.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    registry = load_registry(args.patterns)
    rows, reports = [], []
    for run in args.runs:
        run = Path(run)
        manifest = DatasetManifest.load(run / MANIFEST)
        corpus = read_dataset(run / manifest.accepted_path, manifest)
        c = manifest.counts
        rate = c["accepted"] / c["attempted"] if c["attempted"] else 0.0
        rows.append((run.name, c["attempted"], c["accepted"], c["rejected"], c["unevaluated"],
                     c["aborted"], rate))
        if corpus:
            reports.append((run.name, corpus_metrics(corpus, registry)))
    header = ("run", "attempted", "accepted", "rejected", "unevaluated", "aborted", "accept_rate")
    width = max(len(r[0]) for r in rows + [header])
    print(f"{header[0]:<{width}} " + " ".join(f"{h:>11}" for h in header[1:]))
    for r in rows:
        print(f"{r[0]:<{width}} " + " ".join(f"{v:>11}" for v in r[1:6]) + f" {r[6]:>11.3f}")
    if reports:
        print()
        print(compare_reports(reports).to_text(), end="")
    return EXIT_OK


def cmd_sim(args: argparse.Namespace) -> int:
    seed = args.seed
    if seed is None:
        seed = secrets.randbelow(2**31)
        print(f"seed: {seed}")
    if args.sim_verb == "tasks":
        write_tasks(args.out, sim_task_specs(args.n, seed, args.max_difficulty))
        print(f"wrote {args.n} tasks to {args.out}")
        return EXIT_OK
    from .experiment import run_sim_experiment, summary_table

    out = Path(args.out) if args.out else None
    results = run_sim_experiment(
        n_tasks=args.n, seed=seed, competence=args.competence, strategies=args.strategies,
        N=args.N, L=args.L, T=args.T, workers=args.workers, out_dir=out,
    )
    text = summary_table(results)
    if out is not None:
        (out / "summary.json").write_text(
            json.dumps({k: v.to_dict() for k, v in results.items()}, indent=2) + "\n", encoding="utf-8"
        )
        (out / "summary.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def cmd_validate_config(args: argparse.Namespace) -> int:
    load_config(args.config, args.overrides or [])
    print("config OK")
    return EXIT_OK


def _add_config_args(p: argparse.ArgumentParser, seed: bool = True) -> None:
    p.add_argument("--config", type=Path, help="YAML run config")
    p.add_argument("--set", dest="overrides", action="append", metavar="KEY=VALUE",
                   help="dotted-path override, repeatable, last wins")
    if seed:
        p.add_argument("--seed", type=int, help="root seed (drawn and printed when absent)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grmfilter", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("collect", help="collect an accepted-trajectory dataset")
    _add_config_args(p)
    p.add_argument("--tasks", type=Path)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("easy-filter", help="drop tasks the policy always solves")
    _add_config_args(p)
    p.add_argument("--tasks", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--trials", type=int)
    p.set_defaults(func=cmd_easy_filter)

    p = sub.add_parser("analyze", help="behavior and error statistics of datasets")
    p.add_argument("inputs", nargs="+", type=Path)
    p.add_argument("--name", dest="names", action="append")
    p.add_argument("--patterns", type=Path)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sim", help="simulator utilities")
    sim = p.add_subparsers(dest="sim_verb", required=True)
    t = sim.add_parser("tasks", help="generate a simulator task file")
    t.add_argument("--n", type=int, default=200)
    t.add_argument("--max-difficulty", type=int, default=3)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", type=Path, required=True)
    e = sim.add_parser("experiment", help="compare strategies on simulator tasks")
    e.add_argument("--n", type=int, default=200)
    e.add_argument("--seed", type=int)
    e.add_argument("--competence", type=float, default=0.6)
    e.add_argument("--strategies", nargs="+", default=["baseline", "turn_level", "segment_level"])
    e.add_argument("--N", type=int, default=3)
    e.add_argument("--L", type=int, default=5)
    e.add_argument("--T", type=int, default=20)
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("report", help="summarize finished collection runs")
    p.add_argument("runs", nargs="+", type=Path)
    p.add_argument("--patterns", type=Path)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("validate-config", help="check a config without running it")
    _add_config_args(p, seed=False)
    p.set_defaults(func=cmd_validate_config)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, RolloutAborted, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
