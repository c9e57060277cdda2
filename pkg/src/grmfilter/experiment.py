"""Seeded simulator experiment comparing collection strategies."""

from __future__ import annotations

import dataclasses
import logging
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from .analyzer import CorpusReport, compare_reports, corpus_metrics, load_registry
from .config import AppConfig, SimSettings
from .dataset import ACCEPTED, MANIFEST, collect_dataset, read_dataset, sim_task_specs

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StrategySummary:
    strategy: str
    attempted: int
    accepted: int
    mean_accepted_length: float
    report: CorpusReport | None

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.attempted if self.attempted else 0.0

    @property
    def turn_error_rate(self) -> float:
        return self.report.turn_error_rate if self.report else 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "strategy": self.strategy,
            "attempted": self.attempted,
            "accepted": self.accepted,
            "acceptance_rate": self.acceptance_rate,
            "mean_accepted_length": self.mean_accepted_length,
            "turn_error_rate": self.turn_error_rate,
        }


def run_sim_experiment(
    n_tasks: int = 200,
    seed: int = 0,
    competence: float = 0.6,
    strategies: Sequence[str] = ("baseline", "turn_level"),
    N: int = 3,
    L: int = 5,
    T: int = 20,
    workers: int = 1,
    out_dir: str | Path | None = None,
) -> dict[str, StrategySummary]:
    """Collect one dataset per strategy over the same tasks, cap = n_tasks."""
    tasks = sim_task_specs(n_tasks, seed)
    registry = load_registry()
    tmp = None
    if out_dir is None:
        tmp = tempfile.TemporaryDirectory()
        out_dir = tmp.name
    base = AppConfig(
        N=N, L=L, T=T, seed=seed, cap=n_tasks, workers=workers,
        sim=SimSettings(competence=competence),
    )
    results = {}
    try:
        for strategy in strategies:
            cfg = dataclasses.replace(base, strategy=strategy, N=1 if strategy == "baseline" else N)
            target = Path(out_dir) / strategy
            manifest = collect_dataset(tasks, cfg, target)
            accepted = read_dataset(target / ACCEPTED, target / MANIFEST)
            results[strategy] = StrategySummary(
                strategy=strategy,
                attempted=manifest.counts["attempted"],
                accepted=manifest.counts["accepted"],
                mean_accepted_length=(
                    sum(t.real_length for t in accepted) / len(accepted) if accepted else 0.0
                ),
                report=corpus_metrics(accepted, registry) if accepted else None,
            )
            logger.info("%s: %s", strategy, results[strategy].to_dict())
    finally:
        if tmp is not None:
            tmp.cleanup()
    return results


def summary_table(results: dict[str, StrategySummary]) -> str:
    reports = [(name, s.report) for name, s in results.items() if s.report is not None]
    lines = [f"{'strategy':<14} {'accept':>8} {'len':>8} {'turn_err':>9}"]
    for name, s in results.items():
        lines.append(
            f"{name:<14} {s.acceptance_rate:>8.3f} {s.mean_accepted_length:>8.3f} {s.turn_error_rate:>9.4f}"
        )
    text = "\n".join(lines) + "\n"
    if reports:
        text += "\n" + compare_reports(reports).to_text()
    return text
