"""Rubrics, GRM prompt assembly, verdict parsing and selection rules."""

from __future__ import annotations

import itertools
import logging
import math
import random
import re
from concurrent.futures import Executor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Sequence

import yaml

from .core import Action, State, Step

logger = logging.getLogger(__name__)

WEIGHT_TOLERANCE = 1e-9
MAX_RUBRIC_SCORE = 4

TURN_TEMPLATE = "turn_prompt.txt"
PAIR_TEMPLATE = "pair_prompt.txt"
TURN_RUBRICS = "rubrics_turn.yaml"
SEGMENT_RUBRICS = "rubrics_segment.yaml"


class RubricConfigError(ValueError):
    pass


class PromptError(ValueError):
    pass


class VerdictParseError(ValueError):
    """The judge output has no recognisable conclusion."""


class VerdictRangeError(VerdictParseError):
    """The judge named a candidate that does not exist."""


@dataclass(frozen=True)
class Rubric:
    id: str
    title: str
    body: str
    weight: float


@dataclass(frozen=True)
class RubricSet:
    rubrics: tuple[Rubric, ...]

    def __post_init__(self) -> None:
        problems = rubric_problems(self.rubrics)
        if problems:
            raise RubricConfigError("; ".join(problems))

    @property
    def weights(self) -> list[float]:
        return [r.weight for r in self.rubrics]

    def __len__(self) -> int:
        return len(self.rubrics)

    def __iter__(self):
        return iter(self.rubrics)


@dataclass(frozen=True)
class SideInfo:
    ground_truth_patch: str
    task_statement: str
    extra_notes: str | None = None


@dataclass(frozen=True)
class TurnVerdict:
    winner_index: int  # 1-based, as written by the judge
    scores: tuple[tuple[int, ...] | None, ...]
    totals: tuple[float | None, ...]
    raw_text: str

    @property
    def winner(self) -> int:
        return self.winner_index - 1


@dataclass(frozen=True)
class PairVerdict:
    first_wins: bool
    raw_text: str


def rubric_problems(rubrics: Sequence[Rubric]) -> list[str]:
    """Every validation problem with a rubric list (empty when valid)."""
    problems = []
    if not rubrics:
        return ["rubric set is empty"]
    ids = [r.id for r in rubrics]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        problems.append(f"duplicate rubric ids: {', '.join(dupes)}")
    for r in rubrics:
        if not (0 < r.weight <= 1):
            problems.append(f"rubric {r.id!r} weight {r.weight} outside (0, 1]")
    total = math.fsum(r.weight for r in rubrics)
    if abs(total - 1.0) > WEIGHT_TOLERANCE:
        problems.append(f"rubric weights sum to {total!r}, expected 1 within {WEIGHT_TOLERANCE:g}")
    return problems


def load_rubrics(document: str | Path | dict[str, Any] | list[Any]) -> RubricSet:
    """Load and validate a rubric document.

    Accepts a path to a YAML/JSON file, a YAML string, or an already parsed
    mapping. Weights are validated but never renormalised.
    """
    data = _read_document(document)
    items = data.get("rubrics") if isinstance(data, dict) else data
    if not isinstance(items, list):
        raise RubricConfigError("rubric document must contain a 'rubrics' list")
    rubrics = []
    for i, item in enumerate(items):
        try:
            rubrics.append(
                Rubric(
                    id=str(item["id"]),
                    title=str(item["title"]),
                    body=str(item.get("body", "")).rstrip(),
                    weight=float(item["weight"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise RubricConfigError(f"rubric #{i + 1} is malformed: {exc}") from exc
    return RubricSet(tuple(rubrics))


def _read_document(document: str | Path | dict[str, Any] | list[Any]) -> Any:
    if isinstance(document, (dict, list)):
        return document
    if isinstance(document, Path) or ("\n" not in document and Path(document).is_file()):
        text = Path(document).read_text(encoding="utf-8")
    else:
        text = document
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise RubricConfigError(f"rubric document is not well-formed: {exc}") from exc


def default_rubrics(level: str = "turn") -> RubricSet:
    name = TURN_RUBRICS if level == "turn" else SEGMENT_RUBRICS
    return load_rubrics(_asset(name))


def _asset(name: str) -> str:
    return resources.files("grmfilter").joinpath("assets", name).read_text(encoding="utf-8")


_PLACEHOLDER_RE = re.compile(r"\{(\w+)\}")


def fill_template(template: str, values: dict[str, str]) -> str:
    def sub(m: re.Match[str]) -> str:
        key = m.group(1)
        if key not in values:
            raise PromptError(f"template placeholder {{{key}}} has no value")
        return values[key]

    return _PLACEHOLDER_RE.sub(sub, template)


def render_rubrics(rubrics: RubricSet) -> str:
    blocks = []
    for r in rubrics:
        blocks.append(f"{r.title} (Weight: {r.weight * 100:g}%)\n\n{r.body}")
    return "\n\n".join(blocks)


def render_steps(steps: Sequence[Step], start: int = 1) -> str:
    blocks = []
    for offset, (action, observation) in enumerate(steps):
        blocks.append(
            f"--- Step {start + offset} ---\n"
            f"[ACTION]\n{action.raw_text}\n"
            f"[EXECUTION RESULT]\n{observation.raw_text}"
        )
    return "\n\n".join(blocks)


def render_history(state: State) -> str:
    if not state.history:
        return "(empty: no actions have been taken yet)"
    return render_steps(state.history)


def render_patch(side: SideInfo, allow_missing_patch: bool = False) -> str:
    patch = side.ground_truth_patch.rstrip("\n")
    if not patch:
        if not allow_missing_patch:
            raise PromptError("ground-truth patch is empty and patch-free judging is not enabled")
        patch = "(no ground-truth patch provided)"
    if side.extra_notes:
        patch += f"\n\nAdditional notes:\n{side.extra_notes}"
    return patch


def assemble_turn_prompt(
    state: State,
    candidates: Sequence[Action],
    side: SideInfo,
    rubrics: RubricSet,
    allow_missing_patch: bool = False,
) -> str:
    if len(candidates) < 2:
        raise PromptError("turn-level judging needs at least two candidates")
    rendered = "\n\n".join(
        f"--- ACTION {i} ---\n{a.raw_text}" for i, a in enumerate(candidates, start=1)
    )
    return fill_template(
        _asset(TURN_TEMPLATE),
        {
            "candidate_count": str(len(candidates)),
            "instruction": state.initial_prompt,
            "patch": render_patch(side, allow_missing_patch),
            "history": render_history(state),
            "rubrics": render_rubrics(rubrics),
            "candidates": rendered,
        },
    )


def assemble_pair_prompt(
    prefix: State,
    seg_a: Sequence[Step],
    seg_b: Sequence[Step],
    side: SideInfo,
    rubrics: RubricSet,
    allow_missing_patch: bool = False,
) -> str:
    """Pair prompt; ``seg_a``/``seg_b`` are step lists or SegmentCandidates."""
    seg_a = _segment_steps(seg_a)
    seg_b = _segment_steps(seg_b)
    if not seg_a or not seg_b:
        raise PromptError("pair judging needs two non-empty segments")
    start = prefix.t
    rendered = (
        f"--- TRAJECTORY 1 ---\n{render_steps(seg_a, start)}\n\n"
        f"--- TRAJECTORY 2 ---\n{render_steps(seg_b, start)}"
    )
    return fill_template(
        _asset(PAIR_TEMPLATE),
        {
            "candidate_count": "2",
            "instruction": prefix.initial_prompt,
            "patch": render_patch(side, allow_missing_patch),
            "history": render_history(prefix),
            "rubrics": render_rubrics(rubrics),
            "candidates": rendered,
        },
    )


def _segment_steps(segment: Any) -> tuple[Step, ...]:
    return tuple(getattr(segment, "steps", segment))


_WINS_RE = re.compile(r"\bACTION\s+(\d+)\s+WINS\b", re.IGNORECASE)
_YES_NO_RE = re.compile(r"\b(YES|NO)\b", re.IGNORECASE)
_SECTION_RE = re.compile(
    r"^[\s#*>|-]*(?:candidate\s+)?action\s*(\d+)\b(?!\s+wins)", re.IGNORECASE | re.MULTILINE
)
_SCORE_RE = re.compile(r"rubric\s*(\d+)\b[^\n:]*:\s*\**\s*([0-4])\b", re.IGNORECASE)
_TOTAL_RE = re.compile(r"weighted\s+total(?:\s+score)?\s*[:=]?\s*\**\s*(\d+(?:\.\d+)?)", re.IGNORECASE)


def parse_turn_verdict(
    raw: str, N: int, weights: Sequence[float] | None = None
) -> TurnVerdict:
    """Parse a turn-level judgment; the last ``ACTION i WINS`` line decides.

    Per-rubric scores and totals are extracted on a best-effort basis and are
    advisory only. When full score rows and ``weights`` are available the
    totals are recomputed from them.
    """
    matches = _WINS_RE.findall(raw)
    if not matches:
        raise VerdictParseError("no 'ACTION i WINS' conclusion found")
    winner = int(matches[-1])
    if not 1 <= winner <= N:
        raise VerdictRangeError(f"judge picked ACTION {winner}, valid range is 1..{N}")
    scores, totals = _parse_score_rows(raw, N, weights)
    return TurnVerdict(winner, scores, totals, raw)


def _parse_score_rows(
    raw: str, N: int, weights: Sequence[float] | None
) -> tuple[tuple[tuple[int, ...] | None, ...], tuple[float | None, ...]]:
    conclusion = list(_WINS_RE.finditer(raw))[-1].start()
    headers = [m for m in _SECTION_RE.finditer(raw) if m.start() < conclusion]
    scores: list[tuple[int, ...] | None] = [None] * N
    totals: list[float | None] = [None] * N
    for k, header in enumerate(headers):
        idx = int(header.group(1)) - 1
        if not 0 <= idx < N or scores[idx] is not None:
            continue
        end = headers[k + 1].start() if k + 1 < len(headers) else conclusion
        body = raw[header.end():end]
        by_rubric = {int(r): int(s) for r, s in _SCORE_RE.findall(body)}
        if weights is not None and sorted(by_rubric) == list(range(1, len(weights) + 1)):
            row = tuple(by_rubric[i] for i in range(1, len(weights) + 1))
            scores[idx] = row
            totals[idx] = weighted_score(row, weights)
        else:
            if by_rubric:
                scores[idx] = tuple(by_rubric[i] for i in sorted(by_rubric))
            total = _TOTAL_RE.search(body)
            if total:
                totals[idx] = float(total.group(1))
    return tuple(scores), tuple(totals)


def parse_pair_verdict(raw: str) -> PairVerdict:
    """Last standalone YES/NO token (case-insensitive) decides."""
    tokens = _YES_NO_RE.findall(raw)
    if not tokens:
        raise VerdictParseError("no YES/NO token found")
    return PairVerdict(tokens[-1].upper() == "YES", raw)


def weighted_score(scores: Sequence[int], weights: Sequence[float]) -> float:
    if len(scores) != len(weights):
        raise ValueError(f"{len(scores)} scores for {len(weights)} weights")
    for s in scores:
        if not 0 <= s <= MAX_RUBRIC_SCORE:
            raise ValueError(f"score {s} outside 0..{MAX_RUBRIC_SCORE}")
    return math.fsum(s * w for s, w in zip(scores, weights))


def select_turn_winner(totals: Sequence[float]) -> int:
    """0-based argmax of weighted totals; ties go to the lowest index."""
    best = 0
    for i in range(1, len(totals)):
        if totals[i] > totals[best]:
            best = i
    return best


PairJudge = Callable[[int, int], bool]


def run_pairwise_tournament(
    segments: Sequence[Any],
    judge: PairJudge,
    seed: int = 0,
    records: list[dict[str, Any]] | None = None,
    executor: Executor | None = None,
) -> int:
    """Round-robin over all unordered pairs; most wins takes it.

    ``judge(first, second)`` receives candidate indices in presentation order
    and returns True when ``first`` is better. Each pair is judged exactly
    once, with its order drawn from ``seed``. Ties go to the lowest index.
    Match records are appended to ``records`` when given.
    """
    n = len(segments)
    if n < 1:
        raise ValueError("tournament needs at least one segment")
    rng = random.Random(seed)
    pairs = [
        (i, j) if rng.random() < 0.5 else (j, i) for i, j in itertools.combinations(range(n), 2)
    ]
    if executor is None:
        outcomes = [judge(a, b) for a, b in pairs]
    else:
        outcomes = list(executor.map(lambda p: judge(*p), pairs))
    wins = [0] * n
    for (first, second), first_wins in zip(pairs, outcomes):
        winner = first if first_wins else second
        wins[winner] += 1
        if records is not None:
            records.append({"first": first, "second": second, "winner": winner})
    best = 0
    for i in range(1, n):
        if wins[i] > wins[best]:
            best = i
    return best
