from __future__ import annotations

import itertools
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from grmfilter.core import State
from grmfilter.rubrics import (
    PromptError,
    RubricConfigError,
    VerdictParseError,
    VerdictRangeError,
    assemble_pair_prompt,
    assemble_turn_prompt,
    default_rubrics,
    load_rubrics,
    parse_pair_verdict,
    parse_turn_verdict,
    run_pairwise_tournament,
    select_turn_winner,
    weighted_score,
)
from grmfilter.rubrics import SideInfo

import prompt_fixtures as fx

GOLDEN = Path(__file__).parent / "golden"

RUBRIC_DOC = """
rubrics:
  - {id: a, title: A, weight: 0.5, body: first}
  - {id: b, title: B, weight: 0.49, body: second}
"""


def test_default_rubrics_have_four_equal_weights():
    for level in ("turn", "segment"):
        rs = default_rubrics(level)
        assert len(rs) == 4 and rs.weights == [0.25] * 4


def test_weights_off_by_a_hundredth_fail_citing_tolerance():
    with pytest.raises(RubricConfigError, match="within"):
        load_rubrics(RUBRIC_DOC)


def test_weights_are_not_renormalised():
    rs = load_rubrics(RUBRIC_DOC.replace("0.49", "0.5"))
    assert rs.weights == [0.5, 0.5]


def test_duplicate_ids_rejected():
    with pytest.raises(RubricConfigError, match="duplicate"):
        load_rubrics(RUBRIC_DOC.replace("id: b", "id: a").replace("0.49", "0.5"))


def test_weighted_score_example():
    assert weighted_score([4, 2, 0, 4], [0.25] * 4) == pytest.approx(2.5)
    with pytest.raises(ValueError):
        weighted_score([5, 0, 0, 0], [0.25] * 4)


def test_turn_prompt_matches_golden():
    prompt = assemble_turn_prompt(fx.PREFIX, fx.CANDIDATES, fx.SIDE, default_rubrics("turn"))
    assert prompt == (GOLDEN / "turn_prompt.golden.txt").read_text(encoding="utf-8")


def test_pair_prompt_matches_golden():
    prompt = assemble_pair_prompt(fx.PREFIX, fx.SEGMENT_A, fx.SEGMENT_B, fx.SIDE, default_rubrics("segment"))
    assert prompt == (GOLDEN / "pair_prompt.golden.txt").read_text(encoding="utf-8")


def test_turn_prompt_sections_in_order():
    prompt = assemble_turn_prompt(fx.PREFIX, fx.CANDIDATES, fx.SIDE, default_rubrics("turn"))
    marks = [prompt.index(f"=== [{k}]") for k in range(1, 6)]
    assert marks == sorted(marks)
    assert "\nACTION i WINS\n" in prompt


def test_turn_prompt_never_shows_candidate_observations():
    prompt = assemble_turn_prompt(fx.PREFIX, fx.CANDIDATES, fx.SIDE, default_rubrics("turn"))
    # the observation the first candidate would produce is absent
    assert fx.SEGMENT_A[0].observation.raw_text not in prompt


def test_empty_patch_needs_opt_in():
    side = SideInfo(ground_truth_patch="", task_statement="x")
    with pytest.raises(PromptError):
        assemble_turn_prompt(fx.PREFIX, fx.CANDIDATES, side, default_rubrics())
    prompt = assemble_turn_prompt(fx.PREFIX, fx.CANDIDATES, side, default_rubrics(), allow_missing_patch=True)
    assert "(no ground-truth patch provided)" in prompt


def test_turn_prompt_needs_two_candidates():
    with pytest.raises(PromptError):
        assemble_turn_prompt(fx.PREFIX, fx.CANDIDATES[:1], fx.SIDE, default_rubrics())


def test_empty_history_renders_placeholder():
    prompt = assemble_turn_prompt(State("t", "p"), fx.CANDIDATES, fx.SIDE, default_rubrics())
    assert "(empty: no actions have been taken yet)" in prompt


def test_pair_rejects_empty_segment():
    with pytest.raises(PromptError):
        assemble_pair_prompt(fx.PREFIX, fx.SEGMENT_A, (), fx.SIDE, default_rubrics("segment"))


def test_parse_turn_verdict_last_conclusion_wins():
    raw = "ACTION 1 is tempting.\nACTION 1 WINS\nOn reflection:\naction 3 wins"
    assert parse_turn_verdict(raw, 3).winner_index == 3
    assert parse_turn_verdict(raw, 3).winner == 2


def test_parse_turn_verdict_errors():
    with pytest.raises(VerdictRangeError):
        parse_turn_verdict("ACTION 4 WINS", 3)
    with pytest.raises(VerdictParseError):
        parse_turn_verdict("I cannot decide.", 3)


def test_parse_turn_verdict_recomputes_totals():
    raw = (
        "ACTION 1:\n- Rubric 1 score: 4\n- Rubric 2 score: 4\n- Rubric 3 score: 0\n- Rubric 4 score: 0\n"
        "Weighted total score: 9.9\n\n"
        "ACTION 2:\n- Rubric 1 score: 1\nWeighted total: 0.25\n\nACTION 1 WINS"
    )
    v = parse_turn_verdict(raw, 2, [0.25] * 4)
    assert v.scores[0] == (4, 4, 0, 0) and v.totals[0] == pytest.approx(2.0)
    assert v.scores[1] == (1,) and v.totals[1] == pytest.approx(0.25)


def test_parse_pair_verdict():
    assert parse_pair_verdict("Trajectory 2 has errors. YES").first_wins
    assert not parse_pair_verdict("yes at first, but no").first_wins
    with pytest.raises(VerdictParseError):
        parse_pair_verdict("Nobody knows")  # no standalone token


@given(st.lists(st.floats(0, 4, allow_nan=False), min_size=1, max_size=8))
def test_select_turn_winner_is_first_argmax(totals):
    w = select_turn_winner(totals)
    assert totals[w] == max(totals) and all(t < totals[w] for t in totals[:w])


def test_tournament_single_candidate_needs_no_judge():
    calls = []
    assert run_pairwise_tournament(["a"], lambda i, j: calls.append(1) or True) == 0
    assert calls == []


@given(st.integers(2, 5), st.integers(0, 1000))
def test_tournament_judges_each_pair_once(n, seed):
    seen = []

    def judge(first, second):
        seen.append(frozenset((first, second)))
        return first < second

    records = []
    assert run_pairwise_tournament(list(range(n)), judge, seed, records) == 0
    assert sorted(seen, key=sorted) == sorted(map(frozenset, itertools.combinations(range(n), 2)), key=sorted)
    assert len(records) == n * (n - 1) // 2


def test_tournament_tie_goes_to_lowest_index():
    # cycle 0 > 1 > 2 > 0: one win each
    beats = {(0, 1), (1, 2), (2, 0)}
    assert run_pairwise_tournament([0, 1, 2], lambda a, b: (a, b) in beats, seed=5) == 0
