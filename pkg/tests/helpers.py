"""Shared builders for simulator-backed tests."""

from __future__ import annotations

from grmfilter.actors import derive_seed
from grmfilter.filtering import RunConfig, rollout
from grmfilter.rubrics import default_rubrics
from grmfilter.simenv import OracleJudge, ScriptedPolicy, ScriptedPolicyConfig, SimEnvironment, make_task


class RecordingJudge:
    """Wraps a judge and keeps every request it saw."""

    def __init__(self, inner):
        self.inner = inner
        self.requests = []

    def __call__(self, request):
        self.requests.append(request)
        return self.inner(request)


def sim_run(task_seed, strategy="turn_level", N=3, L=5, T=20, competence=0.6, seed=None,
            difficulty=1, env_cls=SimEnvironment, judge_wrapper=None, **cfg):
    task = make_task(task_seed, difficulty)
    level = "segment" if strategy == "segment_level" else "turn"
    rubrics = default_rubrics(level)
    judge = RecordingJudge(judge_wrapper(OracleJudge(task, rubrics)) if judge_wrapper else OracleJudge(task, rubrics))
    policy = ScriptedPolicy(task, ScriptedPolicyConfig(competence=competence))
    run_cfg = RunConfig(strategy=strategy, N=N, L=L, T=T, **cfg)
    seed = derive_seed("test", task_seed) if seed is None else seed
    traj = rollout(task.initial_state(), policy, env_cls(task), judge, rubrics, task.side_info(), run_cfg, seed)
    return traj, judge, task
