from __future__ import annotations

import json

import httpx
import pytest

from grmfilter.actors import JudgeRequest, RolloutAborted
from grmfilter.config import GatewaySettings
from grmfilter.core import ActionKind
from grmfilter.gateway import AuditLog, GatewayClient, GatewayJudge, GatewayPolicy, state_messages
from grmfilter.simenv import make_task


def _reply(content):
    return httpx.Response(200, json={"choices": [{"message": {"content": content}}]})


def _client(handler, tmp_path, retries=2, monkeypatch=None):
    settings = GatewaySettings(base_url="http://gw.test/v1", max_retries=retries, backoff=0.5)
    return GatewayClient(settings, AuditLog(tmp_path / "audit.jsonl"), httpx.MockTransport(handler),
                         sleep=lambda s: None)


def test_policy_issues_one_request_per_candidate(tmp_path, monkeypatch):
    monkeypatch.setenv("GRMFILTER_API_KEY", "secret")
    seen = []

    def handler(request):
        seen.append(json.loads(request.content))
        assert request.headers["Authorization"] == "Bearer secret"
        return _reply("<function=execute_bash>\n<parameter=command>ls</parameter>\n</function>")

    policy = GatewayPolicy(_client(handler, tmp_path))
    actions = policy.sample(make_task(1).initial_state(), [1, 2, 3, 4, 5])
    assert len(seen) == 5 and [p["seed"] for p in seen] == [1, 2, 3, 4, 5]
    assert all(a.kind is ActionKind.COMMAND and a.arg("command") == "ls" for a in actions)
    log = [json.loads(line) for line in (tmp_path / "audit.jsonl").read_text().splitlines()]
    assert len(log) == 5 and {e["purpose"] for e in log} == {"policy"}
    assert set(log[0]) >= {"timestamp", "purpose", "prompt_sha256", "response"}


def test_judge_sends_the_prompt(tmp_path):
    def handler(request):
        body = json.loads(request.content)
        assert body["messages"] == [{"role": "user", "content": "PROMPT"}]
        return _reply("ACTION 2 WINS")

    judge = GatewayJudge(_client(handler, tmp_path))
    state = make_task(1).initial_state()
    assert judge(JudgeRequest("turn", "PROMPT", state, ())) == "ACTION 2 WINS"


def test_retries_then_succeeds(tmp_path):
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(503) if len(calls) < 3 else _reply("ok")

    assert _client(handler, tmp_path).complete([], "m", "grm", 0.0) == "ok"
    assert len(calls) == 3


def test_exhausted_retries_abort(tmp_path):
    def handler(request):
        raise httpx.ConnectError("down")

    sleeps = []
    client = _client(handler, tmp_path, retries=2)
    client._sleep = sleeps.append
    with pytest.raises(RolloutAborted):
        client.complete([], "m", "policy", 1.0)
    assert sleeps == [0.5, 1.0]
    entry = json.loads((tmp_path / "audit.jsonl").read_text())
    assert entry["response"] is None and "ConnectError" in entry["error"]


def test_client_error_is_not_retried(tmp_path):
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(400, text="bad model")

    with pytest.raises(RolloutAborted, match="400"):
        _client(handler, tmp_path).complete([], "m", "grm", 0.0)
    assert len(calls) == 1


def test_state_messages_alternate_roles():
    task = make_task(2)
    msgs = state_messages(task.initial_state())
    assert msgs == [{"role": "user", "content": task.initial_prompt}]
