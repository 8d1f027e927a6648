from __future__ import annotations

import json

import pytest

from ksolver import (
    SolveParams,
    evaluate,
    inspect_trace,
    oracle_factory,
    random_factory,
    report_from_traces,
    write_traces,
)
from ksolver.errors import NotFound

from synthetic import make_planted_instance


def planted_suite(count: int, base_seed: int = 100):
    cases = [make_planted_instance(base_seed + i) for i in range(count)]
    return cases


def run_suite(cases, backend_factory, seed=7, fallback="wrong", rounds=5, out_dir=None):
    reports = []
    all_traces = []
    for g, qa, meta in cases:
        params = SolveParams(rounds=rounds, seed=seed, k=meta["k"],
                             fallback_policy=fallback)
        report, traces = evaluate(g, [qa], backend_factory, params,
                                  backend_descriptor={"name": "test"})
        reports.append(report)
        all_traces.extend(traces)
    return reports, all_traces


def test_oracle_suite_accuracy_one():
    cases = planted_suite(20)
    reports, traces = run_suite(cases, oracle_factory())
    assert all(r.accuracy == 1.0 for r in reports)
    assert all(r.answered == 1 for r in reports)
    assert all(t.judge_score == 1 for t in traces)


def test_zero_rounds_score_as_wrong_accuracy_zero():
    cases = planted_suite(5)
    reports, traces = run_suite(cases, oracle_factory(), fallback="wrong", rounds=0)
    assert all(r.accuracy == 0.0 for r in reports)
    assert all(r.unresolved == 1 for r in reports)


def test_counts_partition_invariant():
    cases = planted_suite(12)
    reports, _ = run_suite(cases, random_factory())
    for r in reports:
        assert r.answered + r.fallback + r.unresolved == r.total


def test_report_recomputable_from_trace_file(tmp_path):
    g, qa, meta = make_planted_instance(321)
    params = SolveParams(rounds=5, seed=5, k=meta["k"], fallback_policy="wrong")
    report, traces = evaluate(
        g, [qa], random_factory(), params,
        backend_descriptor={"name": "random"}, out_dir=tmp_path / "run",
    )
    recomputed = report_from_traces(tmp_path / "run" / "traces.jsonl")
    assert recomputed.accuracy == report.accuracy
    assert recomputed.total == report.total
    assert recomputed.answered == report.answered
    assert recomputed.fallback == report.fallback
    assert recomputed.unresolved == report.unresolved
    assert recomputed.mean_rounds == report.mean_rounds


def test_identical_runs_identical_outputs(tmp_path):
    g, qa, meta = make_planted_instance(55)
    for name in ("one", "two"):
        params = SolveParams(rounds=5, seed=11, k=meta["k"])
        evaluate(g, [qa], oracle_factory(), params,
                 backend_descriptor={"name": "oracle"}, out_dir=tmp_path / name)
    a = (tmp_path / "one" / "traces.jsonl").read_bytes()
    b = (tmp_path / "two" / "traces.jsonl").read_bytes()
    assert a == b
    ra = (tmp_path / "one" / "report.json").read_bytes()
    rb = (tmp_path / "two" / "report.json").read_bytes()
    assert ra == rb


def test_report_json_and_table(tmp_path):
    g, qa, meta = make_planted_instance(9)
    params = SolveParams(rounds=5, seed=1, k=meta["k"])
    report, _ = evaluate(g, [qa], oracle_factory(), params,
                         backend_descriptor={"name": "oracle"}, out_dir=tmp_path)
    payload = json.loads((tmp_path / "report.json").read_text())
    assert payload["total"] == 1
    assert 0.0 <= payload["accuracy"] <= 1.0
    assert payload["fingerprint"]["template_version"]
    table = (tmp_path / "report.txt").read_text()
    assert "accuracy" in table and "total instances" in table


def test_remote_judge_integration(chain_graph, chain_qa):
    from ksolver import RemoteJudge
    from test_backend_clients import MockChatServer, make_config

    server = MockChatServer()
    try:
        judge = RemoteJudge(make_config(server))
        params = SolveParams(rounds=5, seed=3)
        report, traces = evaluate(
            chain_graph, [chain_qa], oracle_factory(), params,
            judge="remote", judge_client=judge,
            backend_descriptor={"name": "oracle"},
        )
        assert report.accuracy == 1.0
        judged = server.requests[-1]["body"]["messages"][1]["content"]
        assert "Ground truth: B. fun" in judged

        # unparseable judge replies score zero and are recorded, not fatal
        server.default = (200, {"choices": [{"message": {"content": "yes"}}]})
        report2, traces2 = evaluate(
            chain_graph, [chain_qa], oracle_factory(), params,
            judge="remote", judge_client=judge,
            backend_descriptor={"name": "oracle"},
        )
        assert report2.accuracy == 0.0
        assert "judge" in (traces2[0].error or "")
    finally:
        server.close()


def test_inspect_trace_rendering(tmp_path, chain_graph, chain_qa):
    from ksolver import extract, ground, solve
    from ksolver.solver_loop import BackendContext

    grounded = ground(chain_graph, chain_qa)
    sub = extract(chain_graph, grounded, k=2)
    backend = oracle_factory()(BackendContext(grounded, sub, seed=0))
    label, trace = solve(chain_graph, grounded, sub, backend, SolveParams(rounds=5, seed=3))
    trace_file = tmp_path / "traces.jsonl"
    write_traces([trace], trace_file)

    text = inspect_trace(trace_file, "q1")
    assert text.count("→") == 2
    assert text.endswith("[answered B]")
    assert text.startswith("child")

    with_replies = inspect_trace(trace_file, "q1", show_replies=True)
    assert "round 0 reply:" in with_replies

    with pytest.raises(NotFound):
        inspect_trace(trace_file, "missing-id")


def test_inspect_trace_dead_end_marker(tmp_path, chain_graph, chain_qa):
    from ksolver import GroundedInstance, extract, ground, solve
    from synthetic import CannedBackend

    grounded = ground(chain_graph, chain_qa)
    narrowed = GroundedInstance(
        qa=chain_qa,
        question_entities=frozenset({chain_graph.resolve("child")}),
        choice_entities=grounded.choice_entities,
    )
    sub = extract(chain_graph, narrowed, k=2)
    label, trace = solve(chain_graph, narrowed, sub, CannedBackend(["1", "1"]),
                         SolveParams(rounds=5, seed=0, fallback_policy="wrong"))
    trace_file = tmp_path / "t.jsonl"
    write_traces([trace], trace_file)
    text = inspect_trace(trace_file, "q1")
    assert "[dead_end]" in text
