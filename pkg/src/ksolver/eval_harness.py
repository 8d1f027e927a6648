"""End-to-end evaluation: pipeline runs, accuracy reports, trace inspection.

The report is a pure function of the trace list: report_from_traces()
recomputes the headline numbers from the trace file alone, and the two
must always agree.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .backend_clients import RemoteJudge, local_judge
from .errors import JudgeParseError, KSolverError, NotFound
from .grounding import QAInstance
from .kg_store import KnowledgeGraph
from .prompt_codec import TEMPLATE_VERSION
from .solver_loop import (
    BackendFactory,
    DecisionBackend,
    ReasoningTrace,
    SolveParams,
    run_batch,
    write_traces,
)

logger = logging.getLogger(__name__)


def outcome_class(outcome: str, outcome_label: str | None) -> str:
    """answered / fallback / unresolved; the three always sum to the total."""
    if outcome == "answered":
        return "answered"
    if outcome == "fallback" and outcome_label is not None:
        return "fallback"
    return "unresolved"


@dataclass
class EvalReport:
    total: int
    answered: int
    fallback: int
    unresolved: int
    accuracy: float
    accuracy_by_outcome: dict[str, float | None]
    mean_rounds: float
    attrition: dict
    fingerprint: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "total": self.total,
            "answered": self.answered,
            "fallback": self.fallback,
            "unresolved": self.unresolved,
            "accuracy": self.accuracy,
            "accuracy_by_outcome": self.accuracy_by_outcome,
            "mean_rounds": self.mean_rounds,
            "attrition": self.attrition,
            "fingerprint": self.fingerprint,
        }

    def render_table(self) -> str:
        rows = [
            ("total instances", self.total),
            ("answered", self.answered),
            ("fallback", self.fallback),
            ("unresolved", self.unresolved),
            ("accuracy", f"{self.accuracy:.4f}"),
            ("mean rounds", f"{self.mean_rounds:.2f}"),
        ]
        for cls in ("answered", "fallback", "unresolved"):
            acc = self.accuracy_by_outcome.get(cls)
            rows.append((f"accuracy[{cls}]", "-" if acc is None else f"{acc:.4f}"))
        for key in sorted(self.attrition):
            rows.append((f"attrition.{key}", self.attrition[key]))
        width = max(len(name) for name, _ in rows)
        lines = [f"{name.ljust(width)}  {value}" for name, value in rows]
        return "\n".join(lines)


def _aggregate(trace_rows: list[dict], fingerprint: dict | None = None) -> EvalReport:
    total = len(trace_rows)
    counts = {"answered": 0, "fallback": 0, "unresolved": 0}
    scores = {"answered": [], "fallback": [], "unresolved": []}
    rounds_used = 0
    no_answer_reachable = 0
    empty_question = 0
    reach_fractions: list[float] = []
    for row in trace_rows:
        cls = outcome_class(row.get("outcome", "error"), row.get("outcome_label"))
        counts[cls] += 1
        scores[cls].append(int(row.get("judge_score") or 0))
        rounds_used += len(row.get("rounds", []))
        reach = row.get("reachability") or {}
        if reach:
            flags = list(reach.values())
            reach_fractions.append(sum(flags) / len(flags))
            if not any(flags):
                no_answer_reachable += 1
        if "question" in (row.get("empty_sides") or []):
            empty_question += 1
    all_scores = [s for cls_scores in scores.values() for s in cls_scores]
    accuracy = sum(all_scores) / total if total else 0.0
    by_outcome = {
        cls: (sum(vals) / len(vals) if vals else None) for cls, vals in scores.items()
    }
    attrition = {
        "no_answer_reachable": no_answer_reachable,
        "empty_question_grounding": empty_question,
        "mean_choice_reachability": (
            round(sum(reach_fractions) / len(reach_fractions), 6) if reach_fractions else None
        ),
    }
    return EvalReport(
        total=total,
        answered=counts["answered"],
        fallback=counts["fallback"],
        unresolved=counts["unresolved"],
        accuracy=accuracy,
        accuracy_by_outcome=by_outcome,
        mean_rounds=rounds_used / total if total else 0.0,
        attrition=attrition,
        fingerprint=fingerprint or {},
    )


def evaluate(
    g: KnowledgeGraph,
    instances: Iterable[QAInstance],
    backend: DecisionBackend | BackendFactory,
    params: SolveParams,
    judge: str = "local",
    judge_client: RemoteJudge | None = None,
    backend_descriptor: dict | None = None,
    out_dir: str | Path | None = None,
    include_timings: bool = False,
) -> tuple[EvalReport, list[ReasoningTrace]]:
    """Run the full pipeline and aggregate an accuracy report.

    Per-instance errors (including judge failures) score zero and are
    recorded on the trace; the run itself always completes.
    """
    items = list(instances)
    results = run_batch(items, g, backend, params)
    qa_by_id = {qa.id: qa for qa in items}

    for predicted, trace in results:
        qa = qa_by_id.get(trace.instance_id)
        if judge == "local" or qa is None:
            verdict = local_judge(trace.predicted_label, trace.answer_key)
        else:
            if judge_client is None:
                raise ValueError("remote judge selected but no judge client given")
            if trace.predicted_label is None:
                model_reply = "no answer"
            else:
                try:
                    body = qa.choice_text(trace.predicted_label)
                    model_reply = f"{trace.predicted_label}. {body}"
                except KeyError:
                    model_reply = trace.predicted_label
            try:
                verdict = judge_client.judge(
                    qa.question, list(qa.choices), qa.answer_key or "", model_reply
                )
            except (JudgeParseError, KSolverError) as exc:
                logger.warning("%s: judge failed: %s", trace.instance_id, exc)
                trace.error = f"judge: {exc}"
                verdict = local_judge(None, trace.answer_key)
        trace.judge_score = verdict.score

    traces = [trace for _, trace in results]
    fingerprint = {
        "seed": params.seed,
        "k": params.k,
        "rounds": params.rounds,
        "fallback_policy": params.fallback_policy,
        "template_version": TEMPLATE_VERSION,
        "relation_catalog": g.relations.version,
        "judge": judge,
        "backend": backend_descriptor
        or (backend.descriptor() if isinstance(backend, DecisionBackend) else {"name": "factory"}),
    }
    report = _aggregate([t.to_json() for t in traces], fingerprint)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_traces(traces, out_dir / "traces.jsonl", include_timings=include_timings)
        with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
            json.dump(report.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(out_dir / "report.txt", "w", encoding="utf-8") as fh:
            fh.write(report.render_table())
            fh.write("\n")
    return report, traces


def report_from_traces(source: str | Path | list[dict]) -> EvalReport:
    """Recompute the report from a trace file alone (no run state)."""
    if isinstance(source, (str, Path)):
        rows = []
        with open(source, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rows.append(json.loads(line))
    else:
        rows = source
    return _aggregate(rows)


def render_trace_path(row: dict, show_replies: bool = False) -> str:
    """Human-readable walk: v0 —r1→ v1 —r2→ ... [outcome]."""
    if row.get("initial_entity"):
        parts = [row["initial_entity"].replace("_", " ")]
    else:
        parts = ["(no start)"]
    for rnd in row.get("rounds", []):
        chosen = rnd.get("chosen")
        if not chosen:
            continue
        rel = chosen["relation"] + ("*" if chosen.get("reversed") else "")
        parts.append(f" —{rel}→ {chosen['tail'].replace('_', ' ')}")
    outcome = row.get("outcome", "?")
    label = row.get("outcome_label")
    marker = f" [{outcome} {label}]" if label else f" [{outcome}]"
    text = "".join(parts) + marker
    if show_replies:
        lines = [text]
        for rnd in row.get("rounds", []):
            lines.append(f"round {rnd['round']} reply: {rnd['raw_reply']}")
        if row.get("fallback_reply") is not None:
            lines.append(f"fallback reply: {row['fallback_reply']}")
        text = "\n".join(lines)
    return text


def inspect_trace(
    trace_path: str | Path, instance_id: str, show_replies: bool = False
) -> str:
    """Render one trace from a trace file; NotFound when the id is absent."""
    with open(trace_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            if row.get("instance_id") == instance_id:
                return render_trace_path(row, show_replies=show_replies)
    raise NotFound(f"instance {instance_id!r} not in {trace_path}")
