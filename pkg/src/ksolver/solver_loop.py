"""The multi-round traversal loop: from a question entity to an answer.

A traversal starts at a seeded-uniform question entity, asks the decision
backend to pick one neighbor per round from the subgraph (never the full
graph), and stops when the walk lands on any answer entity, the round cap
fires, the walk dead-ends, or the backend abstains. Every run yields a
full ReasoningTrace regardless of outcome; unresolved terminals go
through the configured fallback policy.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Protocol, runtime_checkable

from .errors import BackendFailure, NoAnswerReachable
from .grounding import GroundedInstance, QAInstance, ground
from .kg_store import EntityId, KnowledgeGraph, Step
from .prompt_codec import (
    EncodeLimits,
    StepPrompt,
    decode_label,
    decode_selection,
    encode_direct,
    encode_step,
)
from .subgraph_extractor import Subgraph, extract

logger = logging.getLogger(__name__)

DEFAULT_ROUNDS = 5

TRACE_SCHEMA_VERSION = 1


def derive_seed(global_seed: int, instance_id: str) -> int:
    """Stable per-instance seed so batch order and parallelism never matter."""
    digest = hashlib.sha256(f"{global_seed}:{instance_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


@runtime_checkable
class DecisionBackend(Protocol):
    """Anything that can answer a rendered prompt with text.

    Backends are stateless across rounds except through the prompt's
    embedded history.
    """

    name: str

    def descriptor(self) -> dict: ...

    def complete(self, prompt: StepPrompt) -> str: ...


@dataclass(frozen=True)
class BackendContext:
    """Per-instance context handed to backend factories."""

    grounded: GroundedInstance
    subgraph: Subgraph
    seed: int


BackendFactory = Callable[[BackendContext], DecisionBackend]


def as_factory(backend: DecisionBackend | BackendFactory) -> BackendFactory:
    if callable(backend) and not isinstance(backend, DecisionBackend):
        return backend  # already a factory
    return lambda ctx: backend


@dataclass
class SolveParams:
    rounds: int = DEFAULT_ROUNDS
    seed: int = 0
    fallback_policy: str = "direct"  # "direct" | "wrong"
    k: int = 2
    all_starts: bool = False
    workers: int = 1
    limits: EncodeLimits = field(default_factory=EncodeLimits)

    def __post_init__(self):
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.fallback_policy not in ("direct", "wrong"):
            raise ValueError(f"unknown fallback policy {self.fallback_policy!r}")


@dataclass
class TraversalState:
    """Live loop state. The round index is the history length by
    construction, and consecutive history entries chain head-to-tail."""

    current_head: EntityId
    rng_seed: int
    history: list[Step] = field(default_factory=list)

    @property
    def round(self) -> int:
        return len(self.history)

    def advance(self, step: Step) -> None:
        self.history.append(step)
        self.current_head = step.tail


@dataclass
class RoundRecord:
    round_index: int
    prompt_version: str
    neighbor_count: int
    raw_reply: str
    decode_stage: int
    decode_kind: str
    chosen: dict | None  # {"head","relation","tail","reversed"} with names
    wall_time_s: float = 0.0

    def to_json(self, include_timings: bool = False) -> dict:
        out = {
            "round": self.round_index,
            "prompt_version": self.prompt_version,
            "neighbor_count": self.neighbor_count,
            "raw_reply": self.raw_reply,
            "decode_stage": self.decode_stage,
            "decode_kind": self.decode_kind,
            "chosen": self.chosen,
        }
        if include_timings:
            out["wall_time_s"] = self.wall_time_s
        return out


@dataclass
class ReasoningTrace:
    """The complete, auditable record of one instance's resolution."""

    instance_id: str
    seed: int
    initial_entity: str | None
    rounds: list[RoundRecord] = field(default_factory=list)
    outcome: str = "error"  # answered|round_limit|dead_end|abstained|fallback|error
    outcome_label: str | None = None
    stop_reason: str | None = None
    predicted_label: str | None = None
    answer_key: str | None = None
    judge_score: int | None = None
    fallback_used: bool = False
    fallback_reply: str | None = None
    fallback_decode_stage: int | None = None
    reachability: dict[str, bool] = field(default_factory=dict)
    empty_sides: tuple[str, ...] = ()
    all_start_votes: dict[str, int] | None = None
    error: str | None = None

    def to_json(self, include_timings: bool = False) -> dict:
        return {
            "schema_version": TRACE_SCHEMA_VERSION,
            "instance_id": self.instance_id,
            "seed": self.seed,
            "initial_entity": self.initial_entity,
            "rounds": [r.to_json(include_timings) for r in self.rounds],
            "outcome": self.outcome,
            "outcome_label": self.outcome_label,
            "stop_reason": self.stop_reason,
            "predicted_label": self.predicted_label,
            "answer_key": self.answer_key,
            "judge_score": self.judge_score,
            "fallback_used": self.fallback_used,
            "fallback_reply": self.fallback_reply,
            "fallback_decode_stage": self.fallback_decode_stage,
            "reachability": {k: self.reachability[k] for k in sorted(self.reachability)},
            "empty_sides": list(self.empty_sides),
            "all_start_votes": self.all_start_votes,
            "error": self.error,
        }


def _step_record(g: KnowledgeGraph, step: Step) -> dict:
    return {
        "head": g.name(step.head),
        "relation": g.relations.by_id(step.relation).name,
        "tail": g.name(step.tail),
        "reversed": step.is_reversed,
    }


def _traverse(
    g: KnowledgeGraph,
    grounded: GroundedInstance,
    subgraph: Subgraph,
    backend: DecisionBackend,
    params: SolveParams,
    start: EntityId,
    trace: ReasoningTrace,
) -> tuple[str, str | None]:
    """Run the round loop from one start. Returns (terminal reason, label)."""
    answer_union = grounded.all_answer_entities()
    state = TraversalState(current_head=start, rng_seed=params.seed)
    taken: set[tuple[EntityId, int, EntityId, bool]] = set()
    while True:
        head = state.current_head
        if head in answer_union:
            return "answered", grounded.owning_label(head)
        if state.round >= params.rounds:
            return "round_limit", None
        menu = [
            nb
            for nb in subgraph.neighbors(head)
            if (head, nb.relation.id, nb.tail, nb.is_reversed) not in taken
        ]
        if not menu:
            return "dead_end", None
        prompt = encode_step(
            g,
            grounded.qa,
            state.history,
            head,
            menu,
            params.limits,
            answer_entities=answer_union,
        )
        t0 = time.perf_counter()
        try:
            reply = backend.complete(prompt)
        except BackendFailure as exc:
            exc.round_index = state.round
            exc.trace = trace
            raise
        elapsed = time.perf_counter() - t0
        selection = decode_selection(prompt, reply)
        chosen_step: Step | None = None
        chosen_json = None
        if selection.kind != "abstain":
            nb = prompt.neighbor_index[selection.menu_number - 1]
            chosen_step = Step(head, nb.relation.id, nb.tail, nb.is_reversed)
            chosen_json = _step_record(g, chosen_step)
        trace.rounds.append(
            RoundRecord(
                round_index=state.round,
                prompt_version=prompt.template_version,
                neighbor_count=len(prompt.neighbor_index),
                raw_reply=reply,
                decode_stage=selection.stage,
                decode_kind=selection.kind,
                chosen=chosen_json,
                wall_time_s=elapsed,
            )
        )
        if chosen_step is None:
            return "abstained", None
        taken.add((head, chosen_step.relation, chosen_step.tail, chosen_step.is_reversed))
        state.advance(chosen_step)


def fallback_direct(qa: QAInstance, backend: DecisionBackend) -> tuple[str | None, str, int]:
    """One non-traversal prompt over question + choices.

    Returns (label or None, raw reply, decode stage); None means the
    reply decoded to no choice and the instance stays unresolved.
    """
    prompt = encode_direct(qa)
    reply = backend.complete(prompt)
    label, stage = decode_label(qa, reply)
    return label, reply, stage


def solve(
    g: KnowledgeGraph,
    grounded: GroundedInstance,
    subgraph: Subgraph,
    backend: DecisionBackend,
    params: SolveParams,
) -> tuple[str | None, ReasoningTrace]:
    """Resolve one grounded instance; always returns a trace.

    The initial head is drawn seeded-uniform from the question entities
    that survived extraction. With all_starts set, every start is
    traversed and the answered labels are majority-voted (ties break
    alphabetically).
    """
    qa = grounded.qa
    trace = ReasoningTrace(
        instance_id=qa.id,
        seed=params.seed,
        initial_entity=None,
        answer_key=qa.answer_key,
        reachability=dict(subgraph.reachability),
        empty_sides=grounded.empty_sides,
    )
    starts = sorted(grounded.question_entities & subgraph.nodes)
    if not starts:
        reason, label = "no_grounded_start", None
    elif params.all_starts:
        votes: Counter[str] = Counter()
        runs: list[tuple[str, str | None, ReasoningTrace]] = []
        for start in starts:
            sub_trace = ReasoningTrace(
                instance_id=qa.id, seed=params.seed, initial_entity=g.name(start)
            )
            r, lab = _traverse(g, grounded, subgraph, backend, params, start, sub_trace)
            runs.append((r, lab, sub_trace))
            if r == "answered" and lab is not None:
                votes[lab] += 1
        trace.all_start_votes = dict(sorted(votes.items()))
        if votes:
            top = max(votes.values())
            label = min(lab for lab, c in votes.items() if c == top)
            reason = "answered"
            rep = next(t for r, lab, t in runs if r == "answered" and lab == label)
        else:
            reason, label = runs[0][0], None
            rep = runs[0][2]
        trace.initial_entity = rep.initial_entity
        trace.rounds = rep.rounds
    else:
        rng = random.Random(params.seed)
        start = rng.choice(starts)
        trace.initial_entity = g.name(start)
        reason, label = _traverse(g, grounded, subgraph, backend, params, start, trace)

    trace.stop_reason = reason
    if reason == "answered":
        trace.outcome = "answered"
        trace.outcome_label = label
        trace.predicted_label = label
    elif params.fallback_policy == "direct":
        try:
            fb_label, fb_reply, fb_stage = fallback_direct(qa, backend)
        except BackendFailure as exc:
            exc.trace = trace
            raise
        trace.outcome = "fallback"
        trace.outcome_label = fb_label
        trace.predicted_label = fb_label
        trace.fallback_used = True
        trace.fallback_reply = fb_reply
        trace.fallback_decode_stage = fb_stage
    else:
        trace.outcome = reason
        trace.predicted_label = None
    return trace.predicted_label, trace


def run_batch(
    instances: Iterable[QAInstance],
    g: KnowledgeGraph,
    backend: DecisionBackend | BackendFactory,
    params: SolveParams,
) -> list[tuple[str | None, ReasoningTrace]]:
    """Ground, extract, and solve each instance; results in input order.

    Per-instance seeds derive from (global seed, instance id), so thread
    count and batch order never change outcomes. Individual failures are
    recorded on the trace (outcome "error"), never aborting the batch.
    """
    factory = as_factory(backend)
    items = list(instances)

    def one(qa: QAInstance) -> tuple[str | None, ReasoningTrace]:
        iseed = derive_seed(params.seed, qa.id)
        iparams = replace(params, seed=iseed)
        try:
            grounded = ground(g, qa)
            try:
                subgraph = extract(g, grounded, params.k)
            except NoAnswerReachable as exc:
                subgraph = exc.subgraph
            instance_backend = factory(BackendContext(grounded, subgraph, iseed))
            return solve(g, grounded, subgraph, instance_backend, iparams)
        except BackendFailure as exc:
            trace = exc.trace or ReasoningTrace(
                instance_id=qa.id, seed=iseed, initial_entity=None
            )
            trace.outcome = "error"
            trace.error = str(exc)
            trace.answer_key = qa.answer_key
            logger.warning("%s: backend failure: %s", qa.id, exc)
            return None, trace
        except Exception as exc:
            trace = ReasoningTrace(
                instance_id=qa.id,
                seed=iseed,
                initial_entity=None,
                answer_key=qa.answer_key,
                outcome="error",
                error=f"{type(exc).__name__}: {exc}",
            )
            logger.warning("%s: failed: %s", qa.id, exc)
            return None, trace

    if params.workers > 1:
        with ThreadPoolExecutor(max_workers=params.workers) as pool:
            return list(pool.map(one, items))
    return [one(qa) for qa in items]


def write_traces(
    traces: Iterable[ReasoningTrace],
    path: str | Path,
    include_timings: bool = False,
) -> None:
    """One trace per line, keys sorted: byte-identical across equal runs
    unless timings are explicitly included."""
    with open(path, "w", encoding="utf-8") as fh:
        for trace in traces:
            fh.write(json.dumps(trace.to_json(include_timings), sort_keys=True))
            fh.write("\n")


def read_traces(path: str | Path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out
