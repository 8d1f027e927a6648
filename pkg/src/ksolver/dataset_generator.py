"""Instruction-tuning dataset generation from shortest correct paths.

For every question entity, one shortest path to a seeded-random correct
answer entity is extracted from a working copy of the subgraph; the
path's nodes (except the target) are then removed so later paths stay
disjoint. Each path step becomes one {instruction, input, output}
training example whose input is rendered by the exact same encoder the
solver uses at inference, guaranteeing byte-level format parity.
"""

from __future__ import annotations

import json
import logging
import random
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path

from .errors import NoAnswerReachable, NoCorrectEntity
from .grounding import GroundedInstance, QAInstance, ground
from .kg_store import EntityId, KnowledgeGraph, Step
from .prompt_codec import (
    INSTRUCTION_TEXT,
    TEMPLATE_VERSION,
    EncodeLimits,
    display_name,
    encode_step,
)
from .solver_loop import derive_seed
from .subgraph_extractor import Subgraph, extract

logger = logging.getLogger(__name__)

# Finetuning hyperparameters emitted for downstream trainers; training
# itself is out of scope for this package.
TRAINING_CONFIG = {
    "method": "lora",
    "lora_rank": 16,
    "lora_alpha": 16,
    "lora_dropout": 0.05,
    "learning_rate": 3e-4,
    "global_batch_size": 128,
    "max_sequence_length": 1152,
    "target_modules": ["q_proj", "k_proj", "v_proj", "o_proj"],
    "epochs": {"csqa": 3, "obqa": 3, "medqa": 5},
}


@dataclass(frozen=True)
class PathInstance:
    """One shortest path from a question entity to a correct answer entity."""

    instance_id: str
    start: EntityId
    target: EntityId
    steps: tuple[Step, ...]


@dataclass(frozen=True)
class InstructionInstance:
    instruction: str
    input: str
    output: str

    def to_json(self) -> dict:
        return {"instruction": self.instruction, "input": self.input, "output": self.output}


@dataclass
class EncoderContext:
    """Everything paths_to_instances needs to render a step the way the
    solver would see it: the original subgraph, never the working copy."""

    graph: KnowledgeGraph
    qa: QAInstance
    subgraph: Subgraph
    answer_entities: frozenset[EntityId]
    limits: EncodeLimits = field(default_factory=EncodeLimits)


def bfs_shortest_path(
    subgraph: Subgraph,
    start: EntityId,
    target: EntityId,
    allowed: set[EntityId] | frozenset[EntityId],
) -> list[Step] | None:
    """Shortest walk start -> target within allowed nodes, or None.

    Neighbors expand in (relation name, tail name) order, so equal-length
    ties always break the same way.
    """
    if start == target:
        return []
    if start not in allowed or target not in allowed:
        return None
    parent: dict[EntityId, Step] = {}
    visited = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for nb in subgraph.neighbors(u):
            v = nb.tail
            if v not in allowed or v in visited:
                continue
            visited.add(v)
            parent[v] = Step(u, nb.relation.id, v, nb.is_reversed)
            if v == target:
                steps = []
                node = target
                while node != start:
                    step = parent[node]
                    steps.append(step)
                    node = step.head
                steps.reverse()
                return steps
            queue.append(v)
    return None


def extract_paths(
    grounded: GroundedInstance, subgraph: Subgraph, seed: int
) -> tuple[list[PathInstance], Counter]:
    """Shortest correct paths per question entity, with node removal.

    Question entities iterate in canonical-name order; the target is
    drawn seeded-uniform from the correct choice's entities still in the
    working subgraph, re-drawn per question entity. After each path, its
    nodes except the target leave the working set. Entities with no
    remaining path are skipped and counted.
    """
    qa = grounded.qa
    if qa.answer_key is None:
        raise ValueError(f"{qa.id}: dataset generation needs answer_key")
    g = subgraph.parent
    correct_pool = grounded.choice_entities[qa.answer_key] & subgraph.nodes
    if not correct_pool:
        raise NoCorrectEntity(qa.id)

    rng = random.Random(seed)
    allowed = set(subgraph.nodes)
    paths: list[PathInstance] = []
    counters: Counter = Counter()
    for vq in sorted(grounded.question_entities, key=g.name):
        if vq not in allowed:
            counters["question_entities_no_path"] += 1
            continue
        pool = sorted(correct_pool & allowed, key=g.name)
        if not pool:
            counters["question_entities_no_path"] += 1
            continue
        target = rng.choice(pool)
        steps = bfs_shortest_path(subgraph, vq, target, allowed)
        if not steps:
            counters["question_entities_no_path"] += 1
            continue
        paths.append(PathInstance(qa.id, vq, target, tuple(steps)))
        removed = {s.head for s in steps} | {s.tail for s in steps}
        removed.discard(target)
        allowed -= removed
    return paths, counters


def paths_to_instances(
    paths: list[PathInstance], ctx: EncoderContext
) -> tuple[list[InstructionInstance], Counter]:
    """One training example per path step, history accumulated in order.

    If menu truncation would drop a step's correct tail from the rendered
    menu, the whole path is skipped and counted: a teaching output must
    name an entity that is actually present in its input.
    """
    out: list[InstructionInstance] = []
    counters: Counter = Counter()
    for path in paths:
        rendered: list[InstructionInstance] = []
        history: list[Step] = []
        ok = True
        for step in path.steps:
            prompt = encode_step(
                ctx.graph,
                ctx.qa,
                history,
                step.head,
                ctx.subgraph.neighbors(step.head),
                ctx.limits,
                answer_entities=ctx.answer_entities,
            )
            tail_name = ctx.graph.name(step.tail)
            if tail_name not in prompt.menu_names:
                ok = False
                break
            rendered.append(
                InstructionInstance(
                    instruction=INSTRUCTION_TEXT,
                    input=prompt.rendered_input,
                    output=display_name(ctx.graph, step.tail),
                )
            )
            history.append(step)
        if ok:
            out.extend(rendered)
        else:
            counters["paths_menu_overflow"] += 1
    return out, counters


def generate_dataset(
    g: KnowledgeGraph,
    instances: list[QAInstance],
    k: int = 2,
    seed: int = 0,
    limits: EncodeLimits | None = None,
) -> tuple[list[InstructionInstance], list[PathInstance], dict]:
    """Full generation pipeline over a QA list; never aborts on one instance."""
    limits = limits or EncodeLimits()
    all_instances: list[InstructionInstance] = []
    all_paths: list[PathInstance] = []
    counters: Counter = Counter()
    length_histogram: Counter = Counter()
    instances_with_paths = 0

    for qa in instances:
        if qa.answer_key is None:
            counters["no_answer_key"] += 1
            continue
        iseed = derive_seed(seed, qa.id)
        try:
            grounded = ground(g, qa)
            try:
                subgraph = extract(g, grounded, k)
            except NoAnswerReachable:
                counters["no_answer_reachable"] += 1
                continue
            try:
                paths, path_counters = extract_paths(grounded, subgraph, iseed)
            except NoCorrectEntity:
                counters["no_correct_entity"] += 1
                continue
            counters.update(path_counters)
            ctx = EncoderContext(
                graph=g,
                qa=qa,
                subgraph=subgraph,
                answer_entities=grounded.all_answer_entities(),
                limits=limits,
            )
            step_instances, render_counters = paths_to_instances(paths, ctx)
            counters.update(render_counters)
            if paths:
                instances_with_paths += 1
            for path in paths:
                length_histogram[len(path.steps)] += 1
            all_paths.extend(paths)
            all_instances.extend(step_instances)
        except Exception as exc:
            counters["errors"] += 1
            logger.warning("%s: dataset generation failed: %s", qa.id, exc)

    stats = {
        "qa_instances_total": len(instances),
        "qa_instances_with_paths": instances_with_paths,
        "paths": len(all_paths),
        "instruction_instances": len(all_instances),
        "path_length_histogram": {
            str(length): length_histogram[length] for length in sorted(length_histogram)
        },
        "skipped": {key: counters[key] for key in sorted(counters)},
        "seed": seed,
        "hop_budget": k,
        "template_version": TEMPLATE_VERSION,
    }
    return all_instances, all_paths, stats


def emit_dataset(
    instances: list[InstructionInstance],
    out_dir: str | Path,
    splits: dict[str, float] | None = None,
    seed: int = 0,
    stats: dict | None = None,
) -> dict[str, Path]:
    """Write one JSON array per split plus stats and the training config.

    Splits shuffle deterministically from the seed before slicing; identical
    inputs and seed produce byte-identical files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not splits:
        splits = {"train": 1.0}
    total_fraction = sum(splits.values())
    if not 0.999 <= total_fraction <= 1.001:
        raise ValueError(f"split fractions must sum to 1, got {total_fraction}")

    ordered = list(instances)
    if len(splits) > 1:
        random.Random(seed).shuffle(ordered)

    written: dict[str, Path] = {}
    counts: dict[str, int] = {}
    cursor = 0
    names = list(splits)
    for i, name in enumerate(names):
        if i == len(names) - 1:
            chunk = ordered[cursor:]
        else:
            size = round(len(ordered) * splits[name])
            chunk = ordered[cursor : cursor + size]
            cursor += size
        path = out_dir / f"{name}.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump([inst.to_json() for inst in chunk], fh, indent=2, ensure_ascii=False)
            fh.write("\n")
        written[name] = path
        counts[name] = len(chunk)

    report = dict(stats or {})
    report["split_counts"] = counts
    stats_path = out_dir / "stats.json"
    with open(stats_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written["stats"] = stats_path

    config_path = out_dir / "training-config.json"
    with open(config_path, "w", encoding="utf-8") as fh:
        json.dump(TRAINING_CONFIG, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written["training_config"] = config_path
    return written
