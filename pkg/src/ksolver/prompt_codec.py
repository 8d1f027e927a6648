"""Prompt encoding and reply decoding for traversal steps.

The rendered template is versioned and golden-tested: changing any line
here is a versioned event (bump TEMPLATE_VERSION), because generated
training data and inference prompts must stay byte-compatible.

Decoding is a fixed cascade over free-text replies: menu number, exact
entity name, unique substring, abstain. The stage that fired is recorded
on the Selection so traces can be audited.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .errors import EmptyNeighborList
from .grounding import QAInstance
from .kg_store import EntityId, KnowledgeGraph, Neighbor, Step, normalize_name

TEMPLATE_VERSION = "step-prompt.v1"
JUDGE_PROMPT_VERSION = "judge-prompt.v1"

# Fixed across all instances; wording is a repo constant, not tunable per run.
INSTRUCTION_TEXT = (
    "You are navigating a knowledge graph to answer a multiple-choice question. "
    "At each step you see the current entity and a numbered list of connected "
    "entities with their relations. A relation marked with * runs from the "
    "listed entity to the current one. Pick the connection that leads toward "
    "the correct answer and reply with its number."
)

DIRECT_INSTRUCTION_TEXT = (
    "Answer the multiple-choice question. Reply with the letter of the correct choice."
)

ELISION_TEMPLATE = "... ({count} more connections omitted)"


@dataclass(frozen=True)
class EncodeLimits:
    """Prompt size limits. Token counts use a chars/4 estimate with a
    safety margin rather than binding to any particular tokenizer."""

    max_sequence_tokens: int = 1152
    chars_per_token: float = 4.0
    safety_margin: float = 0.10
    menu_cap: int = 60

    def estimate_tokens(self, text: str) -> int:
        return math.ceil(len(text) / self.chars_per_token * (1.0 + self.safety_margin))

    def fits(self, text: str) -> bool:
        return self.estimate_tokens(text) <= self.max_sequence_tokens


def display_name(g: KnowledgeGraph, eid: EntityId) -> str:
    return g.name(eid).replace("_", " ")


def relation_label(g: KnowledgeGraph, relation_id: int, is_reversed: bool) -> str:
    name = g.relations.by_id(relation_id).name
    return name + "*" if is_reversed else name


def render_step(g: KnowledgeGraph, index: int, step: Step) -> str:
    rel = relation_label(g, step.relation, step.is_reversed)
    return (
        f"step {index}: {display_name(g, step.head)} "
        f"—{rel}→ {display_name(g, step.tail)}"
    )


@dataclass(frozen=True)
class StepPrompt:
    """One rendered decision point plus the menu index backing it."""

    system_instruction: str
    rendered_input: str
    neighbor_index: tuple[Neighbor, ...]
    head: EntityId | None
    kind: str = "step"  # "step" or "direct"
    choice_labels: tuple[str, ...] = ()
    menu_names: tuple[str, ...] = ()  # canonical tail names, menu order
    template_version: str = TEMPLATE_VERSION
    elided: int = 0


@dataclass(frozen=True)
class Selection:
    """A decoded backend reply. Abstain is a value, never an error."""

    kind: str  # "menu_number" | "entity_name" | "abstain"
    stage: int  # 1 number, 2 exact name, 3 substring, 4 abstain
    raw_reply: str
    menu_number: int | None = None  # 1-based, resolved for every non-abstain kind
    entity: EntityId | None = None


def _render_menu(g: KnowledgeGraph, qa: QAInstance, history: list[Step] | tuple,
                 head: EntityId, menu: list[Neighbor], elided: int) -> str:
    lines = [f"Question: {qa.question}", "Choices:"]
    for label, body in qa.choices:
        lines.append(f"{label}. {body}")
    lines.append("")
    lines.append("Selection history:")
    if history:
        for i, step in enumerate(history, start=1):
            lines.append(render_step(g, i, step))
    else:
        lines.append("(none)")
    lines.append("")
    lines.append(f"Current entity: {display_name(g, head)}")
    lines.append("Connections:")
    for n, nb in enumerate(menu, start=1):
        rel = relation_label(g, nb.relation.id, nb.is_reversed)
        lines.append(f"{n}. ({rel}) {display_name(g, nb.tail)}")
    if elided:
        lines.append(ELISION_TEMPLATE.format(count=elided))
    lines.append("Select the next entity by number.")
    return "\n".join(lines)


def encode_step(
    g: KnowledgeGraph,
    qa: QAInstance,
    history: list[Step] | tuple,
    head: EntityId,
    neighbors: list[Neighbor],
    limits: EncodeLimits | None = None,
    answer_entities: frozenset[EntityId] | set[EntityId] = frozenset(),
) -> StepPrompt:
    """Render one traversal step into the versioned prompt template.

    The menu keeps the caller's neighbor order. When the menu cap or the
    token budget forces truncation, answer-entity neighbors are moved to
    the front so they always survive, the rest are cut in order, and an
    elision marker is appended. Text is never clipped.
    """
    if limits is None:
        limits = EncodeLimits()
    if not neighbors:
        raise EmptyNeighborList(f"no neighbors to encode at entity {head}")

    menu = list(neighbors)
    elided = 0
    over_cap = len(menu) > limits.menu_cap
    rendered = _render_menu(g, qa, history, head, menu, elided)
    if over_cap or not limits.fits(rendered):
        answers = [nb for nb in menu if nb.tail in answer_entities]
        others = [nb for nb in menu if nb.tail not in answer_entities]
        if over_cap:
            keep = max(0, limits.menu_cap - len(answers))
            elided = len(others) - keep
            others = others[:keep]
        menu = answers + others
        rendered = _render_menu(g, qa, history, head, menu, elided)
        # Budget enforcement: drop non-answer entries from the end first,
        # then answer entries, never below a single menu line.
        while not limits.fits(rendered) and len(menu) > 1:
            if len(menu) > len(answers):
                menu.pop()
            else:
                menu.pop()
                answers.pop()
            elided += 1
            rendered = _render_menu(g, qa, history, head, menu, elided)

    return StepPrompt(
        system_instruction=INSTRUCTION_TEXT,
        rendered_input=rendered,
        neighbor_index=tuple(menu),
        head=head,
        kind="step",
        menu_names=tuple(g.name(nb.tail) for nb in menu),
        elided=elided,
    )


def encode_direct(qa: QAInstance) -> StepPrompt:
    """The non-traversal fallback prompt: question and choices only."""
    lines = [f"Question: {qa.question}", "Choices:"]
    for label, body in qa.choices:
        lines.append(f"{label}. {body}")
    lines.append("Reply with the letter of your choice.")
    return StepPrompt(
        system_instruction=DIRECT_INSTRUCTION_TEXT,
        rendered_input="\n".join(lines),
        neighbor_index=(),
        head=None,
        kind="direct",
        choice_labels=qa.labels,
    )


_NUMBER = re.compile(r"\d+")
_PUNCT_EDGE = re.compile(r"^[\s.,!?;:'\"()\[\]{}*`]+|[\s.,!?;:'\"()\[\]{}*`]+$")


def _normalize_reply(reply: str) -> str:
    return normalize_name(_PUNCT_EDGE.sub("", reply))


def _boundary_pattern(name: str) -> re.Pattern:
    spaced = re.escape(name.replace("_", " "))
    return re.compile(rf"(?<![a-z0-9]){spaced}(?![a-z0-9])")


def decode_selection(prompt: StepPrompt, reply: str) -> Selection:
    """Parse a free-text reply into a menu selection.

    Cascade: (1) first in-range number anywhere in the reply; (2) whole
    reply equals a menu tail name after normalization; (3) exactly one
    distinct tail name occurs in the reply at word boundaries; (4)
    abstain. Ambiguous substring hits abstain rather than guessing.
    """
    n = len(prompt.neighbor_index)
    for match in _NUMBER.finditer(reply):
        value = int(match.group())
        if 1 <= value <= n:
            return Selection(
                kind="menu_number",
                stage=1,
                raw_reply=reply,
                menu_number=value,
                entity=prompt.neighbor_index[value - 1].tail,
            )

    normalized = _normalize_reply(reply)
    for idx, name in enumerate(prompt.menu_names):
        if normalized == name:
            return Selection(
                kind="entity_name",
                stage=2,
                raw_reply=reply,
                menu_number=idx + 1,
                entity=prompt.neighbor_index[idx].tail,
            )

    lowered = reply.lower()
    hits: list[int] = []
    seen_names: set[str] = set()
    for idx, name in enumerate(prompt.menu_names):
        if name in seen_names:
            continue
        seen_names.add(name)
        if _boundary_pattern(name).search(lowered):
            hits.append(idx)
    if len(hits) == 1:
        idx = hits[0]
        return Selection(
            kind="entity_name",
            stage=3,
            raw_reply=reply,
            menu_number=idx + 1,
            entity=prompt.neighbor_index[idx].tail,
        )

    return Selection(kind="abstain", stage=4, raw_reply=reply)


def decode_label(qa: QAInstance, reply: str) -> tuple[str | None, int]:
    """Decode a fallback reply into a choice label via the same cascade.

    Returns (label or None, stage). Stage 1 is a standalone label token,
    stage 2 an exact choice-text match, stage 3 a unique choice-text
    substring; None means abstain (stage 4).
    """
    best: tuple[int, str] | None = None
    for label in qa.labels:
        pattern = re.compile(rf"(?<![A-Za-z0-9]){re.escape(label)}(?![A-Za-z0-9])")
        m = pattern.search(reply)
        if m and (best is None or m.start() < best[0]):
            best = (m.start(), label)
    if best is not None:
        return best[1], 1

    normalized = _normalize_reply(reply)
    for label, body in qa.choices:
        if normalized == normalize_name(body):
            return label, 2

    lowered = reply.lower()
    hits = []
    for label, body in qa.choices:
        if _boundary_pattern(normalize_name(body)).search(lowered):
            hits.append(label)
    if len(hits) == 1:
        return hits[0], 3

    return None, 4
