"""Entity grounding: link question and answer-choice text to KG entities.

The matcher is deliberately dependency-free and deterministic: normalized
n-gram exact match (n <= 4) against the vocabulary, with a small
suffix-stripping lemmatizer and an irregular-plural table applied to text
tokens before lookup. Longest match wins and consumed tokens are never
reused, so "ice cream" grounds as one entity rather than two.
"""

from __future__ import annotations

import itertools
import json
import logging
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from .errors import NotFound, SchemaViolation
from .kg_store import EntityId, KnowledgeGraph

logger = logging.getLogger(__name__)

MAX_NGRAM = 4

_TOKEN = re.compile(r"[a-z0-9]+")

_IRREGULAR_PLURALS = {
    "children": "child",
    "men": "man",
    "women": "woman",
    "people": "person",
    "feet": "foot",
    "teeth": "tooth",
    "geese": "goose",
    "mice": "mouse",
    "oxen": "ox",
    "lives": "life",
    "wives": "wife",
    "knives": "knife",
    "leaves": "leaf",
    "loaves": "loaf",
    "halves": "half",
    "wolves": "wolf",
    "shelves": "shelf",
    "calves": "calf",
    "elves": "elf",
    "thieves": "thief",
}


@lru_cache(maxsize=None)
def stopwords() -> frozenset[str]:
    """The versioned built-in stopword list (shipped as package data)."""
    text = resources.files("ksolver.data").joinpath("stopwords.txt").read_text(
        encoding="utf-8"
    )
    words = set()
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            words.add(line)
    return frozenset(words)


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def lemma_candidates(token: str) -> list[str]:
    """Ordered candidate lemmas for a token, surface form first.

    Suffix rules cover plural -s/-es/-ies, -ing, and -ed (with e-restore
    and doubled-consonant undoing); a small table covers irregular
    plurals the suffix rules cannot reach.
    """
    out = [token]
    irregular = _IRREGULAR_PLURALS.get(token)
    if irregular:
        out.append(irregular)
    if token.endswith("ies") and len(token) > 4:
        out.append(token[:-3] + "y")
    if token.endswith("es") and len(token) > 3:
        out.append(token[:-2])
        out.append(token[:-1])
    elif token.endswith("s") and len(token) > 3 and not token.endswith("ss"):
        out.append(token[:-1])
    if token.endswith("ing") and len(token) > 5:
        stem = token[:-3]
        out.append(stem)
        out.append(stem + "e")
        if len(stem) > 2 and stem[-1] == stem[-2]:
            out.append(stem[:-1])
    if token.endswith("ed") and len(token) > 4:
        stem = token[:-2]
        out.append(stem)
        out.append(token[:-1])
        if len(stem) > 2 and stem[-1] == stem[-2]:
            out.append(stem[:-1])
    seen: set[str] = set()
    result = []
    for cand in out:
        if cand not in seen:
            seen.add(cand)
            result.append(cand)
    return result


@dataclass(frozen=True)
class QAInstance:
    """One multiple-choice question: id, text, ordered (label, body) choices."""

    id: str
    question: str
    choices: tuple[tuple[str, str], ...]
    answer_key: str | None = None

    def __post_init__(self):
        if not 2 <= len(self.choices) <= 26:
            raise ValueError(f"{self.id}: need 2..26 choices, got {len(self.choices)}")
        labels = [label for label, _ in self.choices]
        if len(set(labels)) != len(labels):
            raise ValueError(f"{self.id}: duplicate choice labels")
        if self.answer_key is not None and self.answer_key not in set(labels):
            raise ValueError(f"{self.id}: answer_key {self.answer_key!r} not a label")

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(label for label, _ in self.choices)

    def choice_text(self, label: str) -> str:
        for lab, body in self.choices:
            if lab == label:
                return body
        raise KeyError(label)


@dataclass(frozen=True)
class GroundedInstance:
    """A QA pair linked to the graph: question entities and per-choice entities.

    Disjointness holds by construction: an entity matched in both the
    question and a choice is kept only on the choice side, and an entity
    matched in two choices stays with the first label in order.
    """

    qa: QAInstance
    question_entities: frozenset[EntityId]
    choice_entities: Mapping[str, frozenset[EntityId]]
    empty_sides: tuple[str, ...] = ()

    def all_answer_entities(self) -> frozenset[EntityId]:
        out: set[EntityId] = set()
        for eids in self.choice_entities.values():
            out |= eids
        return frozenset(out)

    def owning_label(self, eid: EntityId) -> str | None:
        """The choice label that owns an answer entity, if any."""
        for label, _ in self.qa.choices:
            if eid in self.choice_entities[label]:
                return label
        return None


def _match_entities(g: KnowledgeGraph, text: str) -> list[EntityId]:
    """All vocabulary entities matching an n-gram of the text.

    Scans n = 4..1; within each n, left to right. A successful match
    consumes its tokens (overlap suppression). Spans made entirely of
    stopwords are skipped.
    """
    tokens = tokenize(text)
    stop = stopwords()
    candidates = [lemma_candidates(t) for t in tokens]
    consumed = [False] * len(tokens)
    found: list[EntityId] = []
    for n in range(min(MAX_NGRAM, len(tokens)), 0, -1):
        for i in range(len(tokens) - n + 1):
            if any(consumed[i : i + n]):
                continue
            if all(t in stop for t in tokens[i : i + n]):
                continue
            eid = None
            for combo in itertools.product(*candidates[i : i + n]):
                try:
                    eid = g.resolve("_".join(combo))
                    break
                except NotFound:
                    continue
            if eid is None:
                continue
            found.append(eid)
            for j in range(i, i + n):
                consumed[j] = True
    return found


def ground(g: KnowledgeGraph, qa: QAInstance) -> GroundedInstance:
    """Produce the question-entity set and per-choice answer-entity sets.

    Pure and deterministic for a fixed (graph, qa). Zero-entity sides are
    reported via empty_sides and a warning, never an exception; the
    solver falls back when the question side is empty.
    """
    question_hits = set(_match_entities(g, qa.question))
    raw_choice_hits = {
        label: set(_match_entities(g, body)) for label, body in qa.choices
    }

    claimed: set[EntityId] = set()
    choice_entities: dict[str, frozenset[EntityId]] = {}
    for label, _ in qa.choices:
        hits = raw_choice_hits[label]
        dropped = hits & claimed
        if dropped:
            names = sorted(g.name(e) for e in dropped)
            logger.warning(
                "%s: entities %s already claimed by an earlier choice; dropped from %s",
                qa.id,
                names,
                label,
            )
        kept = hits - claimed
        claimed |= kept
        choice_entities[label] = frozenset(kept)

    question_entities = frozenset(question_hits - claimed)

    empty: list[str] = []
    if not question_entities:
        logger.warning("%s: question grounded to zero entities", qa.id)
        empty.append("question")
    for label, _ in qa.choices:
        if not choice_entities[label]:
            logger.warning("%s: choice %s grounded to zero entities", qa.id, label)
            empty.append(f"choice:{label}")

    return GroundedInstance(
        qa=qa,
        question_entities=question_entities,
        choice_entities=choice_entities,
        empty_sides=tuple(empty),
    )


def _require(obj: dict, key: str, lineno: int):
    if key not in obj:
        raise SchemaViolation(lineno, key, "missing")
    return obj[key]


def _parse_native(obj: dict, lineno: int) -> QAInstance:
    qid = _require(obj, "id", lineno)
    question = _require(obj, "question", lineno)
    raw_choices = _require(obj, "choices", lineno)
    if not isinstance(raw_choices, list):
        raise SchemaViolation(lineno, "choices", "not a list")
    choices = []
    for idx, ch in enumerate(raw_choices):
        if not isinstance(ch, dict) or "label" not in ch or "text" not in ch:
            raise SchemaViolation(lineno, f"choices[{idx}]", "need label and text")
        choices.append((str(ch["label"]), str(ch["text"])))
    answer_key = obj.get("answer_key")
    try:
        return QAInstance(
            id=str(qid),
            question=str(question),
            choices=tuple(choices),
            answer_key=str(answer_key) if answer_key is not None else None,
        )
    except ValueError as exc:
        raise SchemaViolation(lineno, "choices", str(exc)) from None


def _parse_csqa(obj: dict, lineno: int) -> QAInstance:
    # CommonsenseQA / OpenbookQA official shape: question.stem + answerKey.
    qid = obj.get("id", f"q{lineno}")
    q = _require(obj, "question", lineno)
    stem = _require(q, "stem", lineno) if isinstance(q, dict) else None
    if stem is None:
        raise SchemaViolation(lineno, "question.stem", "missing")
    raw_choices = q.get("choices")
    if not isinstance(raw_choices, list):
        raise SchemaViolation(lineno, "question.choices", "not a list")
    choices = tuple((str(c["label"]), str(c["text"])) for c in raw_choices)
    key = obj.get("answerKey") or None
    try:
        return QAInstance(id=str(qid), question=str(stem), choices=choices, answer_key=key)
    except ValueError as exc:
        raise SchemaViolation(lineno, "question.choices", str(exc)) from None


def _parse_medqa(obj: dict, lineno: int) -> QAInstance:
    question = _require(obj, "question", lineno)
    options = _require(obj, "options", lineno)
    if not isinstance(options, dict):
        raise SchemaViolation(lineno, "options", "not an object")
    choices = tuple((str(label), str(text)) for label, text in sorted(options.items()))
    key = obj.get("answer_idx") or None
    qid = obj.get("id", f"medqa-{lineno}")
    try:
        return QAInstance(id=str(qid), question=str(question), choices=choices, answer_key=key)
    except ValueError as exc:
        raise SchemaViolation(lineno, "options", str(exc)) from None


_ADAPTERS = {
    "jsonl": _parse_native,
    "csqa": _parse_csqa,
    "obqa": _parse_csqa,
    "medqa": _parse_medqa,
}


def load_qa_file(
    source: str | Path | Iterable[str], fmt: str = "jsonl"
) -> list[QAInstance]:
    """Load QA instances from a JSON-lines file in file order.

    fmt selects the dataset adapter: the native schema ("jsonl") or the
    official CommonsenseQA/OpenbookQA/MedQA shapes.
    """
    try:
        parse = _ADAPTERS[fmt]
    except KeyError:
        raise ValueError(f"unknown QA format {fmt!r}; pick from {sorted(_ADAPTERS)}")
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            lines = fh.readlines()
    else:
        lines = list(source)
    instances = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(lineno, "<json>", str(exc)) from None
        instances.append(parse(obj, lineno))
    return instances
