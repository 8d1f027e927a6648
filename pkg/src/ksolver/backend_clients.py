"""Decision backends: remote chat-completion client, test oracles, judges.

The remote client speaks the de-facto chat-completion JSON shape (system +
user messages over HTTP), so any compatible server works; no vendor SDK is
assumed. The oracle and random backends exist so every pipeline property
is testable without network access.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from collections import deque
from dataclasses import dataclass

import requests

from .errors import AuthFailure, BackendFailure, JudgeParseError, SchemaError
from .kg_store import EntityId
from .prompt_codec import JUDGE_PROMPT_VERSION, StepPrompt
from .subgraph_extractor import Subgraph

logger = logging.getLogger(__name__)

ABSTAIN_REPLY = "none of these connections lead anywhere useful"

JUDGE_SYSTEM_PROMPT = (
    "You are grading an answer to a multiple-choice question. Compare the "
    "model's reply with the ground-truth choice. Reply with exactly one "
    "character: 1 if the model's reply names or clearly matches the "
    "ground-truth choice, 0 otherwise."
)


def _config_hash(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


@dataclass
class RemoteBackendConfig:
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-3.5-turbo-16k"
    api_key_env: str = "KSOLVER_API_KEY"
    timeout_s: float = 30.0
    retries: int = 3
    max_inflight: int = 4
    temperature: float = 0.0
    backoff_base_s: float = 0.5

    def __post_init__(self):
        if self.retries < 0:
            raise ValueError("retry budget must be >= 0")
        if self.timeout_s <= 0:
            raise ValueError("timeout must be > 0")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be in [0, 2]")
        if self.max_inflight < 1:
            raise ValueError("max_inflight must be >= 1")

    def public(self) -> dict:
        # The key itself never enters hashes or logs, only the env var name.
        return {
            "base_url": self.base_url,
            "model": self.model,
            "api_key_env": self.api_key_env,
            "timeout_s": self.timeout_s,
            "retries": self.retries,
            "max_inflight": self.max_inflight,
            "temperature": self.temperature,
        }


class RemoteChatBackend:
    """Chat-completion client with bounded concurrency and retry/backoff.

    Transient statuses (429, 5xx) and timeouts retry with exponential
    backoff plus jitter up to the configured budget; 401/403 raise
    AuthFailure immediately. Thread-safe; one instance is meant to be
    shared across concurrent traversals.
    """

    name = "remote-chat"

    def __init__(self, config: RemoteBackendConfig):
        self.config = config
        self.last_retries = 0
        self._semaphore = threading.BoundedSemaphore(config.max_inflight)
        self._session = requests.Session()

    def descriptor(self) -> dict:
        return {"name": self.name, "config_hash": _config_hash(self.config.public()),
                "model": self.config.model}

    def complete(self, prompt: StepPrompt) -> str:
        return self.complete_text(prompt.system_instruction, prompt.rendered_input)

    def complete_text(self, system: str, user: str) -> str:
        cfg = self.config
        url = cfg.base_url.rstrip("/") + "/chat/completions"
        body = {
            "model": cfg.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": cfg.temperature,
        }
        api_key = os.environ.get(cfg.api_key_env, "")
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        logger.debug("POST %s body=%s auth=%s", url, body, "Bearer ***" if api_key else "none")

        attempt = 0
        with self._semaphore:
            while True:
                failure: str | None = None
                try:
                    resp = self._session.post(
                        url, json=body, headers=headers, timeout=cfg.timeout_s
                    )
                except (requests.Timeout, requests.ConnectionError) as exc:
                    failure = f"transport: {exc}"
                else:
                    if resp.status_code in (401, 403):
                        raise AuthFailure(f"endpoint rejected credentials ({resp.status_code})")
                    if resp.status_code == 200:
                        self.last_retries = attempt
                        if attempt:
                            logger.debug("succeeded after %d retries", attempt)
                        return self._parse_body(resp)
                    if resp.status_code == 429 or resp.status_code >= 500:
                        failure = f"status {resp.status_code}"
                    else:
                        raise BackendFailure(
                            f"non-retryable status {resp.status_code}: {resp.text[:200]}"
                        )
                attempt += 1
                if attempt > cfg.retries:
                    raise BackendFailure(
                        f"retry budget exhausted after {cfg.retries} retries ({failure})"
                    )
                delay = cfg.backoff_base_s * (2 ** (attempt - 1))
                delay += random.uniform(0, delay)
                logger.debug("retry %d/%d in %.2fs (%s)", attempt, cfg.retries, delay, failure)
                time.sleep(delay)

    @staticmethod
    def _parse_body(resp) -> str:
        try:
            payload = resp.json()
        except ValueError as exc:
            raise SchemaError(f"response body is not JSON: {exc}") from None
        logger.debug("response=%s", payload)
        try:
            content = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise SchemaError(f"missing choices[0].message.content in {str(payload)[:200]}")
        if not isinstance(content, str):
            raise SchemaError("message content is not a string")
        return content


class OracleBackend:
    """Shortest-path oracle standing in for the LLM.

    Picks the first menu entry lying on a shortest path from the current
    head to any target. Non-target answer entities are absorbing under
    the loop semantics (the walk ends on them), so distances never route
    through them and the oracle never steps onto them. Direct fallback
    prompts get the correct label.
    """

    name = "oracle"

    def __init__(
        self,
        subgraph: Subgraph,
        targets: frozenset[EntityId] | set[EntityId],
        blocked: frozenset[EntityId] | set[EntityId] = frozenset(),
        correct_label: str | None = None,
    ):
        self.subgraph = subgraph
        self.targets = frozenset(targets)
        self.blocked = frozenset(blocked) - self.targets
        self.correct_label = correct_label
        self._dist = self._distances()

    def descriptor(self) -> dict:
        names = sorted(self.subgraph.parent.name(t) for t in self.targets)
        return {"name": self.name, "config_hash": _config_hash({"targets": names})}

    def _distances(self) -> dict[EntityId, int]:
        # Multi-source BFS from the targets; blocked nodes are reachable as
        # endpoints but never expanded, so no path routes through them.
        dist: dict[EntityId, int] = {t: 0 for t in sorted(self.targets)}
        queue = deque(sorted(self.targets))
        while queue:
            u = queue.popleft()
            if dist[u] >= 1 and u in self.blocked:
                continue
            for nb in self.subgraph.neighbors(u):
                if nb.tail not in dist:
                    dist[nb.tail] = dist[u] + 1
                    queue.append(nb.tail)
        return dist

    def complete(self, prompt: StepPrompt) -> str:
        if prompt.kind == "direct":
            return self.correct_label or ""
        best_index: int | None = None
        best_dist: int | None = None
        for idx, nb in enumerate(prompt.neighbor_index):
            if nb.tail in self.blocked:
                continue
            d = self._dist.get(nb.tail)
            if d is None:
                continue
            if best_dist is None or d < best_dist:
                best_dist, best_index = d, idx
        if best_index is None:
            return ABSTAIN_REPLY
        return str(best_index + 1)


class RandomBackend:
    """Uniform policy baseline: a random in-range menu number per step."""

    name = "random"

    def __init__(self, seed: int):
        self.seed = seed
        self._rng = random.Random(seed)

    def descriptor(self) -> dict:
        return {"name": self.name, "config_hash": _config_hash({"seed": self.seed})}

    def complete(self, prompt: StepPrompt) -> str:
        if prompt.kind == "direct":
            return self._rng.choice(list(prompt.choice_labels))
        return str(self._rng.randint(1, len(prompt.neighbor_index)))


def oracle_factory():
    """Per-instance oracle construction for run_batch.

    Targets are the keyed correct choice's entities that survived
    extraction; every other answer entity is blocked (the walk would end
    there with the wrong label).
    """

    def make(ctx):
        key = ctx.grounded.qa.answer_key
        targets: set[EntityId] = set()
        if key is not None:
            targets = set(ctx.grounded.choice_entities.get(key, frozenset())) & ctx.subgraph.nodes
        blocked = set(ctx.grounded.all_answer_entities()) - targets
        return OracleBackend(ctx.subgraph, targets, blocked, correct_label=key)

    return make


def random_factory():
    """Per-instance random backend seeded from the derived instance seed."""

    def make(ctx):
        return RandomBackend(ctx.seed)

    return make


@dataclass(frozen=True)
class JudgeVerdict:
    score: int
    raw_reply: str

    def __post_init__(self):
        if self.score not in (0, 1):
            raise ValueError(f"judge score must be 0 or 1, got {self.score}")


def local_judge(predicted_label: str | None, answer_key: str | None) -> JudgeVerdict:
    """Exact-match judge for backends whose replies are labels already."""
    score = int(predicted_label is not None and predicted_label == answer_key)
    return JudgeVerdict(score=score, raw_reply=f"local:{predicted_label or 'none'}")


class RemoteJudge:
    """Binary-score judge over a remote chat endpoint.

    The judge prompt is authored here and versioned; the reply must be
    exactly "0" or "1" after trimming, anything else is a JudgeParseError.
    """

    version = JUDGE_PROMPT_VERSION

    def __init__(self, config: RemoteBackendConfig):
        self._client = RemoteChatBackend(config)

    def descriptor(self) -> dict:
        d = self._client.descriptor()
        return {"name": "remote-judge", "config_hash": d["config_hash"],
                "prompt_version": self.version}

    def judge(
        self,
        question: str,
        choices: list[tuple[str, str]],
        answer_key: str,
        model_reply: str,
    ) -> JudgeVerdict:
        lines = [f"Question: {question}", "Choices:"]
        for label, body in choices:
            lines.append(f"{label}. {body}")
        truth = next(body for label, body in choices if label == answer_key)
        lines.append(f"Ground truth: {answer_key}. {truth}")
        lines.append(f"Model reply: {model_reply}")
        lines.append("Score:")
        reply = self._client.complete_text(JUDGE_SYSTEM_PROMPT, "\n".join(lines))
        stripped = reply.strip()
        if stripped not in ("0", "1"):
            raise JudgeParseError(f"judge replied {reply!r}, expected 0 or 1")
        return JudgeVerdict(score=int(stripped), raw_reply=reply)
