"""Seed initialization and the topic-aware adaptive kNN seed refresh.

A pool of real documents, each with a topic label and an embedding, backs the
refresh: after every M synthesized documents, new seeds are drawn from the k
nearest pool neighbors of the synthesized batch whose topic labels differ
from the batch's labels. When too few qualify, k is incremented and the
search repeats.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import prompts
from .corpus import Document
from .documents import parse_keyword_list
from .engine import render_expert_prompt
from .gateway import ChatProvider, Embedder

logger = logging.getLogger("metasynth.seeds")

INITIAL_NEIGHBOR_COUNT = 5
DEFAULT_REFRESH_PERIOD = 50


class SeedSelectionError(Exception):
    pass


class TopicSaturationError(SeedSelectionError):
    """Every reachable pool candidate shares a recent topic label."""


@dataclass
class PoolEntry:
    document: Document
    topic_label: str
    embedding: list[float]


@dataclass
class SeedPoolState:
    pool: list[PoolEntry]
    current_seeds: list[str] = field(default_factory=list)
    k: int = INITIAL_NEIGHBOR_COUNT
    refresh_period: int = DEFAULT_REFRESH_PERIOD
    recent_topics: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        dims = {len(entry.embedding) for entry in self.pool}
        if len(dims) > 1:
            raise ValueError(f"pool embeddings have mixed dimensions: {sorted(dims)}")
        if self.k < INITIAL_NEIGHBOR_COUNT:
            raise ValueError(f"k must be >= {INITIAL_NEIGHBOR_COUNT}")

    def note_synthesized(self, topic_label: str) -> None:
        self.recent_topics.append(topic_label)


def load_seed_pool(path: str) -> list[PoolEntry]:
    """Read a pool file: JSONL of ``{id, text, topic, embedding}``."""
    entries: list[PoolEntry] = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            obj = json.loads(line)
            entries.append(
                PoolEntry(
                    document=Document.make(
                        id=obj["id"], text=obj["text"], source="real", domain=""
                    ),
                    topic_label=obj["topic"],
                    embedding=[float(x) for x in obj["embedding"]],
                )
            )
    return entries


def random_keyword_seeds(
    domain: str, count: int, provider: ChatProvider
) -> list[str]:
    """Ask a keyword agent for ``count`` random domain keywords.

    Keywords are lowercased and deduplicated; when the first reply comes up
    short the agent is re-prompted once, and a persistent shortfall is
    returned as-is with a warning.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    keywords: list[str] = []
    seen: set[str] = set()
    for attempt in range(2):
        request = render_expert_prompt(
            "Seed Keyword Generation Expert",
            prompts.KEYWORD_AGENT_TEMPLATE.format(domain=domain, count=count),
        )
        reply = provider.complete(request).content
        for keyword in parse_keyword_list(reply):
            lowered = keyword.lower()
            if lowered not in seen:
                seen.add(lowered)
                keywords.append(lowered)
        if len(keywords) >= count:
            return keywords[:count]
    logger.warning(
        "keyword agent produced %d of %d requested keywords", len(keywords), count
    )
    return keywords


def label_topic(doc: Document, provider: ChatProvider) -> str:
    """Get a short topic label for a document, normalized to lowercase."""
    if not doc.text or not doc.text.strip():
        raise ValueError("document text must be nonempty")
    request = render_expert_prompt(
        "Topic Labeling Expert",
        prompts.TOPIC_LABEL_TEMPLATE.format(document=doc.text),
        temperature=0.0,
    )
    reply = provider.complete(request).content
    label = reply.strip().splitlines()[0] if reply.strip() else ""
    return " ".join(label.lower().strip(" .\"'").split())


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("zero-norm embedding has no cosine distance")
    return 1.0 - float(np.dot(a, b)) / (na * nb)


def nearest_neighbors(
    query: list[float], pool: list[PoolEntry], k: int
) -> list[str]:
    """Exact k nearest pool ids by ascending cosine distance; ties break by
    ascending id."""
    if k > len(pool):
        raise ValueError(f"k={k} exceeds pool size {len(pool)}")
    q = np.asarray(query, dtype=float)
    scored: list[tuple[float, str]] = []
    for entry in pool:
        vec = np.asarray(entry.embedding, dtype=float)
        if vec.shape != q.shape:
            raise ValueError(
                f"dimension mismatch: query {q.shape[0]}, pool {vec.shape[0]}"
            )
        scored.append((cosine_distance(q, vec), entry.document.id))
    scored.sort(key=lambda item: (item[0], item[1]))
    return [doc_id for _dist, doc_id in scored[:k]]


@dataclass
class RefreshResult:
    seed_ids: list[str]
    attempted_k: list[int]


def refresh_seeds(
    state: SeedPoolState, synthesized: list[Document], embedder: Embedder
) -> RefreshResult:
    """Pick replacement seeds whose topics differ from the synthesized batch.

    Candidates are the union of each synthesized document's k nearest pool
    neighbors; only candidates whose topic label is absent from
    ``state.recent_topics`` qualify. If fewer than ``len(current_seeds)``
    qualify, k is incremented (never past the pool size) and the search
    repeats. On success k resets to its initial value and the recent-topic
    window clears.
    """
    if not state.pool:
        raise SeedSelectionError("seed pool is empty")
    if len(synthesized) != state.refresh_period:
        raise ValueError(
            f"expected {state.refresh_period} synthesized documents, "
            f"got {len(synthesized)}"
        )
    required = max(len(state.current_seeds), 1)
    excluded_topics = {topic.lower() for topic in state.recent_topics}
    queries = embedder.embed([doc.text for doc in synthesized])
    by_id = {entry.document.id: entry for entry in state.pool}

    attempted: list[int] = []
    k = min(state.k, len(state.pool))
    while True:
        attempted.append(k)
        best_distance: dict[str, float] = {}
        for query in queries:
            q = np.asarray(query, dtype=float)
            for doc_id in nearest_neighbors(query, state.pool, k):
                entry = by_id[doc_id]
                dist = cosine_distance(q, np.asarray(entry.embedding, dtype=float))
                if doc_id not in best_distance or dist < best_distance[doc_id]:
                    best_distance[doc_id] = dist
        qualifying = [
            doc_id
            for doc_id in best_distance
            if by_id[doc_id].topic_label.lower() not in excluded_topics
        ]
        if len(qualifying) >= required:
            qualifying.sort(key=lambda doc_id: (best_distance[doc_id], doc_id))
            chosen = qualifying[:required]
            state.current_seeds = chosen
            state.k = INITIAL_NEIGHBOR_COUNT
            state.recent_topics = []
            return RefreshResult(seed_ids=chosen, attempted_k=attempted)
        if k >= len(state.pool):
            if not qualifying:
                raise TopicSaturationError(
                    "no pool candidate has a topic outside the recent window"
                )
            logger.warning(
                "only %d of %d requested seeds qualify; returning the partial set",
                len(qualifying),
                required,
            )
            qualifying.sort(key=lambda doc_id: (best_distance[doc_id], doc_id))
            state.current_seeds = qualifying
            state.k = INITIAL_NEIGHBOR_COUNT
            state.recent_topics = []
            return RefreshResult(seed_ids=qualifying, attempted_k=attempted)
        k += 1


def brute_force_neighbors(
    query: list[float], pool: list[PoolEntry], k: int
) -> list[str]:
    """Reference O(n) scan used by tests to pin ``nearest_neighbors``."""
    distances = []
    for entry in pool:
        dot = sum(a * b for a, b in zip(query, entry.embedding, strict=True))
        nq = math.sqrt(sum(a * a for a in query))
        ne = math.sqrt(sum(b * b for b in entry.embedding))
        distances.append((1.0 - dot / (nq * ne), entry.document.id))
    distances.sort()
    return [doc_id for _dist, doc_id in distances[:k]]
