"""Corpus diversity metrics with bootstrap confidence intervals.

Seven metrics: compression ratio, 1- to 4-gram diversity, mean inverse
frequency, remote-clique, Chamfer distance, and the batch-embedding diversity
coefficient. All are pure and deterministic; every metric except the
compression ratio is invariant to corpus order (concatenation order matters
to the compressor, so reports record an order hash).
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .corpus import count_words

# DEFLATE level is pinned so ratios are bit-stable across runs and platforms.
COMPRESSION_LEVEL = 6

HIGHER_BETTER = "higher_better"
LOWER_BETTER = "lower_better"

METRIC_DIRECTIONS = {
    "compression_ratio": LOWER_BETTER,
    "ngram_diversity_1": HIGHER_BETTER,
    "ngram_diversity_2": HIGHER_BETTER,
    "ngram_diversity_3": HIGHER_BETTER,
    "ngram_diversity_4": HIGHER_BETTER,
    "ngram_diversity_sum": HIGHER_BETTER,
    "mean_inverse_frequency": HIGHER_BETTER,
    "remote_clique": HIGHER_BETTER,
    "chamfer": HIGHER_BETTER,
    "task2vec_coefficient": HIGHER_BETTER,
}


class DiversityError(Exception):
    pass


def concat_corpus(corpus: Sequence[str]) -> str:
    return "\n".join(corpus)


def lexical_tokens(text: str) -> list[str]:
    """Shared tokenizer for the lexical metrics: lowercase, split on Unicode
    whitespace, punctuation retained."""
    return text.lower().split()


def compression_ratio(corpus: Sequence[str]) -> float:
    """Raw byte length of the newline-joined corpus over its DEFLATE-
    compressed length."""
    if not corpus:
        raise DiversityError("corpus must be nonempty")
    raw = concat_corpus(corpus).encode("utf-8")
    compressed = zlib.compress(raw, COMPRESSION_LEVEL)
    return len(raw) / len(compressed)


def ngram_diversity(corpus: Sequence[str], n: int) -> float:
    """Unique-to-total ratio of token n-grams over the concatenated corpus."""
    if n < 1:
        raise ValueError("n must be >= 1")
    tokens = lexical_tokens(concat_corpus(corpus))
    total = len(tokens) - n + 1
    if total < 1:
        raise DiversityError(
            f"corpus has {len(tokens)} tokens; need at least {n} for {n}-grams"
        )
    unique = len({tuple(tokens[i : i + n]) for i in range(total)})
    return unique / total


def ngd_sum(corpus: Sequence[str]) -> float:
    """Sum of n-gram diversity for n = 1..4."""
    return sum(ngram_diversity(corpus, n) for n in range(1, 5))


def _unit_rows(embeddings: Sequence[Sequence[float]]) -> np.ndarray:
    matrix = np.asarray(embeddings, dtype=float)
    if matrix.ndim != 2:
        raise DiversityError("embeddings must be a list of equal-length vectors")
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms == 0.0):
        raise DiversityError("zero-norm embedding has no cosine distance")
    return matrix / norms[:, None]


def _cosine_distance_matrix(embeddings: Sequence[Sequence[float]]) -> np.ndarray:
    unit = _unit_rows(embeddings)
    return 1.0 - unit @ unit.T


def remote_clique(embeddings: Sequence[Sequence[float]]) -> float:
    """Mean of all pairwise cosine distances, self-pairs included as zeros:
    (1/N^2) * sum_ij d(x_i, x_j)."""
    if len(embeddings) < 2:
        raise DiversityError("need at least 2 embeddings")
    distances = _cosine_distance_matrix(embeddings)
    n = distances.shape[0]
    return float(distances.sum()) / (n * n)


def chamfer(embeddings: Sequence[Sequence[float]]) -> float:
    """Mean over points of the minimum cosine distance to any other point:
    (1/N) * sum_i min_{j != i} d(x_i, x_j)."""
    if len(embeddings) < 2:
        raise DiversityError("need at least 2 embeddings")
    distances = _cosine_distance_matrix(embeddings)
    np.fill_diagonal(distances, np.inf)
    return float(distances.min(axis=1).mean())


def task2vec_coefficient(batch_embeddings: Sequence[Sequence[float]]) -> float:
    """Average pairwise cosine distance across batch embeddings:
    2/(M(M-1)) * sum_{i<j} d_ij."""
    m = len(batch_embeddings)
    if m < 2:
        raise DiversityError("need at least 2 batch embeddings")
    distances = _cosine_distance_matrix(batch_embeddings)
    upper = distances[np.triu_indices(m, k=1)]
    return float(upper.sum()) * 2.0 / (m * (m - 1))


@dataclass
class ReferenceFrequencies:
    """Token counts over a reference corpus, backing the lexical-rarity
    metric. ``total_tokens`` may be set explicitly for synthetic references."""

    counts: dict[str, float]
    total_tokens: float

    @classmethod
    def from_counts(cls, counts: dict[str, float]) -> "ReferenceFrequencies":
        return cls(counts=dict(counts), total_tokens=float(sum(counts.values())))

    @classmethod
    def from_tsv(cls, path: str) -> "ReferenceFrequencies":
        """Load a token frequency table: one ``token<TAB>count`` per line."""
        counts: dict[str, float] = {}
        with open(path, "r", encoding="utf-8") as handle:
            for line in handle:
                line = line.rstrip("\n")
                if not line:
                    continue
                token, _, raw = line.partition("\t")
                counts[token] = counts.get(token, 0.0) + float(raw)
        return cls.from_counts(counts)

    @classmethod
    def from_corpus(cls, corpus: Sequence[str]) -> "ReferenceFrequencies":
        counts: dict[str, float] = {}
        for text in corpus:
            for token in lexical_tokens(text):
                counts[token] = counts.get(token, 0.0) + 1.0
        return cls.from_counts(counts)


def mif(corpus: Sequence[str], ref: ReferenceFrequencies) -> float:
    """Mean inverse frequency: per document, the mean over tokens w of
    ln(total / (1 + count_ref(w))); the corpus score averages the document
    scores. The +1 guards unseen tokens."""
    if not corpus:
        raise DiversityError("corpus must be nonempty")
    if ref.total_tokens <= 0:
        raise DiversityError("reference corpus must have a positive token total")
    doc_scores = []
    for text in corpus:
        tokens = lexical_tokens(text)
        if not tokens:
            doc_scores.append(0.0)
            continue
        score = sum(
            math.log(ref.total_tokens / (1.0 + ref.counts.get(token, 0.0)))
            for token in tokens
        )
        doc_scores.append(score / len(tokens))
    return sum(doc_scores) / len(doc_scores)


@dataclass
class BootstrapEstimate:
    mean: float
    ci_low: float
    ci_high: float


def bootstrap_ci(
    values: Sequence[float],
    n_resamples: int = 1000,
    level: float = 0.95,
    rng_seed: int = 0,
    statistic: Callable[[np.ndarray], float] | None = None,
) -> BootstrapEstimate:
    """Percentile bootstrap of a statistic (default: the mean).

    Resamples with replacement ``n_resamples`` times and reports the mean of
    the resample statistics with the ((1-level)/2, 1-(1-level)/2)
    percentiles. Deterministic given ``rng_seed``.
    """
    data = np.asarray(values, dtype=float)
    if data.size < 2:
        raise ValueError("need at least 2 values")
    if n_resamples < 100:
        raise ValueError("n_resamples must be >= 100")
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    rng = np.random.default_rng(rng_seed)
    indices = rng.integers(0, data.size, size=(n_resamples, data.size))
    if statistic is None:
        stats = data[indices].mean(axis=1)
    else:
        stats = np.array([statistic(data[idx]) for idx in indices])
    alpha = (1.0 - level) / 2.0
    low, high = np.percentile(stats, [100.0 * alpha, 100.0 * (1.0 - alpha)])
    return BootstrapEstimate(mean=float(stats.mean()), ci_low=float(low), ci_high=float(high))


def bootstrap_metric(
    n_items: int,
    metric_over_indices: Callable[[np.ndarray], float],
    n_resamples: int = 1000,
    level: float = 0.95,
    rng_seed: int = 0,
) -> BootstrapEstimate:
    """Percentile bootstrap of a corpus-level statistic: resample item
    indices with replacement and re-evaluate the metric per resample."""
    if n_items < 2:
        raise ValueError("need at least 2 items")
    if n_resamples < 100:
        raise ValueError("n_resamples must be >= 100")
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    rng = np.random.default_rng(rng_seed)
    stats = np.array(
        [
            metric_over_indices(rng.integers(0, n_items, size=n_items))
            for _ in range(n_resamples)
        ]
    )
    alpha = (1.0 - level) / 2.0
    low, high = np.percentile(stats, [100.0 * alpha, 100.0 * (1.0 - alpha)])
    return BootstrapEstimate(mean=float(stats.mean()), ci_low=float(low), ci_high=float(high))


HISTOGRAM_BIN_WIDTH = 50


def length_histogram(corpus: Sequence[str]) -> dict[int, int]:
    """Word-count histogram with 50-wide bins keyed by bin start; bin counts
    sum to the corpus size."""
    if not corpus:
        raise DiversityError("corpus must be nonempty")
    bins: dict[int, int] = {}
    for text in corpus:
        bin_lo = (count_words(text) // HISTOGRAM_BIN_WIDTH) * HISTOGRAM_BIN_WIDTH
        bins[bin_lo] = bins.get(bin_lo, 0) + 1
    return dict(sorted(bins.items()))


@dataclass
class MetricEstimate:
    point_estimate: float
    ci_low: float
    ci_high: float
    n_resamples: int
    level: float
    direction: str

    def to_json_dict(self) -> dict:
        return {
            "point_estimate": self.point_estimate,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "n_resamples": self.n_resamples,
            "level": self.level,
            "direction": self.direction,
        }


@dataclass
class DiversityReport:
    corpus_id: str
    n_documents: int
    order_hash: str
    metrics: dict[str, MetricEstimate] = field(default_factory=dict)
    length_histogram: dict[int, int] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "corpus_id": self.corpus_id,
            "n_documents": self.n_documents,
            "order_hash": self.order_hash,
            "metrics": {
                name: estimate.to_json_dict() for name, estimate in self.metrics.items()
            },
            "length_histogram": {
                str(bin_lo): count for bin_lo, count in self.length_histogram.items()
            },
        }


def _metric_seed(rng_seed: int, metric_name: str) -> int:
    import hashlib

    digest = hashlib.sha256(f"{rng_seed}:{metric_name}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def measure_corpus(
    texts: Sequence[str],
    corpus_id: str,
    order_hash: str,
    embeddings: Sequence[Sequence[float]] | None = None,
    reference: ReferenceFrequencies | None = None,
    batch_embeddings: Sequence[Sequence[float]] | None = None,
    n_resamples: int = 1000,
    level: float = 0.95,
    rng_seed: int = 0,
) -> DiversityReport:
    """Compute every applicable metric with a bootstrap CI over documents.

    Embedding-based metrics run only when vectors are supplied; the
    lexical-rarity metric needs a reference frequency table; the batch
    diversity coefficient needs externally produced batch embeddings.
    """
    if embeddings is not None and len(embeddings) != len(texts):
        raise DiversityError(
            f"{len(embeddings)} embeddings for {len(texts)} documents"
        )
    report = DiversityReport(
        corpus_id=corpus_id,
        n_documents=len(texts),
        order_hash=order_hash,
        length_histogram=length_histogram(texts),
    )
    text_list = list(texts)

    def add(name: str, metric_over_indices: Callable[[np.ndarray], float]) -> None:
        estimate = bootstrap_metric(
            len(text_list),
            metric_over_indices,
            n_resamples=n_resamples,
            level=level,
            rng_seed=_metric_seed(rng_seed, name),
        )
        report.metrics[name] = MetricEstimate(
            point_estimate=estimate.mean,
            ci_low=estimate.ci_low,
            ci_high=estimate.ci_high,
            n_resamples=n_resamples,
            level=level,
            direction=METRIC_DIRECTIONS[name],
        )

    add("compression_ratio", lambda idx: compression_ratio([text_list[i] for i in idx]))
    for n in (1, 2, 3, 4):
        add(
            f"ngram_diversity_{n}",
            lambda idx, n=n: ngram_diversity([text_list[i] for i in idx], n),
        )
    if reference is not None:
        add(
            "mean_inverse_frequency",
            lambda idx: mif([text_list[i] for i in idx], reference),
        )
    if embeddings is not None:
        matrix = np.asarray(embeddings, dtype=float)
        add("remote_clique", lambda idx: remote_clique(matrix[idx]))
        add("chamfer", lambda idx: chamfer(matrix[idx]))
    if batch_embeddings is not None:
        batches = np.asarray(batch_embeddings, dtype=float)
        estimate = bootstrap_metric(
            len(batches),
            lambda idx: task2vec_coefficient(batches[idx]),
            n_resamples=n_resamples,
            level=level,
            rng_seed=_metric_seed(rng_seed, "task2vec_coefficient"),
        )
        report.metrics["task2vec_coefficient"] = MetricEstimate(
            point_estimate=estimate.mean,
            ci_low=estimate.ci_low,
            ci_high=estimate.ci_high,
            n_resamples=n_resamples,
            level=level,
            direction=METRIC_DIRECTIONS["task2vec_coefficient"],
        )
    return report
