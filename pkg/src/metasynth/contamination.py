"""Exact-match n-gram substring contamination check.

A reference example counts as contaminated at n when any of its token
n-grams occurs as a contiguous token run anywhere in the target corpus. The
target side is indexed into per-n hash sets, so the scan is linear in total
tokens rather than quadratic in corpus sizes.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Sequence

logger = logging.getLogger("metasynth.contamination")

NORMALIZATION_DESCRIPTION = (
    "lowercase; punctuation stripped; whitespace collapsed; token-level n-grams"
)

_PUNCT_PATTERN = re.compile(r"[^\w\s]+")


class ContaminationError(Exception):
    pass


def normalize_tokens(text: str) -> list[str]:
    """Lowercase, strip punctuation, collapse whitespace, then tokenize."""
    return _PUNCT_PATTERN.sub(" ", text.lower()).split()


@dataclass
class ContaminationReport:
    fractions: dict[int, float]
    n_reference: int
    normalization: str = NORMALIZATION_DESCRIPTION
    skipped: dict[int, int] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "n_reference": self.n_reference,
            "normalization": self.normalization,
            "fractions": {f"EM-{n}": frac for n, frac in self.fractions.items()},
            "skipped_short_examples": {
                f"EM-{n}": count for n, count in self.skipped.items()
            },
        }


def _windows(tokens: list[str], n: int):
    for i in range(len(tokens) - n + 1):
        yield tuple(tokens[i : i + n])


def em_overlap(
    references: Sequence[str], targets: Sequence[str], n_values: Sequence[int]
) -> ContaminationReport:
    """Compute the contaminated fraction of references at each n.

    Examples shorter than n have no n-gram and count as clean (they are
    skipped with a warning but stay in the denominator, which keeps the
    fractions monotone nonincreasing in n).
    """
    if not references or not targets:
        raise ContaminationError("both corpora must be nonempty")
    for n in n_values:
        if not 1 <= n <= 50:
            raise ContaminationError(f"n={n} outside supported range [1, 50]")
    ref_tokens = [normalize_tokens(text) for text in references]
    target_tokens = [normalize_tokens(text) for text in targets]

    fractions: dict[int, float] = {}
    skipped: dict[int, int] = {}
    for n in n_values:
        index: set[tuple[str, ...]] = set()
        for tokens in target_tokens:
            index.update(_windows(tokens, n))
        contaminated = 0
        short = 0
        for tokens in ref_tokens:
            if len(tokens) < n:
                short += 1
                continue
            if any(window in index for window in _windows(tokens, n)):
                contaminated += 1
        if short:
            logger.warning(
                "EM-%d: %d reference examples shorter than %d tokens counted clean",
                n,
                short,
                n,
            )
        fractions[n] = contaminated / len(references)
        skipped[n] = short
    return ContaminationReport(
        fractions=fractions, n_reference=len(references), skipped=skipped
    )


def em_overlap_bruteforce(
    references: Sequence[str], targets: Sequence[str], n_values: Sequence[int]
) -> dict[int, float]:
    """Quadratic reference scanner used to pin the indexed implementation."""
    ref_tokens = [normalize_tokens(text) for text in references]
    target_tokens = [normalize_tokens(text) for text in targets]
    out: dict[int, float] = {}
    for n in n_values:
        contaminated = 0
        for tokens in ref_tokens:
            hit = False
            for i in range(len(tokens) - n + 1):
                window = tokens[i : i + n]
                for target in target_tokens:
                    for j in range(len(target) - n + 1):
                        if target[j : j + n] == window:
                            hit = True
                            break
                    if hit:
                        break
                if hit:
                    break
            contaminated += 1 if hit else 0
        out[n] = contaminated / len(references)
    return out
