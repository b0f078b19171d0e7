"""Test-set contamination auditing.

Three layers, applied to normalized text: exact matching over content
hashes, fuzzy matching over token-set similarity, and n-gram overlap
statistics that catch partial copying. A fourth check confirms every
training sample still traces back to a pool entry with full provenance.
All functions are pure over their corpora.
"""

from __future__ import annotations

import hashlib
import json
import string
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

Sample = Union[str, dict]

NGRAM_SIZES = (3, 4, 5)
DEFAULT_FUZZY_THRESHOLD = 0.8

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


class AuditError(Exception):
    pass


def sample_text(sample: Sample, text_field: str = "text") -> str:
    if isinstance(sample, str):
        return sample
    return str(sample.get(text_field, ""))


def normalize_text(text: str) -> str:
    """Canonical form for matching: lowercase, no punctuation, single spaces."""
    return " ".join(text.lower().translate(_PUNCT_TABLE).split())


def text_hash(text: str) -> str:
    return hashlib.sha256(normalize_text(text).encode("utf-8")).hexdigest()


def tokens(text: str) -> list[str]:
    return normalize_text(text).split()


def word_ngrams(text: str, n: int) -> set[tuple[str, ...]]:
    toks = tokens(text)
    if n < 1:
        raise ValueError("n-gram size must be at least 1")
    return {tuple(toks[i : i + n]) for i in range(len(toks) - n + 1)}


def token_jaccard(a: str, b: str) -> float:
    sa, sb = set(tokens(a)), set(tokens(b))
    if not sa and not sb:
        return 1.0
    union = len(sa | sb)
    return len(sa & sb) / union if union else 0.0


@dataclass
class TestIndex:
    """Precomputed view of the test corpus used by every audit layer."""

    hashes: set
    ngrams: dict  # n -> set of n-gram tuples
    token_sets: list
    token_index: dict  # token -> list of test sample indices


def build_test_index(test: Iterable[Sample], text_field: str = "text") -> TestIndex:
    texts = [sample_text(s, text_field) for s in test]
    if not texts:
        raise AuditError("test corpus is empty; nothing to audit against")
    hashes = {text_hash(t) for t in texts}
    ngrams = {n: set() for n in NGRAM_SIZES}
    token_sets = []
    token_index: dict = {}
    for idx, t in enumerate(texts):
        for n in NGRAM_SIZES:
            ngrams[n] |= word_ngrams(t, n)
        toks = set(tokens(t))
        token_sets.append(toks)
        for tok in toks:
            token_index.setdefault(tok, []).append(idx)
    return TestIndex(hashes=hashes, ngrams=ngrams, token_sets=token_sets, token_index=token_index)


def exact_match_filter(
    train: list[Sample], index: TestIndex, text_field: str = "text"
) -> tuple[list[Sample], int]:
    """Drop train samples whose normalized hash appears in the test set."""
    kept: list[Sample] = []
    removed = 0
    for sample in train:
        if text_hash(sample_text(sample, text_field)) in index.hashes:
            removed += 1
        else:
            kept.append(sample)
    return kept, removed


def fuzzy_match_count(
    train: list[Sample],
    test: list[Sample],
    threshold: float = DEFAULT_FUZZY_THRESHOLD,
    text_field: str = "text",
    index: Optional[TestIndex] = None,
) -> int:
    """Count train samples near-duplicating any test sample.

    Similarity is Jaccard over token sets. Only test samples sharing at
    least one token are compared, which leaves disjoint corpora cheap.
    """
    if not 0.0 < threshold <= 1.0:
        raise AuditError("fuzzy threshold must lie in (0, 1]")
    if index is None:
        index = build_test_index(test, text_field)
    count = 0
    for sample in train:
        toks = set(tokens(sample_text(sample, text_field)))
        if not toks:
            # An empty text only matches another empty text (Jaccard 1).
            if any(not s for s in index.token_sets):
                count += 1
            continue
        candidates: set[int] = set()
        for tok in toks:
            candidates.update(index.token_index.get(tok, ()))
        for idx in candidates:
            other = index.token_sets[idx]
            union = len(toks | other)
            if union and len(toks & other) / union >= threshold:
                count += 1
                break
    return count


def ngram_overlap(
    train: list[Sample],
    test: list[Sample],
    n: int,
    text_field: str = "text",
    index: Optional[TestIndex] = None,
) -> float:
    """Share of distinct test n-grams that also occur anywhere in train.

    A test corpus with no n-grams of this length yields 0; the audit
    report carries the diagnostic.
    """
    if n < 1:
        raise AuditError("n-gram size must be at least 1")
    if index is not None and n in index.ngrams:
        test_grams = index.ngrams[n]
    else:
        test_grams = set()
        for s in test:
            test_grams |= word_ngrams(sample_text(s, text_field), n)
    if not test_grams:
        return 0.0
    shared = 0
    seen_train: set = set()
    for s in train:
        for gram in word_ngrams(sample_text(s, text_field), n):
            if gram in test_grams and gram not in seen_train:
                seen_train.add(gram)
                shared += 1
    return 100.0 * shared / len(test_grams)


@dataclass
class AuditReport:
    train_samples: int
    test_samples: int
    exact_matches: int
    fuzzy_matches: int
    ngram_overlap: dict  # n -> percentage
    provenance_complete: bool
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "train_samples": self.train_samples,
            "test_samples": self.test_samples,
            "exact_matches": self.exact_matches,
            "fuzzy_matches": self.fuzzy_matches,
            "ngram_overlap": {str(n): v for n, v in sorted(self.ngram_overlap.items())},
            "provenance_complete": self.provenance_complete,
            "notes": list(self.notes),
        }


def provenance_check(train: list[Sample], pool, entry_field: str = "entry_id") -> tuple[bool, list]:
    """Every train sample must name a pool entry with url, timestamp, and hash."""
    notes = []
    complete = True
    for i, sample in enumerate(train):
        entry_id = sample.get(entry_field) if isinstance(sample, dict) else None
        if not entry_id or pool is None or entry_id not in pool:
            complete = False
            notes.append(f"train sample {i} has no traceable pool entry")
            continue
        if not pool.get(entry_id).provenance.complete():
            complete = False
            notes.append(f"pool entry {entry_id} is missing provenance fields")
    return complete, notes


def audit(
    train: list[Sample],
    test: list[Sample],
    pool=None,
    threshold: float = DEFAULT_FUZZY_THRESHOLD,
    text_field: str = "text",
    entry_field: str = "entry_id",
) -> AuditReport:
    """Run every contamination layer and assemble the report."""
    index = build_test_index(test, text_field)
    _, exact = exact_match_filter(train, index, text_field)
    fuzzy = fuzzy_match_count(train, test, threshold, text_field, index=index)
    overlaps = {}
    notes = []
    for n in NGRAM_SIZES:
        overlaps[n] = ngram_overlap(train, test, n, text_field, index=index)
        if not index.ngrams[n]:
            notes.append(f"test corpus has no {n}-grams; overlap defined as 0")
    complete, prov_notes = provenance_check(train, pool, entry_field)
    notes.extend(prov_notes)
    return AuditReport(
        train_samples=len(train),
        test_samples=len(test),
        exact_matches=exact,
        fuzzy_matches=fuzzy,
        ngram_overlap=overlaps,
        provenance_complete=complete,
        notes=notes,
    )


def read_corpus(path: str, text_field: str = "text") -> list[Sample]:
    """Load a corpus file: JSON-lines when parseable, else plain lines."""
    samples: list[Sample] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.lstrip().startswith("{"):
                try:
                    obj = json.loads(line)
                    if isinstance(obj, dict):
                        samples.append(obj)
                        continue
                except json.JSONDecodeError:
                    pass
            samples.append(line)
    return samples