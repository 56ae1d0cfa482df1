"""Data model for answer sentence selection plus ranking metrics.

A dataset is a list of examples; an example is one question with an ordered
list of candidate sentences. Candidate order is significant: all metric ties
are broken in favor of the lowest candidate index, which keeps evaluation
deterministic regardless of how scores were produced.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Iterable, Sequence

from .errors import DataError
from .validation import check_finite_scores, check_language

SPLITS = ("train", "dev", "test")

# Sentinel returned by per-example metrics when the example has no positive
# candidate and therefore cannot be scored.
SKIP = None


@dataclass(frozen=True)
class Question:
    id: str
    text: str
    language: str

    def __post_init__(self) -> None:
        if not self.text:
            raise DataError(f"question {self.id!r} has empty text")
        check_language(self.language)


@dataclass(frozen=True)
class Candidate:
    id: str
    text: str
    gold: int | None = None

    def __post_init__(self) -> None:
        if not self.text:
            raise DataError(f"candidate {self.id!r} has empty text")
        if self.gold is not None and self.gold not in (0, 1):
            raise DataError(f"candidate {self.id!r} has invalid gold label {self.gold!r}")


@dataclass(frozen=True)
class AS2Example:
    """One question with its ordered candidate sentences."""

    question: Question
    candidates: tuple[Candidate, ...]

    def __post_init__(self) -> None:
        cands = tuple(self.candidates)
        object.__setattr__(self, "candidates", cands)
        if not cands:
            raise DataError(f"example {self.question.id!r} has no candidates")
        seen: set[str] = set()
        for c in cands:
            if c.id in seen:
                raise DataError(f"duplicate candidate id {c.id!r} in example {self.question.id!r}")
            seen.add(c.id)

    @property
    def labels(self) -> tuple[int | None, ...]:
        return tuple(c.gold for c in self.candidates)

    def has_gold(self) -> bool:
        return all(c.gold is not None for c in self.candidates)

    def n_positive(self) -> int:
        return sum(1 for c in self.candidates if c.gold == 1)


@dataclass(frozen=True)
class AS2Dataset:
    examples: tuple[AS2Example, ...]
    split: str
    language: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "examples", tuple(self.examples))
        if self.split not in SPLITS:
            raise DataError(f"unknown split {self.split!r}, expected one of {SPLITS}")
        check_language(self.language)
        seen: set[str] = set()
        for ex in self.examples:
            if ex.question.language != self.language:
                raise DataError(
                    f"question {ex.question.id!r} is tagged {ex.question.language!r} "
                    f"in a {self.language!r} dataset"
                )
            if ex.question.id in seen:
                raise DataError(f"duplicate question id {ex.question.id!r}")
            seen.add(ex.question.id)

    def __len__(self) -> int:
        return len(self.examples)

    def n_pairs(self) -> int:
        return sum(len(ex.candidates) for ex in self.examples)

    def with_examples(self, examples: Iterable[AS2Example]) -> "AS2Dataset":
        return replace(self, examples=tuple(examples))


@dataclass(frozen=True)
class PairRecord:
    """A flat (question, sentence) pair, the unit consumed by training."""

    pair_id: str
    question_id: str
    candidate_id: str
    q_text: str
    s_text: str
    language: str
    label: int | None = None


def pair_id_for(question_id: str, candidate_id: str) -> str:
    return f"{question_id}::{candidate_id}"


def flatten_pairs(dataset: AS2Dataset) -> list[PairRecord]:
    """Flatten a dataset into pair records, preserving example and candidate order."""
    out: list[PairRecord] = []
    for ex in dataset.examples:
        q = ex.question
        for c in ex.candidates:
            out.append(
                PairRecord(
                    pair_id=pair_id_for(q.id, c.id),
                    question_id=q.id,
                    candidate_id=c.id,
                    q_text=q.text,
                    s_text=c.text,
                    language=dataset.language,
                    label=c.gold,
                )
            )
    return out


@dataclass(frozen=True)
class EvalReport:
    """Macro-averaged ranking metrics over the evaluated examples."""

    p_at_1: float
    map: float
    mrr: float
    n_evaluated: int
    n_skipped: int

    def to_dict(self) -> dict:
        return {
            "p_at_1": self.p_at_1,
            "map": self.map,
            "mrr": self.mrr,
            "n_evaluated": self.n_evaluated,
            "n_skipped": self.n_skipped,
        }


# ---------------------------------------------------------------------------
# Per-example metrics.
#
# Ranks are computed by pairwise comparison counting rather than sorting:
# rank(i) = 1 + #{j : s_j > s_i} + #{j < i : s_j == s_i}. This realizes the
# lowest-index tie rule directly and is easy to reason about for small n.
# ---------------------------------------------------------------------------


def _ranks(scores: Sequence[float]) -> list[int]:
    n = len(scores)
    ranks = []
    for i in range(n):
        r = 1
        for j in range(n):
            if scores[j] > scores[i] or (scores[j] == scores[i] and j < i):
                r += 1
        ranks.append(r)
    return ranks


def _require_gold(example: AS2Example) -> list[int]:
    labels = []
    for c in example.candidates:
        if c.gold is None:
            raise DataError(
                f"candidate {c.id!r} of question {example.question.id!r} has no gold label"
            )
        labels.append(c.gold)
    return labels


def select_answer(example: AS2Example, scores: Sequence[float]) -> str:
    """Return the id of the highest-scoring candidate (ties: lowest index)."""
    scores = check_finite_scores(scores, len(example.candidates))
    best = 0
    for i in range(1, len(scores)):
        if scores[i] > scores[best]:
            best = i
    return example.candidates[best].id


def precision_at_1(example: AS2Example, scores: Sequence[float]) -> int | None:
    """1 if the selected candidate is gold-positive, 0 otherwise.

    Returns ``SKIP`` when the example has no positive candidate.
    """
    labels = _require_gold(example)
    scores = check_finite_scores(scores, len(labels))
    if sum(labels) == 0:
        return SKIP
    selected = select_answer(example, scores)
    for c, y in zip(example.candidates, labels):
        if c.id == selected:
            return int(y == 1)
    raise AssertionError("selected candidate not found")


def average_precision(example: AS2Example, scores: Sequence[float]) -> float | None:
    """Average precision of the induced ranking, or ``SKIP`` with no positives."""
    labels = _require_gold(example)
    scores = check_finite_scores(scores, len(labels))
    positives = [i for i, y in enumerate(labels) if y == 1]
    if not positives:
        return SKIP
    ranks = _ranks(scores)
    total = 0.0
    for i in positives:
        r_i = ranks[i]
        hits_at_r = sum(1 for j in positives if ranks[j] <= r_i)
        total += hits_at_r / r_i
    return total / len(positives)


def reciprocal_rank(example: AS2Example, scores: Sequence[float]) -> float | None:
    """1 / rank of the first positive candidate, or ``SKIP`` with no positives."""
    labels = _require_gold(example)
    scores = check_finite_scores(scores, len(labels))
    positives = [i for i, y in enumerate(labels) if y == 1]
    if not positives:
        return SKIP
    ranks = _ranks(scores)
    return 1.0 / min(ranks[i] for i in positives)


PairScorer = Callable[[Question, Candidate], float]


def evaluate_dataset(
    dataset: AS2Dataset,
    scorer: PairScorer,
    include_all_negative: bool = False,
) -> EvalReport:
    """Score every pair with ``scorer`` and macro-average P@1 / MAP / MRR.

    Examples without any positive candidate are excluded from the metric
    denominators by default; with ``include_all_negative=True`` they count
    as zero for every metric instead. A scorer exception aborts evaluation
    with the offending pair id.
    """
    p1_sum = ap_sum = rr_sum = 0.0
    n_eval = n_skip = 0
    for ex in dataset.examples:
        scores = []
        for c in ex.candidates:
            try:
                scores.append(float(scorer(ex.question, c)))
            except Exception as exc:
                raise DataError(
                    f"scorer failed on pair {pair_id_for(ex.question.id, c.id)}: {exc}"
                ) from exc
        p1 = precision_at_1(ex, scores)
        if p1 is SKIP:
            if include_all_negative:
                n_eval += 1
            else:
                n_skip += 1
            continue
        ap = average_precision(ex, scores)
        rr = reciprocal_rank(ex, scores)
        p1_sum += p1
        ap_sum += ap
        rr_sum += rr
        n_eval += 1
    if n_eval == 0:
        return EvalReport(0.0, 0.0, 0.0, 0, n_skip)
    return EvalReport(
        p_at_1=p1_sum / n_eval,
        map=ap_sum / n_eval,
        mrr=rr_sum / n_eval,
        n_evaluated=n_eval,
        n_skipped=n_skip,
    )
