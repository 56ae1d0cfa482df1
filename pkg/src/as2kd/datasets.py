"""Dataset ingestion and serialization.

Supported inputs:
  * WikiQA-style TSV, either the minimal 5-column layout
    (question_id, question, sentence_id, sentence, label) or the original
    7-column layout with document columns; a header row is auto-detected.
  * QA-document JSONL, one instance per line:
    {"qid", "question", "language", "document", "spans": [{"start", "end"}]}
Datasets round-trip through JSONL, one example per line:
    {"qid", "question", "language", "split",
     "candidates": [{"cid", "text", "label"}]}
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

from .core import AS2Dataset, AS2Example, Candidate, Question
from .errors import DataError, SchemaError

# Sentence terminators. ASCII ones (and the devanagari danda) only end a
# sentence when followed by whitespace or end of text; the fullwidth CJK
# marks end one unconditionally, since CJK text does not use spaces.
_TERMINALS_SPACED = {".", "!", "?", "।"}
_TERMINALS_UNCONDITIONAL = {"。", "！", "？"}


@dataclass(frozen=True)
class SpanAnnotation:
    """Half-open character span [start, end) into a document."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start < 0 or self.end <= self.start:
            raise DataError(f"invalid span [{self.start}, {self.end})")


@dataclass(frozen=True)
class QADocInstance:
    question: Question
    document: str
    spans: tuple[SpanAnnotation, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "spans", tuple(self.spans))
        for span in self.spans:
            if span.end > len(self.document):
                raise DataError(
                    f"span [{span.start}, {span.end}) outside document of "
                    f"length {len(self.document)} (question {self.question.id!r})"
                )


@dataclass(frozen=True)
class SentenceSpan:
    text: str
    start: int
    end: int


# ---------------------------------------------------------------------------
# WikiQA-style TSV
# ---------------------------------------------------------------------------

_WIKIQA_7COL_HEADER = ("questionid", "question", "documentid", "documenttitle",
                       "sentenceid", "sentence", "label")


def _looks_like_header(cols: list[str]) -> bool:
    lowered = [c.strip().lower() for c in cols]
    if len(lowered) == 7:
        return lowered == list(_WIKIQA_7COL_HEADER)
    if len(lowered) == 5:
        return lowered[0] in ("question_id", "questionid", "qid") and lowered[-1] == "label"
    return False


def parse_wikiqa_tsv(path: str | Path, language: str, split: str = "train") -> AS2Dataset:
    """Parse a WikiQA-style TSV into a dataset, grouping rows by question id.

    Row order within a question defines candidate order. Both the 5-column
    and the original 7-column layouts are accepted.
    """
    grouped: dict[str, tuple[str, list[Candidate]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            cols = line.split("\t")
            if lineno == 1 and _looks_like_header(cols):
                continue
            if len(cols) == 7:
                qid, q_text, sid, s_text, label_str = (
                    cols[0], cols[1], cols[4], cols[5], cols[6])
            elif len(cols) == 5:
                qid, q_text, sid, s_text, label_str = cols
            else:
                raise SchemaError(f"{path}:{lineno}: expected 5 or 7 columns, got {len(cols)}")
            if label_str not in ("0", "1"):
                raise SchemaError(f"{path}:{lineno}: label must be 0 or 1, got {label_str!r}")
            if qid not in grouped:
                grouped[qid] = (q_text, [])
            grouped[qid][1].append(Candidate(id=sid, text=s_text, gold=int(label_str)))
    examples = [
        AS2Example(
            question=Question(id=qid, text=q_text, language=language),
            candidates=tuple(cands),
        )
        for qid, (q_text, cands) in grouped.items()
    ]
    return AS2Dataset(examples=tuple(examples), split=split, language=language)


def filter_train_all_negative(dataset: AS2Dataset) -> AS2Dataset:
    """Drop all-negative questions from a train split; dev/test pass through."""
    for ex in dataset.examples:
        if not ex.has_gold():
            raise DataError(f"example {ex.question.id!r} has unlabeled candidates")
    if dataset.split != "train":
        return dataset
    return dataset.with_examples(ex for ex in dataset.examples if ex.n_positive() > 0)


# ---------------------------------------------------------------------------
# Sentence splitting and QA -> AS2 conversion
# ---------------------------------------------------------------------------


def _rule_based_split(document: str) -> list[SentenceSpan]:
    spans: list[SentenceSpan] = []
    n = len(document)
    start = 0
    i = 0
    while i < n:
        ch = document[i]
        ends_here = False
        if ch in _TERMINALS_UNCONDITIONAL:
            ends_here = True
        elif ch in _TERMINALS_SPACED:
            nxt = document[i + 1] if i + 1 < n else None
            ends_here = nxt is None or nxt.isspace()
        if ends_here:
            spans.append(SentenceSpan(text="", start=start, end=i + 1))
            start = i + 1
        i += 1
    if start < n:
        spans.append(SentenceSpan(text="", start=start, end=n))
    # Trim each span to its non-whitespace extent and drop blank ones.
    trimmed: list[SentenceSpan] = []
    for span in spans:
        raw = document[span.start : span.end]
        stripped = raw.strip()
        if not stripped:
            continue
        left = span.start + (len(raw) - len(raw.lstrip()))
        right = left + len(stripped)
        trimmed.append(SentenceSpan(text=document[left:right], start=left, end=right))
    return trimmed


Splitter = Callable[[str], list[SentenceSpan]]

SPLITTERS: dict[str, Splitter] = {"rule": _rule_based_split}


def register_splitter(name: str, splitter: Splitter) -> None:
    SPLITTERS[name] = splitter


def split_sentences(document: str, splitter: str | Splitter = "rule") -> list[SentenceSpan]:
    """Split a document into ordered, non-overlapping sentence spans.

    Spans jointly cover every non-whitespace character; a document without
    terminal punctuation yields a single span, and a whitespace-only
    document yields none.
    """
    if isinstance(splitter, str):
        try:
            splitter = SPLITTERS[splitter]
        except KeyError:
            raise DataError(
                f"unknown splitter {splitter!r}; registered: {sorted(SPLITTERS)}"
            ) from None
    return splitter(document)


def convert_qa_to_as2(instance: QADocInstance, splitter: str | Splitter = "rule") -> AS2Example:
    """Convert a (question, document, answer spans) instance into an example.

    One candidate per sentence span, in document order; a candidate is
    positive iff its span overlaps any answer span by at least one character.
    """
    sentences = split_sentences(instance.document, splitter)
    if not sentences:
        raise DataError(f"document of question {instance.question.id!r} has no sentences")
    candidates = []
    for k, sent in enumerate(sentences):
        overlap = any(
            min(sent.end, span.end) - max(sent.start, span.start) >= 1
            for span in instance.spans
        )
        candidates.append(Candidate(id=f"s{k}", text=sent.text, gold=int(overlap)))
    return AS2Example(question=instance.question, candidates=tuple(candidates))


# ---------------------------------------------------------------------------
# JSONL serialization
# ---------------------------------------------------------------------------


def write_dataset_jsonl(dataset: AS2Dataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in dataset.examples:
            rec = {
                "qid": ex.question.id,
                "question": ex.question.text,
                "language": dataset.language,
                "split": dataset.split,
                "candidates": [
                    {"cid": c.id, "text": c.text, **({"label": c.gold} if c.gold is not None else {})}
                    for c in ex.candidates
                ],
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_dataset_jsonl(path: str | Path) -> AS2Dataset:
    """Read a dataset back from JSONL; labels are mandatory on train records."""
    examples: list[AS2Example] = []
    language: str | None = None
    split: str | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                qid, q_text = rec["qid"], rec["question"]
                rec_lang, rec_split = rec["language"], rec["split"]
                raw_cands = rec["candidates"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
            if language is None:
                language, split = rec_lang, rec_split
            elif (rec_lang, rec_split) != (language, split):
                raise SchemaError(
                    f"{path}:{lineno}: mixed language/split "
                    f"({rec_lang!r}/{rec_split!r} vs {language!r}/{split!r})"
                )
            candidates = []
            for c in raw_cands:
                label = c.get("label")
                if label is None and rec_split == "train":
                    raise SchemaError(
                        f"{path}:{lineno}: train candidate {c.get('cid')!r} is missing a label"
                    )
                candidates.append(Candidate(id=c["cid"], text=c["text"], gold=label))
            examples.append(
                AS2Example(
                    question=Question(id=qid, text=q_text, language=rec_lang),
                    candidates=tuple(candidates),
                )
            )
    if language is None:
        raise SchemaError(f"{path}: empty dataset file")
    return AS2Dataset(examples=tuple(examples), split=split, language=language)


def write_qadoc_jsonl(instances: Iterable[QADocInstance], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            rec = {
                "qid": inst.question.id,
                "question": inst.question.text,
                "language": inst.question.language,
                "document": inst.document,
                "spans": [{"start": s.start, "end": s.end} for s in inst.spans],
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_qadoc_jsonl(path: str | Path) -> list[QADocInstance]:
    out: list[QADocInstance] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                question = Question(
                    id=rec["qid"], text=rec["question"], language=rec["language"]
                )
                spans = tuple(
                    SpanAnnotation(start=s["start"], end=s["end"]) for s in rec["spans"]
                )
                out.append(
                    QADocInstance(question=question, document=rec["document"], spans=spans)
                )
            except (json.JSONDecodeError, KeyError, TypeError, DataError) as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    return out


def train_dev_split(
    dataset: AS2Dataset, dev_frac: float = 0.2, seed: int = 0
) -> tuple[AS2Dataset, AS2Dataset]:
    """Deterministic split by seeded shuffle of question order.

    The same (dataset, dev_frac, seed) always yields the same partition.
    """
    if not 0.0 < dev_frac < 1.0:
        raise DataError(f"dev_frac must be in (0, 1), got {dev_frac}")
    order = list(dataset.examples)
    random.Random(seed).shuffle(order)
    n_train = int(len(order) * (1.0 - dev_frac))
    if n_train == 0 or n_train == len(order):
        raise DataError(f"split of {len(order)} examples at {dev_frac} leaves a side empty")
    train = AS2Dataset(examples=tuple(order[:n_train]), split="train", language=dataset.language)
    dev = AS2Dataset(examples=tuple(order[n_train:]), split="dev", language=dataset.language)
    return train, dev
