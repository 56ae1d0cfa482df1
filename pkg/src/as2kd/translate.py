"""Machine translation provider abstraction and parallel-pair construction.

Real MT services are deliberately out of scope: the provider interface is
exercised through deterministic mocks (identity, dictionary substitution,
token permutation), which is enough for every verifiable property of the
pipelines built on top.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .core import AS2Dataset, EvalReport, evaluate_dataset, flatten_pairs, pair_id_for
from .errors import DataError, ProviderError
from .teacher import TeacherStore, score_remote_all, teacher_logits

DIRECTIONS = ("to_english", "from_english")


@dataclass(frozen=True)
class PairSide:
    q_text: str
    s_text: str
    language: str


@dataclass(frozen=True)
class ParallelPair:
    """A (question, sentence) pair in two languages sharing one id."""

    pair_id: str
    source: PairSide
    target: PairSide
    label: int | None = None


class MTProvider:
    """Base translation provider: subclasses implement ``_translate``.

    ``supported`` is a set of (src, tgt) codes, or None for any pair.
    ``calls`` counts real backend invocations, which lets tests assert
    cache behavior.
    """

    name = "base"
    supported: set[tuple[str, str]] | None = None
    batch_limit: int = 128

    def __init__(self) -> None:
        self.calls = 0

    def supports(self, src: str, tgt: str) -> bool:
        return self.supported is None or (src, tgt) in self.supported

    def _translate(self, texts: Sequence[str], src: str, tgt: str) -> list[str]:
        raise NotImplementedError

    def translate(self, texts: Sequence[str], src: str, tgt: str) -> list[str]:
        self.calls += 1
        out = self._translate(texts, src, tgt)
        if len(out) != len(texts):
            raise ProviderError(
                f"provider {self.name} returned {len(out)} outputs for {len(texts)} inputs"
            )
        return out


class IdentityProvider(MTProvider):
    name = "identity"

    def _translate(self, texts: Sequence[str], src: str, tgt: str) -> list[str]:
        return list(texts)


class DictionaryProvider(MTProvider):
    """Whitespace-tokenized word substitution; unmapped words pass through."""

    name = "dictionary"

    def __init__(self, mapping: Mapping[str, str], src: str, tgt: str) -> None:
        super().__init__()
        self.mapping = dict(mapping)
        self.supported = {(src, tgt)}

    def _translate(self, texts: Sequence[str], src: str, tgt: str) -> list[str]:
        return [" ".join(self.mapping.get(w, w) for w in t.split()) for t in texts]


class PermutationProvider(DictionaryProvider):
    """Bijective token mapping used for synthetic pseudo-languages."""

    name = "permutation"

    def inverse(self) -> "PermutationProvider":
        (src, tgt), = self.supported
        inv = {v: k for k, v in self.mapping.items()}
        if len(inv) != len(self.mapping):
            raise ProviderError("token mapping is not invertible")
        return PermutationProvider(inv, tgt, src)


class FlakyProvider(MTProvider):
    """Wraps a provider and fails the first ``failures`` calls (test aid)."""

    name = "flaky"

    def __init__(self, inner: MTProvider, failures: int) -> None:
        super().__init__()
        self.inner = inner
        self.remaining_failures = failures

    def supports(self, src: str, tgt: str) -> bool:
        return self.inner.supports(src, tgt)

    def _translate(self, texts: Sequence[str], src: str, tgt: str) -> list[str]:
        if self.remaining_failures > 0:
            self.remaining_failures -= 1
            raise ProviderError("injected transient failure")
        return self.inner._translate(texts, src, tgt)


class TranslationCache:
    """Append-only JSONL cache keyed by (provider, src, tgt, input hash)."""

    def __init__(self, path: str | Path | None = None) -> None:
        self.path = Path(path) if path is not None else None
        self._memory: dict[tuple[str, str, str, str], str] = {}
        if self.path is not None and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = json.loads(line)
                    key = (rec["provider"], rec["src"], rec["tgt"], rec["input_hash"])
                    self._memory[key] = rec["output"]

    @staticmethod
    def _hash(text: str) -> str:
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def get(self, provider: str, src: str, tgt: str, text: str) -> str | None:
        return self._memory.get((provider, src, tgt, self._hash(text)))

    def put(self, provider: str, src: str, tgt: str, text: str, output: str) -> None:
        digest = self._hash(text)
        self._memory[(provider, src, tgt, digest)] = output
        if self.path is not None:
            rec = {
                "src": src,
                "tgt": tgt,
                "provider": provider,
                "input_hash": digest,
                "input": text,
                "output": output,
            }
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
                fh.flush()


def translate_batch(
    provider: MTProvider,
    texts: Sequence[str],
    src: str,
    tgt: str,
    cache: TranslationCache | None = None,
    max_retries: int = 3,
    backoff: float = 0.1,
) -> list[str]:
    """Translate texts in order, serving cache hits and retrying failures.

    Only cache misses reach the provider, in sub-batches no larger than its
    declared limit. A provider failure is retried ``max_retries`` times with
    exponential backoff before propagating.
    """
    if not provider.supports(src, tgt):
        raise ProviderError(f"provider {provider.name} does not support {src} -> {tgt}")
    out: list[str | None] = [None] * len(texts)
    misses: dict[str, list[int]] = {}
    for i, text in enumerate(texts):
        hit = cache.get(provider.name, src, tgt, text) if cache is not None else None
        if hit is not None:
            out[i] = hit
        else:
            misses.setdefault(text, []).append(i)

    unique = list(misses)
    for lo in range(0, len(unique), provider.batch_limit):
        chunk = unique[lo : lo + provider.batch_limit]
        last_error: Exception | None = None
        for attempt in range(max_retries):
            try:
                translated = provider.translate(chunk, src, tgt)
                break
            except Exception as exc:
                last_error = exc
                if attempt + 1 < max_retries:
                    time.sleep(backoff * 2**attempt)
        else:
            raise ProviderError(
                f"provider {provider.name} failed after {max_retries} attempts: {last_error}"
            )
        for text, result in zip(chunk, translated):
            if cache is not None:
                cache.put(provider.name, src, tgt, text, result)
            for i in misses[text]:
                out[i] = result
    assert all(t is not None for t in out)
    return out  # type: ignore[return-value]


def build_parallel_dataset(
    dataset: AS2Dataset,
    provider: MTProvider,
    direction: str,
    other_language: str = "en",
    cache: TranslationCache | None = None,
) -> list[ParallelPair]:
    """Pair every (question, sentence) with its translation.

    ``to_english``: the dataset is original target-language text; the
    source side is its English translation. ``from_english``: the dataset
    is English; the target side is its translation into
    ``other_language``. Pair ids are ``qid::cid``; gold labels carry over.
    """
    if direction not in DIRECTIONS:
        raise DataError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    if direction == "from_english" and dataset.language != "en":
        raise DataError(f"from_english expects an English dataset, got {dataset.language!r}")
    if direction == "to_english":
        src_lang, produced_lang = dataset.language, other_language
    else:
        src_lang, produced_lang = "en", other_language

    records = flatten_pairs(dataset)
    texts = [r.q_text for r in records] + [r.s_text for r in records]
    try:
        translated = translate_batch(provider, texts, src_lang, produced_lang, cache=cache)
    except ProviderError as exc:
        raise ProviderError(f"translating {dataset.language}/{dataset.split}: {exc}") from exc
    n = len(records)
    pairs: list[ParallelPair] = []
    for i, rec in enumerate(records):
        original = PairSide(q_text=rec.q_text, s_text=rec.s_text, language=dataset.language)
        produced = PairSide(q_text=translated[i], s_text=translated[n + i], language=produced_lang)
        if direction == "to_english":
            source, target = produced, original
        else:
            source, target = original, produced
        pairs.append(
            ParallelPair(pair_id=rec.pair_id, source=source, target=target, label=rec.label)
        )
    return pairs


def pair_parallel_datasets(source: AS2Dataset, target: AS2Dataset) -> list[ParallelPair]:
    """Zip two parallel corpora (same question/candidate structure) into pairs."""
    if len(source.examples) != len(target.examples):
        raise DataError("parallel datasets differ in example count")
    pairs: list[ParallelPair] = []
    for ex_s, ex_t in zip(source.examples, target.examples):
        if ex_s.question.id != ex_t.question.id:
            raise DataError(
                f"question ids diverge: {ex_s.question.id!r} vs {ex_t.question.id!r}"
            )
        if len(ex_s.candidates) != len(ex_t.candidates):
            raise DataError(f"candidate counts diverge for question {ex_s.question.id!r}")
        for c_s, c_t in zip(ex_s.candidates, ex_t.candidates):
            if c_s.id != c_t.id:
                raise DataError(
                    f"candidate ids diverge for question {ex_s.question.id!r}: "
                    f"{c_s.id!r} vs {c_t.id!r}"
                )
            pairs.append(
                ParallelPair(
                    pair_id=pair_id_for(ex_s.question.id, c_s.id),
                    source=PairSide(ex_s.question.text, c_s.text, source.language),
                    target=PairSide(ex_t.question.text, c_t.text, target.language),
                    label=c_t.gold if c_t.gold is not None else c_s.gold,
                )
            )
    return pairs


def write_pairs_jsonl(pairs: Sequence[ParallelPair], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            rec = {
                "pair_id": p.pair_id,
                "source": {"q": p.source.q_text, "s": p.source.s_text, "language": p.source.language},
                "target": {"q": p.target.q_text, "s": p.target.s_text, "language": p.target.language},
            }
            if p.label is not None:
                rec["label"] = p.label
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_pairs_jsonl(path: str | Path) -> list[ParallelPair]:
    pairs: list[ParallelPair] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                pairs.append(
                    ParallelPair(
                        pair_id=rec["pair_id"],
                        source=PairSide(
                            rec["source"]["q"], rec["source"]["s"], rec["source"]["language"]
                        ),
                        target=PairSide(
                            rec["target"]["q"], rec["target"]["s"], rec["target"]["language"]
                        ),
                        label=rec.get("label"),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return pairs


def mt_teacher_baseline(
    dataset: AS2Dataset,
    provider: MTProvider,
    teacher: TeacherStore | str,
    cache: TranslationCache | None = None,
) -> EvalReport:
    """Translate the evaluation set to English, score with the English
    teacher, and evaluate the induced ranking.

    ``teacher`` is either a prebuilt score store (keyed by this dataset's
    pair ids) or a scoring endpoint URL, in which case the translated texts
    are scored remotely. Every pair must be scorable; evaluation cannot
    skip individual candidates.
    """
    records = flatten_pairs(dataset)
    texts = [r.q_text for r in records] + [r.s_text for r in records]
    translated = translate_batch(provider, texts, dataset.language, "en", cache=cache)
    n = len(records)

    if isinstance(teacher, TeacherStore):
        store = teacher
    else:
        triples = [(translated[i], translated[n + i], records[i].pair_id) for i in range(n)]
        store = score_remote_all(teacher, triples)

    def scorer(question, candidate) -> float:
        pid = pair_id_for(question.id, candidate.id)
        teacher_logits(store, pid, mode="strict")
        return store.scores[pid].prob_pos

    return evaluate_dataset(dataset, scorer)
