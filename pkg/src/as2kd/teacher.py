"""Access to frozen teacher logits, from a JSONL cache or a scoring endpoint.

Teachers are consumed as logit sources keyed by pair id, never executed
in-process. The JSONL format is one record per line:

    {"pair_id": str, "z": [z_neg, z_pos], "p_pos": real}

``p_pos`` must agree with softmax(z) to 1e-4 on load; stored records are
normalized to the recomputed value.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import requests

from .errors import DataError, ProviderError, SchemaError
from .losses import softmax_temp
from .validation import check_logit_pair

MAX_REMOTE_BATCH = 256


@dataclass(frozen=True)
class TeacherScore:
    pair_id: str
    logits: tuple[float, float]
    prob_pos: float


@dataclass
class TeacherStore:
    """In-memory map pair_id -> TeacherScore with provenance metadata.

    The score map is read-only after load; ``served`` / ``skipped`` count
    lenient-mode lookups for bookkeeping.
    """

    scores: dict[str, TeacherScore] = field(default_factory=dict)
    teacher_name: str = "unknown"
    dataset: str = "unknown"
    created_at: float = field(default_factory=time.time)
    served: int = 0
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.scores)

    def add(self, score: TeacherScore) -> None:
        if score.pair_id in self.scores:
            raise DataError(f"duplicate pair_id {score.pair_id!r} in teacher store")
        self.scores[score.pair_id] = score


def _make_score(pair_id: str, z: Sequence[float], p_pos: float | None, where: str) -> TeacherScore:
    logits = check_logit_pair(z)
    expected = softmax_temp(logits, 1.0)[1]
    if p_pos is not None and abs(p_pos - expected) > 1e-4:
        raise SchemaError(
            f"{where}: p_pos {p_pos} inconsistent with logits {list(logits)} "
            f"(softmax gives {expected:.6f})"
        )
    return TeacherScore(pair_id=pair_id, logits=logits, prob_pos=expected)


def load_scores(path: str | Path, teacher_name: str = "unknown") -> TeacherStore:
    """Load a teacher-scores JSONL file; errors carry the offending line number."""
    store = TeacherStore(teacher_name=teacher_name, dataset=str(path))
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            try:
                pair_id = rec["pair_id"]
                z = rec["z"]
            except (KeyError, TypeError) as exc:
                raise SchemaError(f"{path}:{lineno}: missing field {exc}") from exc
            score = _make_score(pair_id, z, rec.get("p_pos"), f"{path}:{lineno}")
            if pair_id in store.scores:
                raise SchemaError(f"{path}:{lineno}: duplicate pair_id {pair_id!r}")
            store.scores[pair_id] = score
    return store


def save_scores(store: TeacherStore, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for score in store.scores.values():
            fh.write(
                json.dumps(
                    {"pair_id": score.pair_id, "z": list(score.logits), "p_pos": score.prob_pos}
                )
                + "\n"
            )


def teacher_logits(
    store: TeacherStore, pair_id: str, mode: str = "strict"
) -> tuple[float, float] | None:
    """Look up teacher logits. Strict mode raises on a missing id; lenient
    mode returns None and counts the skip."""
    if mode not in ("strict", "lenient"):
        raise DataError(f"unknown lookup mode {mode!r}")
    score = store.scores.get(pair_id)
    if score is None:
        if mode == "strict":
            raise DataError(f"no teacher score for pair {pair_id!r}")
        store.skipped += 1
        return None
    store.served += 1
    return score.logits


def score_remote(
    endpoint: str,
    batch: Sequence[tuple[str, str, str]],
    cache: TeacherStore | None = None,
    timeout: float = 30.0,
    max_retries: int = 3,
    backoff: float = 0.5,
) -> list[TeacherScore]:
    """Score (q_text, s_text, pair_id) triples against an HTTP endpoint.

    Request body: {"pairs": [{"id", "q", "s"}, ...]};
    response body: {"scores": [{"id", "z": [.., ..]}, ...]}.
    Transport failures are retried with exponential backoff; results are
    returned in input order and merged into ``cache`` when given.
    """
    if len(batch) > MAX_REMOTE_BATCH:
        raise ProviderError(f"batch of {len(batch)} exceeds maximum {MAX_REMOTE_BATCH}")
    if not batch:
        return []
    payload = {"pairs": [{"id": pid, "q": q, "s": s} for q, s, pid in batch]}
    last_error: Exception | None = None
    for attempt in range(max_retries):
        try:
            resp = requests.post(endpoint, json=payload, timeout=timeout)
            resp.raise_for_status()
            body = resp.json()
            break
        except (requests.RequestException, ValueError) as exc:
            last_error = exc
            if attempt + 1 < max_retries:
                time.sleep(backoff * 2**attempt)
    else:
        raise ProviderError(
            f"endpoint {endpoint} failed after {max_retries} attempts: {last_error}"
        )

    try:
        by_id = {rec["id"]: rec["z"] for rec in body["scores"]}
    except (KeyError, TypeError) as exc:
        raise ProviderError(f"malformed response from {endpoint}: {exc}") from exc
    out: list[TeacherScore] = []
    for q, s, pid in batch:
        if pid not in by_id:
            raise ProviderError(f"endpoint {endpoint} returned no score for pair {pid!r}")
        out.append(_make_score(pid, by_id[pid], None, f"response for {pid}"))
    if cache is not None:
        for score in out:
            cache.scores[score.pair_id] = score
    return out


def score_remote_all(
    endpoint: str,
    triples: Iterable[tuple[str, str, str]],
    batch_size: int = MAX_REMOTE_BATCH,
    **kwargs,
) -> TeacherStore:
    """Score an arbitrary number of triples in capped batches into a store."""
    if not 1 <= batch_size <= MAX_REMOTE_BATCH:
        raise ProviderError(f"batch_size must be in [1, {MAX_REMOTE_BATCH}]")
    store = TeacherStore(teacher_name=endpoint)
    pending: list[tuple[str, str, str]] = []
    for triple in triples:
        pending.append(triple)
        if len(pending) == batch_size:
            score_remote(endpoint, pending, cache=store, **kwargs)
            pending = []
    if pending:
        score_remote(endpoint, pending, cache=store, **kwargs)
    return store
