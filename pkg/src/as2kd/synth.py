"""Deterministic bilingual benchmark generator with a built-in oracle teacher.

Questions are keyword bags; a candidate answers its question iff it
contains the question's key token. Language B is language A under a
bijective token substitution, so the two corpora are exactly parallel and
the oracle teacher (which scores the A side perfectly) gives a CLKD setup
whose expected outcome is known by construction.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .core import AS2Dataset, AS2Example, Candidate, Question, pair_id_for
from .errors import ConfigError
from .losses import softmax_temp
from .teacher import TeacherScore, TeacherStore
from .translate import PermutationProvider

SOURCE_LANGUAGE = "aa"
TARGET_LANGUAGE = "bb"

# Oracle logit magnitude: prob_pos ~ 0.9997 for positives, so the soft
# labels are nearly but not exactly saturated and temperature smoothing
# still has something to work with.
ORACLE_LOGIT = 4.0


@dataclass(frozen=True)
class SynthConfig:
    vocab_size: int = 200
    n_questions: int = 300
    n_candidates: int = 8
    positive_rate: float = 0.25
    permutation_seed: int = 0
    noise_rate: float = 0.0
    question_len: int = 2
    candidate_len: int = 2

    def __post_init__(self) -> None:
        if self.vocab_size < 20:
            raise ConfigError(f"vocab_size must be >= 20, got {self.vocab_size}")
        if self.n_candidates < 1:
            raise ConfigError(f"n_candidates must be >= 1, got {self.n_candidates}")
        if self.n_questions < 1:
            raise ConfigError(f"n_questions must be >= 1, got {self.n_questions}")
        if not 0.0 < self.positive_rate < 1.0:
            raise ConfigError(f"positive_rate must be in (0, 1), got {self.positive_rate}")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ConfigError(f"noise_rate must be in [0, 1], got {self.noise_rate}")


def _make_vocab(rng: random.Random, prefix: str, size: int) -> list[str]:
    vocab: list[str] = []
    seen: set[str] = set()
    while len(vocab) < size:
        token = prefix + "".join(rng.choices("abcdefghijklmnopqrstuvwxyz", k=5))
        if token not in seen:
            seen.add(token)
            vocab.append(token)
    return vocab


def token_mapping(cfg: SynthConfig) -> dict[str, str]:
    """The bijective A-token to B-token substitution for this config."""
    rng = random.Random(f"synthvocab:{cfg.permutation_seed}")
    vocab_a = _make_vocab(rng, "a", cfg.vocab_size)
    vocab_b = _make_vocab(rng, "b", cfg.vocab_size)
    order = list(range(cfg.vocab_size))
    rng.shuffle(order)
    return {vocab_a[i]: vocab_b[order[i]] for i in range(cfg.vocab_size)}


def permutation_provider(cfg: SynthConfig) -> PermutationProvider:
    """Translation mock applying the A -> B token substitution."""
    return PermutationProvider(token_mapping(cfg), SOURCE_LANGUAGE, TARGET_LANGUAGE)


def generate(cfg: SynthConfig, seed: int, split: str = "train") -> tuple[AS2Dataset, AS2Dataset, TeacherStore]:
    """Build parallel corpora for languages A and B plus an oracle teacher.

    The vocabulary is split in half: content tokens appear in candidates
    (and as question keys), filler tokens pad questions only. A question
    and a candidate therefore share a token iff the candidate contains the
    question's key, which keeps the labeling rule expressible purely in
    terms of question/candidate overlap.

    The teacher store is keyed by the shared ``qid::cid`` pair ids and
    emits logits (-c, +c) for positives and (+c, -c) for negatives on the
    A side, so its source-side P@1 is 1.0 by construction. With
    ``noise_rate`` > 0, each B-side token is independently replaced by a
    random wrong token with that probability; labels always mirror A.
    """
    mapping = token_mapping(cfg)
    vocab_a = list(mapping)
    content = vocab_a[: cfg.vocab_size // 2]
    fillers_vocab = vocab_a[cfg.vocab_size // 2 :]
    rng = random.Random(f"synthcorpus:{seed}")

    def translate_token(token: str) -> str:
        if cfg.noise_rate > 0.0 and rng.random() < cfg.noise_rate:
            return rng.choice(list(mapping.values()))
        return mapping[token]

    examples_a: list[AS2Example] = []
    examples_b: list[AS2Example] = []
    teacher = TeacherStore(teacher_name="oracle", dataset=f"synth:{seed}")
    for qi in range(cfg.n_questions):
        qid = f"q{qi:04d}"
        key = rng.choice(content)
        q_tokens = [key] + rng.sample(fillers_vocab, cfg.question_len - 1)
        rng.shuffle(q_tokens)

        cands_a: list[Candidate] = []
        cands_b: list[Candidate] = []
        for ci in range(cfg.n_candidates):
            cid = f"c{ci}"
            positive = rng.random() < cfg.positive_rate
            others = [t for t in content if t != key]
            if positive:
                tokens = [key] + rng.sample(others, cfg.candidate_len - 1)
                rng.shuffle(tokens)
            else:
                tokens = rng.sample(others, cfg.candidate_len)
            label = int(positive)
            cands_a.append(Candidate(id=cid, text=" ".join(tokens), gold=label))
            cands_b.append(
                Candidate(
                    id=cid,
                    text=" ".join(translate_token(t) for t in tokens),
                    gold=label,
                )
            )
            z = (-ORACLE_LOGIT, ORACLE_LOGIT) if positive else (ORACLE_LOGIT, -ORACLE_LOGIT)
            teacher.add(
                TeacherScore(pair_id=pair_id_for(qid, cid), logits=z, prob_pos=softmax_temp(z, 1.0)[1])
            )
        q_text_a = " ".join(q_tokens)
        q_text_b = " ".join(translate_token(t) for t in q_tokens)
        examples_a.append(
            AS2Example(
                question=Question(id=qid, text=q_text_a, language=SOURCE_LANGUAGE),
                candidates=tuple(cands_a),
            )
        )
        examples_b.append(
            AS2Example(
                question=Question(id=qid, text=q_text_b, language=TARGET_LANGUAGE),
                candidates=tuple(cands_b),
            )
        )
    source = AS2Dataset(examples=tuple(examples_a), split=split, language=SOURCE_LANGUAGE)
    target = AS2Dataset(examples=tuple(examples_b), split=split, language=TARGET_LANGUAGE)
    return source, target, teacher
