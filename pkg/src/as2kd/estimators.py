"""Scikit-learn style estimators wrapping the two training methods.

Both rankers score (question, sentence) text pairs with a 2-class
probability and follow the usual estimator conventions: constructor
arguments are stored verbatim, fitted state lives in trailing-underscore
attributes, and ``get_params`` / ``clone`` work out of the box.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .core import AS2Dataset, Candidate, Question
from .errors import ConfigError
from .student import StudentConfig, featurize, forward_batch, make_scorer
from .teacher import TeacherStore
from .training import TrainConfig, train_clkd, train_finetune
from .translate import ParallelPair

TextPair = tuple[str, str]


class _BaseRanker(BaseEstimator):
    def __init__(
        self,
        total_iters: int = 2000,
        batch_size: int = 32,
        base_lr: float = 1e-3,
        warmup_frac: float = 0.025,
        weight_decay: float = 0.01,
        tau: float = 1.0,
        seed: int = 0,
        hash_bits: int = 18,
        embed_dim: int = 64,
        hidden_dim: int = 128,
    ):
        self.total_iters = total_iters
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.warmup_frac = warmup_frac
        self.weight_decay = weight_decay
        self.tau = tau
        self.seed = seed
        self.hash_bits = hash_bits
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim

    _method = "finetune"

    def _train_config(self, **overrides) -> TrainConfig:
        return TrainConfig(
            method=self._method,
            tau=self.tau,
            total_iters=self.total_iters,
            batch_size=self.batch_size,
            base_lr=self.base_lr,
            warmup_frac=self.warmup_frac,
            weight_decay=self.weight_decay,
            seed=self.seed,
            student=StudentConfig(
                hash_bits=self.hash_bits,
                embed_dim=self.embed_dim,
                hidden_dim=self.hidden_dim,
            ),
            **overrides,
        )

    def _check_fitted(self) -> None:
        if not hasattr(self, "params_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit first")

    def predict_proba(self, X: Sequence[TextPair]) -> np.ndarray:
        """Class probabilities for (question, sentence) text pairs, shape (n, 2)."""
        self._check_fitted()
        pairs = list(X)
        if not pairs:
            return np.zeros((0, 2))
        feats = [featurize(q, s, self.params_.config) for q, s in pairs]
        logits = forward_batch(self.params_, [f[0] for f in feats], [f[1] for f in feats])
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def decision_function(self, X: Sequence[TextPair]) -> np.ndarray:
        """Ranking score per pair: the positive-class probability."""
        return self.predict_proba(X)[:, 1]

    def predict(self, X: Sequence[TextPair]) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)

    def score_pair(self, q_text: str, s_text: str) -> float:
        return float(self.decision_function([(q_text, s_text)])[0])

    def as_scorer(self):
        """A (Question, Candidate) scoring callable for dataset evaluation."""
        self._check_fitted()
        return make_scorer(self.params_)


class FinetuneRanker(_BaseRanker):
    """Gold-label ranker: cross-entropy on labeled (question, sentence) pairs.

    ``fit`` accepts either a labeled ``AS2Dataset`` (or list of them) or a
    sequence of (question, sentence) text pairs with a binary ``y``.
    """

    _method = "finetune"

    def fit(self, X, y=None):
        if isinstance(X, AS2Dataset) or (
            isinstance(X, (list, tuple)) and X and isinstance(X[0], AS2Dataset)
        ):
            if y is not None:
                raise ConfigError("y must be None when fitting from datasets")
            data = X
        else:
            pairs = list(X)
            if y is None or len(y) != len(pairs):
                raise ConfigError("text-pair input requires y of matching length")
            data = _pairs_to_dataset(pairs, y)
        cfg = self._train_config()
        self.params_, self.opt_state_ = train_finetune(data, cfg)
        self.config_ = cfg
        self.n_iter_ = cfg.total_iters
        return self


class CLKDRanker(_BaseRanker):
    """Soft-label ranker distilled from a frozen teacher across languages.

    ``fit(X, teacher=...)`` takes parallel pairs; the student reads the
    target side while teacher logits are joined by pair id. Gold labels on
    the pairs are ignored by construction.
    """

    _method = "clkd"

    def __init__(
        self,
        total_iters: int = 2000,
        batch_size: int = 32,
        base_lr: float = 1e-3,
        warmup_frac: float = 0.025,
        weight_decay: float = 0.01,
        tau: float = 1.0,
        seed: int = 0,
        hash_bits: int = 18,
        embed_dim: int = 64,
        hidden_dim: int = 128,
        teacher_mode: str = "strict",
    ):
        super().__init__(
            total_iters=total_iters,
            batch_size=batch_size,
            base_lr=base_lr,
            warmup_frac=warmup_frac,
            weight_decay=weight_decay,
            tau=tau,
            seed=seed,
            hash_bits=hash_bits,
            embed_dim=embed_dim,
            hidden_dim=hidden_dim,
        )
        self.teacher_mode = teacher_mode

    def fit(self, X: Sequence[ParallelPair], y=None, *, teacher: TeacherStore):
        if y is not None:
            raise ConfigError("CLKDRanker ignores labels; pass y=None")
        cfg = self._train_config(teacher_mode=self.teacher_mode)
        self.params_, self.opt_state_ = train_clkd(list(X), teacher, cfg)
        self.config_ = cfg
        self.n_iter_ = cfg.total_iters
        return self


def _pairs_to_dataset(pairs: Sequence[TextPair], y: Sequence[int]) -> AS2Dataset:
    """Wrap flat labeled text pairs as single-candidate examples."""
    from .core import AS2Example

    examples = []
    for i, ((q_text, s_text), label) in enumerate(zip(pairs, y)):
        examples.append(
            AS2Example(
                question=Question(id=f"x{i}", text=q_text, language="und"),
                candidates=(Candidate(id="c0", text=s_text, gold=int(label)),),
            )
        )
    return AS2Dataset(examples=tuple(examples), split="train", language="und")
