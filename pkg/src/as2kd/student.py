"""A small trainable pair scorer: hashed character n-grams, an embedding
table, and a two-layer MLP over [e_q ; e_s ; e_q * e_s].

The forward/backward passes are written out explicitly so the trainer can
drive them with analytic loss gradients. All arithmetic follows the
parameter dtype: float32 by default (making checkpoints lossless and
training cheap), float64 when a caller needs tight gradient checks.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .core import Candidate, Question
from .errors import ConfigError, NumericError

# Versioned key for the feature hash; changing it invalidates every
# serialized feature index, so bump the suffix on any change.
_HASH_KEY = b"as2kd.features.v1"
_NGRAM_SIZES = (2, 3, 4)
_BIAS_INDEX = 0


@dataclass(frozen=True)
class StudentConfig:
    hash_bits: int = 18
    embed_dim: int = 64
    hidden_dim: int = 128

    def __post_init__(self) -> None:
        if not 8 <= self.hash_bits <= 24:
            raise ConfigError(f"hash_bits must be in [8, 24], got {self.hash_bits}")
        if self.embed_dim < 1 or self.hidden_dim < 1:
            raise ConfigError("embed_dim and hidden_dim must be positive")

    @property
    def hash_space(self) -> int:
        return 1 << self.hash_bits


@dataclass(frozen=True)
class FeatureVector:
    """Sparse counts over the hashed feature space (sorted unique indices)."""

    indices: np.ndarray
    counts: np.ndarray
    hash_bits: int

    def as_dict(self) -> dict[int, float]:
        return {int(i): float(c) for i, c in zip(self.indices, self.counts)}


def _hash_ngram(gram: str, space: int) -> int:
    digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=_HASH_KEY).digest()
    # Index 0 is reserved for the always-on bias feature.
    return int.from_bytes(digest, "little") % (space - 1) + 1


@lru_cache(maxsize=65536)
def _text_features(text: str, hash_bits: int) -> FeatureVector:
    space = 1 << hash_bits
    counts: dict[int, float] = {_BIAS_INDEX: 1.0}
    t = text.lower()
    for n in _NGRAM_SIZES:
        for i in range(len(t) - n + 1):
            idx = _hash_ngram(t[i : i + n], space)
            counts[idx] = counts.get(idx, 0.0) + 1.0
    indices = np.array(sorted(counts), dtype=np.int64)
    values = np.array([counts[int(i)] for i in indices], dtype=np.float64)
    indices.setflags(write=False)
    values.setflags(write=False)
    return FeatureVector(indices=indices, counts=values, hash_bits=hash_bits)


def featurize(
    q_text: str, s_text: str, config: StudentConfig | None = None
) -> tuple[FeatureVector, FeatureVector]:
    """Featurize a question and a sentence independently.

    Lowercased character n-grams (n in 2..4) hashed into the configured
    space, plus a bias feature, so even empty text yields a usable vector.
    """
    cfg = config or StudentConfig()
    return _text_features(q_text, cfg.hash_bits), _text_features(s_text, cfg.hash_bits)


@dataclass
class StudentParams:
    """All learnable weights. Shapes: emb (V, d), w1 (3d, h), b1 (h,),
    w2 (h, 2), b2 (2,)."""

    emb: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    config: StudentConfig

    def dense_tensors(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def check_shapes(self) -> None:
        cfg = self.config
        d, h = cfg.embed_dim, cfg.hidden_dim
        expected = {
            "emb": (cfg.hash_space, d),
            "w1": (3 * d, h),
            "b1": (h,),
            "w2": (h, 2),
            "b2": (2,),
        }
        for name, shape in expected.items():
            actual = getattr(self, name).shape
            if actual != shape:
                raise ConfigError(f"parameter {name} has shape {actual}, expected {shape}")


def init_params(
    config: StudentConfig,
    rng: np.random.Generator,
    dtype: np.dtype = np.float32,
) -> StudentParams:
    """Draw initial weights: unit-normal embeddings, Xavier MLP, zero biases."""
    d, h = config.embed_dim, config.hidden_dim
    emb = rng.normal(0.0, 1.0, size=(config.hash_space, d))
    w1 = rng.normal(0.0, np.sqrt(2.0 / (3 * d + h)), size=(3 * d, h))
    w2 = rng.normal(0.0, np.sqrt(2.0 / (h + 2)), size=(h, 2))
    return StudentParams(
        emb=emb.astype(dtype),
        w1=w1.astype(dtype),
        b1=np.zeros(h, dtype=dtype),
        w2=w2.astype(dtype),
        b2=np.zeros(2, dtype=dtype),
        config=config,
    )


@dataclass
class _ForwardCache:
    """Intermediates shared between the forward pass and backprop."""

    concat_idx: np.ndarray  # feature indices of all 2B texts, concatenated
    concat_w: np.ndarray  # matching mean-pool weights, in compute dtype
    offsets: np.ndarray  # start offset of each text's segment
    eq: np.ndarray
    es: np.ndarray
    x: np.ndarray
    hidden: np.ndarray
    logits: np.ndarray


def _forward_full(
    params: StudentParams,
    fqs: Sequence[FeatureVector],
    fss: Sequence[FeatureVector],
) -> _ForwardCache:
    """Shared forward pass over B pairs, in the parameter dtype.

    Pooling runs over one concatenated index array for the whole batch
    (questions first, then sentences) with ``np.add.reduceat`` on the
    segment boundaries.
    """
    if len(fqs) != len(fss):
        raise ConfigError("question and sentence feature batches differ in length")
    if not fqs:
        raise ConfigError("empty batch")
    fvs = list(fqs) + list(fss)
    for fv in fvs:
        if fv.hash_bits != params.config.hash_bits:
            raise ConfigError(
                f"feature hash_bits {fv.hash_bits} does not match model {params.config.hash_bits}"
            )
    b = len(fqs)
    dt = params.emb.dtype
    concat_idx = np.concatenate([fv.indices for fv in fvs])
    concat_w = np.concatenate([fv.counts / fv.counts.sum() for fv in fvs]).astype(dt)
    lengths = np.array([len(fv.indices) for fv in fvs])
    offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]])

    weighted = params.emb[concat_idx] * concat_w[:, None]
    pooled = np.add.reduceat(weighted, offsets, axis=0)
    eq, es = pooled[:b], pooled[b:]
    x = np.concatenate([eq, es, eq * es], axis=1)
    hidden = np.tanh(x @ params.w1 + params.b1)
    logits = hidden @ params.w2 + params.b2
    return _ForwardCache(
        concat_idx=concat_idx, concat_w=concat_w, offsets=offsets,
        eq=eq, es=es, x=x, hidden=hidden, logits=logits,
    )


def forward_batch(
    params: StudentParams,
    fqs: Sequence[FeatureVector],
    fss: Sequence[FeatureVector],
) -> np.ndarray:
    """Logits for a batch of (question, sentence) feature pairs, shape (B, 2)."""
    return _forward_full(params, fqs, fss).logits


def forward(params: StudentParams, fq: FeatureVector, fs: FeatureVector) -> tuple[float, float]:
    """Logits [z_neg, z_pos] for one pair."""
    z = forward_batch(params, [fq], [fs])[0]
    return (float(z[0]), float(z[1]))


def score_pair(params: StudentParams, fq: FeatureVector, fs: FeatureVector) -> float:
    """Scalar ranking score: the positive-class probability at tau = 1."""
    z0, z1 = forward(params, fq, fs)
    m = max(z0, z1)
    e0, e1 = np.exp(z0 - m), np.exp(z1 - m)
    return float(e1 / (e0 + e1))


def make_scorer(params: StudentParams) -> Callable[[Question, Candidate], float]:
    """Adapt a parameter set to the (question, candidate) scorer interface."""

    def scorer(question: Question, candidate: Candidate) -> float:
        fq, fs = featurize(question.text, candidate.text, params.config)
        return score_pair(params, fq, fs)

    return scorer


@dataclass
class Gradients:
    """Gradients mirroring StudentParams.

    The embedding gradient is sparse: ``emb_idx`` holds the sorted unique
    rows touched by the batch and ``emb_grad`` the matching gradient rows.
    Rows absent from ``emb_idx`` have an exactly-zero gradient.
    """

    emb_idx: np.ndarray
    emb_grad: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def emb_rows(self) -> dict[int, np.ndarray]:
        return {int(i): self.emb_grad[k] for k, i in enumerate(self.emb_idx)}


def _backward_from(
    params: StudentParams,
    cache: _ForwardCache,
    grad_logits: np.ndarray,
) -> Gradients:
    grad_logits = np.asarray(grad_logits, dtype=cache.logits.dtype)
    b = cache.eq.shape[0]
    if grad_logits.shape != (b, 2):
        raise ConfigError(f"grad_logits shape {grad_logits.shape}, expected ({b}, 2)")
    if not np.all(np.isfinite(grad_logits)):
        raise NumericError("non-finite entries in grad_logits")

    d = params.config.embed_dim

    g_b2 = grad_logits.sum(axis=0)
    g_w2 = cache.hidden.T @ grad_logits
    g_hidden = grad_logits @ params.w2.T
    g_pre = g_hidden * (1.0 - cache.hidden**2)
    g_b1 = g_pre.sum(axis=0)
    g_w1 = cache.x.T @ g_pre
    g_x = g_pre @ params.w1.T

    g_eq = g_x[:, :d] + g_x[:, 2 * d :] * cache.es
    g_es = g_x[:, d : 2 * d] + g_x[:, 2 * d :] * cache.eq

    # Scatter pooled gradients back to embedding rows: expand per feature
    # occurrence, then sum runs of equal row index after a stable sort.
    g_pool = np.concatenate([g_eq, g_es])
    lengths = np.diff(np.concatenate([cache.offsets, [len(cache.concat_idx)]]))
    per_occurrence = np.repeat(g_pool, lengths, axis=0) * cache.concat_w[:, None]
    order = np.argsort(cache.concat_idx, kind="stable")
    sorted_idx = cache.concat_idx[order]
    boundaries = np.concatenate([[0], np.nonzero(np.diff(sorted_idx))[0] + 1])
    summed = np.add.reduceat(per_occurrence[order], boundaries, axis=0)
    unique_idx = sorted_idx[boundaries]
    return Gradients(
        emb_idx=unique_idx, emb_grad=summed, w1=g_w1, b1=g_b1, w2=g_w2, b2=g_b2
    )


def backward_batch(
    params: StudentParams,
    fqs: Sequence[FeatureVector],
    fss: Sequence[FeatureVector],
    grad_logits: np.ndarray,
) -> Gradients:
    """Accumulate parameter gradients for a batch given dLoss/dlogits.

    ``grad_logits`` has shape (B, 2) and already carries any batch
    reduction factor. Embedding rows never touched by the batch are absent
    from the result (their gradient is exactly zero).
    """
    cache = _forward_full(params, fqs, fss)
    return _backward_from(params, cache, grad_logits)


def backward(
    params: StudentParams,
    fq: FeatureVector,
    fs: FeatureVector,
    grad_logits: Sequence[float],
) -> Gradients:
    """Single-pair gradients; see ``backward_batch``."""
    return backward_batch(params, [fq], [fs], np.asarray(grad_logits, dtype=np.float64)[None, :])


# ---------------------------------------------------------------------------
# Optimizer: decoupled weight decay Adam with a linear warmup/decay schedule.
# ---------------------------------------------------------------------------


def lr_at(iteration: int, total_iters: int, base_lr: float, warmup_frac: float = 0.025) -> float:
    """Piecewise-linear learning rate: warmup to ``base_lr`` over the first
    ``warmup_frac`` of training, then decay linearly to 0 at ``total_iters``."""
    if not 0.0 < warmup_frac < 1.0:
        raise ConfigError(f"warmup_frac must be in (0, 1), got {warmup_frac}")
    if total_iters < 1:
        raise ConfigError(f"total_iters must be >= 1, got {total_iters}")
    if not 0 <= iteration <= total_iters:
        raise ConfigError(f"iteration {iteration} outside [0, {total_iters}]")
    warmup = max(1, round(total_iters * warmup_frac))
    if iteration >= total_iters:
        return 0.0
    if iteration <= warmup:
        return base_lr * iteration / warmup
    return base_lr * (total_iters - iteration) / (total_iters - warmup)


@dataclass
class OptimState:
    """Per-tensor Adam moments, the step counter, and the trainer RNG state."""

    emb_m: np.ndarray
    emb_v: np.ndarray
    dense_m: dict[str, np.ndarray]
    dense_v: dict[str, np.ndarray]
    step: int = 0
    rng_state: dict | None = None


def init_opt_state(params: StudentParams, rng: np.random.Generator | None = None) -> OptimState:
    return OptimState(
        emb_m=np.zeros_like(params.emb),
        emb_v=np.zeros_like(params.emb),
        dense_m={k: np.zeros_like(v) for k, v in params.dense_tensors().items()},
        dense_v={k: np.zeros_like(v) for k, v in params.dense_tensors().items()},
        step=0,
        rng_state=rng.bit_generator.state if rng is not None else None,
    )


def _adamw_tensor(
    p: np.ndarray,
    g: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    t: int,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
    decay: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    g = g.astype(p.dtype, copy=False)
    m_new = beta1 * m + (1.0 - beta1) * g
    v_new = beta2 * v + (1.0 - beta2) * g * g
    m_hat = m_new / (1.0 - beta1**t)
    v_hat = v_new / (1.0 - beta2**t)
    p_new = p - lr * m_hat / (np.sqrt(v_hat) + eps) - lr * decay * p
    return p_new, m_new, v_new


def adamw_step(
    params: StudentParams,
    grads: Gradients,
    state: OptimState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> None:
    """One in-place AdamW update.

    Weight decay is decoupled (applied directly to parameters) and covers
    the weight matrices plus the embedding rows touched by the batch;
    biases are exempt. Untouched embedding rows are skipped entirely, so
    their moments and decay are applied lazily on their next occurrence.
    """
    for name, g in (
        ("w1", grads.w1), ("b1", grads.b1), ("w2", grads.w2), ("b2", grads.b2),
        ("emb", grads.emb_grad),
    ):
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for tensor {name} at step {state.step}")

    state.step += 1
    t = state.step
    decay_by_name = {"w1": weight_decay, "w2": weight_decay, "b1": 0.0, "b2": 0.0}
    for name, g in (("w1", grads.w1), ("b1", grads.b1), ("w2", grads.w2), ("b2", grads.b2)):
        p = getattr(params, name)
        p_new, m_new, v_new = _adamw_tensor(
            p, g, state.dense_m[name], state.dense_v[name], t, lr,
            beta1, beta2, eps, decay_by_name[name],
        )
        setattr(params, name, p_new)
        state.dense_m[name] = m_new
        state.dense_v[name] = v_new

    if len(grads.emb_idx):
        idx = grads.emb_idx
        p_new, m_new, v_new = _adamw_tensor(
            params.emb[idx], grads.emb_grad, state.emb_m[idx], state.emb_v[idx], t, lr,
            beta1, beta2, eps, weight_decay,
        )
        params.emb[idx] = p_new
        state.emb_m[idx] = m_new
        state.emb_v[idx] = v_new
