"""Temperature-softened distillation loss for a 2-class scorer.

Per pair, the loss is

    L = alpha * CE(softmax(z_s), y) + (1 - alpha) * tau^2 * KL(p_t || p_s)

with p_t = softmax(z_t / tau) and p_s = softmax(z_s / tau). The teacher
logits z_t are constants: no gradient flows to them. The cross-entropy term
always uses the untempered (tau = 1) student distribution. The tau^2 factor
keeps soft-label gradient magnitudes comparable across temperatures.

Gradient with respect to the student logits, used by the trainer:

    dL/dz_s = alpha * (softmax(z_s) - onehot(y))
            + (1 - alpha) * tau * (softmax(z_s / tau) - softmax(z_t / tau))
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .errors import ConfigError
from .validation import check_binary_label, check_logit_pair, check_probability_pair

# 2-class logits [z_neg, z_pos] and probabilities [p_neg, p_pos].
Logits = tuple[float, float]
Distribution = tuple[float, float]

# Floor applied inside logarithms so saturated distributions stay finite.
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class KDConfig:
    """Loss hyperparameters: gold-label weight, temperature, batch reduction."""

    alpha: float = 0.0
    tau: float = 1.0
    reduction: str = "mean"

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if not (math.isfinite(self.tau) and self.tau > 0):
            raise ConfigError(f"tau must be a positive real, got {self.tau}")
        if self.reduction not in ("mean", "sum"):
            raise ConfigError(f"reduction must be 'mean' or 'sum', got {self.reduction!r}")


def softmax_temp(z: Sequence[float], tau: float) -> Distribution:
    """softmax(z / tau), stabilized by shifting logits by their maximum."""
    if not (math.isfinite(tau) and tau > 0):
        raise ConfigError(f"tau must be a positive real, got {tau}")
    z0, z1 = check_logit_pair(z)
    m = max(z0, z1)
    e0 = math.exp((z0 - m) / tau)
    e1 = math.exp((z1 - m) / tau)
    total = e0 + e1
    return (e0 / total, e1 / total)


def cross_entropy(dist: Sequence[float], y: int) -> float:
    """-ln p_y with the probability floored at PROB_FLOOR."""
    p = check_probability_pair(dist)
    check_binary_label(y)
    return -math.log(max(p[y], PROB_FLOOR))


def kl_divergence(p_t: Sequence[float], p_s: Sequence[float]) -> float:
    """KL(p_t || p_s) with 0 * ln(0/x) = 0 and floored denominators."""
    pt = check_probability_pair(p_t)
    ps = check_probability_pair(p_s)
    total = 0.0
    for t, s in zip(pt, ps):
        if t > 0.0:
            total += t * (math.log(max(t, PROB_FLOOR)) - math.log(max(s, PROB_FLOOR)))
    return total


def kd_loss(
    z_s: Sequence[float],
    z_t: Sequence[float] | None,
    y: int | None,
    cfg: KDConfig,
    pair_id: str | None = None,
) -> float:
    """Per-pair distillation loss; see the module docstring for the formula.

    ``z_t`` may be None when alpha = 1 (the soft-label term vanishes), and
    ``y`` may be None when alpha = 0.
    """
    z_s = check_logit_pair(z_s)
    loss = 0.0
    if cfg.alpha > 0.0:
        if y is None:
            where = f" for pair {pair_id}" if pair_id else ""
            raise ConfigError(f"alpha={cfg.alpha} requires a gold label{where}")
        loss += cfg.alpha * cross_entropy(softmax_temp(z_s, 1.0), y)
    if cfg.alpha < 1.0:
        if z_t is None:
            where = f" for pair {pair_id}" if pair_id else ""
            raise ConfigError(f"alpha={cfg.alpha} requires teacher logits{where}")
        p_t = softmax_temp(z_t, cfg.tau)
        p_s = softmax_temp(z_s, cfg.tau)
        loss += (1.0 - cfg.alpha) * cfg.tau**2 * kl_divergence(p_t, p_s)
    return loss


def kd_loss_grad(
    z_s: Sequence[float],
    z_t: Sequence[float] | None,
    y: int | None,
    cfg: KDConfig,
    pair_id: str | None = None,
) -> tuple[float, float]:
    """Analytic gradient of ``kd_loss`` with respect to the student logits."""
    z_s = check_logit_pair(z_s)
    g0 = g1 = 0.0
    if cfg.alpha > 0.0:
        if y is None:
            where = f" for pair {pair_id}" if pair_id else ""
            raise ConfigError(f"alpha={cfg.alpha} requires a gold label{where}")
        check_binary_label(y)
        p = softmax_temp(z_s, 1.0)
        g0 += cfg.alpha * (p[0] - (1.0 if y == 0 else 0.0))
        g1 += cfg.alpha * (p[1] - (1.0 if y == 1 else 0.0))
    if cfg.alpha < 1.0:
        if z_t is None:
            where = f" for pair {pair_id}" if pair_id else ""
            raise ConfigError(f"alpha={cfg.alpha} requires teacher logits{where}")
        p_s = softmax_temp(z_s, cfg.tau)
        p_t = softmax_temp(z_t, cfg.tau)
        scale = (1.0 - cfg.alpha) * cfg.tau
        g0 += scale * (p_s[0] - p_t[0])
        g1 += scale * (p_s[1] - p_t[1])
    return (g0, g1)


def kd_loss_batch(
    z_s: Sequence[Sequence[float]],
    z_t: Sequence[Sequence[float] | None],
    ys: Sequence[int | None],
    cfg: KDConfig,
) -> float:
    """Reduce per-pair losses over a batch according to ``cfg.reduction``."""
    if not (len(z_s) == len(z_t) == len(ys)):
        raise ConfigError("batch inputs must have equal lengths")
    if not z_s:
        return 0.0
    total = sum(kd_loss(s, t, y, cfg) for s, t, y in zip(z_s, z_t, ys))
    return total / len(z_s) if cfg.reduction == "mean" else total
