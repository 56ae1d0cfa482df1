"""Small input validation helpers used throughout the package."""

from __future__ import annotations

import math
from typing import Sequence

from .errors import ConfigError, DataError


def check_language(code: str) -> str:
    """Validate a lowercase ASCII language tag (e.g. "en", "sw") and return it."""
    if not code or not code.isascii() or code != code.lower() or not code.isalpha():
        raise ConfigError(f"invalid language tag {code!r}: expected lowercase ASCII letters")
    return code


def check_finite_scores(scores: Sequence[float], n_expected: int) -> list[float]:
    """Validate a score vector against a candidate list length."""
    scores = list(scores)
    if len(scores) != n_expected:
        raise DataError(f"got {len(scores)} scores for {n_expected} candidates")
    for i, s in enumerate(scores):
        if not math.isfinite(s):
            raise DataError(f"non-finite score {s!r} at index {i}")
    return scores


def check_binary_label(y: int) -> int:
    if y not in (0, 1):
        raise DataError(f"label must be 0 or 1, got {y!r}")
    return y


def check_probability_pair(probs: Sequence[float], atol: float = 1e-9) -> tuple[float, float]:
    """Validate a 2-class probability vector (entries in [0, 1], sum 1)."""
    p = tuple(float(x) for x in probs)
    if len(p) != 2:
        raise DataError(f"expected 2 probabilities, got {len(p)}")
    for x in p:
        if not math.isfinite(x) or x < -atol or x > 1.0 + atol:
            raise DataError(f"probability {x!r} outside [0, 1]")
    if abs(p[0] + p[1] - 1.0) > max(atol, 1e-9):
        raise DataError(f"probabilities {p} do not sum to 1")
    return p


def check_logit_pair(z: Sequence[float]) -> tuple[float, float]:
    """Validate a 2-class logit vector (finite entries)."""
    vals = tuple(float(x) for x in z)
    if len(vals) != 2:
        raise DataError(f"expected 2 logits, got {len(vals)}")
    for x in vals:
        if not math.isfinite(x):
            raise DataError(f"non-finite logit {x!r}")
    return vals
