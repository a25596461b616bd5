"""Scalar quality score from a final-position logit vector.

Two disjoint token-ID sets (positive/negative quality words) select logits;
the score is the exponential mass of the positive set over the combined mass:

    s = sum_{j in P} exp(l_j) / (sum_{j in P} exp(l_j) + sum_{k in N} exp(l_k))

Computed with a max-shift so large-model logits cannot overflow; the value is
invariant to adding a constant to every selected logit and always lies in
(0, 1) for finite inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError

# A quality score is a plain float in the open interval (0, 1).
QualityScore = float

DEFAULT_POSITIVE_LABELS = ("good", "fine")
DEFAULT_NEGATIVE_LABELS = ("poor", "bad")


@dataclass(frozen=True)
class TokenSets:
    """Disjoint, non-empty positive/negative token-ID sets with optional labels."""

    positive: tuple[int, ...]
    negative: tuple[int, ...]
    labels: tuple[str, ...] = ()  # human-readable names aligned with positive+negative

    def __post_init__(self):
        pos = tuple(int(i) for i in self.positive)
        neg = tuple(int(i) for i in self.negative)
        if not pos or not neg:
            raise ConfigError("both token sets must be non-empty")
        if len(set(pos)) != len(pos) or len(set(neg)) != len(neg):
            raise ConfigError("token IDs within a set must be unique")
        if set(pos) & set(neg):
            raise ConfigError(f"token sets overlap: {sorted(set(pos) & set(neg))}")
        if any(i < 0 for i in pos + neg):
            raise ConfigError("token IDs must be non-negative")
        object.__setattr__(self, "positive", pos)
        object.__setattr__(self, "negative", neg)
        object.__setattr__(self, "labels", tuple(self.labels))

    def validate_against(self, vocab_size: int) -> None:
        worst = max(self.positive + self.negative)
        if worst >= vocab_size:
            raise ConfigError(f"token ID {worst} out of range for vocabulary size {vocab_size}")


@dataclass(frozen=True)
class LogitVector:
    """Length-V logits taken at one sequence position (the model's answer position)."""

    values: np.ndarray
    position: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise InputError("logits contain non-finite values")
        object.__setattr__(self, "values", values)


def _selected(logits, sets: TokenSets) -> tuple[np.ndarray, int]:
    values = logits.values if isinstance(logits, LogitVector) else np.asarray(logits, np.float64)
    values = values.reshape(-1)
    if not np.all(np.isfinite(values)):
        raise InputError("logits contain non-finite values")
    sets.validate_against(values.size)
    ids = np.fromiter(sets.positive + sets.negative, dtype=np.intp)
    return values[ids], len(sets.positive)


def quality_score(logits, sets: TokenSets) -> QualityScore:
    """Positive-mass share of the selected logits, in (0, 1)."""
    sel, npos = _selected(logits, sets)
    e = np.exp(sel - sel.max())
    pos = e[:npos].sum()
    return float(pos / (pos + e[npos:].sum()))


def quality_score_gradient(logits, sets: TokenSets) -> np.ndarray:
    """d(score)/d(logits), a length-V array.

    s(1-s) * softmax_P(j) on positive IDs, -s(1-s) * softmax_N(k) on negative
    IDs, zero elsewhere. Matches central finite differences (see tests).
    """
    values = logits.values if isinstance(logits, LogitVector) else np.asarray(logits, np.float64)
    values = values.reshape(-1)
    sel, npos = _selected(values, sets)
    e = np.exp(sel - sel.max())
    pos_mass = e[:npos].sum()
    neg_mass = e[npos:].sum()
    s = pos_mass / (pos_mass + neg_mass)
    coeff = s * (1.0 - s)
    grad = np.zeros(values.size)
    grad[list(sets.positive)] = coeff * (e[:npos] / pos_mass)
    grad[list(sets.negative)] = -coeff * (e[npos:] / neg_mass)
    return grad
