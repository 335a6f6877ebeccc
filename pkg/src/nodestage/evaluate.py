"""Confusion matrices and quadratic-weighted Cohen's kappa."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .errors import InputError, ParameterError
from .labels import PNStage


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Rows are ground truth, columns are predictions."""

    counts: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ParameterError(f"confusion matrix must be square, got {c.shape}")
        if (c < 0).any():
            raise ParameterError("confusion counts must be non-negative")
        if len(self.class_names) != c.shape[0]:
            raise ParameterError("class_names length does not match matrix size")
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_pairs(cls, truth: Sequence[int], pred: Sequence[int], class_names) -> "ConfusionMatrix":
        k = len(class_names)
        counts = np.zeros((k, k), dtype=np.int64)
        for t, p in zip(truth, pred):
            counts[int(t), int(p)] += 1
        return cls(counts, tuple(class_names))

    def recall(self) -> np.ndarray:
        """Per-class recall; NaN for classes absent from the truth."""
        rows = self.counts.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(rows > 0, np.diag(self.counts) / np.maximum(rows, 1), np.nan)

    def to_text(self) -> str:
        width = max(6, *(len(n) for n in self.class_names)) + 1
        head = "truth\\pred".ljust(width + 4) + "".join(n.rjust(width) for n in self.class_names)
        lines = [head]
        for name, row in zip(self.class_names, self.counts):
            lines.append(name.ljust(width + 4) + "".join(str(v).rjust(width) for v in row))
        return "\n".join(lines)


def weighted_kappa(cm: ConfusionMatrix, weights: str = "quadratic") -> float:
    """Cohen's kappa with ordinal disagreement weights.

    Returns 1.0 when the chance-weighted disagreement vanishes, which only
    happens when all mass sits in a single diagonal cell.
    """
    if cm.k < 2:
        raise ParameterError("kappa needs at least two classes")
    total = cm.total
    if total < 1:
        raise ParameterError("kappa of an empty confusion matrix is undefined")
    idx = np.arange(cm.k, dtype=np.float64)
    diff = np.abs(idx[:, None] - idx[None, :]) / (cm.k - 1)
    if weights == "quadratic":
        w = diff ** 2
    elif weights == "linear":
        w = diff
    else:
        raise ParameterError(f"unknown weight scheme {weights!r}")
    observed = cm.counts / total
    expected = np.outer(cm.counts.sum(axis=1), cm.counts.sum(axis=0)) / float(total) ** 2
    denom = float((w * expected).sum())
    if denom == 0.0:
        return 1.0
    return 1.0 - float((w * observed).sum()) / denom


STAGE_NAMES = tuple(s.text for s in PNStage)


def score_patients(pred: Mapping[str, PNStage], truth: Mapping[str, PNStage]):
    """Kappa and 5x5 stage confusion matrix over a shared set of patients."""
    missing = sorted(set(truth) - set(pred))
    extra = sorted(set(pred) - set(truth))
    if missing or extra:
        raise InputError(f"patient keys differ: missing={missing} extra={extra}")
    keys = sorted(truth)
    cm = ConfusionMatrix.from_pairs(
        [int(truth[k]) for k in keys], [int(pred[k]) for k in keys], STAGE_NAMES
    )
    return weighted_kappa(cm), cm
