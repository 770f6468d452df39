"""Probability-simplex primitives.

All divergences and entropies are in bits. Raw scores coming from files or
models are clipped to ``SCORE_FLOOR`` and renormalized so that logarithms of
channel entries are always finite.
"""

from __future__ import annotations

import math
from typing import Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from rkit.errors import ValidationError

SCORE_FLOOR = 1e-12
SUM_TOLERANCE = 1e-9


def clip_scores(raw: ArrayLike) -> NDArray[np.float64]:
    """Clip raw score vectors to the floor and renormalize along the last axis.

    Works on a single vector or any stack of vectors. Raw entries must be
    finite and non-negative with a positive sum.
    """
    arr = np.array(raw, dtype=np.float64)
    if arr.ndim == 0 or arr.shape[-1] < 2:
        raise ValidationError("score vectors need at least 2 classes")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("scores contain non-finite entries")
    if np.any(arr < 0):
        raise ValidationError("scores contain negative entries")
    totals = arr.sum(axis=-1, keepdims=True)
    if np.any(totals <= 0):
        raise ValidationError("score vector with non-positive sum")
    # rows already on the clipped simplex pass through untouched, so clipping is idempotent
    done = (np.abs(totals - 1.0) <= 4 * np.finfo(np.float64).eps) & np.all(arr >= SCORE_FLOOR, axis=-1, keepdims=True)
    fixed = np.maximum(arr / totals, SCORE_FLOOR)
    fixed = fixed / fixed.sum(axis=-1, keepdims=True)
    return np.where(done, arr, fixed)


class ProbVector:
    """An immutable point on the probability simplex.

    Score vectors need at least two classes. Distributions over models pass
    ``min_size=1`` since a single model is a valid (trivial) set.
    """

    __slots__ = ("_values",)

    def __init__(self, values: ArrayLike, *, min_size: int = 2):
        arr = np.array(values, dtype=np.float64).reshape(-1)
        if arr.size < min_size:
            raise ValidationError(f"a ProbVector needs at least {min_size} entries")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise ValidationError("probabilities must be finite and non-negative")
        if abs(arr.sum() - 1.0) > SUM_TOLERANCE:
            raise ValidationError(f"probabilities sum to {arr.sum()!r}, not 1")
        arr.setflags(write=False)
        self._values = arr

    @classmethod
    def from_scores(cls, raw: ArrayLike) -> "ProbVector":
        """Build from raw non-negative scores, clipping and renormalizing."""
        return cls(clip_scores(raw))

    @property
    def values(self) -> NDArray[np.float64]:
        return self._values

    @property
    def c(self) -> int:
        return self._values.size

    def __len__(self) -> int:
        return self._values.size

    def __array__(self, dtype=None, copy=None):
        return self._values if dtype is None else self._values.astype(dtype)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ProbVector):
            return NotImplemented
        return np.array_equal(self._values, other._values)

    def __hash__(self) -> int:
        return hash(self._values.tobytes())

    def __repr__(self) -> str:
        return f"ProbVector({self._values.tolist()})"


VectorLike = Union[ProbVector, Sequence[float], NDArray[np.float64]]


def _as_array(p: VectorLike) -> NDArray[np.float64]:
    if isinstance(p, ProbVector):
        return p.values
    return ProbVector(p).values


def kl_divergence(p: VectorLike, q: VectorLike) -> float:
    """KL divergence D(p || q) in bits, with 0 log(0/x) = 0.

    Returns ``math.inf`` when p puts mass where q has none.
    """
    pa, qa = _as_array(p), _as_array(q)
    if pa.shape != qa.shape:
        raise ValidationError(f"dimension mismatch: {pa.size} vs {qa.size}")
    support = pa > 0
    if np.any(qa[support] == 0):
        return math.inf
    terms = pa[support] * np.log2(pa[support] / qa[support])
    return max(float(terms.sum()), 0.0)


def entropy(p: VectorLike) -> float:
    """Shannon entropy in bits."""
    pa = _as_array(p)
    nz = pa[pa > 0]
    return max(float(-(nz * np.log2(nz)).sum()), 0.0)


def argmax_class(p: VectorLike) -> int:
    """Index of the largest probability; ties go to the lowest index."""
    return int(np.argmax(_as_array(p)))


def kl_matrix(rows: NDArray[np.float64]) -> NDArray[np.float64]:
    """Pairwise D(row_i || row_j) in bits for strictly positive rows."""
    logs = np.log2(rows)
    self_term = (rows * logs).sum(axis=1)
    return np.maximum(self_term[:, None] - rows @ logs.T, 0.0)
