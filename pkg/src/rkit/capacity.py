"""Channel capacity of score sets via Blahut-Arimoto, plus information radius
and diameter.

A score set is read as a discrete memoryless channel: row ``j`` is the
distribution over classes produced by model ``j``. Capacities are in bits.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from numba import njit
from scipy import optimize
from scipy.spatial import ConvexHull, QhullError

from rkit.errors import ValidationError
from rkit.simplex import SUM_TOLERANCE, ProbVector, clip_scores, kl_divergence, kl_matrix

LN2 = math.log(2.0)
# qhull cost grows quickly with dimension; beyond this, iterate on all rows
_HULL_MAX_CLASSES = 7
# BA iterations before trying the Newton support solve
_POLISH_AFTER = 200
_POLISH_SUPPORT = 1e-3
_POLISH_STEPS = 30


@dataclass(frozen=True)
class BaConfig:
    """Stopping parameters for Blahut-Arimoto.

    ``tolerance`` bounds the final spread between the upper and lower
    capacity bounds, in bits. ``prune`` drops duplicate rows and rows inside
    the convex hull of the others before iterating; capacity is unaffected.
    """

    tolerance: float = 1e-6
    max_iterations: int = 100_000
    prune: bool = True

    def __post_init__(self):
        if not (self.tolerance > 0 and math.isfinite(self.tolerance)):
            raise ValidationError(f"tolerance must be > 0, got {self.tolerance}")
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise ValidationError(f"max_iterations must be >= 1, got {self.max_iterations}")


@dataclass(frozen=True)
class ScoreSet:
    """Scores assigned to one sample by ``m`` models (a channel matrix)."""

    rows: NDArray[np.float64]
    model_ids: tuple = field(default=())

    def __post_init__(self):
        rows = np.array(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] < 2:
            raise ValidationError(f"channel must be m x c with m >= 1, c >= 2; got shape {rows.shape}")
        if not np.all(np.isfinite(rows)) or np.any(rows < 0):
            raise ValidationError("channel rows must be finite and non-negative")
        if np.any(np.abs(rows.sum(axis=1) - 1.0) > SUM_TOLERANCE):
            raise ValidationError("channel rows must sum to 1")
        rows.setflags(write=False)
        ids = tuple(self.model_ids) if len(self.model_ids) else tuple(range(rows.shape[0]))
        if len(ids) != rows.shape[0]:
            raise ValidationError(f"{len(ids)} model ids for {rows.shape[0]} rows")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "model_ids", ids)

    @classmethod
    def from_scores(cls, raw: ArrayLike, model_ids: Sequence = ()) -> "ScoreSet":
        return cls(clip_scores(raw), tuple(model_ids))

    @property
    def m(self) -> int:
        return self.rows.shape[0]

    @property
    def c(self) -> int:
        return self.rows.shape[1]


ChannelLike = Union[ScoreSet, ArrayLike]


def as_score_set(channel: ChannelLike) -> ScoreSet:
    if isinstance(channel, ScoreSet):
        return channel
    return ScoreSet.from_scores(channel)


@dataclass(frozen=True)
class CapacityResult:
    capacity_bits: float
    m_c: float
    input_distribution: ProbVector
    centroid: ProbVector
    iterations: int
    gap: float
    converged: bool


@dataclass(frozen=True)
class BatchCapacity:
    """Blahut-Arimoto results for a stack of same-shaped channels."""

    capacity_bits: NDArray[np.float64]
    input_distribution: NDArray[np.float64]
    centroid: NDArray[np.float64]
    iterations: NDArray[np.int64]
    gap: NDArray[np.float64]
    converged: NDArray[np.bool_]

    @property
    def m_c(self) -> NDArray[np.float64]:
        return np.exp2(self.capacity_bits)

    def __len__(self) -> int:
        return self.capacity_bits.shape[0]

    def result(self, k: int) -> CapacityResult:
        cap = float(self.capacity_bits[k])
        return CapacityResult(
            capacity_bits=cap,
            m_c=2.0**cap,
            input_distribution=ProbVector(self.input_distribution[k], min_size=1),
            centroid=ProbVector(self.centroid[k]),
            iterations=int(self.iterations[k]),
            gap=float(self.gap[k]),
            converged=bool(self.converged[k]),
        )


@dataclass(frozen=True)
class SpreadBounds:
    capacity_bits: float
    radius_bits: float
    diameter_bits: float


@njit(nogil=True, cache=True)
def _ba_kernel(P, Q0, tol, max_iter):  # pragma: no cover - compiled
    m, c = P.shape
    H = np.zeros(m)
    for i in range(m):
        for j in range(c):
            if P[i, j] > 0.0:
                H[i] += P[i, j] * np.log(P[i, j])
    Q = Q0.copy()
    q = np.zeros(c)
    D = np.zeros(m)
    w = np.zeros(m)
    it = 0
    while True:
        # output marginal; Phi(i|j) = Q(i) P(j|i) / q(j)
        for j in range(c):
            q[j] = 0.0
        for i in range(m):
            for j in range(c):
                q[j] += Q[i] * P[i, j]
        # log c(i) = sum_j P(j|i) log(Phi(i|j) / Q(i)) = D(P_i || q)
        upper = -np.inf
        for i in range(m):
            d = H[i]
            for j in range(c):
                if P[i, j] > 0.0:
                    d -= P[i, j] * np.log(q[j])
            D[i] = d
            if d > upper:
                upper = d
        # r(i) = Q(i) c(i), scaled by exp(-upper) for stability
        total = 0.0
        for i in range(m):
            w[i] = Q[i] * np.exp(D[i] - upper)
            total += w[i]
        lower = upper + np.log(total)
        gap = upper - lower
        if gap <= tol or it >= max_iter:
            break
        for i in range(m):
            Q[i] = w[i] / total
        it += 1
    return lower, gap, it, Q, q


@njit(nogil=True, cache=True)
def _kl_rows(rows, q):  # pragma: no cover - compiled
    """D(row_i || q) in nats for every row."""
    m, c = rows.shape
    out = np.zeros(m)
    for i in range(m):
        for j in range(c):
            if rows[i, j] > 0.0:
                out[i] += rows[i, j] * np.log(rows[i, j] / q[j])
    return out


@njit(nogil=True, cache=True)
def _independent(rows, idx, k):  # pragma: no cover - compiled
    return np.linalg.matrix_rank(rows[idx[:k]], 1e-9) == k


@njit(nogil=True, cache=True)
def _newton_on_support(S, w, steps):  # pragma: no cover - compiled
    """Newton's method for D(S_i || wS) = C, sum(w) = 1. Returns (ok, w)."""
    k, c = S.shape
    w = w.copy()
    q = w @ S
    cap = np.dot(w, _kl_rows(S, q))
    J = np.zeros((k + 1, k + 1))
    F = np.zeros(k + 1)
    for _ in range(steps):
        q = w @ S
        for j in range(c):
            if not q[j] > 0.0:
                return False, w
        D = _kl_rows(S, q)
        worst = abs(w.sum() - 1.0)
        for i in range(k):
            F[i] = D[i] - cap
            worst = max(worst, abs(F[i]))
        F[k] = w.sum() - 1.0
        if worst < 1e-15:
            break
        for i in range(k):
            for l in range(k):
                acc = 0.0
                for j in range(c):
                    acc += S[i, j] * S[l, j] / q[j]
                J[i, l] = -acc
            J[i, k] = -1.0
            J[k, i] = 1.0
        J[k, k] = 0.0
        if abs(np.linalg.det(J)) < 1e-300:
            return False, w
        step = np.linalg.solve(J, -F)
        for i in range(k):
            w[i] += step[i]
        cap += step[k]
        for i in range(k):
            if not np.isfinite(w[i]):
                return False, w
    return True, w


@njit(nogil=True, cache=True)
def _newton_polish(rows, Q, tol, floor, steps):  # pragma: no cover - compiled
    """Finish a slow BA run by solving D(row_i || q) = C on a guessed support.

    BA crawls when a row's optimal weight is zero but its divergence sits just
    below capacity. The support is seeded with the heaviest linearly
    independent rows of the BA iterate (at most c of them), rows that come
    out with negative weight are dropped, and the row with the largest
    divergence is added while the sandwich gap over all rows exceeds ``tol``.
    Returns ``(ok, lower, gap, Q, q)`` in nats; ok is False to resume BA.
    """
    m, c = rows.shape
    support = np.zeros(c, dtype=np.int64)
    k = 0
    qmax = Q.max()
    for i in np.argsort(-Q, kind="mergesort"):
        if Q[i] < floor * qmax or k == c:
            break
        support[k] = i
        if _independent(rows, support, k + 1):
            k += 1
    fail = (False, 0.0, 0.0, Q, np.zeros(c))
    for _ in range(2 * c + 2):
        if k < 2:
            return fail
        idx = support[:k]
        w0 = Q[idx] + 1e-3
        ok, w = _newton_on_support(rows[idx], w0 / w0.sum(), steps)
        drop = -1
        if not ok:
            # no interior solution on this support: drop its lightest row
            drop = int(np.argmin(Q[idx]))
        elif w.min() < 0.0:
            drop = int(np.argmin(w))
        if drop >= 0:
            for t in range(drop, k - 1):
                support[t] = support[t + 1]
            k -= 1
            continue
        w = w / w.sum()
        full = np.zeros(m)
        full[idx] = w
        q = w @ rows[idx]
        D = _kl_rows(rows, q)
        upper = D.max()
        lower = upper + np.log(np.sum(full * np.exp(D - upper)))
        if upper - lower <= tol:
            return True, lower, upper - lower, full, q
        worst = int(np.argmax(D))
        if k == c:
            return fail
        for t in range(k):
            if support[t] == worst:
                return fail
        support[k] = worst
        if not _independent(rows, support, k + 1):
            return fail
        k += 1
    return fail


def _solve(rows: NDArray[np.float64], tol: float, max_iter: int):
    m = rows.shape[0]
    lower, gap, it, Q, q = _ba_kernel(rows, np.full(m, 1.0 / m), tol, min(_POLISH_AFTER, max_iter))
    if gap <= tol or it >= max_iter:
        return lower, gap, it, Q, q
    ok, p_lower, p_gap, p_Q, p_q = _newton_polish(rows, Q, tol, _POLISH_SUPPORT, _POLISH_STEPS)
    if ok:
        return p_lower, p_gap, it, p_Q, p_q
    lower, gap, more, Q, q = _ba_kernel(rows, Q, tol, max_iter - it)
    return lower, gap, it + more, Q, q


def _candidate_rows(rows: NDArray[np.float64]) -> NDArray[np.intp]:
    """Indices of rows that can carry capacity-achieving weight.

    Drops exact duplicates (first occurrence kept) and rows lying in the
    convex hull of the others: by convexity of KL in its first argument such
    rows never raise max_i D(row_i || q), so capacity is unchanged.
    """
    m, c = rows.shape
    if c == 2:
        lo, hi = int(np.argmin(rows[:, 1])), int(np.argmax(rows[:, 1]))
        return np.array([lo] if rows[lo, 1] == rows[hi, 1] else sorted((lo, hi)))
    # lexsort is stable, so each run of equal rows starts at its lowest index
    order = np.lexsort(rows.T[::-1])
    fresh = np.ones(m, dtype=bool)
    fresh[1:] = np.any(rows[order[1:]] != rows[order[:-1]], axis=1)
    keep = np.sort(order[fresh])
    if keep.size <= 2:
        return keep
    pts = rows[keep]
    if c <= _HULL_MAX_CLASSES and keep.size > c:
        try:
            hull = ConvexHull(pts[:, : c - 1])
        except QhullError:
            # lower-dimensional point set; iterate on all distinct rows
            return keep
        return np.sort(keep[hull.vertices])
    return keep


def ba_capacity_batch(channels: ArrayLike, config: Optional[BaConfig] = None) -> BatchCapacity:
    """Run Blahut-Arimoto on a (B, m, c) stack of channels.

    Each channel is solved independently, so results do not depend on how
    channels are grouped into batches.
    """
    config = config or BaConfig()
    P = np.asarray(channels, dtype=np.float64)
    if P.ndim != 3 or P.shape[1] < 1 or P.shape[2] < 2:
        raise ValidationError(f"expected a (B, m, c) stack with m >= 1, c >= 2; got {P.shape}")
    B, m, c = P.shape

    cap = np.zeros(B)
    Q_out = np.zeros((B, m))
    q_out = np.zeros((B, c))
    iters = np.zeros(B, dtype=np.int64)
    gap_out = np.zeros(B)
    conv = np.ones(B, dtype=bool)
    tol = config.tolerance * LN2
    for k in range(B):
        rows = np.ascontiguousarray(P[k])
        keep = _candidate_rows(rows) if config.prune else np.arange(m)
        if keep.size == 1:
            # a single distinct score carries no multiplicity
            Q_out[k, keep[0]] = 1.0
            q_out[k] = rows[keep[0]]
            continue
        lower, gap, it, Q, q = _solve(rows[keep], tol, config.max_iterations)
        cap[k] = max(lower, 0.0) / LN2
        Q_out[k, keep] = Q
        q_out[k] = q
        iters[k] = it
        gap_out[k] = gap / LN2
        conv[k] = gap <= tol
    return BatchCapacity(cap, Q_out, q_out, iters, gap_out, conv)


def ba_capacity(channel: ChannelLike, config: Optional[BaConfig] = None) -> CapacityResult:
    """Rashomon Capacity of one score set.

    Starts from the uniform input distribution and reports the lower bound
    ``log sum_i Q(i) c(i)`` at termination; the true capacity lies at most
    ``gap`` above it.
    """
    s = as_score_set(channel)
    return ba_capacity_batch(s.rows[None], config).result(0)


def _max_kl_to(rows: NDArray[np.float64], q: NDArray[np.float64]) -> float:
    q = np.maximum(q, 0.0)
    q = q / q.sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(rows > 0, rows * np.log2(rows / q), 0.0)
    return float(max(terms.sum(axis=1).max(), 0.0))


def info_radius(channel: ChannelLike, config: Optional[BaConfig] = None) -> float:
    """min over q of max_i D(row_i || q), in bits.

    The objective is convex in q. Binary channels use a bounded scalar
    search on q[1]; wider channels use SLSQP on the epigraph form. The result
    never exceeds the best value attained at a row of the channel, so it is
    bounded by the information diameter.
    """
    config = config or BaConfig()
    s = as_score_set(channel)
    rows = s.rows
    if s.m == 1:
        return 0.0

    # best starting point among the rows themselves and their mean
    candidates = [rows.mean(axis=0)] + list(rows)
    best_q = min(candidates, key=lambda q: _max_kl_to(rows, q))
    best = _max_kl_to(rows, best_q)
    if best == 0.0:
        return 0.0

    if s.c == 2:
        res = optimize.minimize_scalar(
            lambda t: _max_kl_to(rows, np.array([1.0 - t, t])),
            bounds=(0.0, 1.0),
            method="bounded",
            options={"xatol": min(config.tolerance, 1e-10) * 1e-2, "maxiter": 2000},
        )
        return min(best, float(res.fun))

    m, c = rows.shape
    log_rows = np.where(rows > 0, np.log2(np.where(rows > 0, rows, 1.0)), 0.0)
    self_term = (rows * log_rows).sum(axis=1)
    floor = 1e-300

    def kl_all(x):
        q = np.maximum(x[1:], floor)
        return self_term - rows @ np.log2(q)

    def cons(x):
        return x[0] - kl_all(x)

    def cons_jac(x):
        q = np.maximum(x[1:], floor)
        jac = np.empty((m, c + 1))
        jac[:, 0] = 1.0
        jac[:, 1:] = rows / (q * LN2)
        return jac

    x0 = np.concatenate([[best], best_q])
    with warnings.catch_warnings():
        # SLSQP may probe slightly outside the bounds; the floor above covers it
        warnings.simplefilter("ignore", RuntimeWarning)
        res = optimize.minimize(
            lambda x: x[0],
            x0,
            jac=lambda x: np.eye(1, c + 1, 0).ravel(),
            method="SLSQP",
            bounds=[(0.0, None)] + [(1e-15, 1.0)] * c,
            constraints=[
                {"type": "ineq", "fun": cons, "jac": cons_jac},
                {"type": "eq", "fun": lambda x: x[1:].sum() - 1.0, "jac": lambda x: np.r_[0.0, np.ones(c)]},
            ],
            options={"ftol": 1e-15, "maxiter": 1000},
        )
    if np.all(np.isfinite(res.x)):
        best = min(best, _max_kl_to(rows, res.x[1:]))
    return best


def info_diameter(channel: ChannelLike) -> float:
    """max over ordered row pairs of D(row_i || row_j), in bits."""
    s = as_score_set(channel)
    if s.m == 1:
        return 0.0
    if np.all(s.rows > 0):
        return float(kl_matrix(s.rows).max())
    return max(kl_divergence(p, q) for p in s.rows for q in s.rows)


def spread_bounds(channel: ChannelLike, config: Optional[BaConfig] = None) -> SpreadBounds:
    s = as_score_set(channel)
    return SpreadBounds(
        capacity_bits=ba_capacity(s, config).capacity_bits,
        radius_bits=info_radius(s, config),
        diameter_bits=info_diameter(s),
    )
