"""Dataset-level multiplicity metrics over a score tensor."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from rkit.capacity import BaConfig, BatchCapacity, CapacityResult, ScoreSet, ba_capacity, ba_capacity_batch
from rkit.errors import ValidationError
from rkit.simplex import SUM_TOLERANCE, clip_scores

# samples per BA work unit; fixed so results never depend on the thread count
CHUNK_SIZE = 128


@dataclass(frozen=True)
class ScoreTensor:
    """Scores of ``m`` models on ``n`` samples over ``c`` classes.

    ``scores[i, j]`` is model ``j``'s probability vector for sample ``i``.
    ``model_losses`` holds each model's empirical risk, in whatever unit the
    generating task used.
    """

    scores: NDArray[np.float64]
    model_ids: tuple = ()
    sample_ids: tuple = ()
    model_losses: Optional[NDArray[np.float64]] = None

    def __post_init__(self):
        s = np.array(self.scores, dtype=np.float64)
        if s.ndim != 3 or s.shape[0] < 1 or s.shape[1] < 1 or s.shape[2] < 2:
            raise ValidationError(f"scores must be n x m x c with c >= 2; got shape {s.shape}")
        if not np.all(np.isfinite(s)) or np.any(s < 0):
            raise ValidationError("scores must be finite and non-negative")
        if np.any(np.abs(s.sum(axis=2) - 1.0) > SUM_TOLERANCE):
            raise ValidationError("every (sample, model) score must sum to 1")
        n, m, _ = s.shape
        model_ids = tuple(str(x) for x in self.model_ids) if len(self.model_ids) else tuple(f"m{j}" for j in range(m))
        sample_ids = tuple(str(x) for x in self.sample_ids) if len(self.sample_ids) else tuple(f"s{i}" for i in range(n))
        if len(model_ids) != m or len(set(model_ids)) != m:
            raise ValidationError("model_ids must be unique and match the model axis")
        if len(sample_ids) != n or len(set(sample_ids)) != n:
            raise ValidationError("sample_ids must be unique and match the sample axis")
        losses = self.model_losses
        if losses is not None:
            losses = np.array(losses, dtype=np.float64).reshape(-1)
            if losses.size != m or not np.all(np.isfinite(losses)):
                raise ValidationError("model_losses must be m finite values")
            losses.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "model_ids", model_ids)
        object.__setattr__(self, "sample_ids", sample_ids)
        object.__setattr__(self, "model_losses", losses)

    @classmethod
    def from_raw(cls, scores: ArrayLike, model_ids: Sequence = (), sample_ids: Sequence = (), model_losses=None):
        """Clip and renormalize raw scores, then build the tensor."""
        return cls(clip_scores(scores), tuple(model_ids), tuple(sample_ids), model_losses)

    @property
    def n(self) -> int:
        return self.scores.shape[0]

    @property
    def m(self) -> int:
        return self.scores.shape[1]

    @property
    def c(self) -> int:
        return self.scores.shape[2]

    def model_index(self, model_id) -> int:
        try:
            return self.model_ids.index(str(model_id))
        except ValueError:
            raise ValidationError(f"unknown model id {model_id!r}") from None

    def score_set(self, sample: int, model_subset: Sequence[int]) -> ScoreSet:
        idx = list(model_subset)
        return ScoreSet(self.scores[sample, idx], tuple(self.model_ids[j] for j in idx))


@dataclass(frozen=True)
class RashomonSpec:
    """Loss budget selecting the Rashomon set.

    ``absolute`` keeps models with loss <= epsilon; ``relative`` keeps models
    with loss <= min loss + epsilon; ``epsilon=None`` keeps every model. ``base_model`` is the reference model for
    ambiguity and discrepancy; by default the lowest-loss model.
    """

    mode: str = "relative"
    epsilon: Optional[float] = 0.0
    base_model: Optional[str] = None

    def __post_init__(self):
        if self.mode not in ("absolute", "relative"):
            raise ValidationError(f"mode must be 'absolute' or 'relative', got {self.mode!r}")
        if self.epsilon is not None and not (self.epsilon >= 0 and math.isfinite(self.epsilon)):
            raise ValidationError(f"epsilon must be >= 0, got {self.epsilon}")


@dataclass(frozen=True)
class MetricsReport:
    sample_ids: tuple
    per_sample_capacity: NDArray[np.float64]
    per_sample_m_c: NDArray[np.float64]
    ambiguity: float
    discrepancy: float
    tail_mean_1pct: float
    tail_mean_5pct: float
    tail_stderr_1pct: float
    tail_stderr_5pct: float
    cdf_points: tuple
    rashomon_model_ids: tuple
    base_model_id: Optional[str] = None
    config: dict = field(default_factory=dict)

    @property
    def mean_capacity(self) -> float:
        return float(np.mean(self.per_sample_capacity))

    @property
    def mean_m_c(self) -> float:
        return float(np.mean(self.per_sample_m_c))


def filter_rashomon_set(tensor: ScoreTensor, spec: RashomonSpec) -> list[int]:
    """Indices of the models whose loss fits the budget, in model order."""
    if spec.epsilon is None:
        if spec.base_model is not None:
            tensor.model_index(spec.base_model)
        return list(range(tensor.m))
    if tensor.model_losses is None:
        raise ValidationError("the Rashomon set needs per-model losses")
    losses = tensor.model_losses
    threshold = spec.epsilon if spec.mode == "absolute" else losses.min() + spec.epsilon
    subset = [j for j in range(tensor.m) if losses[j] <= threshold]
    if not subset:
        raise ValidationError(
            f"no model has loss <= {threshold!r}; the smallest epsilon admitting a model is {losses.min()!r}"
        )
    if spec.base_model is not None:
        tensor.model_index(spec.base_model)
    return subset


def base_model_index(tensor: ScoreTensor, spec: Optional[RashomonSpec]) -> int:
    if spec is not None and spec.base_model is not None:
        return tensor.model_index(spec.base_model)
    if tensor.model_losses is None:
        return 0
    # np.argmin returns the first minimum: ties go to the lowest index
    return int(np.argmin(tensor.model_losses))


def resolve_models(tensor: ScoreTensor, spec: Optional[RashomonSpec]) -> tuple[list[int], int]:
    """Rashomon subset and base model index. ``spec=None`` keeps every model."""
    subset = list(range(tensor.m)) if spec is None else filter_rashomon_set(tensor, spec)
    return subset, base_model_index(tensor, spec)


def sample_capacity(
    tensor: ScoreTensor, sample: int, model_subset: Sequence[int], config: Optional[BaConfig] = None
) -> CapacityResult:
    if len(model_subset) == 0:
        raise ValidationError("model subset is empty")
    return ba_capacity(tensor.score_set(sample, model_subset), config)


def default_threads() -> int:
    env = os.environ.get("RKIT_THREADS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ValidationError(f"RKIT_THREADS must be an integer, got {env!r}") from None
        if value >= 1:
            return value
    return os.cpu_count() or 1


def capacities(
    tensor: ScoreTensor,
    model_subset: Sequence[int],
    config: Optional[BaConfig] = None,
    threads: int = 1,
    samples: Optional[Sequence[int]] = None,
) -> BatchCapacity:
    """Per-sample Blahut-Arimoto over a model subset, optionally threaded."""
    if len(model_subset) == 0:
        raise ValidationError("model subset is empty")
    rows = np.arange(tensor.n) if samples is None else np.asarray(samples)
    P = tensor.scores[np.ix_(rows, list(model_subset))]
    chunks = [P[k : k + CHUNK_SIZE] for k in range(0, P.shape[0], CHUNK_SIZE)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda ch: ba_capacity_batch(ch, config), chunks))
    else:
        parts = [ba_capacity_batch(ch, config) for ch in chunks]
    return BatchCapacity(*(np.concatenate([getattr(p, f) for p in parts]) for f in BatchCapacity.__dataclass_fields__))


def _flips(tensor: ScoreTensor, subset: Sequence[int], base: int) -> NDArray[np.bool_]:
    """(n, |subset|) indicator of argmax disagreement with the base model."""
    labels = tensor.scores.argmax(axis=2)
    return labels[:, list(subset)] != labels[:, [base]]


def ambiguity(tensor: ScoreTensor, spec: Optional[RashomonSpec]) -> float:
    """Fraction of samples whose predicted class some Rashomon model flips."""
    subset, base = resolve_models(tensor, spec)
    return float(_flips(tensor, subset, base).any(axis=1).mean())


def discrepancy(tensor: ScoreTensor, spec: Optional[RashomonSpec]) -> float:
    """Largest fraction of predictions flipped by a single Rashomon model."""
    subset, base = resolve_models(tensor, spec)
    return float(_flips(tensor, subset, base).mean(axis=0).max())


def _tail(sorted_desc: NDArray[np.float64], frac: float) -> tuple[float, float]:
    k = max(1, math.ceil(frac * sorted_desc.size))
    top = sorted_desc[:k]
    err = float(top.std(ddof=1) / math.sqrt(k)) if k > 1 else 0.0
    return float(top.mean()), err


def summarize_capacities(values: ArrayLike) -> dict:
    """Tail means, standard errors and empirical CDF of per-sample capacities."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValidationError("no capacities to summarize")
    desc = np.sort(v)[::-1]
    m1, e1 = _tail(desc, 0.01)
    m5, e5 = _tail(desc, 0.05)
    asc = desc[::-1]
    n = asc.size
    cdf = tuple((float(x), (r + 1) / n) for r, x in enumerate(asc))
    return {
        "tail_mean_1pct": m1,
        "tail_mean_5pct": m5,
        "tail_stderr_1pct": e1,
        "tail_stderr_5pct": e5,
        "cdf_points": cdf,
    }


def compute_report(
    tensor: ScoreTensor,
    spec: Optional[RashomonSpec],
    config: Optional[BaConfig] = None,
    threads: int = 1,
) -> MetricsReport:
    config = config or BaConfig()
    subset, base = resolve_models(tensor, spec)
    caps = capacities(tensor, subset, config, threads)
    flips = _flips(tensor, subset, base)
    summary = summarize_capacities(caps.capacity_bits)
    echo = {
        "mode": None if spec is None else spec.mode,
        "epsilon": None if spec is None else spec.epsilon,
        "base_model": tensor.model_ids[base],
        "tolerance": config.tolerance,
        "max_iterations": config.max_iterations,
        "n": tensor.n,
        "m": tensor.m,
        "c": tensor.c,
        "rashomon_size": len(subset),
        "not_converged": int((~caps.converged).sum()),
    }
    return MetricsReport(
        sample_ids=tensor.sample_ids,
        per_sample_capacity=caps.capacity_bits,
        per_sample_m_c=caps.m_c,
        ambiguity=float(flips.any(axis=1).mean()),
        discrepancy=float(flips.mean(axis=0).max()),
        rashomon_model_ids=tuple(tensor.model_ids[j] for j in subset),
        base_model_id=tensor.model_ids[base],
        config=echo,
        **summary,
    )
