"""Shrinking a Rashomon set while keeping its capacity.

``caratheodory_reduce`` keeps at most ``c`` rows of one sample's score set.
``greedy_select`` picks ``r`` models for a whole dataset by repeatedly adding
the model that raises the mean per-sample capacity the most.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from rkit.capacity import BaConfig, ChannelLike, as_score_set, ba_capacity
from rkit.errors import ValidationError
from rkit.metrics import ScoreTensor, capacities
from rkit.simplex import SCORE_FLOOR, ProbVector

REDUCTION_TOLERANCE = 1e-4


@dataclass(frozen=True)
class ReductionResult:
    kept_model_ids: tuple
    kept_indices: tuple
    original_capacity_bits: float
    reduced_capacity_bits: float
    support_weights: ProbVector
    conforming: bool


@dataclass(frozen=True)
class GreedySelection:
    selected_model_ids: tuple
    selected_indices: tuple
    capacity_trace: tuple


def caratheodory_reduce(
    channel: ChannelLike,
    config: Optional[BaConfig] = None,
    support_threshold: float = 1e-6,
    tolerance: float = REDUCTION_TOLERANCE,
) -> ReductionResult:
    """Keep the rows carrying capacity-achieving weight, at most ``c`` of them.

    Rows identical to an already kept row are folded into it. The result is
    flagged non-conforming when the reduced capacity drifts from the original
    by more than ``tolerance`` bits.
    """
    s = as_score_set(channel)
    if not (0 < support_threshold <= 1.0 / s.m):
        raise ValidationError(f"support_threshold must lie in (0, 1/m] = (0, {1.0 / s.m}], got {support_threshold}")
    full = ba_capacity(s, config)
    weights = full.input_distribution.values
    order = sorted(range(s.m), key=lambda j: (-weights[j], j))

    kept: list[int] = []
    kept_w: list[float] = []
    for j in order:
        match = next((k for k, i in enumerate(kept) if np.max(np.abs(s.rows[i] - s.rows[j])) <= SCORE_FLOOR), None)
        if match is not None:
            kept_w[match] += weights[j]
        elif weights[j] >= support_threshold and len(kept) < s.c:
            kept.append(j)
            kept_w.append(weights[j])

    pairs = sorted(zip(kept, kept_w))
    kept = [j for j, _ in pairs]
    w = np.array([x for _, x in pairs])
    reduced = ba_capacity(s.rows[kept], config) if len(kept) > 1 else None
    reduced_bits = 0.0 if reduced is None else reduced.capacity_bits
    return ReductionResult(
        kept_model_ids=tuple(s.model_ids[j] for j in kept),
        kept_indices=tuple(kept),
        original_capacity_bits=full.capacity_bits,
        reduced_capacity_bits=reduced_bits,
        support_weights=ProbVector(w / w.sum(), min_size=1),
        conforming=abs(full.capacity_bits - reduced_bits) <= tolerance,
    )


def greedy_select(
    tensor: ScoreTensor,
    model_subset: Sequence[int],
    r: int,
    config: Optional[BaConfig] = None,
    seed: int = 0,
    sample_size: Optional[int] = None,
    threads: int = 1,
) -> GreedySelection:
    """Greedy model selection maximizing mean per-sample capacity.

    The first model is drawn with ``numpy.random.default_rng(seed)``; each
    later step adds the candidate with the highest mean capacity over the
    samples, ties going to the lowest model index. ``sample_size`` evaluates
    the mean on a seeded random subset of samples instead of all of them.
    """
    pool = sorted(set(int(j) for j in model_subset))
    if not pool or any(j < 0 or j >= tensor.m for j in pool):
        raise ValidationError("model_subset must be a nonempty set of valid model indices")
    if not (1 <= r <= len(pool)):
        raise ValidationError(f"r must be in [1, {len(pool)}], got {r}")
    rng = np.random.default_rng(seed)
    samples = None
    if sample_size is not None and sample_size < tensor.n:
        if sample_size < 1:
            raise ValidationError("sample_size must be >= 1")
        samples = np.sort(rng.choice(tensor.n, size=sample_size, replace=False))

    selected = [pool[int(rng.integers(len(pool)))]]
    trace = [0.0]

    def mean_capacity(candidate: int) -> float:
        return float(capacities(tensor, selected + [candidate], config, samples=samples).capacity_bits.mean())

    while len(selected) < r:
        remaining = [j for j in pool if j not in selected]
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                values = list(ex.map(mean_capacity, remaining))
        else:
            values = [mean_capacity(j) for j in remaining]
        best = int(np.argmax(values))  # first maximum: lowest model index
        selected.append(remaining[best])
        trace.append(values[best])

    return GreedySelection(
        selected_model_ids=tuple(tensor.model_ids[j] for j in selected),
        selected_indices=tuple(selected),
        capacity_trace=tuple(trace),
    )
