"""Rashomon-set exploration for unregularized binary logistic regression.

Models are trained by Newton-Raphson on the log-likelihood. Adversarial
weight perturbation (AWP) pushes one sample's score toward a target class by
adding ``lambda * z_t`` to the likelihood gradient, and keeps every iterate
whose mean log-loss stays within ``base loss + epsilon``. Losses here are
mean cross-entropy in nats.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit

from rkit.errors import SeparableDataError, ValidationError
from rkit.metrics import ScoreTensor

RIDGE_JITTER = 1e-10
_STALL_DELTA = 1e-12
_STALL_STEPS = 10


@dataclass(frozen=True)
class Dataset:
    features: NDArray[np.float64]
    labels: NDArray[np.int64]
    feature_names: tuple = ()

    def __post_init__(self):
        Z = np.array(self.features, dtype=np.float64)
        if Z.ndim == 1:
            Z = Z[:, None]
        y = np.array(self.labels).reshape(-1)
        if Z.ndim != 2 or Z.shape[0] < 1 or Z.shape[1] < 1:
            raise ValidationError(f"features must be n x d with n, d >= 1; got {Z.shape}")
        if y.size != Z.shape[0]:
            raise ValidationError(f"{y.size} labels for {Z.shape[0]} samples")
        if not np.all(np.isfinite(Z)):
            raise ValidationError("features contain non-finite values")
        if not np.all(np.isin(y, (0, 1))):
            raise ValidationError("labels must be 0 or 1")
        names = tuple(self.feature_names) if len(self.feature_names) else tuple(f"x{k}" for k in range(Z.shape[1]))
        if len(names) != Z.shape[1]:
            raise ValidationError(f"{len(names)} feature names for {Z.shape[1]} features")
        Z.setflags(write=False)
        y = y.astype(np.int64)
        y.setflags(write=False)
        object.__setattr__(self, "features", Z)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class Provenance:
    kind: str  # base | awp | label_flip | ingested
    sample: Optional[int] = None
    target_class: Optional[int] = None

    @property
    def tag(self) -> str:
        if self.kind == "awp":
            return f"awp_s{self.sample}_c{self.target_class}"
        if self.kind == "label_flip":
            return f"flip_s{self.sample}"
        return self.kind


@dataclass(frozen=True)
class LogisticModel:
    weights: NDArray[np.float64]
    train_loss: float
    provenance: Provenance = Provenance("base")
    loss_trace: tuple = ()
    stalled: bool = False

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(w)):
            raise ValidationError("weights must be finite")
        if not (math.isfinite(self.train_loss) and self.train_loss >= 0):
            raise ValidationError(f"train_loss must be finite and >= 0, got {self.train_loss}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def predict_proba(self, features: NDArray[np.float64]) -> NDArray[np.float64]:
        """Probability of class 1 for each row of ``features``."""
        return expit(np.asarray(features, dtype=np.float64) @ self.weights)


@dataclass(frozen=True)
class AwpConfig:
    """Adversarial weight perturbation settings.

    ``lambda_magnitude=None`` uses ``0.1 * n / ||z_t||^2`` for each target.
    ``epsilon`` is the loss budget above the base model's mean log-loss.
    """

    lambda_magnitude: Optional[float] = None
    epsilon: float = 0.05
    max_steps: int = 200
    score_cap: float = 0.9
    damping: float = 0.5

    def __post_init__(self):
        if self.lambda_magnitude is not None and not self.lambda_magnitude > 0:
            raise ValidationError("lambda_magnitude must be > 0")
        if not (self.epsilon >= 0 and math.isfinite(self.epsilon)):
            raise ValidationError("epsilon must be >= 0")
        if self.max_steps < 1:
            raise ValidationError("max_steps must be >= 1")
        if not (0.5 < self.score_cap <= 1.0):
            raise ValidationError("score_cap must be in (0.5, 1]")
        if not (0.0 < self.damping <= 1.0):
            raise ValidationError("damping must be in (0, 1]")


def mean_log_loss(w: NDArray[np.float64], Z: NDArray[np.float64], y: NDArray[np.int64]) -> float:
    """Mean binary cross-entropy in nats."""
    s = Z @ w
    return float(np.mean(np.logaddexp(0.0, s) - y * s))


def log_likelihood(w, Z, y) -> float:
    s = Z @ w
    return float(np.sum(y * s - np.logaddexp(0.0, s)))


def log_likelihood_gradient(w, Z, y) -> NDArray[np.float64]:
    """Z^T (y - p)."""
    return Z.T @ (y - expit(Z @ w))


def log_likelihood_hessian(w, Z) -> NDArray[np.float64]:
    """-Z^T W Z with W = diag(p (1 - p))."""
    p = expit(Z @ w)
    return -(Z.T * (p * (1.0 - p))) @ Z


def _newton_direction(w, Z, rhs) -> NDArray[np.float64]:
    """Solve (Z^T W Z) step = rhs, adding a ridge jitter if singular."""
    H = -log_likelihood_hessian(w, Z)
    try:
        if np.linalg.cond(H) < 1e14:
            return np.linalg.solve(H, rhs)
    except np.linalg.LinAlgError:
        pass
    return np.linalg.solve(H + RIDGE_JITTER * np.eye(H.shape[0]), rhs)


def train_logistic(data: Dataset, max_iters: int = 100, grad_tolerance: float = 1e-8) -> LogisticModel:
    """Fit unregularized logistic regression by Newton-Raphson from w = 0.

    Steps that would raise the loss are halved until they do not, so the
    recorded loss trace is non-increasing. Iteration stops once the gradient
    of the mean loss has norm at most ``grad_tolerance``.
    """
    Z, y = data.features, data.labels
    if data.d > data.n:
        warnings.warn(f"more features ({data.d}) than samples ({data.n}); the fit is not identifiable")
    w = np.zeros(data.d)
    loss = mean_log_loss(w, Z, y)
    trace = [loss]
    converged = False
    for _ in range(max_iters):
        g = log_likelihood_gradient(w, Z, y)
        if np.linalg.norm(g) <= grad_tolerance * data.n:
            converged = True
            break
        step = _newton_direction(w, Z, g)
        if not np.all(np.isfinite(step)):
            raise SeparableDataError("Newton step diverged; the data look separable, add regularization or cap iterations")
        t = 1.0
        for _ in range(40):
            w_new = w + t * step
            new_loss = mean_log_loss(w_new, Z, y)
            if not (math.isfinite(new_loss) and np.all(np.isfinite(w_new))):
                raise SeparableDataError(
                    "loss became non-finite; the data look separable, add regularization or cap iterations"
                )
            if new_loss <= loss:
                break
            t *= 0.5
        else:
            converged = True  # no decrease available at float precision
            break
        w, loss = w_new, new_loss
        trace.append(loss)
    margins = (2 * y - 1) * (Z @ w)
    if np.all(margins > 0):
        warnings.warn(
            "the fitted weights separate the training data perfectly; the unregularized optimum is at infinity "
            "and the returned weights are a finite point on a diverging path"
        )
    elif not converged:
        warnings.warn(
            f"Newton-Raphson stopped after {max_iters} iterations with mean-loss gradient norm > {grad_tolerance}; "
            "the data may be separable and the model saturated"
        )
    return LogisticModel(w, loss, Provenance("base"), tuple(trace))


def _target_score(w, z_t, target_class: int) -> float:
    p1 = float(expit(z_t @ w))
    return p1 if target_class == 1 else 1.0 - p1


def _awp_trajectory(base: LogisticModel, data: Dataset, t: int, k: int, config: AwpConfig, budget: float):
    """Accepted AWP iterates as (weights, loss, capped, stalled) tuples.

    The first entry is the base model. The walk ends when a step would exceed
    ``budget``, the target score passes the cap, progress stalls, or
    ``max_steps`` is reached.
    """
    Z, y = data.features, data.labels
    z_t = Z[t]
    w = base.weights.copy()
    loss = mean_log_loss(w, Z, y)
    score = _target_score(w, z_t, k)
    norm2 = float(z_t @ z_t)
    if norm2 == 0.0:
        # a zero feature vector has a fixed score of 0.5
        return [(w, loss, False, True)]
    out = [(w, loss, score > config.score_cap, False)]
    if score > config.score_cap:
        return out
    magnitude = config.lambda_magnitude if config.lambda_magnitude is not None else 0.1 * data.n / norm2
    lam = magnitude if k == 1 else -magnitude
    still = 0
    for _ in range(config.max_steps):
        rhs = log_likelihood_gradient(w, Z, y) + lam * z_t
        w_new = w + config.damping * _newton_direction(w, Z, rhs)
        new_loss = mean_log_loss(w_new, Z, y)
        if not math.isfinite(new_loss) or new_loss > budget:
            break  # roll back the breaching step
        new_score = _target_score(w_new, z_t, k)
        still = still + 1 if abs(new_score - score) < _STALL_DELTA else 0
        w, loss, score = w_new, new_loss, new_score
        capped = score > config.score_cap
        stalled = still >= _STALL_STEPS
        out.append((w, loss, capped, stalled))
        if capped or stalled:
            break
    return out


def _awp_model(entry, t: int, k: int) -> LogisticModel:
    w, loss, _, stalled = entry
    return LogisticModel(w, loss, Provenance("awp", t, k), stalled=stalled)


def _check_target(data: Dataset, t: int, k: int):
    if not (0 <= t < data.n):
        raise ValidationError(f"target sample {t} out of range [0, {data.n})")
    if k not in (0, 1):
        raise ValidationError(f"target class must be 0 or 1, got {k}")


def awp_perturb(
    base: LogisticModel, data: Dataset, target_sample: int, target_class: int, config: Optional[AwpConfig] = None
) -> LogisticModel:
    """Push ``target_sample``'s score toward ``target_class`` inside the loss budget."""
    config = config or AwpConfig()
    _check_target(data, target_sample, target_class)
    base_loss = mean_log_loss(base.weights, data.features, data.labels)
    path = _awp_trajectory(base, data, target_sample, target_class, config, base_loss + config.epsilon)
    return _awp_model(path[-1], target_sample, target_class)


def awp_sweep(
    base: LogisticModel,
    data: Dataset,
    target_sample: int,
    target_class: int,
    epsilons: Sequence[float],
    config: Optional[AwpConfig] = None,
) -> list[LogisticModel]:
    """``awp_perturb`` for several budgets from a single trajectory.

    The AWP walk does not depend on the budget, so each budget's answer is a
    prefix of the walk for the largest one. ``config.epsilon`` is ignored.
    """
    config = config or AwpConfig()
    _check_target(data, target_sample, target_class)
    base_loss = mean_log_loss(base.weights, data.features, data.labels)
    path = _awp_trajectory(base, data, target_sample, target_class, config, base_loss + max(epsilons))
    models = []
    for eps in epsilons:
        budget = base_loss + eps
        pick = path[0]
        for entry in path[1:]:
            if entry[1] > budget:
                break
            pick = entry
            if entry[2] or entry[3]:
                break
        models.append(_awp_model(pick, target_sample, target_class))
    return models


def label_flip_retrain(
    data: Dataset, flip_sample: int, max_iters: int = 100, grad_tolerance: float = 1e-8
) -> LogisticModel:
    """Retrain from scratch with one label flipped."""
    if not (0 <= flip_sample < data.n):
        raise ValidationError(f"flip sample {flip_sample} out of range [0, {data.n})")
    y = data.labels.copy()
    y[flip_sample] = 1 - y[flip_sample]
    model = train_logistic(Dataset(data.features, y, data.feature_names), max_iters, grad_tolerance)
    return LogisticModel(model.weights, model.train_loss, Provenance("label_flip", flip_sample), model.loss_trace)


def emit_scores(
    models: Sequence[LogisticModel],
    data: Dataset,
    model_ids: Optional[Sequence[str]] = None,
    sample_ids: Optional[Sequence[str]] = None,
) -> ScoreTensor:
    """Score tensor of ``models`` on ``data`` with mean log-loss per model."""
    if not models:
        raise ValidationError("no models to score")
    for mdl in models:
        if mdl.weights.size != data.d:
            raise ValidationError(f"model has {mdl.weights.size} weights, data has {data.d} features")
    W = np.stack([mdl.weights for mdl in models], axis=1)
    p1 = expit(data.features @ W)
    scores = np.stack([1.0 - p1, p1], axis=2)
    losses = [mean_log_loss(mdl.weights, data.features, data.labels) for mdl in models]
    ids = list(model_ids) if model_ids is not None else [mdl.provenance.tag for mdl in models]
    return ScoreTensor.from_raw(scores, ids, sample_ids or (), np.array(losses))


def generate_synthetic(n: int, d: int, class_separation: float, seed: int) -> Dataset:
    """Two unit-covariance Gaussians at +/- (separation / 2) * ones(d), balanced labels."""
    if n < 2 or d < 1:
        raise ValidationError(f"need n >= 2 and d >= 1, got n={n}, d={d}")
    if not (class_separation >= 0 and math.isfinite(class_separation)):
        raise ValidationError("class_separation must be finite and >= 0")
    rng = np.random.default_rng(seed)
    y = np.zeros(n, dtype=np.int64)
    y[n // 2 :] = 1
    rng.shuffle(y)
    centers = np.where(y[:, None] == 1, 0.5, -0.5) * class_separation * np.ones(d)
    Z = centers + rng.standard_normal((n, d))
    return Dataset(Z, y)


@dataclass(frozen=True)
class ExploreResult:
    base: LogisticModel
    tensors: dict = field(default_factory=dict)  # (method, epsilon) -> ScoreTensor


def explore(
    data: Dataset,
    epsilons: Sequence[float],
    methods: Iterable[str] = ("awp",),
    awp_config: Optional[AwpConfig] = None,
    targets: Optional[Sequence[int]] = None,
    max_iters: int = 100,
    grad_tolerance: float = 1e-8,
) -> ExploreResult:
    """Train a base model and build one score tensor per method and budget.

    ``awp`` perturbs the base model toward each class on every target sample.
    ``label_flip`` retrains once per target with that label flipped and keeps
    the retrained models whose loss fits the budget.
    """
    epsilons = [float(e) for e in epsilons]
    if not epsilons or any(not (e >= 0) for e in epsilons):
        raise ValidationError("epsilons must be a nonempty list of values >= 0")
    methods = list(methods)
    for method in methods:
        if method not in ("awp", "label_flip"):
            raise ValidationError(f"unknown exploration method {method!r}")
    awp_config = awp_config or AwpConfig()
    targets = list(range(data.n)) if targets is None else [int(t) for t in targets]
    sample_ids = [f"s{i}" for i in range(data.n)]

    base = train_logistic(data, max_iters, grad_tolerance)
    base_loss = mean_log_loss(base.weights, data.features, data.labels)
    tensors = {}
    if "awp" in methods:
        per_eps: list[list[LogisticModel]] = [[base] for _ in epsilons]
        for t in targets:
            for k in (0, 1):
                for bucket, mdl in zip(per_eps, awp_sweep(base, data, t, k, epsilons, awp_config)):
                    bucket.append(mdl)
        for eps, models in zip(epsilons, per_eps):
            tensors[("awp", eps)] = emit_scores(models, data, sample_ids=sample_ids)
    if "label_flip" in methods:
        flips = [label_flip_retrain(data, t, max_iters, grad_tolerance) for t in targets]
        flip_losses = [mean_log_loss(f.weights, data.features, data.labels) for f in flips]
        for eps in epsilons:
            models = [base] + [f for f, loss in zip(flips, flip_losses) if loss <= base_loss + eps]
            tensors[("label_flip", eps)] = emit_scores(models, data, sample_ids=sample_ids)
    return ExploreResult(base, tensors)
