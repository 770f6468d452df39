"""Shared oracles and generators for the test suite."""

from pathlib import Path

import numpy as np
import pytest

from rkit.simplex import SCORE_FLOOR, clip_scores

FIXTURES = Path(__file__).parent / "fixtures"

ACCEPTANCE_LINES: list[str] = []


def binary_entropy(p: float) -> float:
    if p in (0.0, 1.0):
        return 0.0
    return float(-p * np.log2(p) - (1 - p) * np.log2(1 - p))


def mutual_information_bits(prior: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """I(M; Y) for a batch of priors (k, m) over a fixed channel (m, c)."""
    q = prior @ rows
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rows[None] > 0, rows[None] / q[:, None, :], 1.0)
        terms = np.where(rows[None] > 0, rows[None] * np.log2(ratio), 0.0)
    return np.einsum("km,km->k", prior, terms.sum(axis=2))


def grid_capacity(rows: np.ndarray, step: float = 1e-3) -> float:
    """Exhaustive search over input priors on a simplex grid (m <= 3)."""
    m = rows.shape[0]
    k = int(round(1 / step))
    if m == 1:
        return 0.0
    if m == 2:
        a = np.linspace(0.0, 1.0, k + 1)
        priors = np.stack([a, 1 - a], axis=1)
        return float(mutual_information_bits(priors, rows).max())
    if m == 3:
        best = 0.0
        grid = np.arange(k + 1)
        for i in range(k + 1):
            j = grid[: k + 1 - i]
            priors = np.stack([np.full(j.size, i), j, k - i - j], axis=1) / k
            best = max(best, float(mutual_information_bits(priors, rows).max()))
        return best
    raise ValueError("grid oracle supports m <= 3")


def brute_kl(p, q) -> float:
    """Scalar loop reference for KL divergence in bits."""
    total = 0.0
    for a, b in zip(p, q):
        if a > 0:
            if b == 0:
                return float("inf")
            total += a * np.log2(a / b)
    return total


def random_channel(rng: np.random.Generator, m: int, c: int) -> np.ndarray:
    """Rows from a Dirichlet with random concentration, sometimes near-degenerate."""
    alpha = rng.choice([0.3, 1.0, 5.0])
    rows = rng.dirichlet(np.full(c, alpha), size=m)
    return clip_scores(rows)


def corner_rows(c: int) -> np.ndarray:
    return clip_scores(np.eye(c))


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


__all__ = [
    "FIXTURES",
    "SCORE_FLOOR",
    "binary_entropy",
    "brute_kl",
    "corner_rows",
    "grid_capacity",
    "mutual_information_bits",
    "random_channel",
]
