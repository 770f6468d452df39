"""Regenerate the CSV fixtures in this directory: ``python3 build_fixtures.py``."""

from pathlib import Path

import numpy as np

from rkit.formats import save_score_tensor
from rkit.metrics import ScoreTensor

HERE = Path(__file__).parent


def latent_tensor(n: int, m: int, c: int, seed: int, spread: float = 1.5) -> ScoreTensor:
    """Softmax scores from a shared logit per sample plus per-model low-rank noise."""
    rng = np.random.default_rng(seed)
    base = rng.normal(0.0, 2.0, size=(n, 1, c))
    factors = rng.normal(size=(m, 2))
    loadings = rng.normal(size=(n, 2, c))
    logits = base + spread * np.einsum("mk,nkc->nmc", factors, loadings)
    scores = np.exp(logits - logits.max(axis=2, keepdims=True))
    scores /= scores.sum(axis=2, keepdims=True)
    losses = 0.4 + 0.02 * rng.random(m)
    return ScoreTensor.from_raw(
        scores,
        model_ids=[f"model_{j:02d}" for j in range(m)],
        sample_ids=[f"x{i:03d}" for i in range(n)],
        model_losses=losses,
    )


def main() -> None:
    save_score_tensor(latent_tensor(40, 50, 3, seed=42), HERE / "fifty_models")

    bad = HERE / "missing_row"
    bad.mkdir(exist_ok=True)
    (bad / "scores.csv").write_text(
        "sample_id,model_id,class_0,class_1\na,h1,0.4,0.6\na,h2,0.5,0.5\nb,h1,0.9,0.1\n"
    )
    (bad / "manifest.json").write_text(
        '{"format_version": 1, "n": 2, "m": 2, "c": 2, "model_ids": ["h1", "h2"],'
        ' "sample_ids": ["a", "b"], "score_file": "scores.csv", "loss_file": null}\n'
    )

    bad = HERE / "logits"
    bad.mkdir(exist_ok=True)
    (bad / "scores.csv").write_text(
        "sample_id,model_id,class_0,class_1\na,h1,0.4,0.6\na,h2,1.2,2.0\nb,h1,0.9,0.1\nb,h2,0.3,0.7\n"
    )
    (bad / "manifest.json").write_text(
        '{"format_version": 1, "n": 2, "m": 2, "c": 2, "model_ids": ["h1", "h2"],'
        ' "sample_ids": ["a", "b"], "score_file": "scores.csv", "loss_file": null}\n'
    )


if __name__ == "__main__":
    main()
