import numpy as np
import pytest

from conftest import random_channel
from rkit.capacity import BaConfig, ScoreSet, ba_capacity
from rkit.errors import ValidationError
from rkit.metrics import (
    RashomonSpec,
    ScoreTensor,
    ambiguity,
    capacities,
    compute_report,
    default_threads,
    discrepancy,
    filter_rashomon_set,
    resolve_models,
    sample_capacity,
    summarize_capacities,
)
from rkit.simplex import clip_scores

TOL = BaConfig().tolerance


def one_hot_tensor(argmaxes: list[list[int]], c: int = 2, confidence: float = 0.8) -> ScoreTensor:
    """Tensor from per-model argmax lists, one list per model."""
    labels = np.array(argmaxes).T  # (n, m)
    off = (1 - confidence) / (c - 1)
    scores = np.full(labels.shape + (c,), off)
    np.put_along_axis(scores, labels[..., None], confidence, axis=2)
    return ScoreTensor(scores, model_losses=np.arange(labels.shape[1]) * 0.01)


def random_tensor(rng, n: int, m: int, c: int) -> ScoreTensor:
    scores = np.stack([random_channel(rng, m, c) for _ in range(n)])
    return ScoreTensor(scores, model_losses=rng.uniform(0.3, 0.4, size=m))


class TestScoreTensor:
    def test_defaults_and_shapes(self):
        t = ScoreTensor(np.full((3, 2, 4), 0.25))
        assert (t.n, t.m, t.c) == (3, 2, 4)
        assert t.model_ids == ("m0", "m1") and t.sample_ids == ("s0", "s1", "s2")

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"scores": np.full((2, 2, 2), 0.6)},
            {"scores": np.full((2, 2), 0.5)},
            {"scores": np.full((2, 2, 2), 0.5), "model_ids": ("a", "a")},
            {"scores": np.full((2, 2, 2), 0.5), "sample_ids": ("x",)},
            {"scores": np.full((2, 2, 2), 0.5), "model_losses": [0.1, np.inf]},
            {"scores": np.full((2, 2, 2), 0.5), "model_losses": [0.1]},
        ],
    )
    def test_validation(self, kwargs):
        with pytest.raises(ValidationError):
            ScoreTensor(**kwargs)

    def test_from_raw_clips(self):
        t = ScoreTensor.from_raw([[[1, 0], [2, 2]]])
        assert t.scores.min() > 0
        np.testing.assert_allclose(t.scores.sum(axis=2), 1.0)

    def test_unknown_model_id(self):
        t = ScoreTensor(np.full((1, 2, 2), 0.5))
        with pytest.raises(ValidationError):
            t.model_index("nope")


class TestRashomonFilter:
    def tensor(self, losses):
        return ScoreTensor(np.full((1, len(losses), 2), 0.5), model_losses=losses)

    def test_relative(self):
        assert filter_rashomon_set(self.tensor([0.30, 0.31, 0.50]), RashomonSpec("relative", 0.02)) == [0, 1]

    def test_absolute(self):
        assert filter_rashomon_set(self.tensor([0.30, 0.31, 0.50]), RashomonSpec("absolute", 0.60)) == [0, 1, 2]

    def test_minimizer_always_qualifies(self):
        assert filter_rashomon_set(self.tensor([0.30]), RashomonSpec("relative", 0.0)) == [0]

    def test_none_epsilon_keeps_all(self):
        t = ScoreTensor(np.full((1, 3, 2), 0.5))
        assert filter_rashomon_set(t, RashomonSpec(epsilon=None)) == [0, 1, 2]

    def test_missing_losses(self):
        with pytest.raises(ValidationError, match="losses"):
            filter_rashomon_set(ScoreTensor(np.full((1, 2, 2), 0.5)), RashomonSpec())

    def test_empty_result_names_tightest_epsilon(self):
        with pytest.raises(ValidationError, match="0.3"):
            filter_rashomon_set(self.tensor([0.30, 0.31]), RashomonSpec("absolute", 0.1))

    @pytest.mark.parametrize("kwargs", [{"mode": "sideways"}, {"epsilon": -0.1}, {"epsilon": np.inf}])
    def test_invalid_spec(self, kwargs):
        with pytest.raises(ValidationError):
            RashomonSpec(**kwargs)

    def test_unknown_base_model(self):
        with pytest.raises(ValidationError):
            resolve_models(self.tensor([0.3, 0.4]), RashomonSpec("relative", 1.0, "zzz"))


class TestCapacities:
    def test_r2_vs_r1(self):
        scores = np.array(
            [
                [[0.45, 0.55], [0.50, 0.50], [0.60, 0.40]],
                [[0.85, 0.15], [0.10, 0.90], [0.10, 0.90]],
            ]
        )
        t = ScoreTensor(scores, model_losses=[0.30, 0.31, 0.32])
        r1 = sample_capacity(t, 0, [0, 1, 2])
        r2 = sample_capacity(t, 1, [0, 1, 2])
        assert r2.capacity_bits > r1.capacity_bits

    def test_identical_models(self):
        t = ScoreTensor(np.tile([0.3, 0.7], (4, 3, 1)))
        caps = capacities(t, [0, 1, 2])
        np.testing.assert_array_equal(caps.m_c, 1.0)

    def test_corner_models(self):
        t = ScoreTensor.from_raw(np.tile([[1.0, 0.0], [0.0, 1.0]], (2, 1, 1)))
        caps = capacities(t, [0, 1])
        np.testing.assert_allclose(caps.capacity_bits, 1.0, atol=10 * TOL)

    def test_matches_per_sample_solver(self):
        rng = np.random.default_rng(42)
        t = random_tensor(rng, 30, 6, 3)
        caps = capacities(t, range(6))
        for i in range(t.n):
            assert caps.capacity_bits[i] == ba_capacity(ScoreSet(t.scores[i])).capacity_bits

    def test_thread_count_does_not_change_results(self):
        rng = np.random.default_rng(42)
        t = random_tensor(rng, 300, 5, 3)
        one = capacities(t, range(5), threads=1).capacity_bits
        four = capacities(t, range(5), threads=4).capacity_bits
        np.testing.assert_array_equal(one, four)

    def test_values_in_range(self):
        rng = np.random.default_rng(42)
        t = random_tensor(rng, 50, 7, 4)
        m_c = capacities(t, range(7)).m_c
        assert np.all((m_c >= 1.0) & (m_c <= 4.0 + 1e-9))

    def test_empty_subset(self):
        with pytest.raises(ValidationError):
            capacities(ScoreTensor(np.full((1, 2, 2), 0.5)), [])

    def test_threads_env(self, monkeypatch):
        monkeypatch.setenv("RKIT_THREADS", "3")
        assert default_threads() == 3
        monkeypatch.setenv("RKIT_THREADS", "many")
        with pytest.raises(ValidationError):
            default_threads()


class TestAmbiguityDiscrepancy:
    def test_base_only(self):
        t = one_hot_tensor([[0, 1, 1], [1, 1, 0]])
        spec = RashomonSpec("relative", 0.0)
        assert ambiguity(t, spec) == 0.0
        assert discrepancy(t, spec) == 0.0

    def test_single_competitor(self):
        t = one_hot_tensor([[0, 1, 1], [1, 1, 0]])
        spec = RashomonSpec("relative", 0.05)
        assert ambiguity(t, spec) == pytest.approx(2 / 3)
        assert discrepancy(t, spec) == pytest.approx(2 / 3)

    def test_two_competitors_flip_different_samples(self):
        t = one_hot_tensor([[0, 1, 1], [1, 1, 1], [0, 0, 1]])
        spec = RashomonSpec("relative", 0.05)
        assert ambiguity(t, spec) == pytest.approx(2 / 3)
        assert discrepancy(t, spec) == pytest.approx(1 / 3)

    def test_all_agree(self):
        t = one_hot_tensor([[0, 1, 1], [0, 1, 1]])
        assert ambiguity(t, None) == 0.0

    def test_explicit_base_model(self):
        t = one_hot_tensor([[0, 1, 1], [1, 1, 0]])
        spec = RashomonSpec("relative", 0.05, base_model="m1")
        assert ambiguity(t, spec) == pytest.approx(2 / 3)

    def test_discrepancy_never_exceeds_ambiguity(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            t = random_tensor(rng, 20, int(rng.integers(1, 6)), int(rng.integers(2, 4)))
            assert discrepancy(t, None) <= ambiguity(t, None)

    def test_thresholding_masks_scores(self):
        scores = np.tile([[0.49, 0.51], [0.51, 0.49]], (10, 1, 1))
        t = ScoreTensor(scores, model_losses=[0.5, 0.5])
        report = compute_report(t, None)
        assert report.ambiguity == 1.0
        assert report.per_sample_m_c.max() <= 1.002


class TestNestedBudgets:
    def test_metrics_grow_with_epsilon(self):
        rng = np.random.default_rng(42)
        t = random_tensor(rng, 40, 8, 3)
        previous = None
        for eps in (0.0, 0.02, 0.05, 0.1):
            report = compute_report(t, RashomonSpec("relative", eps))
            if previous is not None:
                assert report.ambiguity >= previous.ambiguity
                assert report.discrepancy >= previous.discrepancy
                assert np.all(report.per_sample_capacity >= previous.per_sample_capacity - TOL)
            previous = report


class TestSummaries:
    def test_all_zero(self):
        s = summarize_capacities(np.zeros(100))
        assert s["tail_mean_1pct"] == 0.0 and s["tail_mean_5pct"] == 0.0
        assert {v for v, _ in s["cdf_points"]} == {0.0}

    def test_two_outliers(self):
        s = summarize_capacities(np.r_[np.zeros(98), np.ones(2)])
        assert s["tail_mean_1pct"] == 1.0
        assert s["tail_mean_5pct"] == pytest.approx(0.4)

    def test_stderr_formula(self):
        rng = np.random.default_rng(42)
        v = rng.random(200)
        top = np.sort(v)[::-1][:10]
        s = summarize_capacities(v)
        assert s["tail_stderr_5pct"] == pytest.approx(top.std(ddof=1) / np.sqrt(10))
        assert s["tail_stderr_1pct"] == pytest.approx(top[:2].std(ddof=1) / np.sqrt(2))

    def test_tail_ordering_and_cdf(self):
        rng = np.random.default_rng(42)
        v = rng.exponential(size=500)
        s = summarize_capacities(v)
        assert s["tail_mean_1pct"] >= s["tail_mean_5pct"] >= v.mean()
        xs, fs = zip(*s["cdf_points"])
        assert list(xs) == sorted(xs)
        assert fs[-1] == 1.0 and all(np.diff(fs) > 0)

    def test_empty(self):
        with pytest.raises(ValidationError):
            summarize_capacities([])

    def test_report_config_echo(self):
        rng = np.random.default_rng(42)
        t = random_tensor(rng, 10, 4, 3)
        r = compute_report(t, RashomonSpec("absolute", 1.0), BaConfig(tolerance=1e-7))
        assert r.config["tolerance"] == 1e-7
        assert r.config["rashomon_size"] == 4
        assert r.config["not_converged"] == 0
        assert r.rashomon_model_ids == t.model_ids
        assert r.mean_m_c == pytest.approx(np.mean(np.exp2(r.per_sample_capacity)))


def test_clip_then_tensor_roundtrip():
    raw = np.random.default_rng(42).random((3, 2, 3))
    t = ScoreTensor.from_raw(raw)
    np.testing.assert_allclose(t.scores, clip_scores(raw))
