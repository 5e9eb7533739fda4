import numpy as np
import pytest

from toastvit.analysis import (
    RedundancyAnalyzer,
    activation_sparsity,
    channel_r2,
    effective_rank_ratio,
    redundancy_report,
)
from toastvit.engine import forward
from toastvit.fixtures import random_model, random_tokens, toy_config


class TestSparsity:
    def test_all_zero(self):
        assert activation_sparsity(np.zeros((4, 4))) == 1.0

    def test_all_ones(self):
        assert activation_sparsity(np.ones((4, 4)), eps=1e-6) == 0.0

    def test_half_and_half(self):
        acts = np.concatenate([np.zeros((2, 4)), np.ones((2, 4))])
        assert activation_sparsity(acts) == 0.5

    def test_monotone_in_eps(self):
        rng = np.random.default_rng(0)
        acts = rng.normal(size=(32, 16))
        values = [activation_sparsity(acts, eps) for eps in (1e-4, 1e-2, 1e-1, 1.0)]
        assert values == sorted(values)

    def test_eps_must_be_positive(self):
        with pytest.raises(ValueError):
            activation_sparsity(np.ones((2, 2)), eps=0.0)


class TestChannelR2:
    def test_exact_copy_of_predictor(self):
        rng = np.random.default_rng(1)
        acts = rng.normal(size=(64, 5))
        acts[:, 3] = acts[:, 1]
        assert channel_r2(acts, target=3, predictors=[1, 2]) >= 1.0 - 1e-6

    def test_exact_linear_combination(self):
        rng = np.random.default_rng(2)
        acts = rng.normal(size=(128, 6))
        acts[:, 5] = 2.0 * acts[:, 0] - 3.0 * acts[:, 1] + 0.5
        assert channel_r2(acts, target=5, predictors=[0, 1]) >= 0.999

    def test_independent_channels_score_near_zero(self):
        rng = np.random.default_rng(13)
        acts = rng.standard_normal((4096, 5))
        assert channel_r2(acts, target=4, predictors=[0, 1, 2, 3]) < 0.02

    def test_affine_rescaling_of_target_is_absorbed(self):
        rng = np.random.default_rng(3)
        acts = rng.normal(size=(100, 4))
        base = channel_r2(acts, target=0, predictors=[1, 2])
        acts[:, 0] = 7.0 * acts[:, 0] - 11.0
        rescaled = channel_r2(acts, target=0, predictors=[1, 2])
        assert abs(base - rescaled) <= 1e-5

    def test_degenerate_target_rejected(self):
        acts = np.ones((32, 3))
        acts[:, 1:] = np.random.default_rng(4).normal(size=(32, 2))
        with pytest.raises(ValueError, match="degenerate target"):
            channel_r2(acts, target=0, predictors=[1, 2])

    def test_target_cannot_predict_itself(self):
        acts = np.random.default_rng(5).normal(size=(16, 3))
        with pytest.raises(ValueError):
            channel_r2(acts, target=1, predictors=[0, 1])


class TestEffectiveRankRatio:
    def test_uniform_spectrum_is_one(self):
        assert abs(effective_rank_ratio(np.eye(6) * 2.5) - 1.0) <= 1e-6

    def test_rank_one_is_inverse_channel_count(self):
        rng = np.random.default_rng(6)
        acts = np.outer(rng.normal(size=12), rng.normal(size=8))
        assert abs(effective_rank_ratio(acts) - 1.0 / 8) <= 1e-6

    def test_matches_direct_entropy_oracle(self):
        rng = np.random.default_rng(7)
        spectrum = np.array([4.0, 2.0, 1.0, 1.0])
        q, _ = np.linalg.qr(rng.normal(size=(10, 4)))
        p, _ = np.linalg.qr(rng.normal(size=(4, 4)))
        acts = q @ np.diag(spectrum) @ p.T
        norm = spectrum / spectrum.sum()
        expected = np.exp(-(norm * np.log(norm)).sum()) / 4
        assert abs(effective_rank_ratio(acts) - expected) <= 1e-6

    @pytest.mark.parametrize("scale", [0.25, 3.0, 1e4])
    def test_scale_invariant(self, scale):
        rng = np.random.default_rng(8)
        acts = rng.normal(size=(16, 6))
        assert abs(effective_rank_ratio(acts * scale) - effective_rank_ratio(acts)) <= 1e-6

    def test_bounds(self):
        rng = np.random.default_rng(9)
        for _ in range(5):
            acts = rng.normal(size=(rng.integers(3, 20), rng.integers(2, 10)))
            ratio = effective_rank_ratio(acts)
            assert 1.0 / acts.shape[1] - 1e-6 <= ratio <= 1.0 + 1e-6

    def test_zero_matrix_rejected(self):
        with pytest.raises(ValueError, match="zero matrix"):
            effective_rank_ratio(np.zeros((4, 4)))


class TestRedundancyReport:
    def test_constructed_rank_collapse(self):
        # Zero FC1 with a nonzero bias makes every token's expanded
        # activation identical: a rank-1 activation matrix.
        cfg = toy_config(num_layers=2, mlp_dim=48)
        model = random_model(cfg, seed=21)
        blk = model.blocks[1]
        blk.fc1[:] = 0.0
        blk.fc1_bias[:] = np.linspace(0.5, 2.0, cfg.mlp_dim, dtype=np.float32)
        report = redundancy_report(model, random_tokens(cfg, 1, seed=21))
        assert abs(report.layers[1].effective_rank_ratio - 1.0 / cfg.mlp_dim) <= 1e-4

    def test_dead_layer_sparsity(self):
        cfg = toy_config(num_layers=2)
        model = random_model(cfg, seed=22)
        model.blocks[0].fc1[:] = 0.0
        model.blocks[0].fc1_bias[:] = 0.0
        report = redundancy_report(model, random_tokens(cfg, 1, seed=22))
        assert report.layers[0].sparsity == 1.0
        assert report.layers[0].sampled_channels == 0
        assert report.layers[0].mean_r2 == 0.0

    def test_matches_trace_replay_oracle(self):
        cfg = toy_config(num_layers=2, num_tokens=48, mlp_dim=40)
        model = random_model(cfg, seed=21)
        batches = random_tokens(cfg, 2, seed=23)
        report = redundancy_report(model, batches, seed=5)

        acts_per_layer = [[] for _ in range(cfg.num_layers)]
        for batch in batches:
            _, trace = forward(model, batch)
            for layer, acts in enumerate(trace.fc1_acts):
                acts_per_layer[layer].append(acts)
        for layer in range(cfg.num_layers):
            acts = np.concatenate(acts_per_layer[layer]).astype(np.float64)
            assert report.layers[layer].sparsity == np.mean(np.abs(acts) < 1e-3)
            sigma = np.linalg.svd(acts, compute_uv=False)
            norm = sigma / sigma.sum()
            pos = norm[norm > 0]
            expected_rank = np.exp(-(pos * np.log(pos)).sum()) / acts.shape[1]
            assert abs(report.layers[layer].effective_rank_ratio - expected_rank) <= 1e-9

            rng = np.random.default_rng([5, layer])
            variances = np.var(acts, axis=0)
            candidates = np.flatnonzero(variances > 1e-12)
            k = min(32, acts.shape[1] - 1, acts.shape[0] - 2)
            targets = np.sort(rng.choice(candidates, size=min(32, candidates.size), replace=False))
            scores = []
            for target in targets:
                others = np.arange(acts.shape[1])
                others = others[others != target]
                predictors = rng.choice(others, size=k, replace=False)
                design = np.concatenate([np.ones((acts.shape[0], 1)), acts[:, predictors]], axis=1)
                beta, *_ = np.linalg.lstsq(design, acts[:, target], rcond=None)
                resid = acts[:, target] - design @ beta
                centered = acts[:, target] - acts[:, target].mean()
                scores.append(1.0 - (resid @ resid) / (centered @ centered))
            assert abs(report.layers[layer].mean_r2 - np.mean(scores)) <= 1e-9
            assert report.layers[layer].sampled_channels == targets.size

    def test_deterministic_for_fixed_seed(self):
        cfg = toy_config()
        model = random_model(cfg, seed=24)
        batches = random_tokens(cfg, 1, seed=24)
        a = redundancy_report(model, batches, seed=3)
        b = redundancy_report(model, batches, seed=3)
        assert a == b

    def test_requires_calibration(self):
        with pytest.raises(ValueError, match="calibration"):
            redundancy_report(random_model(toy_config(), seed=0), [])

    def test_csv_columns(self):
        cfg = toy_config(num_layers=2)
        model = random_model(cfg, seed=25)
        report = redundancy_report(model, random_tokens(cfg, 1, seed=25))
        csv = report.to_csv()
        lines = csv.strip().split("\n")
        assert lines[0] == "layer,sparsity,mean_r2,eff_rank"
        assert len(lines) == 3


class TestRedundancyAnalyzer:
    def test_fit_stores_report(self):
        cfg = toy_config(num_layers=2)
        model = random_model(cfg, seed=26)
        analyzer = RedundancyAnalyzer(seed=1).fit(model, random_tokens(cfg, 1, seed=26))
        assert len(analyzer.report_.layers) == 2

    def test_get_params(self):
        params = RedundancyAnalyzer(eps=1e-2, seed=9).get_params()
        assert params["eps"] == 1e-2 and params["seed"] == 9
