import json

import numpy as np
import pytest

from toastvit.engine import forward
from toastvit.fixtures import random_model, random_tokens, toy_config
from toastvit.linalg import gelu, matmul
from toastvit.tcs import (
    LayerTcsPolicy,
    TcsPolicy,
    TokenChannelSelector,
    default_policy,
    ffn_forward_tcs,
    keep_count,
    sample_tokens,
    select_channels,
    unified_importance,
)

from oracles import masked_ffn_oracle, scalar_unified_importance


class TestSampleTokens:
    def test_full_rate_returns_all_patches(self):
        sample = sample_tokens(197, 1.0, seed=0, has_cls=True)
        assert np.array_equal(sample, np.arange(1, 197))

    def test_minimum_size_rule(self):
        sample = sample_tokens(197, 0.02, seed=1, has_cls=True)
        assert sample.size == 8

    def test_deterministic(self):
        a = sample_tokens(100, 0.1, seed=42, has_cls=False)
        b = sample_tokens(100, 0.1, seed=42, has_cls=False)
        assert np.array_equal(a, b)

    def test_no_replacement_and_sorted(self):
        sample = sample_tokens(50, 0.2, seed=3, has_cls=True)
        assert np.unique(sample).size == sample.size
        assert np.all(np.diff(sample) > 0)
        assert sample.min() >= 1

    def test_rate_bounds(self):
        with pytest.raises(ValueError):
            sample_tokens(10, 0.0, seed=0, has_cls=False)


class TestUnifiedImportance:
    def test_patch_term_only_collapse(self):
        rng = np.random.default_rng(0)
        acts = rng.normal(size=(10, 4))
        a_cls = np.abs(rng.normal(size=10))
        imp = unified_importance(acts, a_cls, np.arange(1, 10), lambda_cls=3.0, lambda_patch=0.0)
        assert np.allclose(imp, 3.0 * np.abs(acts[0]))

    def test_constant_channel_without_cls(self):
        acts = np.full((8, 3), -2.5)
        imp = unified_importance(acts, None, np.arange(8), lambda_cls=2.0, lambda_patch=1.5)
        assert np.allclose(imp, 1.5 * 2.5)

    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(17)
        acts = rng.normal(size=(20, 6))
        a_cls = rng.dirichlet(np.ones(20))
        sample = np.arange(1, 20)
        got = unified_importance(acts, a_cls, sample, lambda_cls=2.0, lambda_patch=1.0)
        expected = scalar_unified_importance(acts, a_cls, sample, 2.0, 1.0)
        assert np.max(np.abs(got - expected)) <= 1e-6
        assert np.all(got >= 0)

    def test_cls_free_output_ignores_lambda_cls(self):
        rng = np.random.default_rng(1)
        acts = rng.normal(size=(12, 5))
        sample = np.arange(12)
        a = unified_importance(acts, None, sample, lambda_cls=0.0, lambda_patch=1.0)
        b = unified_importance(acts, None, sample, lambda_cls=9.0, lambda_patch=1.0)
        assert np.array_equal(a, b)

    def test_empty_sample_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            unified_importance(np.ones((4, 2)), None, np.array([], dtype=int), 0.0, 1.0)


class TestSelectChannels:
    def test_keep_everything(self):
        assert np.array_equal(select_channels(np.arange(5.0), 1.0), np.arange(5))

    def test_tie_breaks_toward_lower_index(self):
        assert np.array_equal(select_channels(np.array([0.1, 0.9, 0.5, 0.5]), 0.5), [1, 2])

    def test_all_equal_scores(self):
        assert np.array_equal(select_channels(np.zeros(10), 0.3), [0, 1, 2])

    def test_scale_invariance(self):
        rng = np.random.default_rng(2)
        scores = np.abs(rng.normal(size=16))
        assert np.array_equal(select_channels(scores, 0.4), select_channels(scores * 37.0, 0.4))

    def test_keep_count_rule(self):
        assert keep_count(0.5, 10) == 5
        assert keep_count(0.55, 10) == 6
        assert keep_count(0.01, 10) == 1


def _dense_ffn(blk_like, x):
    fc1, fc2, b1, b2 = blk_like
    return matmul(gelu(matmul(x, fc1) + b1), fc2) + b2


def _random_ffn(seed, d=16, d_mlp=32, n=12):
    rng = np.random.default_rng(seed)
    fc1 = (rng.normal(size=(d, d_mlp)) / np.sqrt(d)).astype(np.float32)
    fc2 = (rng.normal(size=(d_mlp, d)) / np.sqrt(d_mlp)).astype(np.float32)
    b1 = (rng.normal(size=d_mlp) * 0.02).astype(np.float32)
    b2 = (rng.normal(size=d) * 0.02).astype(np.float32)
    x = rng.normal(size=(n, d)).astype(np.float32)
    a_cls = rng.dirichlet(np.ones(n)).astype(np.float32)
    return fc1, fc2, b1, b2, x, a_cls


class TestFfnForwardTcs:
    def test_noop_policy_is_bit_identical(self):
        fc1, fc2, b1, b2, x, a_cls = _random_ffn(0)
        policy = LayerTcsPolicy(fc1_keep=1.0, fc2_keep=1.0, sample_rate=1.0)
        out = ffn_forward_tcs(fc1, fc2, b1, b2, x, a_cls, policy, seed=5)
        assert np.array_equal(out, _dense_ffn((fc1, fc2, b1, b2), x))

    def test_zero_expanded_channels_drop_bit_identically(self):
        fc1, fc2, b1, b2, x, a_cls = _random_ffn(1)
        dead = np.arange(0, 32, 2)
        fc1[:, dead] = 0.0
        b1[dead] = 0.0
        policy = LayerTcsPolicy(fc1_keep=1.0, fc2_keep=0.5, sample_rate=1.0)
        out = ffn_forward_tcs(fc1, fc2, b1, b2, x, a_cls, policy, seed=5)
        assert np.array_equal(out, _dense_ffn((fc1, fc2, b1, b2), x))

    @pytest.mark.parametrize("seed", [19, 20, 21])
    def test_matches_masked_dense_oracle(self, seed):
        fc1, fc2, b1, b2, x, a_cls = _random_ffn(seed)
        policy = LayerTcsPolicy(fc1_keep=0.8, fc2_keep=0.5, sample_rate=1.0)
        out = ffn_forward_tcs(fc1, fc2, b1, b2, x, a_cls, policy, seed=seed)
        expected = masked_ffn_oracle(fc1, fc2, b1, b2, x, a_cls, policy, seed=seed)
        assert np.max(np.abs(out - expected)) <= 1e-5

    def test_output_scale_invariance_of_selection(self):
        fc1, fc2, b1, b2, x, a_cls = _random_ffn(3)
        policy = LayerTcsPolicy(fc1_keep=0.6, fc2_keep=0.4, sample_rate=1.0)
        sel_a = _selection_of(fc1, fc2, b1, b2, x, a_cls, policy)
        sel_b = _selection_of(fc1, fc2, b1, b2, x * 5.0, a_cls, policy)
        assert np.array_equal(sel_a[0], sel_b[0])

    def test_full_sampling_matches_all_token_selection(self):
        fc1, fc2, b1, b2, x, a_cls = _random_ffn(4)
        policy = LayerTcsPolicy(fc1_keep=1.0, fc2_keep=0.5, sample_rate=1.0)
        _, _, selection = _detail(fc1, fc2, b1, b2, x, a_cls, policy, seed=0)
        acts = gelu(matmul(x, fc1) + b1)
        sample = sample_tokens(x.shape[0], 1.0, 0, has_cls=True)
        imp = unified_importance(acts, a_cls, sample, policy.lambda_cls, policy.lambda_patch)
        assert np.array_equal(selection.expanded_keep, select_channels(imp, 0.5))


def _detail(fc1, fc2, b1, b2, x, a_cls, policy, seed):
    from toastvit.tcs import _ffn_tcs

    return _ffn_tcs(fc1, fc2, b1, b2, x, a_cls, policy, seed, None, None, layer=0)


def _selection_of(fc1, fc2, b1, b2, x, a_cls, policy):
    _, _, selection = _detail(fc1, fc2, b1, b2, x, a_cls, policy, seed=0)
    return selection.fc1_in_keep, selection.expanded_keep


class TestPolicy:
    def test_json_round_trip(self, tmp_path):
        policy = default_policy(4, has_cls=True, mode="static", seed=11)
        path = tmp_path / "policy.json"
        policy.save(path)
        loaded = TcsPolicy.load(path)
        assert loaded.mode == "static" and loaded.seed == 11
        assert [p.fc1_keep for p in loaded.layers] == [p.fc1_keep for p in policy.layers]
        data = json.loads(path.read_text())
        assert set(data["layers"][0]) == {"fc1_keep", "fc2_keep", "sample_rate", "lambda_cls", "lambda_patch"}

    def test_validation_bounds(self):
        with pytest.raises(ValueError):
            TcsPolicy(layers=[LayerTcsPolicy(fc1_keep=0.0)]).validate()
        with pytest.raises(ValueError):
            TcsPolicy(layers=[LayerTcsPolicy(sample_rate=0.5)]).validate()
        with pytest.raises(ValueError):
            TcsPolicy(layers=[LayerTcsPolicy()], mode="sometimes").validate()

    def test_default_schedule_shape(self):
        policy = default_policy(12)
        fc1 = [p.fc1_keep for p in policy.layers]
        fc2 = [p.fc2_keep for p in policy.layers]
        rates = [p.sample_rate for p in policy.layers]
        assert fc1[0] == 1.0 and abs(fc1[-1] - 0.7) <= 1e-9
        assert all(r == 1.0 for r in fc2[:6])
        assert abs(fc2[6] - 0.5) <= 1e-9 and abs(fc2[-1] - 0.1) <= 1e-9
        assert abs(rates[0] - 0.02) <= 1e-9 and abs(rates[-1] - 0.2) <= 1e-9
        policy.validate()

    def test_bind_forces_lambda_cls_without_cls_token(self):
        cfg = toy_config(num_layers=2, has_cls=False)
        policy = default_policy(2, has_cls=True)
        policy.bind(cfg)
        assert all(p.lambda_cls == 0.0 for p in policy.layers)

    def test_bind_rejects_depth_mismatch(self):
        cfg = toy_config(num_layers=3)
        with pytest.raises(ValueError, match="layers"):
            default_policy(2).bind(cfg)


def test_sub_unity_ratios_strictly_cut_flops():
    from toastvit.flops import count_flops

    cfg = toy_config(num_layers=3)
    policy = TcsPolicy(layers=[LayerTcsPolicy(fc1_keep=0.9, fc2_keep=0.8, sample_rate=1.0)] * 3)
    reduced = count_flops(cfg, policy.keep_counts(cfg))
    dense = count_flops(cfg)
    assert reduced.ffn_total < dense.ffn_total
    assert reduced.total < dense.total


class TestEngineIntegration:
    def test_dynamic_mode_is_deterministic(self):
        cfg = toy_config(num_layers=2)
        model = random_model(cfg, seed=14)
        x = random_tokens(cfg, seed=14)[0]
        policy = default_policy(2, seed=9)
        out1, _ = forward(model, x, tcs=policy)
        out2, _ = forward(model, x, tcs=default_policy(2, seed=9))
        assert np.array_equal(out1, out2)

    def test_static_mode_freezes_first_selection(self):
        cfg = toy_config(num_layers=2)
        model = random_model(cfg, seed=15)
        calib, probe = random_tokens(cfg, 2, seed=15)
        policy = default_policy(2, mode="static", seed=1)
        forward(model, calib, tcs=policy)
        frozen = [(s.fc1_in_keep.copy(), s.expanded_keep.copy()) for s in policy.selections]
        forward(model, probe, tcs=policy)
        for s, (fc1_keep, exp_keep) in zip(policy.selections, frozen):
            assert np.array_equal(s.fc1_in_keep, fc1_keep)
            assert np.array_equal(s.expanded_keep, exp_keep)

    def test_cls_free_model_runs(self):
        cfg = toy_config(num_layers=2, has_cls=False)
        model = random_model(cfg, seed=16)
        x = random_tokens(cfg, seed=16)[0]
        out, _ = forward(model, x, tcs=default_policy(2, has_cls=False))
        assert np.all(np.isfinite(out))


class TestTokenChannelSelector:
    def test_fit_builds_policy(self):
        cfg = toy_config(num_layers=3)
        model = random_model(cfg, seed=17)
        selector = TokenChannelSelector(fc1_keep=0.9, fc2_keep=[1.0, 0.5, 0.25], sample_rate=1.0)
        selector.fit(model)
        assert [p.fc2_keep for p in selector.policy_.layers] == [1.0, 0.5, 0.25]
        assert all(p.fc1_keep == 0.9 for p in selector.policy_.layers)

    def test_static_fit_requires_calibration(self):
        model = random_model(toy_config(), seed=18)
        with pytest.raises(ValueError, match="calibration"):
            TokenChannelSelector(mode="static").fit(model)

    def test_static_fit_populates_selections(self):
        cfg = toy_config(num_layers=2)
        model = random_model(cfg, seed=19)
        calib = random_tokens(cfg, seed=19)[0]
        selector = TokenChannelSelector(fc2_keep=0.5, sample_rate=1.0, mode="static").fit(model, calib)
        assert len(selector.selections_) == 2
        assert all(s is not None for s in selector.selections_)

    def test_sklearn_get_params(self):
        selector = TokenChannelSelector(fc1_keep=0.7, seed=4)
        params = selector.get_params()
        assert params["fc1_keep"] == 0.7 and params["seed"] == 4
