"""FLOP accounting: layer arithmetic, affinity in noise samples, and the
inference-cost comparison against a multi-step sampler."""

from dataclasses import replace

import pytest

from fanrl.config import FanConfig
from fanrl.flops import (dense_backward_flops, dense_forward_flops,
                         flop_estimate, net_backward_flops, net_forward_flops,
                         quantile_critic_train_flops)


class TestLayerCounts:
    def test_four_to_eight_layer(self):
        """A 4 -> 8 layer is 32 multiply-adds, so 128 FLOPs forward."""
        assert dense_forward_flops(4, 8) == 128
        assert dense_backward_flops(4, 8) == 256

    def test_net_totals_sum_layers(self):
        sizes = (4, 8, 1)
        assert net_forward_flops(sizes) == 128 + 32
        assert net_backward_flops(sizes) == 2 * (128 + 32)


class TestEstimate:
    def _cfg(self, **kw):
        return replace(FanConfig(), **kw)

    def test_training_is_affine_in_noise_samples_with_positive_slope(self):
        costs = [flop_estimate(self._cfg(noise_samples=k), 4, 2).train_total
                 for k in (1, 2, 3, 4)]
        diffs = [b - a for a, b in zip(costs, costs[1:])]
        assert diffs[0] > 0
        assert all(d == diffs[0] for d in diffs)

    def test_inference_is_independent_of_noise_samples(self):
        one = flop_estimate(self._cfg(noise_samples=1), 4, 2)
        many = flop_estimate(self._cfg(noise_samples=16), 4, 2)
        assert one.inference == many.inference

    def test_inference_is_one_policy_forward(self):
        cfg = self._cfg(hidden=(8,))
        report = flop_estimate(cfg, 4, 2)
        # policy stack is 6 -> 8 -> 2
        assert report.inference == net_forward_flops((6, 8, 2))

    def test_one_step_policy_is_cheap_against_multi_step_sampler(self):
        report = flop_estimate(self._cfg(), 2, 2)
        assert report.inference * 10 <= report.flow_sampler_inference

    def test_flow_sampler_scales_with_steps(self):
        r5 = flop_estimate(self._cfg(flow_steps=5), 2, 2)
        r10 = flop_estimate(self._cfg(flow_steps=10), 2, 2)
        assert r10.flow_sampler_inference == 2 * r5.flow_sampler_inference

    def test_totals_add_up(self):
        report = flop_estimate(self._cfg(), 3, 1)
        assert report.train_total == report.train_critic + report.train_actor
        assert set(report.as_dict()) == {
            "train_critic", "train_actor", "train_total", "inference",
            "flow_sampler_inference", "noise_samples"}

    def test_standard_critic_variant_has_no_expectile_cost(self):
        fan = flop_estimate(self._cfg(), 3, 1)
        faql = flop_estimate(self._cfg(variant="faql"), 3, 1)
        assert faql.train_critic < fan.train_critic

    def test_batch_size_scales_training_linearly(self):
        small = flop_estimate(self._cfg(batch_size=32), 3, 1)
        large = flop_estimate(self._cfg(batch_size=64), 3, 1)
        assert large.train_total == 2 * small.train_total
        assert large.inference == small.inference


class TestQuantileComparison:
    def test_single_sample_critic_beats_quantile_sampling(self):
        """One shared noise sample per row is enough for the
        noise-conditioned critic, while a quantile critic runs its
        ensemble at every draw on both regression sides; at a typical
        eight draws the latter costs more per update."""
        cfg = FanConfig()
        ours = flop_estimate(cfg, 4, 2).train_critic
        assert cfg.noise_samples == 1
        assert ours < quantile_critic_train_flops(cfg, 4, 2, 8)

    def test_quantile_cost_is_linear_in_draws(self):
        cfg = FanConfig()
        costs = [quantile_critic_train_flops(cfg, 4, 2, n) for n in (1, 2, 3)]
        assert costs[2] - costs[1] == costs[1] - costs[0] > 0

    def test_positive_and_batch_scaled(self):
        cfg = FanConfig()
        assert quantile_critic_train_flops(cfg, 4, 2, 4) > 0
        double = quantile_critic_train_flops(replace(cfg, batch_size=128), 4, 2, 4)
        assert double == 2 * quantile_critic_train_flops(cfg, 4, 2, 4)
