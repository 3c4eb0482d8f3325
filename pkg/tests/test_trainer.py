"""End-to-end training: smoke runs, determinism, online fine-tuning,
checkpoints, and the ablation driver."""

import csv
from dataclasses import replace

import numpy as np
import pytest

from helpers import const_policy
from fanrl.config import FanConfig
from fanrl.envs import generate_dataset, make_env
from fanrl.trainer import (ABLATION_SUITES, MetricsRow, evaluate, fan_train,
                           finetune_online, init_fan_nets, load_nets,
                           run_ablation, save_nets, train_behavior_clone,
                           write_metrics_csv)


def _tiny_cfg(**kw):
    base = dict(env="twin_goal_1d", total_steps=100, eval_every=50,
                eval_episodes=2, batch_size=16, hidden=(16, 16), lr=1e-3,
                gamma=0.99)
    base.update(kw)
    return replace(FanConfig(), **base)


@pytest.fixture(scope="module")
def twin_ds():
    env = make_env("twin_goal_1d")
    return generate_dataset(env, {"goal_a": 0.6, "goal_b": 0.4}, 600,
                            noise_std=0.1, seed=7)


class TestFanTrain:
    def test_smoke_run_learns_the_flow(self, twin_ds):
        """A short run keeps every loss finite and reduces the flow
        matching loss from its starting level."""
        nets, metrics = fan_train(twin_ds, _tiny_cfg())
        for key, trace in metrics.loss_history.items():
            assert np.isfinite(trace).all(), key
        l_f = metrics.loss_history["l_f"]
        assert l_f[-10:].mean() < l_f[:10].mean()

    def test_rows_land_on_eval_interval_and_final_step(self, twin_ds):
        _, metrics = fan_train(twin_ds, _tiny_cfg(total_steps=70, eval_every=30))
        assert [row.step for row in metrics.rows] == [30, 60, 70]

    def test_same_seed_reproduces_bitwise(self, twin_ds):
        cfg = _tiny_cfg(total_steps=40, eval_every=0, eval_episodes=0)
        nets1, m1 = fan_train(twin_ds, cfg)
        nets2, m2 = fan_train(twin_ds, cfg)
        np.testing.assert_array_equal(m1.loss_history["l_q"],
                                      m2.loss_history["l_q"])
        for w1, w2 in zip(nets1.pi.net.weights, nets2.pi.net.weights):
            np.testing.assert_array_equal(w1, w2)

    def test_seed_changes_the_run(self, twin_ds):
        cfg = _tiny_cfg(total_steps=40, eval_every=0, eval_episodes=0)
        nets1, _ = fan_train(twin_ds, cfg, seed=0)
        nets2, _ = fan_train(twin_ds, cfg, seed=1)
        assert not np.array_equal(nets1.pi.net.weights[0],
                                  nets2.pi.net.weights[0])

    def test_rejects_mismatched_dataset(self, twin_ds):
        with pytest.raises(ValueError, match="dims"):
            fan_train(twin_ds, _tiny_cfg(env="point_mass_2d"))

    @pytest.mark.parametrize("variant", ["faql", "nbrac", "nfql"])
    def test_variants_train(self, twin_ds, variant):
        cfg = _tiny_cfg(total_steps=30, eval_every=0, eval_episodes=0,
                        variant=variant)
        _, metrics = fan_train(twin_ds, cfg)
        for trace in metrics.loss_history.values():
            assert np.isfinite(trace).all()


class TestEvaluate:
    def test_constant_full_throttle_policy_reaches_the_right_goal(self):
        env = make_env("twin_goal_1d")
        pi = const_policy(1, 1, 5.0)  # clamps to +1, walks to the 0.9 goal
        ret, succ = evaluate(pi, env, 20, np.random.default_rng(0))
        assert succ == 1.0
        assert -9.0 <= ret <= -6.0  # about eight steps at -1 per step

    def test_rejects_zero_episodes(self):
        env = make_env("twin_goal_1d")
        with pytest.raises(ValueError):
            evaluate(const_policy(1, 1, 0.0), env, 0, np.random.default_rng(0))


class TestMetricsCsv:
    def test_round_trips_through_csv(self, tmp_path):
        rows = [MetricsRow(10, 1.0, 2.0, -3.0, 4.0, 5.0, -7.5, 0.5, "n"),
                MetricsRow(20, 0.5, 1.0, -1.5, 2.0, 2.5, -5.0, 1.0, "m")]
        path = tmp_path / "metrics.csv"
        write_metrics_csv(path, rows)
        with open(path) as f:
            got = list(csv.reader(f))
        assert got[0] == list(MetricsRow.FIELDS)
        assert len(got) == 3
        assert got[1][0] == "10" and got[2][7] == "1.0"


class TestBehaviorClone:
    def test_trains_flow_and_policy_only(self, twin_ds):
        nets, metrics = train_behavior_clone(twin_ds, _tiny_cfg())
        l_f = metrics.loss_history["l_f"]
        assert l_f[-10:].mean() < l_f[:10].mean()
        assert metrics.rows[-1].l_q == 0.0 and metrics.rows[-1].l_z == 0.0


class TestFinetuneOnline:
    def test_buffer_grows_by_env_steps_per_update(self, twin_ds):
        cfg = _tiny_cfg(total_steps=20, eval_every=0, eval_episodes=0,
                        online_steps=15, online_env_steps=3)
        env = make_env(cfg.env)
        nets, _ = fan_train(twin_ds, cfg)
        _, metrics = finetune_online(nets, twin_ds, env, cfg)
        note = metrics.rows[-1].wall_notes
        buffer_count = int(note.rsplit("buffer=", 1)[1])
        assert buffer_count == twin_ds.count + 15 * 3

    def test_is_deterministic(self, twin_ds):
        cfg = _tiny_cfg(total_steps=10, eval_every=0, eval_episodes=0,
                        online_steps=8)
        env = make_env(cfg.env)
        nets, _ = fan_train(twin_ds, cfg)
        _, m1 = finetune_online(nets, twin_ds, env, cfg)
        _, m2 = finetune_online(nets, twin_ds, env, cfg)
        np.testing.assert_array_equal(m1.loss_history["l_q"],
                                      m2.loss_history["l_q"])

    def test_uses_online_alphas(self, twin_ds):
        """With the anchor weight zeroed online, the logged anchor loss is
        still reported but no longer pulled down; the run must stay finite
        either way."""
        cfg = _tiny_cfg(total_steps=10, eval_every=0, eval_episodes=0,
                        online_steps=10, online_alpha1=0.0, online_alpha2=0.0)
        env = make_env(cfg.env)
        nets, _ = fan_train(twin_ds, cfg)
        _, metrics = finetune_online(nets, twin_ds, env, cfg)
        assert np.isfinite(metrics.loss_history["l_b"]).all()


class TestCheckpoints:
    def test_round_trip_preserves_policy_actions(self, twin_ds, tmp_path):
        cfg = _tiny_cfg(total_steps=15, eval_every=0, eval_episodes=0)
        nets, _ = fan_train(twin_ds, cfg)
        save_nets(tmp_path / "ckpt", nets, cfg)
        loaded, meta = load_nets(tmp_path / "ckpt")
        for w1, w2 in zip(nets.pi.net.weights, loaded.pi.net.weights):
            np.testing.assert_array_equal(w1, w2)
        for m1, m2 in zip(nets.q_target.members, loaded.q_target.members):
            np.testing.assert_array_equal(m1.weights[0], m2.weights[0])
        assert meta["env"] == "twin_goal_1d"
        assert loaded.q.noise_conditioned == nets.q.noise_conditioned

    def test_missing_checkpoint_raises(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_nets(tmp_path / "nope")


class TestAblation:
    def test_unknown_suite_rejected(self, twin_ds):
        with pytest.raises(ValueError, match="suite"):
            run_ablation("warmup", FanConfig(), [0], twin_ds)

    def test_noise_sample_sweep_shapes(self, twin_ds):
        cfg = _tiny_cfg(total_steps=30, eval_every=15, eval_episodes=2)
        table = run_ablation("noise_samples", cfg, [0], twin_ds)
        values = [cell["value"] for cell in table]
        assert values == list(ABLATION_SUITES["noise_samples"][1])
        for cell in table:
            assert 0.0 <= cell["final_mean"] <= 1.0
            assert len(cell["per_seed_final"]) == 1
            assert cell["best_of_last3_mean"] >= cell["per_seed_final"][0] or \
                cell["best_of_last3_mean"] >= 0.0


class TestInitNets:
    def test_standard_critic_drops_the_noise_input(self):
        cfg = _tiny_cfg(variant="faql")
        nets = init_fan_nets(cfg, 1, 1, -1.0, 1.0)
        assert nets.q.members[0].in_dim == 2
        nets_fan = init_fan_nets(_tiny_cfg(), 1, 1, -1.0, 1.0)
        assert nets_fan.q.members[0].in_dim == 3

    def test_policy_carries_env_bounds(self):
        nets = init_fan_nets(_tiny_cfg(), 1, 1, -2.0, 2.0)
        assert nets.pi.action_low == -2.0 and nets.pi.action_high == 2.0
