"""Environment semantics, scripted data generation, and the FAND format."""

import numpy as np
import pytest

from fanrl.envs import (POINT_MASS_GOAL, POINT_MASS_TRAP_CENTER,
                        TRAP_ORBIT_RADIUS, Batch, DatasetFormatError,
                        OfflineDataset, behavior_action, generate_dataset,
                        initial_state, make_env, parse_mix, read_dataset,
                        sample_batch, step, write_dataset)


class TestStep:
    def test_reaching_goal_pays_zero_and_terminates(self):
        env = make_env("point_mass_2d")
        s = POINT_MASS_GOAL.copy()
        nxt, r, done = step(env, s, np.array([1.0, 1.0]))
        assert r == 0.0 and done

    def test_zero_action_away_from_goal(self):
        env = make_env("point_mass_2d")
        nxt, r, done = step(env, np.zeros(2), np.zeros(2))
        np.testing.assert_array_equal(nxt, np.zeros(2))
        assert r == -1.0 and not done

    def test_moves_a_tenth_of_the_action(self):
        env = make_env("point_mass_2d")
        nxt, _, _ = step(env, np.zeros(2), np.array([1.0, 0.0]))
        np.testing.assert_allclose(nxt, np.array([0.1, 0.0]))

    def test_clips_actions_and_states(self):
        env = make_env("point_mass_2d")
        nxt, _, _ = step(env, np.array([0.99, -0.99]), np.array([5.0, -5.0]))
        np.testing.assert_allclose(nxt, np.array([1.0, -1.0]))

    def test_twin_goal_both_sides_terminal(self):
        env = make_env("twin_goal_1d")
        for g in (-0.85, 0.85):
            _, r, done = step(env, np.array([g]), np.zeros(1))
            assert r == 0.0 and done

    def test_rejects_wrong_dims(self):
        env = make_env("twin_goal_1d")
        with pytest.raises(ValueError):
            step(env, np.zeros(2), np.zeros(1))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            make_env("cartpole")


class TestTrapBehavior:
    def test_trap_circles_inside_the_start_region(self):
        """Noiseless trap episodes orbit near the start-region center for
        the whole horizon and never reach the goal."""
        env = make_env("point_mass_2d")
        rng = np.random.default_rng(0)
        for _ in range(5):
            s = initial_state(env, rng)
            for _ in range(env.horizon):
                a = behavior_action(env, "trap", s, 0.0, rng)
                s, _, done = step(env, s, a)
                assert not done
                assert np.linalg.norm(s - POINT_MASS_TRAP_CENTER) <= 0.45

    def test_trap_actions_are_large_but_cancel(self):
        """On the orbit the per-step actions stay near unit length while
        their average over an episode nets out to roughly zero."""
        env = make_env("point_mass_2d")
        rng = np.random.default_rng(1)
        s = POINT_MASS_TRAP_CENTER + np.array([TRAP_ORBIT_RADIUS, 0.0])
        acts = []
        for _ in range(env.horizon):
            a = behavior_action(env, "trap", s, 0.0, rng)
            acts.append(a)
            s, _, _ = step(env, s, a)
        acts = np.array(acts)
        assert np.linalg.norm(acts, axis=1).mean() >= 0.8
        assert np.linalg.norm(acts.mean(axis=0)) <= 0.2

    def test_unknown_point_mass_behavior_rejected(self):
        env = make_env("point_mass_2d")
        with pytest.raises(KeyError):
            behavior_action(env, "goal_a", np.zeros(2), 0.0,
                            np.random.default_rng(0))


class TestGeneration:
    def test_deterministic_per_seed(self):
        env = make_env("twin_goal_1d")
        a = generate_dataset(env, {"goal_a": 0.5, "goal_b": 0.5}, 500, seed=4)
        b = generate_dataset(env, {"goal_a": 0.5, "goal_b": 0.5}, 500, seed=4)
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.actions, b.actions)
        c = generate_dataset(env, {"goal_a": 0.5, "goal_b": 0.5}, 500, seed=5)
        assert not np.array_equal(a.states, c.states)

    def test_noiseless_expert_always_succeeds(self):
        env = make_env("point_mass_2d")
        ds = generate_dataset(env, {"expert": 1.0}, 2000, seed=0, noise_std=0.0)
        assert (ds.rewards == 0.0).any()
        # every episode that ends does so on the goal, so every terminal
        # row pays zero
        assert np.all(ds.rewards[ds.terminals] == 0.0)
        assert ds.terminals.sum() > 20

    def test_exact_transition_count(self):
        env = make_env("twin_goal_1d")
        ds = generate_dataset(env, {"random": 1.0}, 777, seed=1)
        assert ds.count == 777

    def test_rewards_are_semi_sparse(self):
        env = make_env("point_mass_2d")
        ds = generate_dataset(env, {"expert": 0.5, "random": 0.5}, 1000, seed=2)
        assert set(np.unique(ds.rewards)) <= {-1.0, 0.0}
        assert ds.r_min == -1.0 and ds.r_max == 0.0

    def test_twin_goal_mix_is_bimodal_at_shared_states(self):
        """Actions near the start split into modes more than 1.0 apart."""
        env = make_env("twin_goal_1d")
        ds = generate_dataset(env, {"goal_a": 0.65, "goal_b": 0.35}, 20_000,
                              seed=3)
        shared = np.abs(ds.states[:, 0]) <= 0.1
        acts = ds.actions[shared, 0]
        assert acts.size >= 1000
        counts, edges = np.histogram(acts, bins=44, range=(-1.1, 1.1))
        centers = 0.5 * (edges[:-1] + edges[1:])
        neg_mode = centers[centers < 0][counts[centers < 0].argmax()]
        pos_mode = centers[centers > 0][counts[centers > 0].argmax()]
        assert pos_mode - neg_mode > 1.0

    def test_rejects_bad_mixes(self):
        env = make_env("twin_goal_1d")
        with pytest.raises(ValueError):
            generate_dataset(env, {"expert": 1.0}, 10, seed=0)  # wrong env
        with pytest.raises(ValueError):
            generate_dataset(env, {"goal_a": -1.0, "goal_b": 2.0}, 10, seed=0)
        with pytest.raises(ValueError):
            generate_dataset(env, {"goal_a": 0.0}, 10, seed=0)

    def test_parse_mix(self):
        assert parse_mix("expert:0.7, trap:0.3") == {"expert": 0.7, "trap": 0.3}
        with pytest.raises(ValueError):
            parse_mix("expert=0.7")


class TestBatchSampling:
    def test_shapes_and_dtype(self):
        env = make_env("point_mass_2d")
        ds = generate_dataset(env, {"expert": 1.0}, 300, seed=0)
        batch = sample_batch(ds, 32, np.random.default_rng(0))
        assert batch.states.shape == (32, 2)
        assert batch.states.dtype == np.float64
        assert set(np.unique(batch.terminals)) <= {0.0, 1.0}

    def test_deterministic_given_generator_state(self):
        env = make_env("twin_goal_1d")
        ds = generate_dataset(env, {"random": 1.0}, 100, seed=0)
        a = sample_batch(ds, 16, np.random.default_rng(8))
        b = sample_batch(ds, 16, np.random.default_rng(8))
        np.testing.assert_array_equal(a.states, b.states)

    def test_rejects_zero_batch(self):
        env = make_env("twin_goal_1d")
        ds = generate_dataset(env, {"random": 1.0}, 100, seed=0)
        with pytest.raises(ValueError):
            sample_batch(ds, 0, np.random.default_rng(0))


class TestSerialization:
    def test_round_trip_bitwise(self, tmp_path):
        env = make_env("point_mass_2d")
        ds = generate_dataset(env, {"expert": 0.7, "trap": 0.3}, 1234, seed=6)
        path = tmp_path / "data.fand"
        write_dataset(path, ds)
        back = read_dataset(path)
        for name in ("states", "actions", "rewards", "next_states"):
            a, b = getattr(ds, name), getattr(back, name)
            assert a.dtype == b.dtype == np.float32
            np.testing.assert_array_equal(a.view(np.uint32), b.view(np.uint32))
        np.testing.assert_array_equal(ds.terminals, back.terminals)
        assert back.r_min == ds.r_min and back.r_max == ds.r_max

    def test_write_read_write_is_stable(self, tmp_path):
        env = make_env("twin_goal_1d")
        ds = generate_dataset(env, {"goal_a": 0.5, "goal_b": 0.5}, 200, seed=1)
        p1, p2 = tmp_path / "a.fand", tmp_path / "b.fand"
        write_dataset(p1, ds)
        write_dataset(p2, read_dataset(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncated_file(self, tmp_path):
        env = make_env("twin_goal_1d")
        ds = generate_dataset(env, {"random": 1.0}, 50, seed=0)
        path = tmp_path / "data.fand"
        write_dataset(path, ds)
        blob = path.read_bytes()
        path.write_bytes(blob[:-7])
        with pytest.raises(DatasetFormatError):
            read_dataset(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "data.fand"
        path.write_bytes(b"WAT?" + b"\x00" * 64)
        with pytest.raises(DatasetFormatError):
            read_dataset(path)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            OfflineDataset(
                np.zeros((0, 1), dtype=np.float32),
                np.zeros((0, 1), dtype=np.float32),
                np.zeros(0, dtype=np.float32),
                np.zeros((0, 1), dtype=np.float32),
                np.zeros(0, dtype=bool),
                -1.0, 0.0,
            )


class TestStartStates:
    def test_point_mass_starts_in_lower_left_box(self):
        env = make_env("point_mass_2d")
        rng = np.random.default_rng(0)
        for _ in range(100):
            s = initial_state(env, rng)
            assert (-0.9 <= s).all() and (s <= -0.5).all()

    def test_twin_goal_starts_near_zero(self):
        env = make_env("twin_goal_1d")
        rng = np.random.default_rng(0)
        for _ in range(100):
            assert abs(initial_state(env, rng)[0]) <= 0.05
