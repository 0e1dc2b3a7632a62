import gzip
import math
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hetsnn.envs.base import EpisodeFinished, argmax_action
from hetsnn.envs.cartpole import CartPoleEnv, CartPolePhysics
from hetsnn.envs.classify import accuracy, classify_episode, classify_logits, neg_cross_entropy, predict
from hetsnn.envs.idx import (
    IdxFormatError,
    ImageDataset,
    csv_to_idx,
    load_dataset,
    load_idx,
    parse_idx,
    write_idx,
)
from hetsnn.envs.memory import MemoryLengthEnv, memory_observations, success_rate
from hetsnn.es import episode_seed, evaluate_population
from hetsnn.neuron import build_network, genome_length, genome_pack, genome_unpack
from hetsnn.tasks import CartPoleTask, policy_factory


class TestMemoryEnv:
    def test_single_step_episode(self):
        env = MemoryLengthEnv(1)
        obs = env.reset(0, context=1)
        np.testing.assert_array_equal(obs, [1.0, 0.0])
        _, r, done = env.step(1)
        assert r == 1.0 and done

    def test_three_step_wrong_final_action(self):
        env = MemoryLengthEnv(3)
        env.reset(0, context=1)
        rewards = [env.step(a)[1] for a in (1, 1, -1)]
        assert rewards == [0.0, 0.0, -1.0]

    def test_observations(self):
        env = MemoryLengthEnv(4)
        obs = [env.reset(3, context=-1)]
        for _ in range(3):
            obs.append(env.step(1)[0])
        obs = np.array(obs)
        np.testing.assert_array_equal(obs[:, 0], [-1, 0, 0, 0])
        np.testing.assert_allclose(obs[:, 1], [0, 0.25, 0.5, 0.75])
        np.testing.assert_array_equal(memory_observations(4, np.array([-1.0]))[:, 0], obs)

    @given(n=st.integers(1, 12), seed=st.integers(0, 10**6))
    def test_one_nonzero_reward(self, n, seed):
        env = MemoryLengthEnv(n)
        env.reset(seed)
        rng = np.random.default_rng(seed)
        rewards, done = [], False
        while not done:
            _, r, done = env.step(int(rng.choice([-1, 1])))
            rewards.append(r)
        assert len(rewards) == n
        assert sum(r != 0 for r in rewards) == 1
        assert sum(rewards) in (-1.0, 1.0)

    def test_random_policy_mean_zero(self):
        env = MemoryLengthEnv(5)
        rng = np.random.default_rng(0)
        total = []
        for e in range(10_000):
            env.reset(e)
            done = False
            while not done:
                _, r, done = env.step(int(rng.choice([-1, 1])))
            total.append(r)
        assert abs(np.mean(total)) < 3 / math.sqrt(10_000)

    def test_cue_is_balanced(self):
        env = MemoryLengthEnv(2)
        cues = [env.reset(s)[0] for s in range(4000)]
        assert set(cues) == {-1.0, 1.0}
        assert abs(np.mean(cues)) < 3 / math.sqrt(4000)

    def test_rejects_bad_action_and_step_after_done(self):
        env = MemoryLengthEnv(1)
        env.reset(0)
        with pytest.raises(ValueError):
            env.step(0)
        env.step(1)
        with pytest.raises(EpisodeFinished):
            env.step(1)

    def test_rejects_bad_length(self):
        with pytest.raises(ValueError):
            MemoryLengthEnv(0)

    def test_success_rate(self):
        assert success_rate(1.0) == 1.0 and success_rate(-1.0) == 0.0 and success_rate(0.6) == 0.8


def reference_cartpole_step(state, action, gravity=9.8):
    """Straight transcription of the classic cart-pole Euler update."""
    x, x_dot, theta, theta_dot = state
    masscart, masspole, length, force_mag, tau = 1.0, 0.1, 0.5, 10.0, 0.02
    total_mass = masspole + masscart
    polemass_length = masspole * length
    force = force_mag if action == 1 else -force_mag
    costheta, sintheta = math.cos(theta), math.sin(theta)
    temp = (force + polemass_length * theta_dot * theta_dot * sintheta) / total_mass
    thetaacc = (gravity * sintheta - costheta * temp) / (
        length * (4.0 / 3.0 - masspole * costheta * costheta / total_mass))
    xacc = temp - polemass_length * thetaacc * costheta / total_mass
    return (x + tau * x_dot, x_dot + tau * xacc, theta + tau * theta_dot, theta_dot + tau * thetaacc)


class TestCartPole:
    def test_matches_reference_implementation(self):
        env = CartPoleEnv(max_steps=200)
        env.reset(0, state=np.zeros(4))
        ref = (0.0, 0.0, 0.0, 0.0)
        for t in range(200):
            a = t % 2
            obs, _, done = env.step(a)
            ref = reference_cartpole_step(ref, a)
            np.testing.assert_allclose(obs, ref, rtol=0, atol=1e-12)
            if done:
                break

    def test_push_right_falls_fast(self):
        env = CartPoleEnv(max_steps=500)
        env.reset(0, state=np.zeros(4))
        total, done = 0.0, False
        while not done:
            _, r, done = env.step(1)
            total += r
        assert env.steps_taken < 100
        # the failing step earns nothing, so the return counts surviving steps
        assert total == env.steps_taken - 1

    def test_reward_counts_steps_and_cap(self):
        env = CartPoleEnv(max_steps=30)
        env.reset(1)
        total, done = 0.0, False
        t = 0
        while not done:
            _, r, done = env.step(t % 2)
            total += r
            t += 1
        assert t == 30 and total == 30.0

    def test_reset_range_and_seeding(self):
        env = CartPoleEnv()
        a = env.reset(123)
        b = env.reset(123)
        np.testing.assert_array_equal(a, b)
        assert np.all(np.abs(a) <= 0.05)
        assert not np.array_equal(a, env.reset(124))

    def test_zero_gravity_zero_force_conserves_velocity(self):
        phys = CartPolePhysics(gravity=0.0, force_mag=0.0)
        env = CartPoleEnv(max_steps=50, physics=phys)
        env.reset(0, state=np.array([0.0, 0.3, 0.0, 0.0]))
        for _ in range(20):
            obs, _, _ = env.step(0)
        np.testing.assert_allclose(obs[[1, 3]], [0.3, 0.0], atol=1e-15)
        np.testing.assert_allclose(obs[0], 20 * 0.02 * 0.3, rtol=1e-12)

    def test_step_after_done(self):
        env = CartPoleEnv(max_steps=1)
        env.reset(0)
        env.step(0)
        with pytest.raises(EpisodeFinished):
            env.step(0)

    def test_rejects_bad_action(self):
        env = CartPoleEnv()
        env.reset(0)
        with pytest.raises(ValueError):
            env.step(2)

    def test_batched_returns_match_scalar_env(self, rng):
        net = build_network((4, 8, 2), seed=2, input_gain=5.0)
        genomes = genome_pack(net) + 0.5 * rng.normal(size=(6, genome_length(net)))
        task = CartPoleTask(net, max_steps=200, episodes=2)
        fast = task.batch_fitness(genomes, np.arange(6), generation=3, base_seed=11)
        slow = evaluate_population(genomes, CartPoleEnv(200), policy_factory(net, CartPoleEnv.action_space),
                                   episodes_per_genome=2, base_seed=11, generation=3)
        np.testing.assert_array_equal(fast, slow)
        assert np.all(slow >= 0)

    def test_episode_seed_stream(self):
        env = CartPoleEnv()
        a = env.reset(episode_seed(0, 1, 2, 0))
        b = env.reset(episode_seed(0, 1, 2, 0))
        np.testing.assert_array_equal(a, b)


def _fixture_images():
    images = np.zeros((2, 28, 28), dtype=np.uint8)
    images[0, 0, 0] = 255
    images[0, 27, 27] = 7
    images[1] = np.arange(784, dtype=np.int64).reshape(28, 28) % 256
    return images, np.array([3, 9], dtype=np.uint8)


class TestIdx:
    def test_hand_built_bytes(self, tmp_path):
        images, labels = _fixture_images()
        raw = struct.pack(">IIII", 2051, 2, 28, 28) + images.tobytes()
        (tmp_path / "img").write_bytes(raw)
        (tmp_path / "lab").write_bytes(struct.pack(">II", 2049, 2) + bytes([3, 9]))
        ds = load_dataset(tmp_path / "img", tmp_path / "lab")
        np.testing.assert_array_equal(ds.images, images)
        np.testing.assert_array_equal(ds.labels, labels)
        assert ds.images[0, 27, 27] == 7 and ds.images[1, 1, 0] == 28

    def test_writer_round_trip_and_bytes(self, tmp_path):
        images, labels = _fixture_images()
        write_idx(tmp_path / "i.idx", images)
        write_idx(tmp_path / "l.idx.gz", labels)
        data = (tmp_path / "i.idx").read_bytes()
        assert data[:16] == bytes.fromhex("00000803 00000002 0000001c 0000001c".replace(" ", ""))
        np.testing.assert_array_equal(load_idx(tmp_path / "i.idx"), images)
        np.testing.assert_array_equal(load_idx(tmp_path / "l.idx.gz"), labels)
        with gzip.open(tmp_path / "l.idx.gz") as fh:
            assert fh.read() == bytes.fromhex("0000080100000002") + bytes([3, 9])

    @given(st.lists(st.integers(0, 9), min_size=0, max_size=40))
    def test_label_round_trip(self, values):
        arr = np.array(values, dtype=np.uint8)
        assert np.array_equal(parse_idx(struct.pack(">II", 2049, len(arr)) + arr.tobytes()), arr)

    def test_unsupported_magic(self):
        with pytest.raises(IdxFormatError, match="unsupported magic 2050"):
            parse_idx(struct.pack(">II", 2050, 0))

    def test_truncated(self):
        with pytest.raises(IdxFormatError, match="truncated"):
            parse_idx(struct.pack(">IIII", 2051, 2, 28, 28) + bytes(100))
        with pytest.raises(IdxFormatError, match="truncated header"):
            parse_idx(b"\x00\x00")

    def test_count_mismatch(self, tmp_path):
        images, _ = _fixture_images()
        write_idx(tmp_path / "i", images)
        write_idx(tmp_path / "l", np.array([1, 2, 3], dtype=np.uint8))
        with pytest.raises(IdxFormatError, match="2 images but 3 labels"):
            load_dataset(tmp_path / "i", tmp_path / "l")

    def test_wrong_kind(self, tmp_path):
        images, labels = _fixture_images()
        write_idx(tmp_path / "i", images)
        write_idx(tmp_path / "l", labels)
        with pytest.raises(IdxFormatError):
            load_dataset(tmp_path / "l", tmp_path / "i")

    def test_csv_conversion(self, tmp_path):
        rng = np.random.default_rng(0)
        labels = np.repeat(np.arange(10), 3)
        pixels = rng.integers(0, 256, (30, 784))
        np.savetxt(tmp_path / "d.csv", np.column_stack([pixels, labels]), fmt="%d", delimiter=",")
        n_train, n_test = csv_to_idx(tmp_path / "d.csv", tmp_path / "out", test_per_class=1)
        assert (n_train, n_test) == (20, 10)
        test = load_dataset(tmp_path / "out" / "t10k-images-idx3-ubyte", tmp_path / "out" / "t10k-labels-idx1-ubyte")
        assert sorted(test.labels.tolist()) == list(range(10))
        row = np.flatnonzero((pixels == test.images[0].reshape(-1)).all(axis=1))
        assert labels[row[0]] == test.labels[0]

    def test_balanced_subset(self):
        images = np.zeros((50, 28, 28), dtype=np.uint8)
        ds = ImageDataset(images, np.repeat(np.arange(10, dtype=np.uint8), 5))
        sub = ds.balanced_subset(2, seed=1)
        assert len(sub) == 20
        assert np.bincount(sub.labels, minlength=10).tolist() == [2] * 10

    def test_flat_scaling(self):
        images, labels = _fixture_images()
        flat = ImageDataset(images, labels).flat()
        assert flat.shape == (2, 784) and flat.max() == 1.0 and flat.min() == 0.0


class TestClassify:
    def test_zero_image_deterministic(self):
        net = build_network((784, 16, 10), seed=0)
        a = classify_episode(net, np.zeros((28, 28)))
        b = classify_episode(net, np.zeros((28, 28)))
        np.testing.assert_array_equal(a, 0.0)
        assert predict(a) == predict(b) == 0

    def test_tie_breaks_to_lowest(self):
        assert argmax_action([0.2, 0.5, 0.5]) == 1
        assert predict(np.zeros(10)) == 0

    def test_steps_and_dimension(self):
        net = build_network((4, 3, 2), seed=0)
        with pytest.raises(ValueError):
            classify_logits(net, np.zeros((1, 5)))
        with pytest.raises(ValueError):
            classify_logits(net, np.zeros((1, 4)), steps=0)

    def test_logits_equal_last_step_potential(self, rng):
        from hetsnn.neuron import forward

        net = build_network((6, 5, 3), seed=1, input_gain=4.0)
        img = rng.uniform(0, 1, 6)
        out, _ = forward(net, np.tile(img, (4, 1)))
        np.testing.assert_allclose(classify_episode(net, img), out[-1], rtol=0, atol=1e-15)

    def test_population_logits(self, rng):
        net = build_network((6, 5, 3), seed=1, input_gain=4.0)
        genomes = genome_pack(net) + 0.2 * rng.normal(size=(4, genome_length(net)))
        x = rng.uniform(0, 1, (7, 6))
        batched = classify_logits(genome_unpack(net, genomes[:, None, :]), x)
        assert batched.shape == (4, 7, 3)
        for j in range(4):
            np.testing.assert_allclose(batched[j], classify_logits(genome_unpack(net, genomes[j]), x), atol=1e-14)

    def test_chance_accuracy_of_random_genome(self, rng):
        # balanced labels independent of the images: accuracy is binomial(n, 0.1)
        n = 2000
        net = build_network((20, 32, 10), seed=3, input_gain=8.0)
        net = genome_unpack(net, genome_pack(net) + 0.5 * rng.normal(size=genome_length(net)))
        x = rng.uniform(0, 1, (n, 20))
        labels = np.tile(np.arange(10), n // 10)
        acc = float(accuracy(classify_logits(net, x), labels))
        assert abs(acc - 0.1) < 3 * math.sqrt(0.1 * 0.9 / n)

    def test_cross_entropy_fitness(self):
        logits = np.log(np.array([[0.7, 0.2, 0.1], [0.25, 0.5, 0.25]]))
        np.testing.assert_allclose(neg_cross_entropy(logits, np.array([0, 1])),
                                   (math.log(0.7) + math.log(0.5)) / 2)
