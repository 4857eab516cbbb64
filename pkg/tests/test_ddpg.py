"""Tests for the DDPG learner."""

import math
import unittest

import numpy as np

from src.ddpg import (DdpgAgent, Hyperparams, OuNoiseProcess, ReplayBuffer, Transition, bellman_target)
from src.errors import BufferNotReadyError, ConfigurationError, DimensionError, UsageError
from src.nn_core import mlp_init, parameter_hash, polyak_update


def _transition(value, terminal=False, dim=1):
    state = np.full(dim, float(value))
    return Transition(state, np.zeros(1), state + 1.0, float(value), terminal)


def _parameter_distance(a, b):
    return math.sqrt(sum(float(np.sum((x - y) ** 2)) for x, y in zip(a.weights + a.biases, b.weights + b.biases)))


def _tiny_agent():
    """One hidden unit everywhere so losses can be evaluated by hand.

    actor(s) = tanh(0.5 * relu(s)), Q(s, a) = 0.5 * relu(s + 2a) + 0.1
    """
    hp = Hyperparams(num_hidden_layers=1, hidden_size=1, batch_size=1, buffer_capacity=10, gamma=0.99, tau=0.01)
    agent = DdpgAgent(1, 1, hp, seed=0)
    agent.actor.weights = [np.array([[1.0]]), np.array([[0.5]])]
    agent.actor.biases = [np.array([0.0]), np.array([0.0])]
    agent.critic.weights = [np.array([[1.0], [2.0]]), np.array([[0.5]])]
    agent.critic.biases = [np.array([0.0]), np.array([0.1])]
    agent.actor_target = agent.actor.copy()
    agent.critic_target = agent.critic.copy()
    return agent


def _q(s, a):
    return 0.5 * max(s + 2.0 * a, 0.0) + 0.1


def _mu(s):
    return math.tanh(0.5 * max(s, 0.0))


class TestHyperparams(unittest.TestCase):
    """Test cases for hyperparameter defaults and validation."""

    def test_published_defaults(self):
        """Test the defaults reproduce the published DDPG configuration."""
        hp = Hyperparams()
        self.assertEqual(hp.hidden_layers(), [256, 256, 256])
        self.assertEqual((hp.actor_lr, hp.critic_lr), (1e-4, 1e-3))
        self.assertEqual((hp.buffer_capacity, hp.batch_size), (50_000, 128))
        self.assertEqual((hp.gamma, hp.tau), (0.99, 0.01))
        self.assertEqual((hp.ou_theta, hp.ou_sigma, hp.ou_dt), (0.15, 0.2, 1.0))

    def test_gamma_and_tau_ranges(self):
        """Test gamma and tau outside (0, 1) are rejected."""
        for kwargs in ({"gamma": 1.5}, {"gamma": 0.0}, {"tau": 0.0}, {"tau": 1.0}):
            with self.assertRaises(ConfigurationError):
                Hyperparams(**kwargs).validate()

    def test_batch_larger_than_buffer(self):
        """Test a batch larger than the buffer is rejected."""
        with self.assertRaises(ConfigurationError):
            Hyperparams(batch_size=64, buffer_capacity=32).validate()


class TestReplayBuffer(unittest.TestCase):
    """Test cases for the replay buffer."""

    def setUp(self):
        """Set up test fixtures."""
        self.buffer = ReplayBuffer(3, seed=0)

    def test_fifo_eviction(self):
        """Test the oldest transitions are evicted at capacity."""
        for value in range(5):
            self.buffer.store(_transition(value))
        self.assertEqual(len(self.buffer), 3)
        self.assertEqual(self.buffer.total_inserted, 5)
        rewards = sorted(t.reward for t in self.buffer.sample(3))
        self.assertEqual(rewards, [2.0, 3.0, 4.0])

    def test_sample_not_ready(self):
        """Test sampling more than stored raises BufferNotReadyError."""
        self.buffer.store(_transition(0))
        with self.assertRaises(BufferNotReadyError) as ctx:
            self.buffer.sample(2)
        self.assertEqual((ctx.exception.available, ctx.exception.requested), (1, 2))
        self.assertFalse(self.buffer.is_ready(2))

    def test_sample_distinct(self):
        """Test a batch never repeats a transition."""
        for value in range(3):
            self.buffer.store(_transition(value))
        for _ in range(20):
            rewards = [t.reward for t in self.buffer.sample(3)]
            self.assertEqual(len(set(rewards)), 3)

    def test_sampling_is_uniform(self):
        """Test 10^4 single draws from a 10-element buffer hit every transition about equally often."""
        buffer = ReplayBuffer(10, seed=1)
        for value in range(10):
            buffer.store(_transition(value))
        counts = np.zeros(10)
        for _ in range(10_000):
            counts[int(buffer.sample(1)[0].reward)] += 1
        np.testing.assert_allclose(counts / 10_000, 0.1, atol=0.015)

    def test_ring_overwrites_oldest_in_order(self):
        """Test wrapping twice around the ring keeps exactly the newest capacity transitions."""
        for value in range(8):
            self.buffer.store(_transition(value))
        rewards = sorted(t.reward for t in self.buffer.sample(3))
        self.assertEqual(rewards, [5.0, 6.0, 7.0])
        self.assertEqual(len(self.buffer), 3)

    def test_invalid_sizes(self):
        """Test non-positive capacity and sample sizes are rejected."""
        with self.assertRaises(ConfigurationError):
            ReplayBuffer(0)
        with self.assertRaises(UsageError):
            self.buffer.sample(0)

    def test_transition_dimension_check(self):
        """Test state and next state of different lengths are rejected."""
        with self.assertRaises(DimensionError):
            Transition(np.zeros(3), np.zeros(1), np.zeros(4), 0.0, False)

    def test_action_length_checked_on_store(self):
        """Test an action of the wrong length is rejected before it reaches a batch."""
        buffer = ReplayBuffer(5, state_dim=1, action_dim=2)
        with self.assertRaises(DimensionError):
            buffer.store(_transition(0))
        self.assertEqual(len(buffer), 0)

    def test_dimensions_fixed_by_first_transition(self):
        """Test later transitions must match the lengths of the first one stored."""
        self.buffer.store(_transition(0))
        self.assertEqual((self.buffer.state_dim, self.buffer.action_dim), (1, 1))
        with self.assertRaises(DimensionError):
            self.buffer.store(_transition(1, dim=2))
        with self.assertRaises(DimensionError):
            self.buffer.store(Transition(np.zeros(1), np.zeros(3), np.zeros(1), 0.0, False))


class TestOuNoise(unittest.TestCase):
    """Test cases for the Ornstein-Uhlenbeck process."""

    def test_zero_sigma_is_deterministic_decay(self):
        """Test sigma = 0 gives pure mean reversion x <- x + theta (mu - x)."""
        noise = OuNoiseProcess(2, theta=0.15, sigma=0.0)
        noise.state = np.array([1.0, -2.0])
        np.testing.assert_allclose(noise.sample(), [0.85, -1.7], rtol=1e-12)
        np.testing.assert_allclose(noise.sample(), [0.7225, -1.445], rtol=1e-12)

    def test_reset_returns_to_mean(self):
        """Test reset puts the state back on mu."""
        noise = OuNoiseProcess(3, mu=[0.1, 0.2, 0.3], seed=4)
        noise.sample()
        noise.reset()
        np.testing.assert_array_equal(noise.state, [0.1, 0.2, 0.3])

    def test_seeded_reproducibility(self):
        """Test equal seeds give equal sequences."""
        a = OuNoiseProcess(3, seed=11)
        b = OuNoiseProcess(3, seed=11)
        for _ in range(10):
            np.testing.assert_array_equal(a.sample(), b.sample())

    def test_stationary_statistics(self):
        """Test the long-run mean is mu and the variance matches the AR(1) stationary value."""
        noise = OuNoiseProcess(1, theta=0.15, sigma=0.2, seed=3)
        samples = np.array([noise.sample()[0] for _ in range(40000)])[1000:]
        stationary_var = 0.2 ** 2 / (1.0 - 0.85 ** 2)
        self.assertAlmostEqual(samples.mean(), 0.0, delta=0.05)
        self.assertAlmostEqual(samples.var(), stationary_var, delta=0.2 * stationary_var)

    def test_mean_shape_checked(self):
        """Test a mean of the wrong length is rejected."""
        with self.assertRaises(DimensionError):
            OuNoiseProcess(3, mu=[0.0, 0.0])


class TestLossFixtures(unittest.TestCase):
    """Critic and policy losses on hand-evaluated batches."""

    def setUp(self):
        """Set up test fixtures."""
        self.agent = _tiny_agent()
        self.live = Transition(np.array([1.0]), np.array([0.5]), np.array([2.0]), 1.0, False)
        self.terminal = Transition(np.array([-1.0]), np.array([0.2]), np.array([3.0]), -0.5, True)

    def test_bellman_target_masks_terminal(self):
        """Test terminal transitions use Q_B = r."""
        self.assertEqual(bellman_target(-0.5, True, 123.0, 0.99), -0.5)
        self.assertAlmostEqual(bellman_target(1.0, False, 2.0, 0.99), 2.98, places=14)
        np.testing.assert_allclose(bellman_target([1.0, 2.0], [False, True], [1.0, 1.0], 0.5), [1.5, 2.0])

    def test_critic_loss_single_transition(self):
        """Test the critic loss on one live transition."""
        q_target = 1.0 + 0.99 * _q(2.0, _mu(2.0))
        expected = (q_target - _q(1.0, 0.5)) ** 2
        loss, _ = self.agent.critic_loss_gradients([self.live])
        self.assertAlmostEqual(loss, expected, delta=1e-12)

    def test_critic_loss_two_transitions(self):
        """Test the critic loss averages a live and a terminal transition."""
        live = (1.0 + 0.99 * _q(2.0, _mu(2.0)) - _q(1.0, 0.5)) ** 2
        terminal = (-0.5 - _q(-1.0, 0.2)) ** 2
        loss, _ = self.agent.critic_loss_gradients([self.live, self.terminal])
        self.assertAlmostEqual(loss, (live + terminal) / 2.0, delta=1e-12)
        self.assertAlmostEqual(terminal, 0.36, delta=1e-12)

    def test_policy_loss(self):
        """Test the policy loss is -mean Q(s, actor(s))."""
        expected = -(_q(1.0, _mu(1.0)) + _q(-1.0, _mu(-1.0))) / 2.0
        loss, _ = self.agent.actor_loss_gradients([self.live, self.terminal])
        self.assertAlmostEqual(loss, expected, delta=1e-12)
        single, _ = self.agent.actor_loss_gradients([self.live])
        self.assertAlmostEqual(single, -_q(1.0, _mu(1.0)), delta=1e-12)

    def test_empty_batch(self):
        """Test an empty batch is a usage error."""
        with self.assertRaises(UsageError):
            self.agent.critic_update([])


class TestDdpgAgent(unittest.TestCase):
    """Test cases for agent updates."""

    def setUp(self):
        """Set up test fixtures."""
        self.hp = Hyperparams(num_hidden_layers=2, hidden_size=8, batch_size=4, buffer_capacity=100)
        self.agent = DdpgAgent(3, 2, self.hp, seed=5)
        rng = np.random.default_rng(0)
        self.batch = [Transition(rng.normal(size=3), rng.uniform(-1, 1, size=2), rng.normal(size=3),
                                 float(rng.normal()), bool(i % 3 == 0)) for i in range(6)]

    def test_targets_start_as_copies(self):
        """Test target networks equal the main networks at construction."""
        self.assertEqual(parameter_hash(self.agent.actor_target), parameter_hash(self.agent.actor))
        self.assertEqual(parameter_hash(self.agent.critic_target), parameter_hash(self.agent.critic))
        self.assertEqual(self.agent.critic.input_size, 5)

    def test_critic_update_leaves_actor(self):
        """Test a critic step changes only the critic."""
        actor, critic = parameter_hash(self.agent.actor), parameter_hash(self.agent.critic)
        target = parameter_hash(self.agent.critic_target)
        self.agent.critic_update(self.batch)
        self.assertEqual(parameter_hash(self.agent.actor), actor)
        self.assertNotEqual(parameter_hash(self.agent.critic), critic)
        self.assertEqual(parameter_hash(self.agent.critic_target), target)

    def test_actor_update_leaves_critic(self):
        """Test an actor step changes only the actor."""
        actor, critic = parameter_hash(self.agent.actor), parameter_hash(self.agent.critic)
        self.agent.actor_update(self.batch)
        self.assertNotEqual(parameter_hash(self.agent.actor), actor)
        self.assertEqual(parameter_hash(self.agent.critic), critic)

    def test_critic_gradient_matches_finite_differences(self):
        """Test the critic loss gradient against central differences on a few parameters."""
        _, grads = self.agent.critic_loss_gradients(self.batch)
        h = 1e-6
        for k, w in enumerate(self.agent.critic.weights):
            for index in [(0, 0), (w.shape[0] - 1, w.shape[1] - 1)]:
                original = w[index]
                w[index] = original + h
                plus, _ = self.agent.critic_loss_gradients(self.batch)
                w[index] = original - h
                minus, _ = self.agent.critic_loss_gradients(self.batch)
                w[index] = original
                numeric = (plus - minus) / (2 * h)
                self.assertAlmostEqual(grads.weight_grads[k][index], numeric,
                                       delta=1e-5 * max(1.0, abs(numeric)))

    def test_actor_gradient_matches_finite_differences(self):
        """Test the policy loss gradient against central differences on a few parameters."""
        _, grads = self.agent.actor_loss_gradients(self.batch)
        h = 1e-6
        for k, b in enumerate(self.agent.actor.biases):
            for index in [(0,), (b.shape[0] - 1,)]:
                original = b[index]
                b[index] = original + h
                plus, _ = self.agent.actor_loss_gradients(self.batch)
                b[index] = original - h
                minus, _ = self.agent.actor_loss_gradients(self.batch)
                b[index] = original
                numeric = (plus - minus) / (2 * h)
                self.assertAlmostEqual(grads.bias_grads[k][index], numeric, delta=1e-5 * max(1.0, abs(numeric)))

    def test_train_step_cadence(self):
        """Test train_step waits for a full batch, then updates and moves the targets."""
        buffer = ReplayBuffer(100, seed=0)
        for t in self.batch[:3]:
            buffer.store(t)
        self.assertIsNone(self.agent.train_step(buffer))
        self.assertEqual(self.agent.updates_applied, 0)

        buffer.store(self.batch[3])
        target_before = parameter_hash(self.agent.actor_target)
        losses = self.agent.train_step(buffer)
        self.assertIsNotNone(losses)
        self.assertEqual(self.agent.updates_applied, 1)
        self.assertEqual(self.agent.critic_opt.step_count, 1)
        self.assertEqual(self.agent.actor_opt.step_count, 1)
        self.assertNotEqual(parameter_hash(self.agent.actor_target), target_before)
        self.assertNotEqual(parameter_hash(self.agent.actor_target), parameter_hash(self.agent.actor))

    def test_long_training_stays_finite(self):
        """Test 10^4 updates on bounded rewards keep losses and every parameter finite."""
        rng = np.random.default_rng(1)
        buffer = ReplayBuffer(100, seed=1)
        for i in range(50):
            buffer.store(Transition(rng.normal(size=3), rng.uniform(-1, 1, size=2), rng.normal(size=3),
                                    float(rng.uniform(-1.0, 0.0)), i % 10 == 9))
        losses = np.array([self.agent.train_step(buffer) for _ in range(10_000)])
        self.assertEqual(losses.shape, (10_000, 2))
        self.assertTrue(np.all(np.isfinite(losses)))
        for net in (self.agent.actor, self.agent.critic, self.agent.actor_target, self.agent.critic_target):
            for array in net.weights + net.biases:
                self.assertTrue(np.all(np.isfinite(array)))

    def test_polyak_distance_contracts_geometrically(self):
        """Test each soft update shrinks the target-to-source distance by exactly (1 - tau)."""
        source = mlp_init([5, 8, 8, 1], "identity", seed=10)
        target = mlp_init([5, 8, 8, 1], "identity", seed=11)
        tau = 0.01
        distance = _parameter_distance(target, source)
        for _ in range(50):
            polyak_update(target, source, tau)
            shrunk = _parameter_distance(target, source)
            self.assertAlmostEqual(shrunk / distance, 1.0 - tau, delta=1e-9)
            distance = shrunk

    def test_action_blind_critic_gives_zero_actor_gradient(self):
        """Test a critic that ignores its action input leaves the actor where it is."""
        self.agent.critic.weights[0][self.agent.state_dim:, :] = 0.0
        _, grads = self.agent.actor_loss_gradients(self.batch)
        self.assertTrue(grads.is_zero())
        before = parameter_hash(self.agent.actor)
        self.agent.actor_update(self.batch)
        self.assertEqual(parameter_hash(self.agent.actor), before)

    def test_critic_step_vanishes_when_target_equals_estimate(self):
        """Test the critic barely moves when every Bellman target equals the current Q estimate."""
        rng = np.random.default_rng(3)
        states = rng.normal(size=(5, 3))
        actions = rng.uniform(-1, 1, size=(5, 2))
        q = self.agent.q_values(states, actions)
        batch = [Transition(s, a, rng.normal(size=3), float(r), True) for s, a, r in zip(states, actions, q)]
        loss, grads = self.agent.critic_loss_gradients(batch)
        self.assertLess(loss, 1e-24)
        for g in grads.arrays():
            self.assertLess(float(np.max(np.abs(g))), 1e-12)
        before = [w.copy() for w in self.agent.critic.weights + self.agent.critic.biases]
        self.agent.critic_update(batch)
        for old, new in zip(before, self.agent.critic.weights + self.agent.critic.biases):
            np.testing.assert_allclose(new, old, rtol=0.0, atol=1e-10)

    def test_select_action(self):
        """Test deterministic actions repeat, exploring actions stay in [-1, 1]."""
        state = np.array([0.3, -0.2, 0.9])
        np.testing.assert_array_equal(self.agent.select_action(state), self.agent.select_action(state))
        for _ in range(50):
            action = self.agent.select_action(state, explore=True)
            self.assertTrue(np.all(np.abs(action) <= 1.0))
        with self.assertRaises(DimensionError):
            self.agent.select_action(np.zeros(4))

    def test_snapshot_matches_learner(self):
        """Test a worker snapshot acts like the learner and is detached from later updates."""
        policy = self.agent.snapshot(noise_seed=1)
        state = np.array([0.1, 0.2, 0.3])
        self.assertEqual(parameter_hash(policy.actor), self.agent.actor_hash())
        np.testing.assert_array_equal(policy.select_action(state), self.agent.select_action(state))
        self.agent.actor_update(self.batch)
        self.assertNotEqual(parameter_hash(policy.actor), self.agent.actor_hash())
        self.assertEqual((policy.state_dim, policy.action_dim), (3, 2))


if __name__ == '__main__':
    unittest.main()
