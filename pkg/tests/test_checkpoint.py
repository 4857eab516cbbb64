"""Tests for agent checkpoints."""

import json
import os
import tempfile
import unittest

import numpy as np

from src.checkpoint import (agent_from_checkpoint, checkpoint_from_agent, describe_checkpoint, dumps_checkpoint,
                            load_checkpoint, loads_checkpoint, save_checkpoint)
from src.dataset_forge import DatasetFile, DeformationRecord, workspace_box
from src.ddpg import Hyperparams, ReplayBuffer, Transition
from src.dlo_sim import DloParams, DloSimulator, GripperPose, SimConfig, feature_points, parameter_hash
from src.errors import CheckpointError
from src.nn_core import parameter_hash as network_hash
from src.orchestrator import AgentSet, DeformationGoal, EpisodeConfig
from src.trainer import ParallelTrainer, TrainerConfig, make_agent

SMALL_HP = Hyperparams(num_hidden_layers=2, hidden_size=8, batch_size=4, buffer_capacity=100)


def _trained_agent(role="orientation", seed=0):
    agent = make_agent(role, 4, SMALL_HP, seed=seed)
    rng = np.random.default_rng(seed)
    buffer = ReplayBuffer(100, seed=seed)
    dim = agent.state_dim
    for _ in range(10):
        buffer.store(Transition(rng.normal(size=dim), rng.uniform(-1, 1, size=agent.action_dim),
                                rng.normal(size=dim), float(rng.normal()), False))
        agent.train_step(buffer)
    return agent


class TestCheckpointRoundTrip(unittest.TestCase):
    """Test cases for saving and restoring agents."""

    def setUp(self):
        """Set up test fixtures."""
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "agent_o.json")
        self.agent = _trained_agent()
        self.checkpoint = checkpoint_from_agent(self.agent, "orientation", 4, {"episodes_completed": 60})

    def tearDown(self):
        """Clean up test fixtures."""
        self.tmp.cleanup()

    def test_restored_agent_is_identical(self):
        """Test networks, targets and optimizer state survive save and load."""
        save_checkpoint(self.checkpoint, self.path)
        restored = agent_from_checkpoint(load_checkpoint(self.path), expected_role="orientation")
        for name in ("actor", "critic", "actor_target", "critic_target"):
            self.assertEqual(network_hash(getattr(restored, name)), network_hash(getattr(self.agent, name)))
        self.assertEqual(restored.actor_opt.step_count, self.agent.actor_opt.step_count)
        for a, b in zip(restored.critic_opt.second_moment, self.agent.critic_opt.second_moment):
            np.testing.assert_array_equal(a, b)
        self.assertEqual(restored.updates_applied, self.agent.updates_applied)
        state = np.linspace(-1, 1, 18)
        np.testing.assert_array_equal(restored.select_action(state), self.agent.select_action(state))

    def test_resave_is_byte_identical(self):
        """Test load then save reproduces the file byte for byte."""
        save_checkpoint(self.checkpoint, self.path)
        with open(self.path, "rb") as handle:
            original = handle.read()
        second = os.path.join(self.tmp.name, "again.json")
        save_checkpoint(load_checkpoint(self.path), second)
        with open(second, "rb") as handle:
            self.assertEqual(handle.read(), original)

    def test_no_temporary_files_left(self):
        """Test the atomic write leaves only the checkpoint behind."""
        save_checkpoint(self.checkpoint, self.path)
        save_checkpoint(self.checkpoint, self.path)
        self.assertEqual(os.listdir(self.tmp.name), ["agent_o.json"])

    def test_metadata(self):
        """Test metadata carries the run context and the description omits hyperparameters from metadata."""
        meta = self.checkpoint.metadata
        self.assertEqual(meta["m"], 4)
        self.assertEqual(meta["episodes_completed"], 60)
        self.assertEqual(meta["hyperparams"]["hidden_size"], 8)
        description = describe_checkpoint(self.checkpoint)
        self.assertEqual(description["actor_layers"], [18, 8, 8, 3])
        self.assertEqual(description["critic_layers"], [21, 8, 8, 1])
        self.assertNotIn("hyperparams", description["metadata"])
        self.assertEqual(description["parameter_counts"]["actor"], self.agent.actor.parameter_count)


class TestCheckpointValidation(unittest.TestCase):
    """Test cases for rejecting damaged or mismatched checkpoints."""

    def setUp(self):
        """Set up test fixtures."""
        self.text = dumps_checkpoint(checkpoint_from_agent(_trained_agent(), "orientation", 4))
        self.document = json.loads(self.text)

    def test_tampered_length(self):
        """Test a declared length that disagrees with the data is rejected."""
        self.document["parameters"]["actor"]["length"] += 1
        with self.assertRaises(CheckpointError):
            loads_checkpoint(json.dumps(self.document))

    def test_corrupt_base64(self):
        """Test undecodable parameter data is rejected."""
        self.document["parameters"]["critic"]["data"] = "not base64!"
        with self.assertRaises(CheckpointError):
            loads_checkpoint(json.dumps(self.document))

    def test_wrong_role(self):
        """Test loading into another role is rejected."""
        with self.assertRaises(CheckpointError):
            agent_from_checkpoint(loads_checkpoint(self.text), expected_role="position")

    def test_architecture_mismatch(self):
        """Test metadata implying other layer sizes is rejected."""
        self.document["metadata"]["m"] = 5
        with self.assertRaises(CheckpointError):
            agent_from_checkpoint(loads_checkpoint(json.dumps(self.document)))

    def test_format_and_version(self):
        """Test foreign documents and other versions are rejected."""
        with self.assertRaises(CheckpointError):
            loads_checkpoint("{}")
        with self.assertRaises(CheckpointError):
            loads_checkpoint("not json")
        self.document["version"] = 2
        with self.assertRaises(CheckpointError):
            loads_checkpoint(json.dumps(self.document))

    def test_unknown_role(self):
        """Test agents cannot be saved under an unknown role."""
        with self.assertRaises(CheckpointError):
            checkpoint_from_agent(_trained_agent(), "critic", 4)


class TestTrainCheckpointEvaluate(unittest.TestCase):
    """Single-worker train, checkpoint, load and evaluate."""

    def test_end_to_end_reproducible(self):
        """Test repeated runs and checkpoint round trips give identical evaluations."""
        sim_config = SimConfig(settle_time=0.6)
        episode_config = EpisodeConfig(max_steps_p=3, max_steps_o=10)
        simulator = DloSimulator(config=sim_config)
        records = []
        for i, zeta in enumerate(([-0.5, 0.1, 0.0], [-0.3, -0.2, 0.3])):
            points = feature_points(simulator.reset(episode_config.home_pose(zeta)), 4) + [0.0, 0.03, 0.0]
            records.append(DeformationRecord(DeformationGoal(points, zeta, i), GripperPose([0, 0.15, 0.8], zeta), 0.0))
        dataset = DatasetFile(workspace_box("small"), 0, 4, parameter_hash(DloParams(), sim_config), records)
        config = TrainerConfig(num_workers=1, episodes_o=3, steps_o=10, episodes_p=2, steps_p=3, seed=4,
                               hyperparams=SMALL_HP)

        def run():
            trainer = ParallelTrainer(config, episode_config, sim_config=sim_config)
            agent_o, _ = trainer.train_agent_o(dataset)
            agent_p, _ = trainer.train_agent_p(dataset, agent_o=agent_o)
            reports = trainer.evaluate(AgentSet(orientation=agent_o, position=agent_p), dataset)
            return trainer, agent_o, agent_p, {k: r.summary() for k, r in reports.items()}

        trainer, agent_o, agent_p, first = run()
        _, _, _, second = run()
        self.assertEqual(first, second)

        with tempfile.TemporaryDirectory() as tmp:
            paths = {}
            for role, agent in (("orientation", agent_o), ("position", agent_p)):
                paths[role] = os.path.join(tmp, f"{role}.json")
                save_checkpoint(checkpoint_from_agent(agent, role, 4), paths[role])
            restored = AgentSet(orientation=agent_from_checkpoint(load_checkpoint(paths["orientation"])),
                                position=agent_from_checkpoint(load_checkpoint(paths["position"])))
        after = {k: r.summary() for k, r in trainer.evaluate(restored, dataset).items()}
        self.assertEqual(after, first)


if __name__ == '__main__':
    unittest.main()
