"""Tests for the parallel training driver and evaluation."""

import os
import tempfile
import unittest
from unittest.mock import patch

import numpy as np
import pandas as pd

from src.dataset_forge import DatasetFile, DeformationRecord, workspace_box
from src.ddpg import Hyperparams
from src.dlo_sim import DloParams, DloSimulator, GripperPose, SimConfig, feature_points, parameter_hash
from src.errors import ConfigurationError, TrainingAbortedError, UsageError
from src.nn_core import parameter_hash as network_hash
from src.orchestrator import AgentSet, DeformationGoal, EpisodeConfig
from src.trainer import EpisodeLogRecord, ParallelTrainer, TrainerConfig, TrainingLog, make_agent

SIM_CONFIG = SimConfig(settle_time=0.6)
SMALL_HP = Hyperparams(num_hidden_layers=2, hidden_size=16, batch_size=8, buffer_capacity=1000)


def _dataset(zetas, points_for):
    records = []
    for i, zeta in enumerate(zetas):
        goal = DeformationGoal(points_for(zeta), zeta, goal_id=i)
        records.append(DeformationRecord(goal, GripperPose([0.0, 0.15, 0.8], zeta), 0.0))
    return DatasetFile(workspace_box("small"), 0, 4, parameter_hash(DloParams(), SIM_CONFIG), records)


def _reachable_points(zeta):
    """Feature points of the chain reset at the home position with tip orientation zeta."""
    simulator = DloSimulator(config=SIM_CONFIG)
    return feature_points(simulator.reset(EpisodeConfig().home_pose(zeta)), 4)


def _orientation_dataset(n=4):
    rng = np.random.default_rng(0)
    return _dataset([rng.uniform(-0.8, 0.8, size=3) for _ in range(n)], lambda _: np.zeros((4, 3)))


def _config(**overrides):
    values = dict(num_workers=1, episodes_o=4, steps_o=10, episodes_p=2, steps_p=3, eval_every=2, seed=3,
                  hyperparams=SMALL_HP)
    values.update(overrides)
    return TrainerConfig(**values)


class TestTrainerConfig(unittest.TestCase):
    """Test cases for trainer settings."""

    def test_defaults(self):
        """Test the published training schedule."""
        config = TrainerConfig()
        self.assertEqual((config.num_workers, config.episodes_p, config.steps_p), (8, 100, 300))
        self.assertEqual((config.episodes_o, config.steps_o), (60, 100))

    def test_episode_counts(self):
        """Test per-worker and split episode budgets."""
        self.assertEqual(TrainerConfig(num_workers=3).episode_counts(5), [5, 5, 5])
        self.assertEqual(TrainerConfig(num_workers=3, episodes_per_worker=False).episode_counts(5), [2, 2, 1])

    def test_invalid_values(self):
        """Test non-positive counts are rejected."""
        with self.assertRaises(ConfigurationError):
            TrainerConfig(num_workers=0).validate()
        with self.assertRaises(ConfigurationError):
            TrainerConfig(hyperparams=Hyperparams(gamma=1.5)).validate()

    def test_make_agent_dimensions(self):
        """Test agents are sized per role."""
        self.assertEqual(make_agent("orientation", 4, SMALL_HP).actor.input_size, 18)
        self.assertEqual(make_agent("position", 4, SMALL_HP).critic.input_size, 33)
        self.assertEqual(make_agent("ac6", 4, SMALL_HP).actor.output_size, 6)
        with self.assertRaises(UsageError):
            make_agent("gripper", 4)


class TestTrainingLog(unittest.TestCase):
    """Test cases for the training log."""

    def setUp(self):
        """Set up test fixtures."""
        self.log = TrainingLog("position", transitions_by_worker={0: 30, 1: 20})
        for i, value in enumerate([-5.0, -4.0, -3.0, -2.0, -1.0, -1.0, -0.5, -0.5, -0.2, -0.1]):
            self.log.episodes.append(EpisodeLogRecord(i, i % 2, i // 2, i, value, 0.1, False, 5, 0.01))

    def test_return_trend(self):
        """Test first and last tenth mean returns."""
        self.assertEqual(self.log.return_trend(0.1), (-5.0, -0.1))
        self.assertEqual(self.log.total_transitions, 50)

    def test_dataframe_without_timing(self):
        """Test wall time can be dropped for comparisons."""
        self.assertIn("wall_time", self.log.to_dataframe().columns)
        self.assertNotIn("wall_time", self.log.to_dataframe(include_timing=False).columns)

    def test_loss_and_parquet_output(self):
        """Test loss curves are tabulated per update and the log writes to Parquet."""
        self.log.critic_losses.extend([0.5, 0.25])
        self.log.actor_losses.extend([-0.1, -0.2])
        losses = self.log.loss_dataframe()
        self.assertEqual(list(losses.columns), ["update", "critic_loss", "actor_loss"])
        self.assertEqual(list(losses["update"]), [0, 1])
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "log.parquet")
            self.log.save_parquet(path)
            frame = pd.read_parquet(path)
        self.assertEqual(len(frame), 10)
        self.assertEqual(list(frame["goal_id"]), list(range(10)))

    def test_empty_trend(self):
        """Test an empty log has no trend."""
        with self.assertRaises(UsageError):
            TrainingLog("orientation").return_trend()

    def test_save_csv(self):
        """Test the CSV log has one row per episode."""
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "log.csv")
            self.log.save_csv(path)
            with open(path, encoding="utf-8") as handle:
                self.assertEqual(len(handle.read().splitlines()), 11)


class TestOrientationTraining(unittest.TestCase):
    """Orientation agent training on kinematic episodes."""

    def test_single_worker_is_deterministic(self):
        """Test two single-worker runs give identical agents and logs."""
        dataset = _orientation_dataset()
        agent_a, log_a = ParallelTrainer(_config()).train_agent_o(dataset)
        agent_b, log_b = ParallelTrainer(_config()).train_agent_o(dataset)
        self.assertEqual(agent_a.actor_hash(), agent_b.actor_hash())
        self.assertEqual(network_hash(agent_a.critic), network_hash(agent_b.critic))
        self.assertTrue(log_a.to_dataframe(include_timing=False).equals(log_b.to_dataframe(include_timing=False)))
        self.assertEqual(log_a.critic_losses, log_b.critic_losses)

    def test_transition_accounting(self):
        """Test every step is stored once and updates start once a batch is available."""
        agent, log = ParallelTrainer(_config()).train_agent_o(_orientation_dataset())
        steps = int(log.to_dataframe()["steps"].sum())
        self.assertEqual(len(log.episodes), 4)
        self.assertEqual(log.total_transitions, steps)
        self.assertLessEqual(steps, 4 * 10)
        self.assertEqual(agent.updates_applied, max(0, steps - SMALL_HP.batch_size + 1))
        self.assertEqual(len(log.critic_losses), agent.updates_applied)

    def test_threaded_workers(self):
        """Test two threaded workers each play their episode budget."""
        agent, log = ParallelTrainer(_config(num_workers=2, episodes_o=3)).train_agent_o(_orientation_dataset())
        self.assertEqual(len(log.episodes), 6)
        self.assertEqual(sorted(r.worker_id for r in log.episodes), [0, 0, 0, 1, 1, 1])
        self.assertEqual([r.episode for r in log.episodes], list(range(6)))
        self.assertEqual(log.total_transitions, int(log.to_dataframe()["steps"].sum()))
        self.assertEqual(agent.updates_applied, max(0, log.total_transitions - SMALL_HP.batch_size + 1))

    def test_checkpoint_callback_cadence(self):
        """Test the callback fires every eval_every episodes and once at the end."""
        calls = []
        trainer = ParallelTrainer(_config(episodes_o=5), checkpoint_callback=lambda agent, n: calls.append(n))
        trainer.train_agent_o(_orientation_dataset())
        self.assertEqual(calls, [2, 4, 5])

    def test_worker_crash_aborts_with_partial_log(self):
        """Test a crashing rollout raises TrainingAbortedError and writes the partial log."""
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "partial.csv")
            trainer = ParallelTrainer(_config(), abort_log_path=path)
            with patch("src.trainer.run_orientation_phase", side_effect=RuntimeError("boom")):
                with self.assertRaises(TrainingAbortedError) as ctx:
                    trainer.train_agent_o(_orientation_dataset())
            self.assertTrue(os.path.exists(path))
        self.assertIsInstance(ctx.exception.partial_log, TrainingLog)
        self.assertEqual(len(ctx.exception.partial_log.episodes), 0)

    def test_threaded_crash(self):
        """Test a crash in a threaded worker stops the run."""
        trainer = ParallelTrainer(_config(num_workers=2))
        with patch("src.trainer.run_orientation_phase", side_effect=RuntimeError("boom")):
            with self.assertRaises(TrainingAbortedError):
                trainer.train_agent_o(_orientation_dataset())

    def test_dataset_checks(self):
        """Test empty datasets and feature-point mismatches are refused."""
        trainer = ParallelTrainer(_config())
        empty = _orientation_dataset().subset([])
        with self.assertRaises(UsageError):
            trainer.train_agent_o(empty)
        trainer = ParallelTrainer(_config(), episode_config=EpisodeConfig(num_feature_points=5))
        with self.assertRaises(ConfigurationError):
            trainer.train_agent_o(_orientation_dataset())


class TestPositionTrainingAndEvaluation(unittest.TestCase):
    """Position training and evaluation on the simulator."""

    @classmethod
    def setUpClass(cls):
        """Build goals that are satisfied by the reset configuration."""
        cls.zetas = [np.array([-0.6, 0.0, 0.0]), np.array([-0.4, 0.1, 0.2])]
        cls.dataset = _dataset(cls.zetas, _reachable_points)

    def test_agent_o_untouched(self):
        """Test position training leaves the orientation agent unchanged."""
        trainer = ParallelTrainer(_config(), sim_config=SIM_CONFIG)
        agent_o = make_agent("orientation", 4, SMALL_HP, seed=1)
        before = (agent_o.actor_hash(), network_hash(agent_o.critic), agent_o.updates_applied)
        agent_p, log = trainer.train_agent_p(self.dataset, agent_o=agent_o)
        self.assertEqual((agent_o.actor_hash(), network_hash(agent_o.critic), agent_o.updates_applied), before)
        self.assertEqual(agent_p.actor.input_size, 30)
        self.assertEqual(len(log.episodes), 2)

    def test_single_agent_training(self):
        """Test an AC3 baseline trains on the position schedule."""
        trainer = ParallelTrainer(_config(), sim_config=SIM_CONFIG)
        agent, log = trainer.train_single_agent(self.dataset, "ac3", reward_kind="dtw")
        self.assertEqual(log.role, "ac3")
        self.assertEqual(len(log.episodes), 2)
        with self.assertRaises(UsageError):
            trainer.train_single_agent(self.dataset, "ac9")

    def test_evaluate_satisfied_goals(self):
        """Test goals met by the oriented start configuration score SR 1 at both thresholds."""
        trainer = ParallelTrainer(_config(), sim_config=SIM_CONFIG)
        agents = AgentSet(position=make_agent("position", 4, SMALL_HP))
        reports = trainer.evaluate(agents, self.dataset, mode="multiac6_star")
        self.assertEqual(sorted(reports), [0.03, 0.05])
        for report in reports.values():
            self.assertEqual(report.sr, 1.0)
            self.assertEqual(report.num_goals, 2)
            self.assertLess(report.me, 1e-9)
            self.assertEqual([o.steps_used for o in report.per_goal], [0, 0])

    def test_evaluation_is_repeatable(self):
        """Test the same agents and seed give identical reports."""
        trainer = ParallelTrainer(_config(), sim_config=SIM_CONFIG)
        agents = AgentSet(position=make_agent("position", 4, SMALL_HP, seed=2))
        first = trainer.evaluate(agents, self.dataset, "multiac6_star", zeta_noise_deg=10.0, delta_ps=(0.05,))
        second = trainer.evaluate(agents, self.dataset, "multiac6_star", zeta_noise_deg=10.0, delta_ps=(0.05,))
        self.assertEqual(first[0.05].summary(), second[0.05].summary())

    def test_zeta_sweep_frame(self):
        """Test the sweep returns one row per noise level."""
        trainer = ParallelTrainer(_config(), sim_config=SIM_CONFIG)
        agents = AgentSet(position=make_agent("position", 4, SMALL_HP))
        frame = trainer.zeta_sweep(agents, self.dataset, grid_deg=(0.0,), mode="multiac6_star")
        self.assertEqual(list(frame.columns), ["zeta_noise_deg", "sr", "ae", "sigma", "me"])
        self.assertEqual(frame.iloc[0]["sr"], 1.0)


if __name__ == '__main__':
    unittest.main()
