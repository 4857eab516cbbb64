"""Parallel training driver: rollout workers feed a shared replay buffer, one learner updates the agent."""

import logging
import queue
import threading
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .ddpg import ActorPolicy, DdpgAgent, Hyperparams, ReplayBuffer, Transition
from .dataset_forge import DatasetFile
from .dlo_sim import DloParams, DloSimulator, DloState, SimConfig
from .errors import ConfigurationError, TrainingAbortedError, UsageError
from .nn_core import parameter_hash
from .orchestrator import (AgentSet, DeformationGoal, EpisodeConfig, PhaseOutcome, action_dim, run_episode,
                           run_episode_single_agent, run_orientation_phase, run_position_phase, state_dim)
from .rewards import EvalOutcome, EvalReport, aggregate
from .utils import get_correlation_id, log_event

logger = logging.getLogger(__name__)

ZETA_SWEEP_GRID_DEG = (0.0, 5.0, 10.0, 15.0, 20.0, 30.0)
EVAL_DELTA_PS = (0.05, 0.03)
AGENT_ROLES = ("orientation", "position", "ac3", "ac6")

CheckpointCallback = Callable[[DdpgAgent, int], None]
Rollout = Callable[[ActorPolicy, DeformationGoal, Callable[[Transition], None], "WorkerContext"], PhaseOutcome]


@dataclass
class TrainerConfig:
    """Worker count, training schedules and learner settings."""

    num_workers: int = 8
    episodes_p: int = 100
    steps_p: int = 300
    episodes_o: int = 60
    steps_o: int = 100
    eval_every: int = 10
    seed: int = 0
    episodes_per_worker: bool = True
    queue_size: int = 1024
    hyperparams: Hyperparams = field(default_factory=Hyperparams)

    def validate(self) -> "TrainerConfig":
        for name in ("num_workers", "episodes_p", "steps_p", "episodes_o", "steps_o", "eval_every", "queue_size"):
            value = getattr(self, name)
            if int(value) != value or value <= 0:
                raise ConfigurationError(f"{name} must be a positive integer, got {value}")
        self.hyperparams.validate()
        return self

    def episode_counts(self, episodes: int) -> List[int]:
        """Episodes assigned to each worker."""
        if self.episodes_per_worker:
            return [episodes] * self.num_workers
        base, extra = divmod(episodes, self.num_workers)
        return [base + (1 if w < extra else 0) for w in range(self.num_workers)]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class EpisodeLogRecord:
    episode: int
    worker_id: int
    worker_episode: int
    goal_id: int
    episode_return: float
    final_error: float
    success: bool
    steps: int
    wall_time: float


@dataclass
class TrainingLog:
    """Per-episode records in completion order plus learner loss curves."""

    role: str
    episodes: List[EpisodeLogRecord] = field(default_factory=list)
    critic_losses: List[float] = field(default_factory=list)
    actor_losses: List[float] = field(default_factory=list)
    transitions_by_worker: Dict[int, int] = field(default_factory=dict)

    @property
    def total_transitions(self) -> int:
        return sum(self.transitions_by_worker.values())

    def returns(self) -> np.ndarray:
        return np.array([r.episode_return for r in self.episodes], dtype=np.float64)

    def return_trend(self, fraction: float = 0.1) -> Tuple[float, float]:
        """Mean return over the first and the last ``fraction`` of episodes."""
        returns = self.returns()
        if returns.size == 0:
            raise UsageError("Training log holds no episodes")
        k = max(1, int(round(fraction * returns.size)))
        return float(returns[:k].mean()), float(returns[-k:].mean())

    def to_dataframe(self, include_timing: bool = True) -> pd.DataFrame:
        frame = pd.DataFrame([asdict(r) for r in self.episodes], columns=list(EpisodeLogRecord.__dataclass_fields__))
        if not include_timing:
            frame = frame.drop(columns=["wall_time"])
        return frame

    def loss_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame({"update": np.arange(len(self.critic_losses)),
                             "critic_loss": self.critic_losses, "actor_loss": self.actor_losses})

    def save_csv(self, path: str) -> None:
        self.to_dataframe().to_csv(path, index=False)

    def save_parquet(self, path: str) -> None:
        self.to_dataframe().to_parquet(path, index=False)


@dataclass
class WorkerContext:
    """State owned by one rollout worker."""

    worker_id: int
    simulator: Optional[DloSimulator]
    episode_config: EpisodeConfig
    reset_cache: Dict[int, DloState] = field(default_factory=dict)


def make_agent(role: str, m: int, hyperparams: Optional[Hyperparams] = None, seed: int = 0) -> DdpgAgent:
    """DDPG agent sized for an agent role and m feature points."""
    if role not in AGENT_ROLES:
        raise UsageError(f"Unknown agent role '{role}', expected one of {AGENT_ROLES}")
    return DdpgAgent(state_dim(role, m), action_dim(role), hyperparams, seed)


def _noise_seed(seed: int, worker_id: int, episode: int) -> int:
    return int(np.random.SeedSequence([seed, worker_id, episode]).generate_state(1)[0])


class ParallelTrainer:
    """Runs training and evaluation for one run configuration."""

    def __init__(self, config: Optional[TrainerConfig] = None, episode_config: Optional[EpisodeConfig] = None,
                 sim_params: Optional[DloParams] = None, sim_config: Optional[SimConfig] = None,
                 correlation_id: Optional[str] = None, checkpoint_callback: Optional[CheckpointCallback] = None,
                 abort_log_path: Optional[str] = None):
        """
        Initialize trainer.

        Args:
            config: Worker count and training schedules
            episode_config: Step caps, thresholds and workspace clamp
            sim_params: Simulator physical parameters
            sim_config: Simulator timing
            correlation_id: Run id carried by every log event
            checkpoint_callback: Called with (agent, episodes completed) at eval_every boundaries and at the end
            abort_log_path: Where the partial training log is written if a worker crashes
        """
        self.config = (config or TrainerConfig()).validate()
        self.episode_config = (episode_config or EpisodeConfig()).validate()
        self.sim_params = sim_params or DloParams()
        self.sim_config = sim_config or SimConfig()
        self.correlation_id = correlation_id or get_correlation_id()
        self.checkpoint_callback = checkpoint_callback
        self.abort_log_path = abort_log_path

    def _simulator(self) -> DloSimulator:
        return DloSimulator(self.sim_params, self.sim_config)

    def _training_goals(self, dataset: DatasetFile) -> List[DeformationGoal]:
        if len(dataset) == 0:
            raise UsageError("Training dataset is empty")
        if dataset.m != self.episode_config.num_feature_points:
            raise ConfigurationError(
                f"Dataset has m={dataset.m} feature points, episode config expects "
                f"{self.episode_config.num_feature_points}")
        return dataset.goals()

    def train_agent_o(self, dataset: DatasetFile,
                      agent: Optional[DdpgAgent] = None) -> Tuple[DdpgAgent, TrainingLog]:
        """Train the orientation agent on kinematic episodes; no simulator is involved."""
        goals = self._training_goals(dataset)
        agent = agent or make_agent("orientation", dataset.m, self.config.hyperparams, self.config.seed)
        episode_config = replace(self.episode_config, max_steps_o=self.config.steps_o)

        def rollout(policy: ActorPolicy, goal: DeformationGoal, sink: Callable[[Transition], None],
                    context: WorkerContext) -> PhaseOutcome:
            _, trace = run_orientation_phase(policy, goal, context.episode_config.home_orientation,
                                             context.episode_config, explore=True, transition_sink=sink)
            return trace.outcome

        return self._run("orientation", agent, goals, self.config.episodes_o, episode_config, rollout,
                         with_simulator=False)

    def train_agent_p(self, dataset: DatasetFile, reward_kind: str = "max", agent_o: Optional[DdpgAgent] = None,
                      agent: Optional[DdpgAgent] = None) -> Tuple[DdpgAgent, TrainingLog]:
        """
        Train the position agent from oriented configurations.

        Without ``agent_o`` the chain starts with its tip at the goal's zeta; with it, the orientation
        reached by a deterministic orientation phase is used. Agent_o is never modified.
        """
        goals = self._training_goals(dataset)
        agent = agent or make_agent("position", dataset.m, self.config.hyperparams, self.config.seed)
        episode_config = replace(self.episode_config, max_steps_p=self.config.steps_p)
        orientation_policy = agent_o.snapshot(0) if agent_o is not None else None

        def start_state(goal: DeformationGoal, context: WorkerContext) -> DloState:
            if goal.goal_id not in context.reset_cache:
                theta = goal.zeta
                if orientation_policy is not None:
                    theta, _ = run_orientation_phase(orientation_policy, goal,
                                                     context.episode_config.home_orientation,
                                                     context.episode_config)
                context.reset_cache[goal.goal_id] = context.simulator.reset(
                    context.episode_config.home_pose(theta))
            return context.reset_cache[goal.goal_id]

        def rollout(policy: ActorPolicy, goal: DeformationGoal, sink: Callable[[Transition], None],
                    context: WorkerContext) -> PhaseOutcome:
            outcome, _ = run_position_phase(policy, goal, start_state(goal, context), context.episode_config,
                                            context.simulator, explore=True, reward_kind=reward_kind,
                                            transition_sink=sink)
            return outcome

        return self._run("position", agent, goals, self.config.episodes_p, episode_config, rollout,
                         with_simulator=True)

    def train_single_agent(self, dataset: DatasetFile, variant: str, reward_kind: str = "max",
                           agent: Optional[DdpgAgent] = None) -> Tuple[DdpgAgent, TrainingLog]:
        """Train an AC3 or AC6 baseline on the position-agent schedule."""
        if variant not in ("ac3", "ac6"):
            raise UsageError(f"Unknown single-agent variant '{variant}', expected 'ac3' or 'ac6'")
        goals = self._training_goals(dataset)
        agent = agent or make_agent(variant, dataset.m, self.config.hyperparams, self.config.seed)
        episode_config = replace(self.episode_config, max_steps_p=self.config.steps_p)

        def rollout(policy: ActorPolicy, goal: DeformationGoal, sink: Callable[[Transition], None],
                    context: WorkerContext) -> PhaseOutcome:
            trace = run_episode_single_agent(policy, goal, context.episode_config, context.simulator, variant,
                                             explore=True, reward_kind=reward_kind, transition_sink=sink)
            return trace.outcome

        return self._run(variant, agent, goals, self.config.episodes_p, episode_config, rollout,
                         with_simulator=True)

    def _run(self, role: str, agent: DdpgAgent, goals: Sequence[DeformationGoal], episodes: int,
             episode_config: EpisodeConfig, rollout: Rollout, with_simulator: bool) -> Tuple[DdpgAgent, TrainingLog]:
        cfg = self.config
        counts = cfg.episode_counts(episodes)
        buffer = ReplayBuffer(agent.hyperparams.buffer_capacity, seed=cfg.seed, state_dim=agent.state_dim,
                              action_dim=agent.action_dim)
        log = TrainingLog(role, transitions_by_worker={w: 0 for w in range(cfg.num_workers)})
        lock = threading.Lock()
        contexts = [WorkerContext(w, self._simulator() if with_simulator else None, episode_config)
                    for w in range(cfg.num_workers)]
        log_event("INFO", f"Training {role} agent", self.correlation_id, workers=cfg.num_workers,
                  episodes=counts, goals=len(goals), seed=cfg.seed)

        def learn(worker_id: int, transition: Transition) -> None:
            buffer.store(transition)
            log.transitions_by_worker[worker_id] += 1
            with lock:
                losses = agent.train_step(buffer)
            if losses is not None:
                log.critic_losses.append(losses[0])
                log.actor_losses.append(losses[1])

        def finish_episode(record: EpisodeLogRecord) -> None:
            record.episode = len(log.episodes)
            log.episodes.append(record)
            log_event("INFO", "Episode complete", self.correlation_id, role=role, episode=record.episode,
                      worker=record.worker_id, goal=record.goal_id, episode_return=record.episode_return,
                      final_error=record.final_error, success=record.success, steps=record.steps)
            completed = len(log.episodes)
            if self.checkpoint_callback is not None and completed % cfg.eval_every == 0:
                with lock:
                    self.checkpoint_callback(agent, completed)

        def play(context: WorkerContext, worker_episode: int, rng: np.random.Generator,
                 sink: Callable[[Transition], None]) -> EpisodeLogRecord:
            goal = goals[int(rng.integers(len(goals)))]
            with lock:
                policy = agent.snapshot(_noise_seed(cfg.seed, context.worker_id, worker_episode))
                if parameter_hash(policy.actor) != agent.actor_hash():
                    raise AssertionError("Worker actor snapshot differs from the learner")
            started = time.perf_counter()
            outcome = rollout(policy, goal, sink, context)
            return EpisodeLogRecord(-1, context.worker_id, worker_episode, goal.goal_id, outcome.total_return,
                                    outcome.final_error, outcome.success, outcome.steps_used,
                                    time.perf_counter() - started)

        try:
            if cfg.num_workers == 1:
                self._run_inline(contexts[0], counts[0], play, learn, finish_episode)
            else:
                self._run_threaded(contexts, counts, play, learn, finish_episode)
        except Exception as exc:
            log_event("ERROR", f"Training of {role} agent aborted: {exc}", self.correlation_id,
                      episodes_completed=len(log.episodes))
            if self.abort_log_path:
                log.save_csv(self.abort_log_path)
            raise TrainingAbortedError(f"Training of {role} agent aborted: {exc}", partial_log=log) from exc

        if self.checkpoint_callback is not None and len(log.episodes) % cfg.eval_every != 0:
            self.checkpoint_callback(agent, len(log.episodes))
        log_event("INFO", f"Training of {role} agent complete", self.correlation_id,
                  episodes=len(log.episodes), transitions=log.total_transitions, updates=agent.updates_applied)
        return agent, log

    def _run_inline(self, context: WorkerContext, count: int, play: Callable, learn: Callable,
                    finish_episode: Callable) -> None:
        rng = np.random.default_rng([self.config.seed, context.worker_id])
        for worker_episode in range(count):
            record = play(context, worker_episode, rng, lambda t: learn(context.worker_id, t))
            finish_episode(record)

    def _run_threaded(self, contexts: List[WorkerContext], counts: List[int], play: Callable, learn: Callable,
                      finish_episode: Callable) -> None:
        items: "queue.Queue[Tuple[str, int, Any]]" = queue.Queue(maxsize=self.config.queue_size)
        stop = threading.Event()

        def worker(context: WorkerContext, count: int) -> None:
            rng = np.random.default_rng([self.config.seed, context.worker_id])
            try:
                for worker_episode in range(count):
                    if stop.is_set():
                        break
                    record = play(context, worker_episode, rng,
                                  lambda t: items.put(("transition", context.worker_id, t)))
                    items.put(("episode", context.worker_id, record))
            except Exception as exc:  # pylint: disable=broad-except
                logger.error(f"Worker {context.worker_id} crashed: {exc}")
                items.put(("error", context.worker_id, exc))
            finally:
                items.put(("done", context.worker_id, None))

        threads = [threading.Thread(target=worker, args=(c, n), name=f"rollout-{c.worker_id}", daemon=True)
                   for c, n in zip(contexts, counts)]
        for thread in threads:
            thread.start()

        live = len(threads)
        failure: Optional[BaseException] = None
        while live:
            kind, worker_id, payload = items.get()
            if kind == "transition":
                if failure is None:
                    learn(worker_id, payload)
            elif kind == "episode":
                finish_episode(payload)
            elif kind == "error":
                failure = failure or payload
                stop.set()
            else:
                live -= 1
        for thread in threads:
            thread.join()
        if failure is not None:
            raise failure

    def evaluate(self, agents: AgentSet, dataset: DatasetFile, mode: str = "multiac6",
                 zeta_noise_deg: float = 0.0, delta_ps: Sequence[float] = EVAL_DELTA_PS,
                 reward_kind: str = "max", seed: Optional[int] = None) -> Dict[float, EvalReport]:
        """
        One exploration-free episode per goal at each success threshold.

        Returns:
            Mapping of delta_p to EvalReport
        """
        if len(dataset) == 0:
            raise UsageError("Evaluation dataset is empty")
        if dataset.m != self.episode_config.num_feature_points:
            raise ConfigurationError(f"Dataset m={dataset.m} does not match the agents' feature-point count")
        seed = self.config.seed if seed is None else seed
        simulator = self._simulator()
        reports: Dict[float, EvalReport] = {}
        for delta_p in delta_ps:
            episode_config = replace(self.episode_config, delta_p=float(delta_p)).validate()
            outcomes = []
            for index, goal in enumerate(dataset.goals()):
                rng = np.random.default_rng([seed, index])
                trace = run_episode(agents, goal, episode_config, simulator, mode, reward_kind=reward_kind,
                                    zeta_noise_deg=zeta_noise_deg, rng=rng)
                outcome = trace.outcome
                outcomes.append(EvalOutcome(goal.goal_id, outcome.success, outcome.final_error, outcome.steps_used))
            reports[float(delta_p)] = aggregate(outcomes)
            log_event("INFO", f"Evaluation at delta_p={delta_p} complete", self.correlation_id, mode=mode,
                      zeta_noise_deg=zeta_noise_deg, **reports[float(delta_p)].summary())
        return reports

    def zeta_sweep(self, agents: AgentSet, dataset: DatasetFile, grid_deg: Sequence[float] = ZETA_SWEEP_GRID_DEG,
                   mode: str = "multiac6", delta_p: float = 0.05, reward_kind: str = "max") -> pd.DataFrame:
        """Success rate against injected zeta noise, one row per grid value."""
        rows = []
        for noise in grid_deg:
            report = self.evaluate(agents, dataset, mode, float(noise), (delta_p,), reward_kind)[float(delta_p)]
            rows.append({"zeta_noise_deg": float(noise), "sr": report.sr, "ae": report.ae,
                         "sigma": report.sigma, "me": report.me})
        return pd.DataFrame(rows, columns=["zeta_noise_deg", "sr", "ae", "sigma", "me"])
