"""Episode logic: state vectors, action integration and the two-phase MultiAC6 episode.

State layouts (all flat float64 vectors, m feature points ordered base to tip):

    position agent     [X(3), Xdot(3), F(3m), F_d(3m)]                  6 + 6m
    orientation agent  [theta(3), zeta(3), F_d(3m)]                      6 + 3m
    single agent AC3   same as the position agent                        6 + 6m
    single agent AC6   [X(3), Xdot(3), theta(3), zeta(3), F(3m), F_d(3m)]  12 + 6m
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Protocol, Tuple

import numpy as np
import pandas as pd

from .ddpg import Transition
from .dlo_sim import (DloSimulator, DloState, GripperPose, feature_points, tip_orientation, trajectory_frame,
                      validate_points)
from .errors import ConfigurationError, DimensionError, SimulationDivergenceError, UsageError
from .rewards import (REWARD_KINDS, orientation_rmse, pairwise_distances, reward_for, reward_orientation,
                      success_orientation, success_position)
from .utils import wrap_angles

logger = logging.getLogger(__name__)

TRACE_SCHEMA_VERSION = 1
PHASE_ORIENTATION = "orientation"
PHASE_POSITION = "position"
MODES = ("multiac6", "multiac6_star", "ac3", "ac6")
TRACE_FORMATS = ("csv", "json", "parquet")

# Large workspace box, centered laterally on the anchor, base 0.55 m above it
DEFAULT_WORKSPACE_LOW = (-0.10, -0.325, 0.55)
DEFAULT_WORKSPACE_HIGH = (0.10, 0.325, 0.85)
HOME_POSITION = (0.0, 0.15, 0.80)
HOME_ORIENTATION = (-0.6, 0.0, 0.0)

TransitionSink = Callable[[Transition], None]


class Policy(Protocol):
    """Anything that maps a state vector to an action in [-1, 1]^k."""

    def select_action(self, state: Any, explore: bool = False) -> np.ndarray:
        ...

    def reset_noise(self) -> None:
        ...


@dataclass(eq=False)
class DeformationGoal:
    """Desired feature points F_d (m, 3) and desired tip orientation zeta."""

    target_points: np.ndarray
    zeta: np.ndarray
    goal_id: int = 0

    def __post_init__(self):
        self.target_points = validate_points(self.target_points).copy()
        self.zeta = wrap_angles(np.asarray(self.zeta, dtype=np.float64).reshape(3))

    @property
    def m(self) -> int:
        return self.target_points.shape[0]

    def with_zeta(self, zeta: Any) -> "DeformationGoal":
        return DeformationGoal(self.target_points, zeta, self.goal_id)


@dataclass
class EpisodeConfig:
    """Step caps, success thresholds, velocity caps and the workspace clamp."""

    max_steps_p: int = 300
    max_steps_o: int = 100
    delta_p: float = 0.05
    delta_o: float = 0.0524
    max_lin_vel: float = 0.10
    max_ang_vel: float = 0.5
    control_dt: float = 0.06
    num_feature_points: int = 4
    workspace_low: Tuple[float, float, float] = DEFAULT_WORKSPACE_LOW
    workspace_high: Tuple[float, float, float] = DEFAULT_WORKSPACE_HIGH
    home_position: Tuple[float, float, float] = HOME_POSITION
    home_orientation: Tuple[float, float, float] = HOME_ORIENTATION

    def validate(self) -> "EpisodeConfig":
        for name in ("max_steps_p", "max_steps_o", "num_feature_points"):
            value = getattr(self, name)
            if int(value) != value or value <= 0:
                raise ConfigurationError(f"{name} must be a positive integer, got {value}")
        for name in ("delta_p", "delta_o", "max_lin_vel", "max_ang_vel", "control_dt"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        low, high = self.bounds()
        if low.shape != (3,) or high.shape != (3,) or np.any(low >= high):
            raise ConfigurationError(f"Workspace bounds must satisfy low < high per axis, got {low} and {high}")
        home = np.asarray(self.home_position, dtype=np.float64)
        if np.any(home < low) or np.any(home > high):
            raise ConfigurationError(f"Home position {home} lies outside the workspace clamp")
        return self

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return (np.asarray(self.workspace_low, dtype=np.float64), np.asarray(self.workspace_high, dtype=np.float64))

    def home_pose(self, orientation: Any = None) -> GripperPose:
        return GripperPose(self.home_position, self.home_orientation if orientation is None else orientation)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class StepRecord:
    """One control step of either phase."""

    phase: str
    step: int
    gripper: np.ndarray
    action: np.ndarray
    reward: float
    error: float
    success: bool
    points: Optional[np.ndarray] = None
    frame: Optional[Dict[str, float]] = None


@dataclass
class PhaseOutcome:
    phase: str
    success: bool
    final_error: float
    steps_used: int
    total_return: float
    diverged: bool = False
    diagnostic: str = ""


@dataclass
class PhaseTrace:
    """Steps and outcome of one phase; ``final_state`` is set for simulated phases."""

    phase: str
    steps: List[StepRecord]
    outcome: PhaseOutcome
    final_theta: Optional[np.ndarray] = None
    final_state: Optional[DloState] = None


@dataclass
class EpisodeTrace:
    """Ordered phase traces of one episode."""

    goal_id: int
    mode: str
    phases: List[PhaseTrace] = field(default_factory=list)

    @property
    def outcome(self) -> PhaseOutcome:
        """The deciding outcome: the position phase when present."""
        if not self.phases:
            raise UsageError("Episode trace holds no phases")
        return self.phases[-1].outcome

    def phase(self, name: str) -> Optional[PhaseTrace]:
        for trace in self.phases:
            if trace.phase == name:
                return trace
        return None

    @property
    def steps(self) -> List[StepRecord]:
        return [step for trace in self.phases for step in trace.steps]

    def to_dataframe(self, include_particles: bool = False) -> pd.DataFrame:
        """One row per step; pose, action, reward, error and feature-point columns."""
        rows = []
        for index, record in enumerate(self.steps):
            row: Dict[str, Any] = {"episode_step": index, "phase": record.phase, "step": record.step}
            for name, value in zip(("x", "y", "z", "roll", "pitch", "yaw"), record.gripper):
                row[name] = float(value)
            for k, value in enumerate(record.action):
                row[f"action_{k}"] = float(value)
            row["reward"] = record.reward
            row["error"] = record.error
            row["success"] = record.success
            if record.points is not None:
                for k, point in enumerate(record.points):
                    for axis, value in zip("xyz", point):
                        row[f"f{k}_{axis}"] = float(value)
            if include_particles and record.frame is not None:
                row.update({key: value for key, value in record.frame.items() if key.startswith("p")})
                row["time"] = record.frame["time"]
            rows.append(row)
        return pd.DataFrame(rows)

    def summary(self) -> Dict[str, Any]:
        return {
            "schema_version": TRACE_SCHEMA_VERSION,
            "goal_id": self.goal_id,
            "mode": self.mode,
            "outcomes": [asdict(trace.outcome) for trace in self.phases],
        }

    def export(self, path: str, fmt: str = "csv", include_particles: bool = True) -> None:
        """
        Write the trace to ``path``.

        Args:
            path: Output file path
            fmt: 'csv', 'json' or 'parquet'
            include_particles: Add per-particle positions for every simulated step
        """
        frame = self.to_dataframe(include_particles)
        if fmt == "csv":
            frame.to_csv(path, index=False)
        elif fmt == "json":
            payload = self.summary()
            payload["steps"] = json.loads(frame.to_json(orient="records"))
            with open(path, "w", encoding="utf-8") as handle:
                json.dump(payload, handle, indent=2, sort_keys=True)
        elif fmt == "parquet":
            try:
                import pyarrow as pa
                import pyarrow.parquet as pq
            except ImportError:
                raise ImportError("Parquet format requires pyarrow. Install with: pip install pyarrow")
            table = pa.Table.from_pandas(frame, preserve_index=False)
            metadata = {b"multiac6.trace": json.dumps(self.summary()).encode("utf-8")}
            pq.write_table(table.replace_schema_metadata({**(table.schema.metadata or {}), **metadata}), path)
        else:
            raise UsageError(f"Unknown trace format '{fmt}', expected one of {TRACE_FORMATS}")


@dataclass
class AgentSet:
    """Agents taking part in an episode; which ones are needed depends on the mode."""

    orientation: Optional[Policy] = None
    position: Optional[Policy] = None
    single: Optional[Policy] = None

    def require(self, role: str) -> Policy:
        agent = getattr(self, role)
        if agent is None:
            raise UsageError(f"A {role} agent is required for this mode")
        return agent


def _flat_points(points: Any, name: str, m: Optional[int] = None) -> np.ndarray:
    try:
        return validate_points(points, m).reshape(-1)
    except DimensionError as exc:
        raise DimensionError(f"{name}: {exc}") from exc


def _vector3(value: Any, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != (3,):
        raise DimensionError(f"{name} must be a 3-vector, got shape {arr.shape}")
    return arr


def build_state_p(gripper: GripperPose, lin_vel: Any, F: Any, F_d: Any) -> np.ndarray:
    """Position-agent state [X, Xdot, F, F_d]."""
    desired = _flat_points(F_d, "F_d")
    current = _flat_points(F, "F", desired.size // 3)
    return np.concatenate([gripper.position, _vector3(lin_vel, "lin_vel"), current, desired])


def build_state_o(theta: Any, zeta: Any, F_d: Any) -> np.ndarray:
    """Orientation-agent state [theta, zeta, F_d]."""
    return np.concatenate([_vector3(theta, "theta"), _vector3(zeta, "zeta"), _flat_points(F_d, "F_d")])


def build_state_ac6(gripper: GripperPose, lin_vel: Any, zeta: Any, F: Any, F_d: Any) -> np.ndarray:
    """Single-agent 6-DOF state [X, Xdot, theta, zeta, F, F_d]."""
    desired = _flat_points(F_d, "F_d")
    current = _flat_points(F, "F", desired.size // 3)
    return np.concatenate([gripper.position, _vector3(lin_vel, "lin_vel"), gripper.orientation,
                           _vector3(zeta, "zeta"), current, desired])


def state_dim(role: str, m: int) -> int:
    """State length per agent role: position / ac3 6+6m, orientation 6+3m, ac6 12+6m."""
    dims = {"position": 6 + 6 * m, "ac3": 6 + 6 * m, "orientation": 6 + 3 * m, "ac6": 12 + 6 * m}
    if role not in dims:
        raise UsageError(f"Unknown agent role '{role}'")
    return dims[role]


def action_dim(role: str) -> int:
    return 6 if role == "ac6" else 3


def integrate_action(pose: GripperPose, action: Any, kind: str, config: EpisodeConfig) -> GripperPose:
    """
    Advance the gripper pose by one control step of the commanded velocity.

    Translations are clamped to the workspace box; rotations integrate Euler rates and wrap.

    Args:
        pose: Current gripper pose
        action: Normalized velocity command in [-1, 1]^3
        kind: 'translation' or 'rotation'
        config: Episode configuration (velocity caps, control period, workspace)

    Returns:
        New GripperPose
    """
    action = np.clip(_vector3(action, "action"), -1.0, 1.0)
    if kind == "translation":
        low, high = config.bounds()
        position = np.clip(pose.position + action * config.max_lin_vel * config.control_dt, low, high)
        return GripperPose(position, pose.orientation)
    if kind == "rotation":
        return GripperPose(pose.position, pose.orientation + action * config.max_ang_vel * config.control_dt)
    raise UsageError(f"Unknown action kind '{kind}', expected 'translation' or 'rotation'")


def perturb_zeta(zeta: Any, noise_deg: float, rng: np.random.Generator) -> np.ndarray:
    """Add uniform per-axis noise in [-noise_deg, noise_deg] degrees; zero noise draws nothing."""
    if noise_deg < 0:
        raise UsageError(f"zeta noise must be non-negative, got {noise_deg}")
    zeta = wrap_angles(zeta)
    if noise_deg == 0:
        return zeta
    bound = np.deg2rad(noise_deg)
    return wrap_angles(zeta + rng.uniform(-bound, bound, size=3))


def run_orientation_phase(agent_o: Policy, goal: DeformationGoal, start_theta: Any, config: EpisodeConfig,
                          explore: bool = False,
                          transition_sink: Optional[TransitionSink] = None) -> Tuple[np.ndarray, PhaseTrace]:
    """
    Rotate the tip towards goal.zeta with the orientation agent (pure kinematics).

    Args:
        agent_o: Orientation policy
        goal: Deformation goal (zeta and F_d are part of the state)
        start_theta: Initial tip orientation
        config: Episode configuration
        explore: Add exploration noise and report transitions to ``transition_sink``
        transition_sink: Receives one Transition per step

    Returns:
        Tuple of (final theta, PhaseTrace)
    """
    theta = wrap_angles(start_theta)
    zeta = goal.zeta
    error = orientation_rmse(theta, zeta)
    steps: List[StepRecord] = []
    total_return = 0.0
    success = success_orientation(theta, zeta, config.delta_o)
    if explore:
        agent_o.reset_noise()

    pose = GripperPose(np.zeros(3), theta)
    for step in range(config.max_steps_o):
        if success:
            break
        state = build_state_o(theta, zeta, goal.target_points)
        action = agent_o.select_action(state, explore)
        pose = integrate_action(pose, action, "rotation", config)
        next_theta = pose.orientation
        reward = reward_orientation(next_theta, zeta)
        error = -reward
        success = success_orientation(next_theta, zeta, config.delta_o)
        total_return += reward
        if transition_sink is not None:
            transition_sink(Transition(state, action, build_state_o(next_theta, zeta, goal.target_points),
                                       reward, success))
        steps.append(StepRecord(PHASE_ORIENTATION, step, np.concatenate([np.zeros(3), next_theta]),
                                np.asarray(action, dtype=np.float64), reward, error, success))
        theta = next_theta

    outcome = PhaseOutcome(PHASE_ORIENTATION, success, float(error), len(steps), total_return)
    return theta, PhaseTrace(PHASE_ORIENTATION, steps, outcome, final_theta=theta)


def _position_loop(agent: Policy, goal: DeformationGoal, sim_state: DloState, config: EpisodeConfig,
                   simulator: DloSimulator, explore: bool, reward_kind: str,
                   transition_sink: Optional[TransitionSink], record_particles: bool,
                   state_builder: Callable[[GripperPose, np.ndarray, np.ndarray], np.ndarray],
                   rotate: bool) -> Tuple[PhaseOutcome, PhaseTrace]:
    if reward_kind not in REWARD_KINDS:
        raise UsageError(f"Unknown reward kind '{reward_kind}', expected one of {REWARD_KINDS}")
    if abs(simulator.config.control_dt - config.control_dt) > 1e-12:
        raise ConfigurationError("Episode and simulator control periods differ")
    m = goal.m
    state = sim_state
    points = feature_points(state, m)
    error = float(np.max(pairwise_distances(points, goal.target_points)))
    success = success_position(points, goal.target_points, config.delta_p)
    lin_vel = np.zeros(3)
    steps: List[StepRecord] = []
    total_return = 0.0
    diverged = False
    diagnostic = ""
    if explore:
        agent.reset_noise()

    for step in range(config.max_steps_p):
        if success:
            break
        observation = state_builder(state.gripper, lin_vel, points)
        action = np.asarray(agent.select_action(observation, explore), dtype=np.float64)
        command = integrate_action(state.gripper, action[:3], "translation", config)
        if rotate:
            command = integrate_action(command, action[3:6], "rotation", config)
        next_lin_vel = (command.position - state.gripper.position) / config.control_dt
        try:
            next_state = simulator.step(state, command)
        except SimulationDivergenceError as exc:
            diverged = True
            diagnostic = str(exc)
            logger.warning(f"Goal {goal.goal_id}: episode aborted at step {step}: {exc}")
            break
        next_points = feature_points(next_state, m)
        reward = reward_for(reward_kind, next_points, goal.target_points)
        error = float(np.max(pairwise_distances(next_points, goal.target_points)))
        success = success_position(next_points, goal.target_points, config.delta_p)
        total_return += reward
        if transition_sink is not None:
            transition_sink(Transition(observation, action, state_builder(command, next_lin_vel, next_points),
                                       reward, success))
        steps.append(StepRecord(PHASE_POSITION, step, command.as_vector(), action, reward, error, success,
                                next_points, trajectory_frame(next_state) if record_particles else None))
        state, points, lin_vel = next_state, next_points, next_lin_vel

    outcome = PhaseOutcome(PHASE_POSITION, success and not diverged, error, len(steps), total_return,
                           diverged, diagnostic)
    return outcome, PhaseTrace(PHASE_POSITION, steps, outcome, final_theta=tip_orientation(state),
                               final_state=state)


def run_position_phase(agent_p: Policy, goal: DeformationGoal, sim_state: DloState, config: EpisodeConfig,
                       simulator: DloSimulator, explore: bool = False, reward_kind: str = "max",
                       transition_sink: Optional[TransitionSink] = None,
                       record_particles: bool = False) -> Tuple[PhaseOutcome, PhaseTrace]:
    """
    Translate the gripper until the feature points reach goal.target_points.

    The tip orientation reached by the orientation phase is held fixed throughout.

    Args:
        agent_p: Position policy
        goal: Deformation goal
        sim_state: Settled simulator state to start from
        config: Episode configuration
        simulator: Simulator advancing the chain
        explore: Add exploration noise and report transitions to ``transition_sink``
        reward_kind: 'max', 'mean' or 'dtw'
        transition_sink: Receives one Transition per step
        record_particles: Keep full particle positions for every step

    Returns:
        Tuple of (PhaseOutcome, PhaseTrace)
    """
    def builder(gripper: GripperPose, lin_vel: np.ndarray, points: np.ndarray) -> np.ndarray:
        return build_state_p(gripper, lin_vel, points, goal.target_points)

    return _position_loop(agent_p, goal, sim_state, config, simulator, explore, reward_kind,
                          transition_sink, record_particles, builder, rotate=False)


def run_episode_multiac6(agents: AgentSet, goal: DeformationGoal, config: EpisodeConfig, simulator: DloSimulator,
                         explore: bool = False, reward_kind: str = "max", star: bool = False,
                         zeta_target: Any = None, record_particles: bool = False,
                         position_sink: Optional[TransitionSink] = None) -> EpisodeTrace:
    """
    Orientation phase, then position phase from the oriented configuration.

    With ``star`` the orientation phase is skipped and the chain starts with its tip at zeta.
    ``zeta_target`` replaces goal.zeta as the orientation to reach (used for noise sweeps).
    """
    zeta = goal.zeta if zeta_target is None else wrap_angles(zeta_target)
    trace = EpisodeTrace(goal.goal_id, "multiac6_star" if star else "multiac6")
    if star:
        theta = zeta
    else:
        theta, orientation_trace = run_orientation_phase(
            agents.require("orientation"), goal.with_zeta(zeta), config.home_orientation, config, explore)
        trace.phases.append(orientation_trace)

    start = simulator.reset(config.home_pose(theta))
    _, position_trace = run_position_phase(agents.require("position"), goal, start, config, simulator, explore,
                                           reward_kind, position_sink, record_particles)
    trace.phases.append(position_trace)
    return trace


def run_episode_single_agent(agent: Policy, goal: DeformationGoal, config: EpisodeConfig, simulator: DloSimulator,
                             variant: str, explore: bool = False, reward_kind: str = "max", zeta: Any = None,
                             transition_sink: Optional[TransitionSink] = None,
                             record_particles: bool = False) -> EpisodeTrace:
    """
    Single-agent baseline from the home pose: AC3 translates only, AC6 translates and rotates.

    Reward and termination are those of the position phase.
    """
    if variant not in ("ac3", "ac6"):
        raise UsageError(f"Unknown single-agent variant '{variant}', expected 'ac3' or 'ac6'")
    zeta = goal.zeta if zeta is None else wrap_angles(zeta)

    def builder(gripper: GripperPose, lin_vel: np.ndarray, points: np.ndarray) -> np.ndarray:
        if variant == "ac6":
            return build_state_ac6(gripper, lin_vel, zeta, points, goal.target_points)
        return build_state_p(gripper, lin_vel, points, goal.target_points)

    start = simulator.reset(config.home_pose())
    _, position_trace = _position_loop(agent, goal, start, config, simulator, explore, reward_kind,
                                       transition_sink, record_particles, builder, rotate=variant == "ac6")
    return EpisodeTrace(goal.goal_id, variant, [position_trace])


def run_episode(agents: AgentSet, goal: DeformationGoal, config: EpisodeConfig, simulator: DloSimulator, mode: str,
                reward_kind: str = "max", zeta_noise_deg: float = 0.0, rng: Optional[np.random.Generator] = None,
                record_particles: bool = False) -> EpisodeTrace:
    """Deterministic (exploration-free) episode in any evaluation mode."""
    if mode not in MODES:
        raise UsageError(f"Unknown mode '{mode}', expected one of {MODES}")
    if zeta_noise_deg > 0 and rng is None:
        raise UsageError("A random generator is required when zeta noise is applied")
    zeta = perturb_zeta(goal.zeta, zeta_noise_deg, rng)
    if mode in ("multiac6", "multiac6_star"):
        return run_episode_multiac6(agents, goal, config, simulator, reward_kind=reward_kind,
                                    star=mode == "multiac6_star", zeta_target=zeta,
                                    record_particles=record_particles)
    return run_episode_single_agent(agents.require("single"), goal, config, simulator, mode, reward_kind=reward_kind,
                                    zeta=zeta, record_particles=record_particles)
