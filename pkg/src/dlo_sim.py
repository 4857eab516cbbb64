"""Mass-spring chain simulator for a deformable linear object.

Particle 0 is pinned at the ground anchor with a clamped base direction. The
last particle is the gripper grasp point and the second-to-last particle is
held along the gripper's tip axis at rest length, so the tip is locally rigid.
Interior particles integrate with semi-implicit Euler under stretch springs,
discrete bending, viscous damping and gravity.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd

from .errors import ConfigurationError, DimensionError, SimulationDivergenceError, UsageError
from .utils import angle_difference, stable_hash, wrap_angles

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1.0e3
STABILITY_LIMIT = 1.8


def rotation_matrix(orientation: Any) -> np.ndarray:
    """Rotation for Euler angles (roll, pitch, yaw), composed as Rz(yaw) Ry(pitch) Rx(roll)."""
    roll, pitch, yaw = np.asarray(orientation, dtype=np.float64)
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def tip_axis(orientation: Any) -> np.ndarray:
    """Unit direction of the DLO at the gripper (the rotated local z axis)."""
    return rotation_matrix(orientation)[:, 2]


@dataclass(eq=False)
class GripperPose:
    """Gripper position (m) and Euler orientation (rad), angles wrapped to (-pi, pi]."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3).copy()
        self.orientation = wrap_angles(np.asarray(self.orientation, dtype=np.float64).reshape(3))

    def copy(self) -> "GripperPose":
        return GripperPose(self.position.copy(), self.orientation.copy())

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.position).all() and np.isfinite(self.orientation).all())

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.orientation])


@dataclass(frozen=True)
class DloParams:
    """Physical parameters of the chain."""

    num_particles: int = 16
    total_length: float = 1.03
    total_mass: float = 0.2
    stretch_stiffness: float = 500.0
    bend_stiffness: float = 0.03
    damping_ratio: float = 0.01
    gravity: Tuple[float, float, float] = (0.0, 0.0, -9.81)
    ground_anchor: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    anchor_axis: Tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if int(self.num_particles) != self.num_particles or self.num_particles < 4:
            raise ConfigurationError(f"num_particles must be an integer >= 4, got {self.num_particles}")
        for name in ("total_length", "total_mass", "stretch_stiffness", "bend_stiffness"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.damping_ratio < 0:
            raise ConfigurationError(f"damping_ratio must be non-negative, got {self.damping_ratio}")
        if np.linalg.norm(self.anchor_axis) == 0:
            raise ConfigurationError("anchor_axis must be a non-zero vector")
        object.__setattr__(self, "gravity", tuple(float(g) for g in self.gravity))
        object.__setattr__(self, "ground_anchor", tuple(float(a) for a in self.ground_anchor))
        object.__setattr__(self, "anchor_axis", tuple(float(a) for a in self.anchor_axis))

    @property
    def rest_length(self) -> float:
        return self.total_length / (self.num_particles - 1)

    @property
    def particle_mass(self) -> float:
        return self.total_mass / self.num_particles

    @property
    def bend_coefficient(self) -> float:
        """Discrete bending spring constant EI / l^3 (N/m)."""
        return self.bend_stiffness / self.rest_length ** 3

    @property
    def damping_rate(self) -> float:
        """Viscous decay rate 2 * zeta * sqrt(k / m) (1/s)."""
        return 2.0 * self.damping_ratio * np.sqrt(self.stretch_stiffness / self.particle_mass)

    def anchor(self) -> np.ndarray:
        return np.array(self.ground_anchor, dtype=np.float64)

    def unit_anchor_axis(self) -> np.ndarray:
        axis = np.array(self.anchor_axis, dtype=np.float64)
        return axis / np.linalg.norm(axis)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class SimConfig:
    """Control and integration timing."""

    control_dt: float = 0.06
    physics_substeps: int = 20
    settle_time: float = 10.0

    def __post_init__(self):
        if self.control_dt <= 0:
            raise ConfigurationError(f"control_dt must be positive, got {self.control_dt}")
        if int(self.physics_substeps) != self.physics_substeps or self.physics_substeps <= 0:
            raise ConfigurationError(f"physics_substeps must be a positive integer, got {self.physics_substeps}")
        if self.settle_time < 0:
            raise ConfigurationError(f"settle_time must be non-negative, got {self.settle_time}")

    @property
    def substep_dt(self) -> float:
        return self.control_dt / self.physics_substeps

    def check_stability(self, params: DloParams) -> float:
        """Return h * omega_max and raise if it exceeds the documented bound."""
        omega_sq = (4.0 * params.stretch_stiffness + 16.0 * params.bend_coefficient) / params.particle_mass
        product = self.substep_dt * float(np.sqrt(omega_sq))
        if product > STABILITY_LIMIT:
            raise ConfigurationError(
                f"Substep {self.substep_dt:.5f} s is unstable for these stiffnesses "
                f"(h*omega = {product:.3f} > {STABILITY_LIMIT}); increase physics_substeps")
        return product

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(eq=False)
class DloState:
    """Particle positions and velocities plus the gripper boundary condition."""

    positions: np.ndarray
    velocities: np.ndarray
    gripper: GripperPose
    time: float = 0.0

    def copy(self) -> "DloState":
        return DloState(self.positions.copy(), self.velocities.copy(), self.gripper.copy(), self.time)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.positions).all() and np.isfinite(self.velocities).all())


def parameter_hash(params: DloParams, config: SimConfig) -> str:
    """Stable hash identifying a simulator configuration."""
    return stable_hash({"params": params.to_dict(), "config": config.to_dict()})


def feature_indices(num_particles: int, m: int) -> List[int]:
    """Particle indices of m feature points, base to tip, tip included."""
    if m <= 0:
        raise UsageError(f"Number of feature points must be positive, got {m}")
    if m > num_particles:
        raise UsageError(f"Cannot select {m} feature points from {num_particles} particles")
    if m == num_particles:
        return list(range(num_particles))
    return [int(np.floor(k * (num_particles - 1) / m + 0.5)) for k in range(1, m + 1)]


def feature_points(state: DloState, m: int) -> np.ndarray:
    """Positions of m evenly spaced particles, shape (m, 3), ordered base to tip."""
    return state.positions[feature_indices(state.positions.shape[0], m)].copy()


def tip_orientation(state: DloState) -> np.ndarray:
    """Orientation of the locally rigid tip, equal to the last commanded gripper orientation."""
    return wrap_angles(state.gripper.orientation)


def straightness_measure(state: DloState) -> float:
    """Chord between anchor and tip divided by arc length; 1 means straight."""
    segments = np.diff(state.positions, axis=0)
    arc = float(np.sum(np.linalg.norm(segments, axis=1)))
    if arc == 0.0:
        return 1.0
    chord = float(np.linalg.norm(state.positions[-1] - state.positions[0]))
    return chord / arc


def kinetic_energy(state: DloState, params: DloParams) -> float:
    return float(0.5 * params.particle_mass * np.sum(state.velocities ** 2))


def base_ghost(params: DloParams) -> np.ndarray:
    """Virtual particle one rest length behind the anchor along the clamp axis."""
    return params.anchor() - params.rest_length * params.unit_anchor_axis()


def potential_energy(state: DloState, params: DloParams) -> float:
    """Stretch, bending and gravitational energy whose negative gradient is the simulator force."""
    positions = state.positions
    lengths = np.linalg.norm(positions[1:] - positions[:-1], axis=1)
    stretch = 0.5 * params.stretch_stiffness * np.sum((lengths - params.rest_length) ** 2)
    extended = np.vstack([base_ghost(params), positions])
    curvature = extended[:-2] - 2.0 * extended[1:-1] + extended[2:]
    bending = 0.5 * params.bend_coefficient * np.sum(curvature ** 2)
    gravity = -params.particle_mass * np.sum(positions @ np.array(params.gravity, dtype=np.float64))
    return float(stretch + bending + gravity)


def mechanical_energy(state: DloState, params: DloParams) -> float:
    return kinetic_energy(state, params) + potential_energy(state, params)


class DloSimulator:
    """Deterministic integrator for one chain instance."""

    def __init__(self, params: Optional[DloParams] = None, config: Optional[SimConfig] = None):
        """
        Initialize simulator.

        Args:
            params: Physical parameters (defaults if omitted)
            config: Control/integration timing (defaults if omitted)
        """
        self.params = params or DloParams()
        self.config = config or SimConfig()
        self.stability_product = self.config.check_stability(self.params)
        n = self.params.num_particles
        self._free = np.zeros(n, dtype=bool)
        self._free[1:n - 2] = True
        self._gravity = np.array(self.params.gravity, dtype=np.float64)
        self._ghost = base_ghost(self.params)

    @property
    def parameter_hash(self) -> str:
        return parameter_hash(self.params, self.config)

    def _attach_tip(self, positions: np.ndarray, pose_position: np.ndarray, pose_orientation: np.ndarray) -> None:
        positions[-1] = pose_position
        positions[-2] = pose_position - self.params.rest_length * tip_axis(pose_orientation)

    def forces(self, positions: np.ndarray) -> np.ndarray:
        """Gravity, stretch and bending forces on every particle."""
        p = self.params
        forces = np.tile(p.particle_mass * self._gravity, (positions.shape[0], 1))

        edges = positions[1:] - positions[:-1]
        lengths = np.linalg.norm(edges, axis=1)
        safe = np.where(lengths > 1e-12, lengths, 1.0)
        tension = (p.stretch_stiffness * (lengths - p.rest_length) / safe)[:, np.newaxis] * edges
        forces[:-1] += tension
        forces[1:] -= tension

        extended = np.vstack([self._ghost, positions])
        curvature = extended[:-2] - 2.0 * extended[1:-1] + extended[2:]
        c = p.bend_coefficient
        bending = np.zeros_like(extended)
        bending[:-2] -= c * curvature
        bending[1:-1] += 2.0 * c * curvature
        bending[2:] -= c * curvature
        forces += bending[1:]
        return forces

    def step(self, state: DloState, command: GripperPose) -> DloState:
        """
        Advance one control step while the gripper moves linearly to the commanded pose.

        Args:
            state: Current state (not modified)
            command: Commanded gripper pose at the end of the step

        Returns:
            The next DloState
        """
        if not command.is_finite():
            raise ConfigurationError("Gripper command must be finite")
        h = self.config.substep_dt
        substeps = self.config.physics_substeps
        decay = np.exp(-self.params.damping_rate * h)
        inv_mass = 1.0 / self.params.particle_mass

        positions = state.positions.copy()
        velocities = state.velocities.copy()
        start_position = state.gripper.position
        start_orientation = state.gripper.orientation
        delta_position = command.position - start_position
        delta_orientation = angle_difference(command.orientation, start_orientation)
        free = self._free
        anchor = self.params.anchor()

        for s in range(1, substeps + 1):
            alpha = s / substeps
            previous_tip = positions[-2:].copy()
            self._attach_tip(positions, start_position + alpha * delta_position,
                             start_orientation + alpha * delta_orientation)
            velocities[-2:] = (positions[-2:] - previous_tip) / h

            forces = self.forces(positions)
            velocities[free] += h * forces[free] * inv_mass
            velocities[free] *= decay
            positions[free] += h * velocities[free]
            positions[0] = anchor
            velocities[0] = 0.0

            if not np.isfinite(positions).all() or np.abs(positions).max() > DIVERGENCE_LIMIT:
                t = state.time + s * h
                logger.error(f"Simulation diverged at substep {s} (t={t:.4f} s)")
                raise SimulationDivergenceError(s, t, "non-finite or out-of-range coordinates")

        return DloState(positions, velocities, command.copy(), state.time + self.config.control_dt)

    def hold(self, state: DloState, duration: float) -> DloState:
        """Keep the gripper still for ``duration`` seconds."""
        steps = int(round(duration / self.config.control_dt))
        for _ in range(steps):
            state = self.step(state, state.gripper)
        return state

    def _initial_shapes(self, grip: np.ndarray) -> List[np.ndarray]:
        """The anchor-to-grasp line, then half-sine bows of it to either side in two perpendicular planes."""
        p = self.params
        anchor = p.anchor()
        chord = grip - anchor
        reach = float(np.linalg.norm(chord))
        fractions = np.linspace(0.0, 1.0, p.num_particles)[:, np.newaxis]
        line = anchor + fractions * chord
        if reach < 1e-9 or reach >= p.total_length:
            return [line]

        along = chord / reach
        up = -self._gravity if np.linalg.norm(self._gravity) > 0 else p.unit_anchor_axis()
        normal = up - np.dot(up, along) * along
        if np.linalg.norm(normal) < 1e-6:
            normal = np.cross(along, [1.0, 0.0, 0.0])
            if np.linalg.norm(normal) < 1e-6:
                normal = np.cross(along, [0.0, 1.0, 0.0])
        normal /= np.linalg.norm(normal)
        binormal = np.cross(along, normal)
        amplitude = min(2.0 * reach / np.pi * np.sqrt(p.total_length / reach - 1.0), 0.5 * p.total_length)
        bow = amplitude * np.sin(np.pi * fractions)
        return [line] + [line + sign * bow * direction for direction in (normal, binormal) for sign in (1.0, -1.0)]

    def reset(self, initial_gripper: GripperPose) -> DloState:
        """
        Settle the chain under a held gripper into its lowest-energy equilibrium.

        The chain is slack whenever the grasp point is closer than the DLO length. The straight
        anchor-to-grasp placement and four bowed ones are settled briefly and the one with the least
        mechanical energy continues, ties going to the straight placement.

        Args:
            initial_gripper: Gripper pose held during settling

        Returns:
            Settled DloState with time reset to zero
        """
        p = self.params
        reach = float(np.linalg.norm(initial_gripper.position - p.anchor()))
        if reach > p.total_length:
            raise ConfigurationError(
                f"Gripper at {reach:.3f} m from the anchor is beyond the DLO length {p.total_length:.3f} m")
        if not initial_gripper.is_finite():
            raise ConfigurationError("Initial gripper pose must be finite")

        selection_time = 0.25 * self.config.settle_time
        best, best_energy = None, np.inf
        for positions in self._initial_shapes(initial_gripper.position):
            self._attach_tip(positions, initial_gripper.position, initial_gripper.orientation)
            candidate = self.hold(DloState(positions, np.zeros_like(positions), initial_gripper.copy(), 0.0),
                                  selection_time)
            energy = mechanical_energy(candidate, p)
            if energy < best_energy:
                best, best_energy = candidate, energy
        logger.debug(f"Reset selected a settled shape with energy {best_energy:.6f} J")
        state = self.hold(best, self.config.settle_time - selection_time)
        state.time = 0.0
        return state

    def settle_until_quiescent(self, state: DloState, speed_tolerance: float = 1e-3, window: float = 0.5,
                               timeout: float = 30.0) -> Tuple[DloState, bool, float]:
        """
        Hold the gripper until every particle moves slower than ``speed_tolerance`` for ``window`` seconds.

        Returns:
            Tuple of (state, settled flag, maximum displacement during the last window)
        """
        dt = self.config.control_dt
        window_steps = max(1, int(round(window / dt)))
        max_steps = int(round(timeout / dt))
        quiet = 0
        window_start = state.positions.copy()
        for _ in range(max_steps):
            state = self.step(state, state.gripper)
            if np.linalg.norm(state.velocities, axis=1).max() < speed_tolerance:
                quiet += 1
            else:
                quiet = 0
                window_start = state.positions.copy()
            if quiet >= window_steps:
                residual = float(np.linalg.norm(state.positions - window_start, axis=1).max())
                return state, True, residual
        residual = float(np.linalg.norm(state.positions - window_start, axis=1).max())
        return state, False, residual


def trajectory_frame(state: DloState) -> Dict[str, float]:
    """One trajectory row: time, gripper pose and every particle position."""
    row: Dict[str, float] = {"time": float(state.time)}
    for name, value in zip(("x", "y", "z", "roll", "pitch", "yaw"), state.gripper.as_vector()):
        row[f"gripper_{name}"] = float(value)
    for i, point in enumerate(state.positions):
        for axis, value in zip("xyz", point):
            row[f"p{i}_{axis}"] = float(value)
    return row


def trajectory_dataframe(states: Iterable[DloState]) -> pd.DataFrame:
    """Time-stamped trajectory table for CSV export."""
    return pd.DataFrame([trajectory_frame(s) for s in states])


def straight_state(params: DloParams, direction: Any = None, orientation: Any = None) -> DloState:
    """Chain laid straight at rest length from the anchor (gripper at the end)."""
    axis = params.unit_anchor_axis() if direction is None else np.asarray(direction, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    offsets = np.arange(params.num_particles)[:, np.newaxis] * params.rest_length
    positions = params.anchor() + offsets * axis
    orientation = np.zeros(3) if orientation is None else orientation
    return DloState(positions, np.zeros_like(positions), GripperPose(positions[-1], orientation), 0.0)


def validate_points(points: Any, m: Optional[int] = None) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3 or (m is not None and arr.shape[0] != m):
        raise DimensionError(f"Expected feature points of shape ({m if m is not None else 'm'}, 3), got {arr.shape}")
    return arr
