"""Deformation dataset generation, splitting and persistence."""

import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .dlo_sim import (DloParams, DloSimulator, DloState, GripperPose, SimConfig, feature_points, parameter_hash,
                      straight_state, straightness_measure, tip_orientation)
from .errors import (ConfigurationError, DatasetFormatError, DatasetGenerationError, DatasetVersionError,
                     SimulationDivergenceError, UsageError)
from .orchestrator import HOME_ORIENTATION, HOME_POSITION, DeformationGoal
from .rewards import pairwise_distances
from .utils import angle_difference, log_event, stable_hash

logger = logging.getLogger(__name__)

DATASET_FORMAT = "multiac6-dataset"
DATASET_VERSION = 1
HEADER_KEYS = ("count", "box", "seed", "m", "parameter_hash")
BOX_BASE_HEIGHT = 0.55
LARGE_DEFORMATION = 0.15


@dataclass(frozen=True)
class WorkspaceBox:
    """Axis-aligned box; ``origin`` is the center of its base face."""

    name: str
    extents: Tuple[float, float, float]
    origin: Tuple[float, float, float] = (0.0, 0.0, BOX_BASE_HEIGHT)

    def __post_init__(self):
        if len(self.extents) != 3 or any(e <= 0 for e in self.extents):
            raise ConfigurationError(f"Workspace extents must be three positive lengths, got {self.extents}")
        object.__setattr__(self, "extents", tuple(float(e) for e in self.extents))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def low(self) -> np.ndarray:
        ex, ey, _ = self.extents
        return np.asarray(self.origin) + np.array([-ex / 2.0, -ey / 2.0, 0.0])

    @property
    def high(self) -> np.ndarray:
        ex, ey, ez = self.extents
        return np.asarray(self.origin) + np.array([ex / 2.0, ey / 2.0, ez])

    def contains(self, point: Any) -> bool:
        point = np.asarray(point, dtype=np.float64)
        return bool(np.all(point >= self.low) and np.all(point <= self.high))

    def farthest_corner_distance(self, anchor: Any) -> float:
        corners = np.array([[x, y, z] for x in (self.low[0], self.high[0])
                            for y in (self.low[1], self.high[1]) for z in (self.low[2], self.high[2])])
        return float(np.linalg.norm(corners - np.asarray(anchor), axis=1).max())

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "extents": list(self.extents), "origin": list(self.origin)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "WorkspaceBox":
        return cls(data["name"], tuple(data["extents"]), tuple(data["origin"]))


WORKSPACE_PRESETS: Dict[str, WorkspaceBox] = {
    "small": WorkspaceBox("small", (0.15, 0.40, 0.25)),
    "medium": WorkspaceBox("medium", (0.20, 0.50, 0.25)),
    "large": WorkspaceBox("large", (0.20, 0.65, 0.30)),
}


def workspace_box(name: str) -> WorkspaceBox:
    if name not in WORKSPACE_PRESETS:
        raise UsageError(f"Unknown workspace box '{name}', expected one of {sorted(WORKSPACE_PRESETS)}")
    return WORKSPACE_PRESETS[name]


@dataclass(eq=False)
class DeformationRecord:
    goal: DeformationGoal
    generating_pose: GripperPose
    settle_residual: float

    def to_json(self) -> Dict[str, Any]:
        return {
            "goal_id": self.goal.goal_id,
            "F_d": self.goal.target_points.tolist(),
            "zeta": self.goal.zeta.tolist(),
            "pose_position": self.generating_pose.position.tolist(),
            "pose_orientation": self.generating_pose.orientation.tolist(),
            "settle_residual": self.settle_residual,
        }

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "DeformationRecord":
        goal = DeformationGoal(np.array(data["F_d"], dtype=np.float64), np.array(data["zeta"], dtype=np.float64),
                               int(data["goal_id"]))
        pose = GripperPose(np.array(data["pose_position"]), np.array(data["pose_orientation"]))
        return cls(goal, pose, float(data["settle_residual"]))


@dataclass(eq=False)
class DatasetFile:
    """Header plus records; ``cross_simulator`` is set when loaded under different simulator parameters."""

    box: WorkspaceBox
    seed: int
    m: int
    parameter_hash: str
    records: List[DeformationRecord] = field(default_factory=list)
    version: int = DATASET_VERSION
    cross_simulator: bool = False

    def __len__(self) -> int:
        return len(self.records)

    def goals(self) -> List[DeformationGoal]:
        return [record.goal for record in self.records]

    def header(self) -> Dict[str, Any]:
        return {
            "format": DATASET_FORMAT,
            "version": self.version,
            "box": self.box.to_dict(),
            "seed": self.seed,
            "m": self.m,
            "count": len(self.records),
            "parameter_hash": self.parameter_hash,
        }

    def content_hash(self) -> str:
        return stable_hash({"header": self.header(), "records": [r.to_json() for r in self.records]})

    def subset(self, indices: Sequence[int]) -> "DatasetFile":
        return DatasetFile(self.box, self.seed, self.m, self.parameter_hash, [self.records[i] for i in indices],
                           self.version, self.cross_simulator)


@dataclass(frozen=True)
class GenerationSettings:
    """Sampling ranges, path speeds and quiescence criteria."""

    roll_range_deg: float = 60.0
    pitch_range_deg: float = 60.0
    yaw_range_deg: float = 180.0
    path_lin_speed: float = 0.25
    path_ang_speed: float = 1.0
    speed_tolerance: float = 1e-3
    quiet_window: float = 0.5
    settle_timeout: float = 30.0
    straightness_limit: float = 0.995
    resample_budget: int = 25


def _sample_pose(box: WorkspaceBox, settings: GenerationSettings, rng: np.random.Generator) -> GripperPose:
    position = rng.uniform(box.low, box.high)
    ranges = np.deg2rad([settings.roll_range_deg, settings.pitch_range_deg, settings.yaw_range_deg])
    orientation = rng.uniform(-ranges, ranges)
    return GripperPose(position, orientation)


def drive_gripper(simulator: DloSimulator, state: DloState, target: GripperPose,
                  lin_speed: float, ang_speed: float) -> DloState:
    """Move the gripper along a straight, shortest-arc path to ``target`` at bounded speeds."""
    dt = simulator.config.control_dt
    delta_position = target.position - state.gripper.position
    delta_orientation = angle_difference(target.orientation, state.gripper.orientation)
    duration = max(float(np.linalg.norm(delta_position)) / lin_speed,
                   float(np.abs(delta_orientation).max()) / ang_speed)
    steps = max(1, math.ceil(duration / dt))
    start_position = state.gripper.position.copy()
    start_orientation = state.gripper.orientation.copy()
    for k in range(1, steps + 1):
        alpha = k / steps
        command = GripperPose(start_position + alpha * delta_position, start_orientation + alpha * delta_orientation)
        state = simulator.step(state, command)
    return state


def _generate_records(params: DloParams, sim_config: SimConfig, settings: GenerationSettings, box: WorkspaceBox,
                      m: int, seed: int, indices: Sequence[int]) -> List[DeformationRecord]:
    simulator = DloSimulator(params, sim_config)
    home = simulator.reset(GripperPose(HOME_POSITION, HOME_ORIENTATION))
    return [_generate_record(simulator, home, settings, box, m, seed, i) for i in indices]


def _generate_record(simulator: DloSimulator, home: DloState, settings: GenerationSettings, box: WorkspaceBox,
                     m: int, seed: int, index: int) -> DeformationRecord:
    rng = np.random.default_rng([seed, index])
    for attempt in range(settings.resample_budget):
        pose = _sample_pose(box, settings, rng)
        try:
            state = drive_gripper(simulator, home, pose, settings.path_lin_speed, settings.path_ang_speed)
            state, settled, residual = simulator.settle_until_quiescent(
                state, settings.speed_tolerance, settings.quiet_window, settings.settle_timeout)
        except SimulationDivergenceError as exc:
            logger.debug(f"Record {index} attempt {attempt}: {exc}")
            continue
        if not settled:
            logger.debug(f"Record {index} attempt {attempt}: not quiescent within {settings.settle_timeout} s")
            continue
        if straightness_measure(state) > settings.straightness_limit:
            logger.debug(f"Record {index} attempt {attempt}: near-straight configuration rejected")
            continue
        goal = DeformationGoal(feature_points(state, m), tip_orientation(state), index)
        return DeformationRecord(goal, pose, residual)
    raise DatasetGenerationError(
        f"Record {index} could not be generated within {settings.resample_budget} attempts")


def _chunk(indices: Sequence[int], parts: int) -> List[List[int]]:
    size = math.ceil(len(indices) / parts)
    return [list(indices[i:i + size]) for i in range(0, len(indices), size)]


class DatasetForge:
    """Drives the simulator to random poses in a workspace box and records the settled deformations."""

    def __init__(self, params: Optional[DloParams] = None, sim_config: Optional[SimConfig] = None,
                 settings: Optional[GenerationSettings] = None, workers: int = 1):
        """
        Initialize dataset forge.

        Args:
            params: Simulator physical parameters
            sim_config: Simulator timing
            settings: Sampling and settling settings
            workers: Number of generator processes (1 generates in-process)
        """
        self.params = params or DloParams()
        self.sim_config = sim_config or SimConfig()
        self.settings = settings or GenerationSettings()
        if workers < 1:
            raise ConfigurationError(f"workers must be at least 1, got {workers}")
        self.workers = workers

    @property
    def parameter_hash(self) -> str:
        return parameter_hash(self.params, self.sim_config)

    def generate(self, box: WorkspaceBox, n: int, seed: int, m: int = 4, correlation_id: str = "") -> DatasetFile:
        """
        Generate ``n`` deformation records inside ``box``.

        Args:
            box: Workspace box to sample gripper positions from
            n: Number of records
            seed: Dataset seed; record i draws from default_rng([seed, i])
            m: Number of feature points per goal
            correlation_id: Correlation ID for logging

        Returns:
            DatasetFile with exactly n records
        """
        if n < 1:
            raise UsageError(f"Dataset size must be at least 1, got {n}")
        reach = box.farthest_corner_distance(self.params.anchor())
        if reach > self.params.total_length:
            raise ConfigurationError(
                f"Box '{box.name}' reaches {reach:.3f} m from the anchor, beyond the DLO length")

        log_event("INFO", f"Generating {n} deformations in the {box.name} box", correlation_id,
                  seed=seed, m=m, workers=self.workers, parameter_hash=self.parameter_hash)
        indices = list(range(n))
        try:
            if self.workers == 1:
                records = _generate_records(self.params, self.sim_config, self.settings, box, m, seed, indices)
            else:
                chunks = _chunk(indices, self.workers)
                with ProcessPoolExecutor(max_workers=self.workers) as pool:
                    futures = [pool.submit(_generate_records, self.params, self.sim_config, self.settings, box, m,
                                           seed, chunk) for chunk in chunks]
                    records = [record for future in futures for record in future.result()]
        except DatasetGenerationError as exc:
            log_event("ERROR", f"Dataset generation failed: {exc}", correlation_id)
            raise

        log_event("INFO", f"Generated {len(records)} deformations", correlation_id, box=box.name)
        return DatasetFile(box, seed, m, self.parameter_hash, records)


def split_seen(dataset: DatasetFile, fraction: float, seed: int) -> Tuple[DatasetFile, DatasetFile]:
    """Reproducible disjoint (train, test) partition with round(fraction * n) training records."""
    if not 0.0 < fraction < 1.0:
        raise UsageError(f"Split fraction must lie in (0, 1), got {fraction}")
    n = len(dataset)
    n_train = int(round(fraction * n))
    if n_train == 0 or n_train == n:
        raise UsageError(f"Fraction {fraction} leaves an empty split of {n} records")
    order = np.random.default_rng(seed).permutation(n)
    return dataset.subset(sorted(order[:n_train].tolist())), dataset.subset(sorted(order[n_train:].tolist()))


def save_dataset(dataset: DatasetFile, path: str) -> None:
    """Write the header line then one record per line."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(json.dumps(dataset.header(), sort_keys=True) + "\n")
        for record in dataset.records:
            handle.write(json.dumps(record.to_json(), sort_keys=True) + "\n")


def load_dataset(path: str, params: Optional[DloParams] = None, sim_config: Optional[SimConfig] = None,
                 correlation_id: str = "") -> DatasetFile:
    """
    Read a dataset file.

    Goals generated under different simulator parameters stay usable; the result is flagged ``cross_simulator``.

    Raises:
        DatasetVersionError: Incompatible format version
        DatasetFormatError: Truncated or unparseable file
    """
    with open(path, "r", encoding="utf-8") as handle:
        lines = handle.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DatasetFormatError(f"{path}: empty dataset file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: unreadable header: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != DATASET_FORMAT:
        raise DatasetFormatError(f"{path}: not a {DATASET_FORMAT} file")
    if header.get("version") != DATASET_VERSION:
        raise DatasetVersionError(f"{path}: dataset version {header.get('version')} is not supported "
                                  f"(expected {DATASET_VERSION})")

    missing = [key for key in HEADER_KEYS if header.get(key) is None]
    if missing:
        raise DatasetFormatError(f"{path}: header is missing {', '.join(missing)}")
    try:
        count = int(header.get("count"))
        box = WorkspaceBox.from_dict(header.get("box"))
        seed, m = int(header.get("seed")), int(header.get("m"))
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"{path}: malformed header field: {exc}") from exc

    records = []
    for number, line in enumerate(lines[1:], start=2):
        try:
            records.append(DeformationRecord.from_json(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(f"{path}: line {number} is not a valid record: {exc}") from exc
    if len(records) != count:
        raise DatasetFormatError(f"{path}: header declares {count} records, found {len(records)}")

    dataset = DatasetFile(box, seed, m, str(header.get("parameter_hash")), records, int(header.get("version")))
    if any(record.goal.m != dataset.m for record in records):
        raise DatasetFormatError(f"{path}: record feature-point count differs from header m={dataset.m}")

    expected = parameter_hash(params or DloParams(), sim_config or SimConfig())
    if dataset.parameter_hash != expected:
        dataset.cross_simulator = True
        message = (f"{path} was generated with simulator parameters {dataset.parameter_hash}, "
                   f"current parameters are {expected}; goals flagged as cross-simulator")
        log_event("WARNING", message, correlation_id)
        warnings.warn(message, UserWarning)
    return dataset


def deformation_magnitude(record: DeformationRecord, params: Optional[DloParams] = None) -> float:
    """Max distance between F_d and the feature points of the straight configuration along the anchor axis."""
    params = params or DloParams()
    reference = feature_points(straight_state(params), record.goal.m)
    return float(np.max(pairwise_distances(record.goal.target_points, reference)))


def records_dataframe(dataset: DatasetFile, params: Optional[DloParams] = None) -> pd.DataFrame:
    rows = []
    for record in dataset.records:
        rows.append({
            "goal_id": record.goal.goal_id,
            "magnitude": deformation_magnitude(record, params),
            "roll": record.goal.zeta[0],
            "pitch": record.goal.zeta[1],
            "yaw": record.goal.zeta[2],
            "settle_residual": record.settle_residual,
        })
    return pd.DataFrame(rows, columns=["goal_id", "magnitude", "roll", "pitch", "yaw", "settle_residual"])


def summarize(dataset: DatasetFile, params: Optional[DloParams] = None) -> Dict[str, Any]:
    """Count and deformation magnitude statistics."""
    if not dataset.records:
        raise UsageError("Cannot summarize an empty dataset")
    frame = records_dataframe(dataset, params)
    magnitudes = frame["magnitude"]
    return {
        "box": dataset.box.name,
        "count": len(dataset),
        "mean_magnitude": float(magnitudes.mean()),
        "max_magnitude": float(magnitudes.max()),
        "large_deformations": int((magnitudes > LARGE_DEFORMATION).sum()),
        "cross_simulator": dataset.cross_simulator,
    }
