"""Reward functions, success predicates and evaluation statistics."""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence

import numpy as np
import pandas as pd

from .errors import DimensionError, UsageError
from .utils import angle_difference

logger = logging.getLogger(__name__)

REWARD_KINDS = ("max", "mean", "dtw")
DEFAULT_DELTA_P = 0.05
DEFAULT_DELTA_O = 0.0524


def pairwise_distances(F: Any, F_d: Any) -> np.ndarray:
    """Euclidean distance between corresponding feature points, order preserved."""
    current = np.asarray(F, dtype=np.float64)
    desired = np.asarray(F_d, dtype=np.float64)
    if current.shape != desired.shape or current.ndim != 2 or current.shape[1] != 3:
        raise DimensionError(f"Feature point sets must share shape (m, 3), got {current.shape} and {desired.shape}")
    return np.linalg.norm(current - desired, axis=1)


def reward_max_error(F: Any, F_d: Any) -> float:
    return -float(np.max(pairwise_distances(F, F_d)))


def reward_mean_error(F: Any, F_d: Any) -> float:
    return -float(np.mean(pairwise_distances(F, F_d)))


def reward_dtw(F: Any, F_d: Any) -> float:
    """Paired sum of distances between the ordered point sets (no warping between equal-length sets)."""
    return -float(np.sum(pairwise_distances(F, F_d)))


def reward_for(kind: str, F: Any, F_d: Any) -> float:
    if kind == "max":
        return reward_max_error(F, F_d)
    if kind == "mean":
        return reward_mean_error(F, F_d)
    if kind == "dtw":
        return reward_dtw(F, F_d)
    raise UsageError(f"Unknown reward kind '{kind}', expected one of {REWARD_KINDS}")


def orientation_rmse(theta: Any, zeta: Any) -> float:
    """Root-mean-square of the shortest-arc component errors between two Euler triples."""
    theta = np.asarray(theta, dtype=np.float64)
    zeta = np.asarray(zeta, dtype=np.float64)
    if theta.shape != zeta.shape:
        raise DimensionError(f"Orientation shapes differ: {theta.shape} vs {zeta.shape}")
    errors = angle_difference(theta, zeta)
    return float(np.sqrt(np.mean(errors ** 2)))


def reward_orientation(theta: Any, zeta: Any) -> float:
    return -orientation_rmse(theta, zeta)


def success_position(F: Any, F_d: Any, delta_p: float = DEFAULT_DELTA_P) -> bool:
    return bool(np.max(pairwise_distances(F, F_d)) <= delta_p)


def success_orientation(theta: Any, zeta: Any, delta_o: float = DEFAULT_DELTA_O) -> bool:
    return orientation_rmse(theta, zeta) <= delta_o


@dataclass
class EvalOutcome:
    """Result of one evaluation episode."""

    goal_id: int
    success: bool
    final_error: float
    steps_used: int

    def __post_init__(self):
        if self.final_error < 0:
            raise UsageError(f"final_error must be non-negative, got {self.final_error}")


@dataclass
class EvalReport:
    """Aggregate success rate and error statistics over evaluation goals."""

    sr: float
    ae: float
    sigma: float
    me: float
    per_goal: List[EvalOutcome] = field(default_factory=list)

    @property
    def num_goals(self) -> int:
        return len(self.per_goal)

    def summary(self) -> Dict[str, float]:
        return {"sr": self.sr, "ae": self.ae, "sigma": self.sigma, "me": self.me, "goals": self.num_goals}

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame([
            {"goal_id": o.goal_id, "success": o.success, "final_error": o.final_error, "steps_used": o.steps_used}
            for o in self.per_goal
        ], columns=["goal_id", "success", "final_error", "steps_used"])

    def save_csv(self, path: str) -> None:
        self.to_dataframe().to_csv(path, index=False)


def aggregate(outcomes: Sequence[EvalOutcome]) -> EvalReport:
    """SR, mean final error, population standard deviation and minimum final error."""
    if not outcomes:
        raise UsageError("Cannot aggregate an empty list of outcomes")
    errors = np.array([o.final_error for o in outcomes], dtype=np.float64)
    successes = sum(1 for o in outcomes if o.success)
    return EvalReport(
        sr=successes / len(outcomes),
        ae=float(np.mean(errors)),
        sigma=float(np.std(errors)),
        me=float(np.min(errors)),
        per_goal=list(outcomes),
    )


def report_rows(reports: Dict[str, Dict[float, EvalReport]]) -> pd.DataFrame:
    """Flatten {label: {delta_p: report}} into one row per (label, delta_p)."""
    rows = []
    for label, by_delta in reports.items():
        for delta_p, report in by_delta.items():
            rows.append({
                "label": label,
                "delta_p_cm": round(delta_p * 100.0, 4),
                "sr": report.sr,
                "ae_cm": report.ae * 100.0,
                "sigma_cm": report.sigma * 100.0,
                "me_cm": report.me * 100.0,
                "goals": report.num_goals,
            })
    return pd.DataFrame(rows, columns=["label", "delta_p_cm", "sr", "ae_cm", "sigma_cm", "me_cm", "goals"])


def render_table(reports: Dict[str, Dict[float, EvalReport]]) -> str:
    """Plain-text table with columns SR↑, AE↓ ± σ, ME↓ (errors in cm)."""
    header = f"{'Dataset / mode':<28} {'δp (cm)':>8} {'SR↑':>6} {'AE↓ ± σ (cm)':>16} {'ME↓ (cm)':>9}"
    lines = [header, "-" * len(header)]
    for _, row in report_rows(reports).iterrows():
        lines.append(
            f"{row['label']:<28} {row['delta_p_cm']:>8g} {row['sr']:>6.2f} "
            f"{row['ae_cm']:>7.2f} ± {row['sigma_cm']:<6.2f} {row['me_cm']:>9.2f}")
    return "\n".join(lines)
