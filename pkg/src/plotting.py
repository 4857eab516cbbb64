"""Static figures for zeta-noise sweeps and training curves."""

import logging

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  pylint: disable=wrong-import-position
import numpy as np  # noqa: E402  pylint: disable=wrong-import-position
import pandas as pd  # noqa: E402  pylint: disable=wrong-import-position

from .errors import UsageError  # noqa: E402  pylint: disable=wrong-import-position
from .trainer import TrainingLog  # noqa: E402  pylint: disable=wrong-import-position

logger = logging.getLogger(__name__)


def plot_zeta_sweep(sweep: pd.DataFrame, path: str, label: str = "MultiAC6") -> None:
    """Success rate against injected zeta noise."""
    if sweep.empty:
        raise UsageError("Sweep holds no points")
    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    ax.plot(sweep["zeta_noise_deg"], sweep["sr"], marker="o", label=label)
    ax.set_xlabel("ζ noise (deg)")
    ax.set_ylabel("Success rate")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    logger.info(f"Sweep figure written to {path}")


def plot_training_curve(log: TrainingLog, path: str, window: int = 10) -> None:
    """Episode returns with a trailing moving average."""
    frame = log.to_dataframe(include_timing=False)
    if frame.empty:
        raise UsageError("Training log holds no episodes")
    returns = frame["episode_return"]
    smoothed = returns.rolling(window=max(1, window), min_periods=1).mean()
    fig, ax = plt.subplots(figsize=(6.0, 3.5))
    ax.plot(np.arange(len(returns)), returns, alpha=0.35, label="return")
    ax.plot(np.arange(len(returns)), smoothed, label=f"mean of last {window}")
    ax.set_xlabel("Episode")
    ax.set_ylabel("Return")
    ax.set_title(f"{log.role} agent")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    logger.info(f"Training curve written to {path}")
