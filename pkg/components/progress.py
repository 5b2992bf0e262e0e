# ============================================
# components/progress.py
# ============================================

"""
Training-progress aggregation over the metrics and evaluation tables.

Works on the frames written by the trainer (`metrics.csv`, one row per
iteration and robot) and by zero-shot evaluation (one row per episode).
"""

from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd

from components.trainer import EVAL_COLUMNS, METRIC_COLUMNS
from utils.errors import ConfigError


def load_metrics(path: Union[str, Path]) -> pd.DataFrame:
    """
    Read a metrics CSV and check its columns.

    Raises:
        ConfigError: file missing or not a metrics table
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"metrics file not found: {path}")
    df = pd.read_csv(path)
    missing = [col for col in METRIC_COLUMNS if col not in df.columns]
    if missing:
        raise ConfigError(f"{path} is missing metric columns: {', '.join(missing)}")
    return df


def beta_curves(metrics: pd.DataFrame) -> pd.DataFrame:
    """Wide table: one row per iteration, one beta column per robot."""
    if metrics.empty:
        return pd.DataFrame()
    curves = metrics.pivot_table(index="steps", columns="robot", values="beta", aggfunc="last")
    curves.columns.name = None
    return curves.sort_index()


def mean_beta_by_iteration(metrics: pd.DataFrame) -> pd.DataFrame:
    """
    Mean beta across robots for each iteration.

    Returns:
        DataFrame with iteration, steps and mean_beta columns
    """
    if metrics.empty:
        return pd.DataFrame(columns=["iteration", "steps", "mean_beta"])
    grouped = metrics.groupby(["iteration", "steps"], as_index=False)["beta"].mean()
    return grouped.rename(columns={"beta": "mean_beta"}).sort_values("iteration").reset_index(drop=True)


def steps_to_beta(metrics: pd.DataFrame, threshold: float) -> pd.Series:
    """
    Environment steps after which each robot's beta first reached `threshold`.

    Robots that never got there map to NaN.
    """
    result = {}
    for robot, group in metrics.sort_values("steps").groupby("robot"):
        reached = group[group["beta"] >= threshold]
        result[robot] = float(reached["steps"].iloc[0]) if not reached.empty else np.nan
    return pd.Series(result, name=f"steps_to_beta_{threshold:g}", dtype=float)


def robot_summary(metrics: pd.DataFrame, last: int = 10) -> pd.DataFrame:
    """
    Per-robot summary over the final `last` iterations.

    Args:
        metrics: Trainer metrics
        last: Trailing iterations to average returns and success over

    Returns:
        DataFrame indexed by robot with final_beta, mean_return,
        mean_tracking_error and success_rate
    """
    if metrics.empty:
        return pd.DataFrame(columns=["final_beta", "mean_return", "mean_tracking_error", "success_rate"])
    cutoff = metrics["iteration"].max() - last
    recent = metrics[metrics["iteration"] > cutoff]
    final = metrics.sort_values("iteration").groupby("robot")["beta"].last()
    summary = recent.groupby("robot").agg(
        mean_return=("mean_return", "mean"),
        mean_tracking_error=("mean_tracking_error", "mean"),
        success_rate=("success_rate", "mean"),
    )
    summary.insert(0, "final_beta", final)
    return summary


def summarize_episodes(episodes: pd.DataFrame) -> pd.DataFrame:
    """
    Aggregate zero-shot evaluation episodes per robot.

    Returns:
        DataFrame indexed by robot; empty input gives an empty frame
    """
    missing = [col for col in EVAL_COLUMNS if col not in episodes.columns]
    if missing:
        raise ConfigError(f"evaluation table is missing columns: {', '.join(missing)}")
    if episodes.empty:
        return pd.DataFrame(columns=["episodes", "mean_return", "std_return", "mean_length", "mean_tracking_error", "success_rate"])
    df = episodes.copy()
    df["success"] = df["success"].astype(float)
    return df.groupby("robot").agg(
        episodes=("episode", "count"),
        mean_return=("episode_return", "mean"),
        std_return=("episode_return", lambda x: float(np.std(x))),
        mean_length=("length", "mean"),
        mean_tracking_error=("mean_tracking_error", "mean"),
        success_rate=("success", "mean"),
    )


def compare_runs(runs: Dict[str, pd.DataFrame]) -> pd.DataFrame:
    """Long table of mean beta per iteration with a `run` label column."""
    frames: List[pd.DataFrame] = []
    for label, metrics in runs.items():
        curve = mean_beta_by_iteration(metrics)
        curve.insert(0, "run", label)
        frames.append(curve)
    if not frames:
        return pd.DataFrame(columns=["run", "iteration", "steps", "mean_beta"])
    return pd.concat(frames, ignore_index=True)


def run_label(path: Union[str, Path], labels: Optional[List[str]] = None, index: int = 0) -> str:
    """Label for a metrics file: explicit label or its run directory name."""
    if labels and index < len(labels):
        return labels[index]
    path = Path(path)
    return path.parent.name or path.stem
