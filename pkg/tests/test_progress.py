import numpy as np
import pandas as pd
import plotly.graph_objects as go
import pytest

from components.charts import (
    create_beta_chart,
    create_eval_chart,
    create_return_chart,
    create_run_comparison_chart,
    write_report,
)
from components.progress import (
    beta_curves,
    compare_runs,
    load_metrics,
    mean_beta_by_iteration,
    robot_summary,
    run_label,
    steps_to_beta,
    summarize_episodes,
)
from components.trainer import EVAL_COLUMNS, METRIC_COLUMNS
from utils.errors import ConfigError


@pytest.fixture
def metrics():
    rows = []
    for iteration in range(1, 5):
        for robot, rate in (("quadruped_a", 0.2), ("biped_a", 0.1)):
            rows.append({
                "iteration": iteration,
                "steps": iteration * 100,
                "robot": robot,
                "beta": min(1.0, rate * iteration),
                "mean_return": np.nan if iteration == 1 else float(iteration),
                "mean_tracking_error": 0.1,
                "success_rate": 0.5,
                "policy_loss": 0.0,
                "value_loss": 1.0,
                "entropy": 1.0,
                "kl": 0.0,
                "clip_frac": 0.0,
            })
    return pd.DataFrame(rows, columns=METRIC_COLUMNS)


@pytest.fixture
def episodes():
    return pd.DataFrame([
        {"robot": "hexapod", "episode": 0, "beta": 0.3, "length": 1000, "episode_return": 10.0,
         "mean_tracking_error": 0.1, "success": True},
        {"robot": "hexapod", "episode": 1, "beta": 0.3, "length": 400, "episode_return": 4.0,
         "mean_tracking_error": 0.5, "success": False},
    ], columns=EVAL_COLUMNS)


def test_beta_curves_pivot(metrics):
    curves = beta_curves(metrics)
    assert list(curves.index) == [100, 200, 300, 400]
    assert set(curves.columns) == {"quadruped_a", "biped_a"}
    assert curves.loc[300, "quadruped_a"] == pytest.approx(0.6)


def test_mean_beta(metrics):
    mean = mean_beta_by_iteration(metrics)
    assert list(mean.columns) == ["iteration", "steps", "mean_beta"]
    assert mean["mean_beta"].tolist() == pytest.approx([0.15, 0.3, 0.45, 0.6])


def test_steps_to_beta(metrics):
    reached = steps_to_beta(metrics, 0.4)
    assert reached["quadruped_a"] == 200.0
    assert reached["biped_a"] == 400.0
    assert np.isnan(steps_to_beta(metrics, 0.9)["biped_a"])


def test_robot_summary_uses_trailing_iterations(metrics):
    summary = robot_summary(metrics, last=2)
    assert summary.loc["quadruped_a", "final_beta"] == pytest.approx(0.8)
    assert summary.loc["biped_a", "mean_return"] == pytest.approx(3.5)
    assert robot_summary(metrics.iloc[:0]).empty


def test_summarize_episodes(episodes):
    summary = summarize_episodes(episodes)
    row = summary.loc["hexapod"]
    assert row["episodes"] == 2
    assert row["mean_return"] == 7.0
    assert row["std_return"] == 3.0
    assert row["success_rate"] == 0.5
    assert summarize_episodes(episodes.iloc[:0]).empty
    with pytest.raises(ConfigError):
        summarize_episodes(episodes.drop(columns=["success"]))


def test_compare_runs_and_labels(metrics):
    long = compare_runs({"urma": metrics, "zero_padding": metrics})
    assert long["run"].unique().tolist() == ["urma", "zero_padding"]
    assert run_label("runs/smoke/metrics.csv") == "smoke"
    assert run_label("runs/smoke/metrics.csv", ["mine"], 0) == "mine"


def test_load_metrics_checks_columns(metrics, tmp_path):
    good = tmp_path / "metrics.csv"
    metrics.to_csv(good, index=False)
    assert len(load_metrics(good)) == 8
    bad = tmp_path / "bad.csv"
    metrics.drop(columns=["beta"]).to_csv(bad, index=False)
    with pytest.raises(ConfigError, match="beta"):
        load_metrics(bad)
    with pytest.raises(ConfigError, match="not found"):
        load_metrics(tmp_path / "absent.csv")


def test_charts(metrics, episodes):
    beta = create_beta_chart(metrics)
    assert isinstance(beta, go.Figure)
    assert len(beta.data) == 3
    assert len(create_return_chart(metrics).data) == 2
    assert len(create_run_comparison_chart({"a": metrics, "b": metrics}).data) == 2
    assert len(create_eval_chart(summarize_episodes(episodes)).data) == 2
    assert len(create_beta_chart(metrics.iloc[:0]).data) == 0


def test_report_file(metrics, tmp_path):
    path = write_report([create_beta_chart(metrics), create_return_chart(metrics)], tmp_path / "out" / "report.html",
                        title="Smoke run")
    html = path.read_text(encoding="utf-8")
    assert html.startswith("<html>")
    assert "<h1>Smoke run</h1>" in html
    assert html.count("<div") >= 2
