# ============================================
# components/charts.py
# ============================================

"""
Chart components using Plotly for training and evaluation reports.
"""

from pathlib import Path
from typing import Dict, List, Union

import pandas as pd
import plotly.express as px
import plotly.graph_objects as go

from components.progress import beta_curves, compare_runs, mean_beta_by_iteration

_MEAN_LINE = dict(color='#ffa500', width=2, dash='dash')


def _empty_figure(text: str = "No data available") -> go.Figure:
    fig = go.Figure()
    fig.add_annotation(
        text=text,
        xref="paper", yref="paper",
        x=0.5, y=0.5, showarrow=False
    )
    return fig


def create_beta_chart(metrics: pd.DataFrame, height: int = 400) -> go.Figure:
    """
    Curriculum factor per robot over environment steps.

    Args:
        metrics: Trainer metrics (iteration, steps, robot, beta, ...)
        height: Chart height in pixels

    Returns:
        Plotly figure with one line per robot plus the dashed mean
    """
    curves = beta_curves(metrics)
    if curves.empty:
        return _empty_figure()

    fig = go.Figure()
    colors = px.colors.qualitative.Set2
    for idx, robot in enumerate(curves.columns):
        fig.add_trace(go.Scatter(
            x=curves.index,
            y=curves[robot],
            mode='lines',
            name=robot,
            line=dict(color=colors[idx % len(colors)], width=2),
        ))

    mean = mean_beta_by_iteration(metrics)
    fig.add_trace(go.Scatter(
        x=mean['steps'],
        y=mean['mean_beta'],
        mode='lines',
        name='Mean',
        line=_MEAN_LINE,
        hovertemplate='Steps: %{x}<br>Mean beta: %{y:.3f}'
    ))

    fig.update_layout(
        title="Curriculum Progress",
        xaxis_title="Environment steps",
        yaxis_title="beta",
        height=height,
        hovermode='x unified',
        showlegend=True,
        template='plotly_white',
        margin=dict(l=0, r=0, t=40, b=0)
    )
    fig.update_yaxes(range=[0, 1.05])
    return fig


def create_return_chart(metrics: pd.DataFrame, height: int = 400) -> go.Figure:
    """Mean episode return per robot and iteration (iterations without finished episodes are gaps)."""
    plot_df = metrics[metrics['mean_return'].notna()] if not metrics.empty else metrics
    if plot_df.empty:
        return _empty_figure("No finished episodes")

    fig = go.Figure()
    colors = px.colors.qualitative.Set2
    for idx, (robot, robot_df) in enumerate(plot_df.groupby('robot')):
        fig.add_trace(go.Scatter(
            x=robot_df['steps'],
            y=robot_df['mean_return'],
            mode='lines+markers',
            name=robot,
            line=dict(color=colors[idx % len(colors)], width=2),
            marker=dict(size=4)
        ))

    fig.update_layout(
        title="Episode Return",
        xaxis_title="Environment steps",
        yaxis_title="Mean return",
        height=height,
        hovermode='x unified',
        template='plotly_white'
    )
    return fig


def create_run_comparison_chart(runs: Dict[str, pd.DataFrame], height: int = 400) -> go.Figure:
    """
    Mean beta across robots for several runs (e.g. urma_v2 against the baselines).

    Args:
        runs: Label -> metrics frame
        height: Chart height
    """
    long = compare_runs(runs)
    if long.empty:
        return _empty_figure()

    fig = go.Figure()
    colors = px.colors.qualitative.Set1
    for idx, (label, run_df) in enumerate(long.groupby('run', sort=False)):
        fig.add_trace(go.Scatter(
            x=run_df['steps'],
            y=run_df['mean_beta'],
            mode='lines',
            name=label,
            line=dict(color=colors[idx % len(colors)], width=3)
        ))

    fig.update_layout(
        title="Mean Curriculum Progress by Run",
        xaxis_title="Environment steps",
        yaxis_title="Mean beta",
        height=height,
        hovermode='x unified',
        showlegend=True,
        template='plotly_white'
    )
    fig.update_yaxes(range=[0, 1.05])
    return fig


def create_eval_chart(summary: pd.DataFrame, height: int = 400) -> go.Figure:
    """Bar chart of zero-shot mean return (with std) and success rate per robot."""
    if summary.empty:
        return _empty_figure("No evaluation episodes")

    fig = go.Figure()
    fig.add_trace(go.Bar(
        x=summary.index,
        y=summary['mean_return'],
        error_y=dict(type='data', array=summary['std_return']),
        name='Mean return',
        marker_color='#667eea'
    ))
    fig.add_trace(go.Scatter(
        x=summary.index,
        y=summary['success_rate'],
        mode='markers',
        name='Success rate',
        marker=dict(size=12, color='#ffa500'),
        yaxis='y2'
    ))
    fig.update_layout(
        title="Zero-shot Evaluation",
        xaxis_title="Robot",
        yaxis=dict(title="Mean return"),
        yaxis2=dict(title="Success rate", overlaying='y', side='right', range=[0, 1]),
        height=height,
        template='plotly_white'
    )
    return fig


def write_report(figures: List[go.Figure], path: Union[str, Path], title: str = "Training report") -> Path:
    """Write the figures into one standalone HTML file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    parts = [
        fig.to_html(full_html=False, include_plotlyjs=(idx == 0))
        for idx, fig in enumerate(figures)
    ]
    html = (
        "<html><head><meta charset=\"utf-8\"><title>" + title + "</title></head><body>\n"
        + f"<h1>{title}</h1>\n"
        + "\n".join(parts)
        + "\n</body></html>\n"
    )
    path.write_text(html, encoding="utf-8")
    return path
