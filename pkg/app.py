# app.py
"""
Multi-embodiment locomotion training
Command-line entry point: train, eval, generate, inspect, report
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd

from components.autograd import no_grad
from components.baselines import policy_from_params
from components.charts import (
    create_beta_chart,
    create_eval_chart,
    create_return_chart,
    create_run_comparison_chart,
    write_report,
)
from components.checkpoint import load_checkpoint
from components.env import LocomotionEnv, trajectory_frame, trajectory_row
from components.morphology import load_morphology, serialize_morphology
from components.network import ObservationBatch
from components.progress import load_metrics, robot_summary, run_label, summarize_episodes
from components.randomization import DESCRIPTION_SLOTS, make_stream, sample_embodiment, spawn_streams
from components.trainer import Trainer, evaluate_zero_shot
from utils.config_loader import RunConfig, load_process_settings, load_run_config, parse_run_config, write_manifest
from utils.errors import CheckpointError, ConfigError, KeyValueSyntaxError, MorphologyError, NonFiniteError, PolicyConfigError
from utils.keyvalue import format_float

logger = logging.getLogger("app")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def configure_logging(level: str) -> None:
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT, force=True)


def description_columns() -> List[str]:
    """Column names of the description-vector dump, one per vector entry."""
    columns = []
    for name, slot in DESCRIPTION_SLOTS.items():
        width = slot.stop - slot.start
        columns.extend([name] if width == 1 else [f"{name}_{k}" for k in range(width)])
    return columns


def _settings_config(path: Optional[str]) -> RunConfig:
    """Env / randomization / network settings for eval and inspect (robot files not loaded)."""
    if path is None:
        return RunConfig()
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigError(f"config file not found: {config_path}")
    return parse_run_config(config_path.read_text(encoding="utf-8"), root=config_path.parent)


def _load_robot(path: str):
    if not Path(path).exists():
        raise ConfigError(f"robot file not found: {path}")
    return load_morphology(path)


def _load_policy(checkpoint: str, settings: RunConfig):
    params = load_checkpoint(checkpoint)
    policy = policy_from_params(params, settings.network)
    logger.info("loaded %s checkpoint %s (%d parameters)", params.kind, checkpoint, params.size())
    return params, policy


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_train(args, threads: int) -> int:
    config = load_run_config(args.config, seed=args.seed, output=args.out)
    output_dir = config.output
    output_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(config, output_dir, extra={"threads": threads})

    trainer = Trainer(
        config.robots,
        policy_kind=config.policy,
        config=config.train,
        network_config=config.network,
        env_config=config.env,
        curriculum_config=config.curriculum,
        ranges=config.ranges,
        dr_ranges=config.dr_ranges,
        output_dir=output_dir,
        threads=threads,
    )
    metrics = trainer.run()
    summary = robot_summary(metrics)
    print(f"Trained {config.policy} for {trainer.steps} steps; artifacts in {output_dir}")
    print(summary.to_string(float_format=lambda x: f"{x:.3f}"))

    if config.holdout is not None:
        _evaluate_holdout(config, trainer, args.eval_episodes, output_dir)
    return EXIT_OK


def _evaluate_holdout(config: RunConfig, trainer: Trainer, episodes: int, output_dir: Path) -> None:
    """Zero-shot on the held-out robot plus the same protocol on every training robot."""
    beta = config.curriculum.eval_beta
    kwargs = dict(
        episodes=episodes,
        beta=beta,
        seed=config.seed,
        env_config=config.env,
        curriculum_config=config.curriculum,
        ranges=config.ranges,
        dr_ranges=config.dr_ranges,
        policy=trainer.policy,
    )
    holdout = None
    try:
        holdout = evaluate_zero_shot(trainer.params, config.holdout, **kwargs)
        holdout.to_csv(output_dir / "holdout_metrics.csv", index=False)
    except PolicyConfigError as exc:
        logger.warning("skipping holdout evaluation of %s: %s", config.holdout.name, exc)

    frames = [
        evaluate_zero_shot(trainer.params, robot, robot_index=index, **kwargs)
        for index, robot in enumerate(trainer.robots)
    ]
    train_eval = pd.concat(frames, ignore_index=True)
    train_eval.to_csv(output_dir / "train_eval_metrics.csv", index=False)

    tables = [summarize_episodes(train_eval)]
    if holdout is not None:
        tables.append(summarize_episodes(holdout))
    print(f"Zero-shot evaluation at beta {beta:g}:")
    print(pd.concat(tables).to_string(float_format=lambda x: f"{x:.3f}"))


def cmd_eval(args, threads: int) -> int:
    if not 0.0 <= args.beta <= 1.0:
        raise ConfigError("--beta must be in [0, 1]")
    settings = _settings_config(args.config)
    params, policy = _load_policy(args.checkpoint, settings)
    robot = _load_robot(args.robot)
    episodes = evaluate_zero_shot(
        params,
        robot,
        episodes=args.episodes,
        beta=args.beta,
        seed=args.seed,
        env_config=settings.env,
        curriculum_config=settings.curriculum,
        ranges=settings.ranges,
        dr_ranges=settings.dr_ranges,
        policy=policy,
        robot_index=args.robot_index,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    episodes.to_csv(out, index=False)
    summary = summarize_episodes(episodes)
    print(f"Evaluated {robot.name}: {len(episodes)} episodes at beta {args.beta:g} -> {out}")
    if not summary.empty:
        print(summary.to_string(float_format=lambda x: f"{x:.3f}"))
    return EXIT_OK


def cmd_generate(args, threads: int) -> int:
    settings = _settings_config(args.config)
    base = _load_robot(args.robot)
    if args.count < 0:
        raise ConfigError("--count must be >= 0")
    if not 0.0 <= args.beta <= 1.0:
        raise ConfigError("--beta must be in [0, 1]")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    stream = make_stream(args.seed)
    columns = description_columns()
    rows: List[Dict] = []
    for index in range(args.count):
        embodiment = sample_embodiment(base, args.beta, stream, settings.ranges, settings.dr_ranges)
        morph = embodiment.to_morphology()
        (out_dir / f"{base.name}_{index:03d}.morph").write_text(serialize_morphology(morph), encoding="utf-8")
        for j, vector in enumerate(embodiment.description_vectors):
            row = {"embodiment": index, "joint": j, "joint_name": base.joints[j].name}
            row.update({col: format_float(value) for col, value in zip(columns, vector)})
            rows.append(row)

    pd.DataFrame(rows, columns=["embodiment", "joint", "joint_name"] + columns).to_csv(
        out_dir / "descriptions.csv", index=False
    )
    print(f"Wrote {args.count} embodiments of {base.name} at beta {args.beta:g} to {out_dir}")
    return EXIT_OK


def cmd_inspect(args, threads: int) -> int:
    if not 0.0 <= args.beta <= 1.0:
        raise ConfigError("--beta must be in [0, 1]")
    settings = _settings_config(args.config)
    params, policy = _load_policy(args.checkpoint, settings)
    robot = _load_robot(args.robot)
    policy.check_robot(args.robot_index, robot.joint_count)
    P = params.constants()

    env = LocomotionEnv(robot, spawn_streams(args.seed, 1)[0], settings.env, settings.ranges, settings.dr_ranges)
    env.reset(args.beta)
    rows = []
    for step_index in range(args.steps):
        actor, critic = env.observe(args.beta)
        batch = ObservationBatch(
            descriptions=actor.descriptions[None],
            joint_obs=actor.joint_obs[None],
            general=actor.general[None],
            critic_joint_obs=critic.joint_obs[None],
            critic_general=critic.general[None],
        )
        with no_grad():
            mu = policy.distribution(P, batch, args.robot_index).mu.data[0]
        reward, done, info = env.step(mu, args.beta)
        if "error" in info:
            raise NonFiniteError(f"{info['error']} while inspecting {robot.name}", node="env.step")
        rows.append(trajectory_row(step_index, 0, reward, done, args.beta, env.state))
        if done:
            env.reset(args.beta)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    trajectory_frame(rows, robot.joint_count).to_csv(out, index=False)
    print(f"Wrote {len(rows)} steps of {robot.name} to {out}")
    return EXIT_OK


def cmd_report(args, threads: int) -> int:
    runs = {
        run_label(path, args.labels, index): load_metrics(path)
        for index, path in enumerate(args.metrics)
    }
    if len(runs) != len(args.metrics):
        raise ConfigError("metrics files need distinct labels (use --labels)")

    figures = []
    if len(runs) > 1:
        figures.append(create_run_comparison_chart(runs))
    for label, metrics in runs.items():
        beta_fig = create_beta_chart(metrics)
        beta_fig.update_layout(title=f"Curriculum Progress - {label}")
        figures.append(beta_fig)
        figures.append(create_return_chart(metrics))
    if args.eval:
        episodes = pd.concat([pd.read_csv(path) for path in args.eval], ignore_index=True)
        figures.append(create_eval_chart(summarize_episodes(episodes)))

    out = write_report(figures, args.out)
    print(f"Wrote report for {len(runs)} run(s) to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="app.py", description="Multi-embodiment locomotion training")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (default: MORPHRL_LOG_LEVEL or INFO)")
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="train a policy from a run config")
    train.add_argument("--config", required=True)
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--out", default=None)
    train.add_argument("--eval-episodes", type=int, default=10, help="episodes per robot for the holdout protocol")
    train.set_defaults(handler=cmd_train)

    evaluate = commands.add_parser("eval", help="zero-shot evaluation of a checkpoint")
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--robot", required=True)
    evaluate.add_argument("--episodes", type=int, required=True)
    evaluate.add_argument("--beta", type=float, default=0.3)
    evaluate.add_argument("--seed", type=int, default=0)
    evaluate.add_argument("--robot-index", type=int, default=0, help="head index for multi_head checkpoints")
    evaluate.add_argument("--config", default=None, help="run config supplying env and randomization settings")
    evaluate.add_argument("--out", default="eval_metrics.csv")
    evaluate.set_defaults(handler=cmd_eval)

    generate = commands.add_parser("generate", help="write randomized embodiments of a robot")
    generate.add_argument("--robot", required=True)
    generate.add_argument("--beta", type=float, required=True)
    generate.add_argument("--count", type=int, required=True)
    generate.add_argument("--seed", type=int, default=0)
    generate.add_argument("--config", default=None)
    generate.add_argument("--out", default="generated")
    generate.set_defaults(handler=cmd_generate)

    inspect = commands.add_parser("inspect", help="dump a deterministic rollout trajectory")
    inspect.add_argument("--checkpoint", required=True)
    inspect.add_argument("--robot", required=True)
    inspect.add_argument("--steps", type=int, required=True)
    inspect.add_argument("--beta", type=float, default=0.3)
    inspect.add_argument("--seed", type=int, default=0)
    inspect.add_argument("--robot-index", type=int, default=0)
    inspect.add_argument("--config", default=None)
    inspect.add_argument("--out", default="trajectory.csv")
    inspect.set_defaults(handler=cmd_inspect)

    report = commands.add_parser("report", help="HTML report from metrics CSVs")
    report.add_argument("--metrics", nargs="+", required=True)
    report.add_argument("--labels", nargs="*", default=None)
    report.add_argument("--eval", nargs="*", default=None, help="evaluation CSVs to chart")
    report.add_argument("--out", default="report.html")
    report.set_defaults(handler=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = load_process_settings()
    configure_logging(args.log_level or settings.log_level)
    try:
        return args.handler(args, settings.threads)
    except (ConfigError, KeyValueSyntaxError, MorphologyError, CheckpointError) as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteError as exc:
        logger.error("numeric failure: %s", exc)
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
