"""Command-line entry point: gen-dataset, train, eval, rollout, inspect-checkpoint."""

import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, Optional, Sequence

import numpy as np
import pandas as pd

from .checkpoint import agent_from_checkpoint, checkpoint_from_agent, describe_checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, load_run_config
from .dataset_forge import DatasetForge, DatasetFile, load_dataset, save_dataset, split_seen, summarize, workspace_box
from .ddpg import DdpgAgent
from .dlo_sim import DloSimulator
from .errors import ConfigurationError, UsageError
from .orchestrator import MODES, TRACE_FORMATS, AgentSet, DeformationGoal, run_episode
from .rewards import REWARD_KINDS, render_table, report_rows
from .trainer import AGENT_ROLES, ZETA_SWEEP_GRID_DEG, ParallelTrainer
from .utils import create_summary, get_correlation_id, log_event

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3


def configure_logging(verbose: bool = False) -> None:
    root = logging.getLogger()
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    if not root.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(message)s"))
        root.addHandler(handler)


def _resolve(path: str, directory: str) -> str:
    return path if os.path.isabs(path) or os.path.dirname(path) else os.path.join(directory, path)


def _load_agent(path: Optional[str], role: str) -> Optional[DdpgAgent]:
    if not path:
        return None
    return agent_from_checkpoint(load_checkpoint(path), expected_role=role)


def _check_m(dataset: DatasetFile, config: RunConfig) -> None:
    if dataset.m != config.episode.num_feature_points:
        raise ConfigurationError(
            f"Dataset holds m={dataset.m} feature points, configuration expects {config.episode.num_feature_points}")


def cmd_gen_dataset(args: argparse.Namespace, config: RunConfig, correlation_id: str) -> Dict[str, Any]:
    box = workspace_box(args.box)
    forge = DatasetForge(config.sim_params, config.sim_config, workers=args.workers)
    dataset = forge.generate(box, args.n, args.seed, m=config.episode.num_feature_points,
                             correlation_id=correlation_id)
    out = _resolve(args.out, config.paths.dataset_dir)
    save_dataset(dataset, out)
    summary = summarize(dataset, config.sim_params)
    print(f"{summary['count']} deformations in the {summary['box']} box written to {out}")
    print(f"deformation magnitude: mean {summary['mean_magnitude'] * 100:.2f} cm, "
          f"max {summary['max_magnitude'] * 100:.2f} cm, {summary['large_deformations']} above 15 cm")
    return {"path": out, **summary}


def cmd_train(args: argparse.Namespace, config: RunConfig, correlation_id: str) -> Dict[str, Any]:
    if args.episodes is not None:
        config.trainer.episodes_o = args.episodes
        config.trainer.episodes_p = args.episodes
    if args.workers is not None:
        config.trainer.num_workers = args.workers
    config.trainer.validate()

    dataset = load_dataset(_resolve(args.dataset, config.paths.dataset_dir), config.sim_params, config.sim_config,
                           correlation_id)
    _check_m(dataset, config)
    if args.train_fraction is not None:
        dataset, _ = split_seen(dataset, args.train_fraction, config.trainer.seed)

    out = _resolve(args.out, config.paths.output_dir)
    log_csv = args.log_csv or f"{os.path.splitext(out)[0]}.log.csv"
    metadata = {"dataset_hash": dataset.content_hash(), "reward_kind": args.reward}

    def checkpoint_callback(agent: DdpgAgent, episodes_completed: int) -> None:
        save_checkpoint(checkpoint_from_agent(agent, args.agent, dataset.m,
                                              {**metadata, "episodes_completed": episodes_completed}), out)

    trainer = ParallelTrainer(config.trainer, config.episode, config.sim_params, config.sim_config,
                              correlation_id, checkpoint_callback=checkpoint_callback, abort_log_path=log_csv)
    if args.agent == "orientation":
        agent, log = trainer.train_agent_o(dataset)
    elif args.agent == "position":
        agent, log = trainer.train_agent_p(dataset, args.reward, agent_o=_load_agent(args.agent_o, "orientation"))
    else:
        agent, log = trainer.train_single_agent(dataset, args.agent, args.reward)

    log.save_csv(log_csv)
    if args.plot:
        from .plotting import plot_training_curve
        plot_training_curve(log, args.plot)
    first, last = log.return_trend()
    print(f"{args.agent} agent: {len(log.episodes)} episodes, {agent.updates_applied} updates, "
          f"mean return first 10% {first:.3f}, last 10% {last:.3f}")
    return {"checkpoint": out, "log_csv": log_csv, "episodes": len(log.episodes),
            "return_first": first, "return_last": last}


def _agent_set(args: argparse.Namespace) -> AgentSet:
    mode = args.mode
    if mode == "multiac6":
        return AgentSet(orientation=_load_agent(args.agent_o, "orientation"),
                        position=_load_agent(args.agent_p, "position"))
    if mode == "multiac6_star":
        return AgentSet(position=_load_agent(args.agent_p, "position"))
    return AgentSet(single=_load_agent(args.agent, mode))


def cmd_eval(args: argparse.Namespace, config: RunConfig, correlation_id: str) -> Dict[str, Any]:
    agents = _agent_set(args)
    trainer = ParallelTrainer(config.trainer, config.episode, config.sim_params, config.sim_config, correlation_id)
    delta_ps = [d / 100.0 for d in args.delta_p]
    reports = {}
    sweeps = []
    for path in args.dataset:
        dataset = load_dataset(_resolve(path, config.paths.dataset_dir), config.sim_params, config.sim_config,
                               correlation_id)
        _check_m(dataset, config)
        label = f"{os.path.splitext(os.path.basename(path))[0]} ({args.mode})"
        reports[label] = trainer.evaluate(agents, dataset, args.mode, args.zeta_noise, delta_ps, args.reward)
        if args.sweep:
            sweep = trainer.zeta_sweep(agents, dataset, ZETA_SWEEP_GRID_DEG, args.mode, delta_ps[0], args.reward)
            sweep.insert(0, "label", label)
            sweeps.append(sweep)

    print(render_table(reports))
    rows = report_rows(reports)
    if args.report:
        rows.to_csv(_resolve(args.report, config.paths.output_dir), index=False)
    if sweeps:
        sweep_frame = pd.concat(sweeps, ignore_index=True)
        sweep_path = args.sweep_out or f"{os.path.splitext(args.report or 'report.csv')[0]}.sweep.csv"
        sweep_frame.to_csv(_resolve(sweep_path, config.paths.output_dir), index=False)
        for _, row in sweep_frame.iterrows():
            print(f"{row['label']}: zeta noise {row['zeta_noise_deg']:g} deg -> SR {row['sr']:.2f}")
        if args.plot:
            from .plotting import plot_zeta_sweep
            plot_zeta_sweep(sweep_frame, args.plot, label=args.mode)
    return {"rows": rows.to_dict(orient="records")}


def _rollout_goal(args: argparse.Namespace, config: RunConfig, correlation_id: str) -> DeformationGoal:
    if args.goal_json:
        data = json.loads(args.goal_json)
        return DeformationGoal(np.array(data["F_d"], dtype=np.float64), np.array(data["zeta"], dtype=np.float64),
                               int(data.get("goal_id", 0)))
    if not args.dataset:
        raise UsageError("rollout needs --dataset with --goal-index, or --goal-json")
    dataset = load_dataset(_resolve(args.dataset, config.paths.dataset_dir), config.sim_params, config.sim_config,
                           correlation_id)
    if not 0 <= args.goal_index < len(dataset):
        raise UsageError(f"Goal index {args.goal_index} is outside the dataset of {len(dataset)} goals")
    return dataset.records[args.goal_index].goal


def cmd_rollout(args: argparse.Namespace, config: RunConfig, correlation_id: str) -> Dict[str, Any]:
    goal = _rollout_goal(args, config, correlation_id)
    if goal.m != config.episode.num_feature_points:
        raise ConfigurationError(f"Goal holds m={goal.m} feature points, configuration expects "
                                 f"{config.episode.num_feature_points}")
    agents = _agent_set(args)
    simulator = DloSimulator(config.sim_params, config.sim_config)
    rng = np.random.default_rng([config.trainer.seed, goal.goal_id])
    trace = run_episode(agents, goal, config.episode, simulator, args.mode, args.reward, args.zeta_noise, rng,
                        record_particles=True)
    out = _resolve(args.out, config.paths.output_dir)
    trace.export(out, args.format, include_particles=True)
    outcome = trace.outcome
    print(f"goal {goal.goal_id}: success={outcome.success} final error {outcome.final_error * 100:.2f} cm "
          f"after {outcome.steps_used} steps; trace written to {out}")
    return {"trace": out, "success": outcome.success, "final_error": outcome.final_error,
            "steps": len(trace.steps)}


def cmd_inspect_checkpoint(args: argparse.Namespace, config: RunConfig, correlation_id: str) -> Dict[str, Any]:
    description = describe_checkpoint(load_checkpoint(args.checkpoint))
    print(json.dumps(description, indent=2, sort_keys=True))
    return description


def _add_agent_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--mode", choices=MODES, default="multiac6")
    parser.add_argument("--agent-o", help="orientation agent checkpoint")
    parser.add_argument("--agent-p", help="position agent checkpoint")
    parser.add_argument("--agent", help="single-agent (ac3 / ac6) checkpoint")
    parser.add_argument("--reward", choices=REWARD_KINDS, default="max")
    parser.add_argument("--zeta-noise", type=float, default=0.0, help="uniform zeta noise per axis, degrees")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multiac6", description="MultiAC6 DLO shaping toolkit")
    parser.add_argument("--config", help="run configuration JSON (dotted keys)")
    parser.add_argument("--verbose", action="store_true")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-dataset", help="generate a deformation dataset")
    gen.add_argument("--box", required=True)
    gen.add_argument("--n", type=int, default=1000)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.add_argument("--workers", type=int, default=1)
    gen.set_defaults(handler=cmd_gen_dataset)

    train = commands.add_parser("train", help="train one agent")
    train.add_argument("--agent", choices=AGENT_ROLES, required=True)
    train.add_argument("--dataset", required=True)
    train.add_argument("--out", required=True, help="checkpoint path")
    train.add_argument("--reward", choices=REWARD_KINDS, default="max")
    train.add_argument("--agent-o", help="orientation checkpoint used to orient position-agent episodes")
    train.add_argument("--train-fraction", type=float)
    train.add_argument("--episodes", type=int)
    train.add_argument("--workers", type=int)
    train.add_argument("--log-csv")
    train.add_argument("--plot", help="training curve PNG")
    train.set_defaults(handler=cmd_train)

    evaluate = commands.add_parser("eval", help="evaluate agents on datasets")
    _add_agent_arguments(evaluate)
    evaluate.add_argument("--dataset", nargs="+", required=True)
    evaluate.add_argument("--delta-p", type=float, nargs="+", default=[5.0, 3.0], help="thresholds in cm")
    evaluate.add_argument("--report", help="report CSV")
    evaluate.add_argument("--sweep", action="store_true", help="run the zeta-noise sweep")
    evaluate.add_argument("--sweep-out")
    evaluate.add_argument("--plot", help="sweep figure PNG")
    evaluate.set_defaults(handler=cmd_eval)

    rollout = commands.add_parser("rollout", help="run one deterministic episode and write its trace")
    _add_agent_arguments(rollout)
    rollout.add_argument("--dataset")
    rollout.add_argument("--goal-index", type=int, default=0)
    rollout.add_argument("--goal-json", help='inline goal: {"F_d": [[x, y, z], ...], "zeta": [r, p, y]}')
    rollout.add_argument("--out", required=True)
    rollout.add_argument("--format", choices=TRACE_FORMATS, default="csv")
    rollout.set_defaults(handler=cmd_rollout)

    inspect = commands.add_parser("inspect-checkpoint", help="print checkpoint contents")
    inspect.add_argument("checkpoint")
    inspect.set_defaults(handler=cmd_inspect_checkpoint)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one command.

    Returns:
        0 on success, 2 on usage or configuration errors, 3 on runtime failures
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    configure_logging(args.verbose)
    correlation_id = get_correlation_id()
    try:
        log_event("INFO", f"Command {args.command} started", correlation_id, argv=list(argv or sys.argv[1:]))
        config = load_run_config(args.config)
        result = args.handler(args, config, correlation_id)
        log_event("INFO", f"Command {args.command} completed", correlation_id,
                  summary=create_summary("success", f"{args.command} completed", correlation_id, result=result))
        return EXIT_OK
    except (ValueError, FileNotFoundError) as e:
        log_event("ERROR", f"Command {args.command} failed: {e}", correlation_id, error=str(e),
                  error_type=type(e).__name__)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # pylint: disable=broad-except
        log_event("ERROR", f"Command {args.command} failed: {e}", correlation_id, error=str(e),
                  error_type=type(e).__name__)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
