"""Command-line entry points: run, benchmark, train, eval-policy, plot-data."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


def _print_metrics(result):
    print(json.dumps({"aggregate": result.metrics,
                      "per_agent": result.agent_metrics}, indent=2))


def cmd_run(args):
    from .harness import Scenario, run, write_run_outputs
    from .policy import load_checkpoint
    scn = Scenario.load(args.scenario)
    if args.seed is not None:
        scn.seed = args.seed
        scn.net = type(scn.net)(delay_min=scn.net.delay_min,
                                delay_max=scn.net.delay_max,
                                drop_prob=scn.net.drop_prob, seed=args.seed)
    params = cfg = None
    if any(a.planner == "student" for a in scn.agents):
        if not args.checkpoint:
            sys.exit("scenario has student agents: pass --checkpoint")
        params, cfg = load_checkpoint(args.checkpoint)
    log_path = None
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        log_path = Path(args.out) / "events.jsonl"
    result = run(scn, params, cfg, log_path=log_path)
    if args.out:
        write_run_outputs(result, args.out)
    _print_metrics(result)


def cmd_benchmark(args):
    from .harness import BenchmarkSpec, benchmark
    from .policy import load_checkpoint
    spec = BenchmarkSpec.load(args.spec) if args.spec else None
    if spec is None:
        from .harness import BenchmarkSpec
        spec = BenchmarkSpec()
    params = cfg = None
    if args.checkpoint:
        params, cfg = load_checkpoint(args.checkpoint)
    rows = benchmark(spec, params, cfg, out_dir=args.out)
    print(json.dumps(rows, indent=2))


def cmd_train(args):
    from .optimizer import ExpertPlanner
    from .policy import PolicyConfig, save_checkpoint
    from .training import TrainConfig, train_dagger
    overrides = {}
    if args.config:
        with open(args.config) as f:
            overrides = json.load(f)
    pcfg = PolicyConfig(**overrides.pop("policy", {}))
    expert_cfg = overrides.pop("expert", {})
    tcfg = TrainConfig(**overrides)
    expert = ExpertPlanner(n_guesses=expert_cfg.get("n_guesses", 1),
                           free_time=expert_cfg.get("free_time", True))
    params, history = train_dagger(expert, tcfg, pcfg)
    save_checkpoint(args.out, params, pcfg)
    history_path = Path(args.out).with_suffix(".history.json")
    with open(history_path, "w") as f:
        json.dump(history, f, indent=2)
    print(f"checkpoint: {args.out}")
    print(f"learning curve: {history_path}")


def cmd_eval_policy(args):
    from dataclasses import replace
    from .harness import Scenario, run
    from .policy import load_checkpoint
    params, cfg = load_checkpoint(args.checkpoint)
    scn = Scenario.load(args.scenario)
    scn.agents = [replace(a, planner="student") for a in scn.agents]
    if args.seed is not None:
        scn.seed = args.seed
    result = run(scn, params, cfg)
    _print_metrics(result)


def cmd_plot_data(args):
    from .harness import plot_data_from_log
    info = plot_data_from_log(args.run_log, args.out)
    print(f"wrote plot data for {info['plans']} replans and "
          f"{info['commits']} commits to {args.out}")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="fovplan",
        description="Perception-aware multi-agent trajectory planning bench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one scenario file")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--checkpoint", default=None,
                   help="student weights (.npz) for student agents")
    p.add_argument("--out", default=None, help="directory for metrics and logs")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("benchmark", help="run a benchmark spec into tables")
    p.add_argument("spec", nargs="?", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--out", default="benchmark_out")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("train", help="train the student with DAgger")
    p.add_argument("--config", default=None, help="training config JSON")
    p.add_argument("--out", default="student.npz")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-policy", help="run a scenario with all agents "
                                           "driven by a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_eval_policy)

    p = sub.add_parser("plot-data", help="extract plot series from a run log")
    p.add_argument("run_log")
    p.add_argument("--out", default="plot_data")
    p.set_defaults(func=cmd_plot_data)

    args = parser.parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
