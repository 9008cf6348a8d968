"""Command line front end: train, evaluate, sweep, gradcheck, serve.

All artifact-producing commands work against a run directory (--dir) and use
fixed file names inside it, so the commands compose without path plumbing:

    imfkit train-lower --scenario scenario1 --dir runs/s1
    imfkit train-supervisor --scenario scenario1 --dir runs/s1
    imfkit train-supervisor --scenario scenario1 --dir runs/s1 --baseline
    imfkit evaluate --scenario scenario1 --dir runs/s1
    imfkit sweep --scenario exp1-log --dir runs/e1 --baseline
    imfkit serve --scenario scenario1 --dir runs/s1

Every command writes a manifest JSON (command, arguments, scenario content
hash, seed, versions) with no timestamps: rerunning a command with the same
manifest must reproduce its CSV outputs byte for byte.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__, experiments, nn
from .agents import (
    LowerTrainConfig,
    derive_roster,
    load_agents,
    roster_checksum,
    save_agents,
    train_lower,
)
from .experiments import Scenario, load_scenario, training_intents
from .supervisor import (
    SupervisorModel,
    TrainConfig,
    load_supervisor,
    save_supervisor,
    train_supervisor,
)

AGENTS_FILE = "agents.json"


def _scenario_hash(scenario: Scenario) -> str:
    payload = json.dumps(
        {"name": scenario.name, "digest": scenario.digest(),
         "horizon": scenario.horizon, "seeds": list(scenario.seeds)},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()


def _write_manifest(outdir: Path, command: str, args: argparse.Namespace,
                    scenario: Scenario | None, extra: dict | None = None) -> None:
    label = "baseline" if getattr(args, "baseline", False) else "proposed"
    manifest = {
        "command": command,
        "args": {
            k: v for k, v in sorted(vars(args).items())
            if k != "func" and not callable(v)
        },
        "seed": getattr(args, "seed", None),
        "versions": {
            "imfkit": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }
    if scenario is not None:
        manifest["scenario_sha256"] = _scenario_hash(scenario)
    if extra:
        manifest.update(extra)
    name = f"manifest-{command}"
    if command in ("train-supervisor", "evaluate"):
        name += f"-{label}"
    path = outdir / f"{name}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_scenario_arg(args: argparse.Namespace) -> Scenario:
    scenario = load_scenario(args.scenario)
    if getattr(args, "profile", None):
        capacity = {"ample": 20.0, "scarce": 10.0}[args.profile]
        scenario = dataclasses.replace(
            scenario, config=dataclasses.replace(
                scenario.config, airlink_capacity_mbps=capacity)
        )
    if getattr(args, "horizon", None):
        scenario = dataclasses.replace(scenario, horizon=args.horizon)
    return scenario


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        sys.exit(f"error: {path} not found; run `imfkit {hint}` first")
    return path


def _model_path(outdir: Path, baseline: bool) -> Path:
    return outdir / ("baseline.ckpt" if baseline else "proposed.ckpt")


def cmd_train_lower(args: argparse.Namespace) -> None:
    scenario = _load_scenario_arg(args)
    outdir = Path(args.dir)
    outdir.mkdir(parents=True, exist_ok=True)
    intents = training_intents(scenario)
    roster = derive_roster(intents, scenario.config)
    cfg = LowerTrainConfig(episodes=args.episodes or LowerTrainConfig.episodes)
    print(f"training {len(roster)} lower agents on {scenario.name} "
          f"({cfg.episodes} episodes each)")
    policies = train_lower(scenario.config, intents, roster, cfg, seed=args.seed)
    meta = {"scenario": scenario.name, "seed": args.seed,
            "episodes": cfg.episodes, "checksum": roster_checksum(policies)}
    save_agents(str(outdir / AGENTS_FILE), policies, meta)
    _write_manifest(outdir, "train-lower", args, scenario,
                    {"agents_checksum": meta["checksum"]})
    print(f"wrote {outdir / AGENTS_FILE} (checksum {meta['checksum'][:12]})")


def cmd_train_supervisor(args: argparse.Namespace) -> None:
    scenario = _load_scenario_arg(args)
    outdir = Path(args.dir)
    outdir.mkdir(parents=True, exist_ok=True)
    _, policies = load_agents(str(_require(outdir / AGENTS_FILE, "train-lower")))
    intents = training_intents(scenario)
    roster = derive_roster(intents, scenario.config)
    model = SupervisorModel(
        roster, intents, scenario.config,
        use_utility_context=not args.baseline, seed=args.seed,
    )
    cfg = TrainConfig(episodes=args.episodes or TrainConfig.episodes, seed=args.seed)
    label = "baseline" if args.baseline else "proposed"
    print(f"training {label} supervisor on {scenario.name} ({cfg.episodes} episodes)")
    losses: list[dict] = []
    returns = train_supervisor(
        model, policies, scenario.config, intents, cfg,
        deviation_mode=scenario.deviation_mode, loss_log=losses,
        progress=lambda ep, ret: print(f"  episode {ep}: return {ret:.1f}")
        if (ep + 1) % 200 == 0 else None,
    )
    path = _model_path(outdir, args.baseline)
    save_supervisor(str(path), model)
    log_path = outdir / f"training-log-{label}.csv"
    with open(log_path, "w", encoding="utf-8", newline="") as f:
        f.write("episode,mean_return,actor_loss,critic_loss,mean_entropy\n")
        for i, (ret, terms) in enumerate(zip(returns, losses)):
            f.write(f"{i},{ret:.10g},{terms['actor']:.10g},"
                    f"{terms['critic']:.10g},{terms['entropy']:.10g}\n")
    _write_manifest(outdir, "train-supervisor", args, scenario,
                    {"model_checksum": model.checksum()})
    print(f"wrote {path} (checksum {model.checksum()[:12]}), log {log_path}")


def _load_stack(args: argparse.Namespace, scenario: Scenario, baseline: bool):
    outdir = Path(args.dir)
    _, policies = load_agents(str(_require(outdir / AGENTS_FILE, "train-lower")))
    intents = training_intents(scenario)
    roster = derive_roster(intents, scenario.config)
    label = "baseline" if baseline else "proposed"
    path = _require(_model_path(outdir, baseline),
                    f"train-supervisor{' --baseline' if baseline else ''}")
    model = load_supervisor(str(path), roster, intents, scenario.config)
    return model, policies, label


def cmd_evaluate(args: argparse.Namespace) -> None:
    scenario = _load_scenario_arg(args)
    outdir = Path(args.dir)
    model, policies, label = _load_stack(args, scenario, args.baseline)
    before = model.checksum()
    report = experiments.run_scenario(scenario, model, policies, label)
    assert model.checksum() == before, "evaluation must not touch model parameters"
    written = experiments.export(outdir, scenario_reports=[report],
                                 seed_count=len(scenario.seeds), plots=not args.no_plots)
    scores_path = outdir / f"scores-{scenario.name}-{label}.csv"
    with open(scores_path, "w", encoding="utf-8", newline="") as f:
        f.write("scenario,model,expectation,score\n")
        for eid, score in report.scores.items():
            f.write(f"{scenario.name},{label},{eid},{score:.10g}\n")
    _write_manifest(outdir, "evaluate", args, scenario,
                    {"model_checksum": before})
    in_band = sum(report.final_all_in_band)
    print(f"{scenario.name} [{label}]: all KPIs in band at final step on "
          f"{in_band}/{len(scenario.seeds)} seeds")
    for eid, score in report.scores.items():
        print(f"  {eid}: score {score:.4f}")
    for p in [scores_path, *written]:
        print(f"wrote {p}")


def cmd_sweep(args: argparse.Namespace) -> None:
    scenario = _load_scenario_arg(args)
    outdir = Path(args.dir)
    if not scenario.sweeps:
        sys.exit(f"error: scenario {scenario.name} declares no sweeps")
    model, policies, _ = _load_stack(args, scenario, baseline=False)
    stacks = [(model, policies, "proposed")]
    if args.baseline:
        bmodel, bpolicies, _ = _load_stack(args, scenario, baseline=True)
        stacks.append((bmodel, bpolicies, "baseline"))
    reports = []
    for sw in scenario.sweeps:
        for m, pol, label in stacks:
            rep = experiments.priority_sweep(scenario, sw, m, pol, label)
            reports.append(rep)
            print(f"{scenario.name} {sw.expectation} [{label}] "
                  f"trend {rep.trend():+.3f}: "
                  + " ".join(f"P{p:g}={s:.3f}" for p, s in
                             zip(rep.priorities(), rep.scores())))
    written = experiments.export(outdir, sweep_reports=reports,
                                 seed_count=len(scenario.seeds), plots=not args.no_plots)
    _write_manifest(outdir, "sweep", args, scenario)
    for p in written:
        print(f"wrote {p}")


def cmd_gradcheck(args: argparse.Namespace) -> None:
    worst = nn.run_gradient_checks(seeds=range(args.seeds), tolerance=args.tolerance,
                                   report=print)
    if worst > args.tolerance:
        sys.exit(f"gradient check FAILED: max relative error {worst:.3e} "
                 f"> {args.tolerance:.1e}")
    print(f"gradient checks passed: max relative error {worst:.3e}")


def cmd_serve(args: argparse.Namespace) -> None:
    import uvicorn

    from .gateway import build_app

    scenario = _load_scenario_arg(args)
    outdir = Path(args.dir)
    _, policies = load_agents(str(_require(outdir / AGENTS_FILE, "train-lower")))
    intents = training_intents(scenario)
    roster = derive_roster(intents, scenario.config)
    models = {}
    for baseline in (False, True):
        path = _model_path(outdir, baseline)
        if path.exists():
            label = "baseline" if baseline else "proposed"
            models[label] = load_supervisor(str(path), roster, intents, scenario.config)
    if not models:
        sys.exit("error: no trained model in dir; run `imfkit train-supervisor` first")
    app = build_app(scenario, models, policies)
    print(f"serving {scenario.name} with models {sorted(models)} "
          f"on {args.host}:{args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="imfkit",
        description="Adaptive intent management for a simulated network slice",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, episodes: bool = False) -> None:
        p.add_argument("--scenario", required=True,
                       help="shipped scenario name or path to a scenario file")
        p.add_argument("--dir", required=True, help="run directory for artifacts")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--profile", choices=["ample", "scarce"],
                       help="override the scenario's airlink capacity")
        p.add_argument("--horizon", type=int, help="override the scenario horizon")
        if episodes:
            p.add_argument("--episodes", type=int, help="override training episodes")

    p = sub.add_parser("train-lower", help="train and freeze the lower-level agents")
    common(p, episodes=True)
    p.set_defaults(func=cmd_train_lower)

    p = sub.add_parser("train-supervisor", help="train the goal-assignment policy")
    common(p, episodes=True)
    p.add_argument("--baseline", action="store_true",
                   help="train the ablated model with the utility context disabled")
    p.set_defaults(func=cmd_train_supervisor)

    p = sub.add_parser("evaluate", help="run a scenario and export traces/scores")
    common(p)
    p.add_argument("--baseline", action="store_true", help="evaluate the ablated model")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="run the scenario's priority sweeps")
    common(p)
    p.add_argument("--baseline", action="store_true",
                   help="also evaluate the ablated model for comparison")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of all network blocks")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("serve", help="start the HTTP gateway")
    common(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8470)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> None:
    args = build_parser().parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
