"""Command-line entry points.

Subcommands: dataset | train | verify-theory | eval | grad-check. Every
command resolves its seed (flag, then OAVAT_SEED, then 0), prints the
resolved configuration, and writes its outputs plus a manifest (config,
seed, git describe, output hashes) under a run directory. Identical
invocations produce byte-identical outputs.

Exit codes: 0 success; 2 usage; 3 infeasible inputs (geometry, sampling,
pathing); 4 numeric failure; 5 degenerate data; 1 unexpected error.
"""

import argparse
import csv
import hashlib
import io
import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import diffusion, kernels, runs, scenarios, theory
from .agent import AgentConfig
from .errors import (AssumptionViolated, DegenerateSum, EmptyLogs,
                     InfeasibleGeometry, NoEligibleSteps, NonFiniteLoss,
                     NonFiniteOutput, NoPath, SamplingExhausted,
                     SingularInnovation, ZeroVector)
from .episode import write_episodes_jsonl
from .features import generate_manifold_set
from .network import NoisePredictor, grad_check

EXIT_INFEASIBLE = 3
EXIT_NUMERIC = 4
EXIT_DEGENERATE = 5

_ERROR_CODES = (
    ((InfeasibleGeometry, SamplingExhausted, NoPath), EXIT_INFEASIBLE),
    ((NonFiniteLoss, NonFiniteOutput, SingularInnovation), EXIT_NUMERIC),
    ((DegenerateSum, ZeroVector, EmptyLogs, NoEligibleSteps, AssumptionViolated),
     EXIT_DEGENERATE),
)


def _resolve_seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get("OAVAT_SEED", "").strip()
    return int(env) if env else 0


def _git_describe():
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=10, check=False)
        return out.stdout.strip() or "unknown"
    except OSError:
        return "unknown"


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(run_dir, command, config, seed, outputs):
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "git_describe": _git_describe(),
        "kernel_backend": kernels.BACKEND,
        "outputs": {name: _sha256(run_dir / name) for name in sorted(outputs)},
    }
    with open(run_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _announce(command, config, seed):
    print(json.dumps({"command": command, "seed": seed, "config": config},
                     sort_keys=True))


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _fraction(text):
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError("must lie in [0, 1]")
    return value


def _agent_config_from_args(args):
    cfg = AgentConfig.from_file(args.agent_config) if args.agent_config else AgentConfig()
    import dataclasses
    overrides = {}
    for field_obj in dataclasses.fields(AgentConfig):
        flag = getattr(args, f"agent_{field_obj.name}", None)
        if flag is not None:
            overrides[field_obj.name] = flag
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _add_agent_flags(parser):
    import dataclasses
    group = parser.add_argument_group("agent overrides")
    for field_obj in dataclasses.fields(AgentConfig):
        flag = "--" + field_obj.name.replace("_", "-")
        if field_obj.type is bool or isinstance(field_obj.default, bool):
            group.add_argument(flag, dest=f"agent_{field_obj.name}",
                               type=lambda s: s.lower() in ("1", "true", "yes", "on"),
                               metavar="BOOL", default=None)
        else:
            typ = int if isinstance(field_obj.default, int) else float
            group.add_argument(flag, dest=f"agent_{field_obj.name}", type=typ,
                               default=None)


# --- subcommands -----------------------------------------------------------------

def cmd_dataset(args):
    seed = _resolve_seed(args)
    run_dir = Path(args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    config = {"n": args.n, "randomized": args.randomized, "room": args.room,
              "resolution": args.resolution}
    _announce("dataset", config, seed)
    params = scenarios.ScenarioParams(room=args.room, resolution=args.resolution)
    out = run_dir / "planning.jsonl"
    info = scenarios.generate_dataset(args.n, args.randomized, seed, out, params)
    print(f"wrote {info.n} samples ({info.n_randomized} randomized) "
          f"to {info.path}; sha256 {info.sha256}")
    _write_manifest(run_dir, "dataset", config, seed, ["planning.jsonl"])
    return 0


def cmd_train(args):
    seed = _resolve_seed(args)
    run_dir = Path(args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    config = {"data": args.data, "epochs": args.epochs, "batch": args.batch,
              "lr": args.lr, "momentum": args.momentum, "k_steps": args.k_steps,
              "hidden": args.hidden}
    _announce("train", config, seed)
    dataset = scenarios.load_dataset(args.data, with_grids=False)
    schedule = diffusion.build_schedule(args.k_steps)
    horizon = dataset[0].traj.shape[0]
    cond_dim = diffusion.condition_vector(
        diffusion.Condition(dataset[0].obs, dataset[0].bbox)).shape[0]
    predictor = NoisePredictor(cond_dim=cond_dim, traj_dim=2 * horizon,
                               hidden=(args.hidden, args.hidden), seed=seed)
    result = diffusion.train(predictor, dataset, schedule,
                             diffusion.TrainConfig(epochs=args.epochs,
                                                   batch=args.batch, lr=args.lr,
                                                   momentum=args.momentum,
                                                   seed=seed))
    diffusion.save_checkpoint(run_dir / "checkpoint.bin", predictor, schedule,
                              plan_horizon=horizon)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "mean_loss"])
    for epoch, value in enumerate(result.loss_curve):
        writer.writerow([epoch, f"{value:.8f}"])
    (run_dir / "loss.csv").write_text(buf.getvalue())
    first, last = result.loss_curve[0], result.loss_curve[-1]
    print(f"trained {args.epochs} epochs: eval loss {first:.4f} -> {last:.4f}")
    _write_manifest(run_dir, "train", config, seed, ["checkpoint.bin", "loss.csv"])
    return 0


def cmd_verify_theory(args):
    seed = _resolve_seed(args)
    run_dir = Path(args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    config = {"trials": args.trials, "instances": args.instances, "dim": args.dim,
              "delta": args.delta, "eta": args.eta, "views": args.views,
              "view_dirs": args.view_dirs, "per_instance": args.per_instance,
              "probes": args.probes}
    _announce("verify-theory", config, seed)
    passes = {"lemma1": 0, "lemma2": 0, "prop1": 0}
    worst = {"lemma1": float("inf"), "lemma2": float("inf"), "prop1": float("inf")}
    for trial in range(args.trials):
        mset = generate_manifold_set(args.instances, args.dim, args.delta,
                                     args.eta, args.view_dirs, seed=seed + trial)
        report = theory.verify_lemmas_and_proposition(
            mset, n_per_instance=args.per_instance, n_views=args.views,
            seed=seed + trial, probe_count=args.probes)
        for key, held in (("lemma1", report.lemma1_holds),
                          ("lemma2", report.lemma2_holds),
                          ("prop1", report.prop1_holds)):
            passes[key] += int(held)
            worst[key] = min(worst[key], report.margins[key])
    summary = {
        "trials": args.trials,
        "pass_rate": {k: passes[k] / args.trials for k in passes},
        "worst_margin": {k: (None if worst[k] == float("inf") else worst[k])
                         for k in worst},
    }
    with open(run_dir / "theory.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for key in ("lemma1", "lemma2", "prop1"):
        rate = summary["pass_rate"][key]
        margin = summary["worst_margin"][key]
        margin_text = "vacuous" if margin is None else f"{margin:.3e}"
        print(f"{key}: pass rate {rate:.4f} worst margin {margin_text}")
    _write_manifest(run_dir, "verify-theory", config, seed, ["theory.json"])
    return 0


def cmd_eval(args):
    seed = _resolve_seed(args)
    run_dir = Path(args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    config = {"preset": args.preset, "variant": args.variant,
              "episodes": args.episodes, "max_steps": args.max_steps,
              "lost_limit": args.lost_limit, "checkpoint": args.checkpoint}
    _announce("eval", config, seed)
    predictor = schedule = None
    plan_horizon = 16
    needs_planner = args.variant not in runs.PLANNERLESS_VARIANTS
    if args.checkpoint:
        predictor, schedule, plan_horizon = diffusion.load_checkpoint(args.checkpoint)
    elif needs_planner:
        print("note: no checkpoint given; the planner stays inactive and "
              "lost stretches fall back to pursuit of the predicted box")
    agent_config = _agent_config_from_args(args)
    rc = runs.RunConfig(preset=args.preset, variant=args.variant,
                        episodes=args.episodes, max_steps=args.max_steps,
                        lost_limit=args.lost_limit, seed=seed)
    result = runs.run_batch(rc, agent_config=agent_config, predictor=predictor,
                            schedule=schedule, plan_horizon=plan_horizon)
    write_episodes_jsonl(run_dir / "episodes.jsonl", result.logs)
    (run_dir / "metrics.csv").write_text(runs.metrics_csv([result]))
    m = result.metrics
    car_text = "n/a" if result.car is None else f"{result.car:.3f}"
    print(f"{result.scenario}: AR {m.ar:.1f} EL {m.el:.1f} SR {m.sr:.3f} "
          f"TSR {m.tsr:.3f} CAR {car_text} over {m.episodes} episodes")
    _write_manifest(run_dir, "eval", config, seed,
                    ["episodes.jsonl", "metrics.csv"])
    return 0


def cmd_grad_check(args):
    seed = _resolve_seed(args)
    config = {"h": args.h, "checked": args.checked}
    _announce("grad-check", config, seed)
    rng = np.random.default_rng(seed)
    schedule = diffusion.build_schedule(50)
    cond_dim = 261
    predictor = NoisePredictor(cond_dim=cond_dim, traj_dim=32, seed=seed)
    a0 = rng.uniform(-1.0, 1.0, 32)
    cond = np.concatenate([(rng.random(256) < 0.2).astype(float),
                           rng.random(4), rng.uniform(-1, 1, 1)])
    err = grad_check(predictor, (a0, cond), schedule, h=args.h,
                     n_checked=args.checked, seed=seed)
    print(f"max relative gradient error: {err:.3e}")
    if err >= 1e-4:
        print("gradient check FAILED (threshold 1e-4)")
        return EXIT_NUMERIC
    print("gradient check passed (threshold 1e-4)")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="activetrack",
        description="Instance-aware active tracking sandbox")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="generate a planning dataset")
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--randomized", type=_fraction, default=0.6)
    p.add_argument("--room", type=float, default=16.0)
    p.add_argument("--resolution", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--run-dir", default="runs/dataset")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train the diffusion planner")
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--batch", type=_positive_int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--k-steps", type=_positive_int, default=50)
    p.add_argument("--hidden", type=_positive_int, default=256)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--run-dir", default="runs/train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify-theory", help="run the manifold theory harness")
    p.add_argument("--trials", type=_positive_int, default=1000)
    p.add_argument("--instances", type=_positive_int, default=5)
    p.add_argument("--dim", type=_positive_int, default=64)
    p.add_argument("--delta", type=float, default=0.8)
    p.add_argument("--eta", type=float, default=0.2)
    p.add_argument("--views", type=_positive_int, default=8)
    p.add_argument("--view-dirs", type=_positive_int, default=4)
    p.add_argument("--per-instance", type=_positive_int, default=20)
    p.add_argument("--probes", type=_positive_int, default=512)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--run-dir", default="runs/theory")
    p.set_defaults(func=cmd_verify_theory)

    p = sub.add_parser("eval", help="run episode batches for one variant")
    p.add_argument("--preset", choices=sorted(runs.PRESETS), default="standard")
    p.add_argument("--variant", choices=sorted(runs.VARIANTS), default="full")
    p.add_argument("--episodes", type=_positive_int, default=100)
    p.add_argument("--max-steps", type=_positive_int, default=500)
    p.add_argument("--lost-limit", type=_positive_int, default=50)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--agent-config", default=None,
                   help="key=value file with AgentConfig fields")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--run-dir", default="runs/eval")
    _add_agent_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grad-check", help="finite-difference gradient audit")
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--checked", type=_positive_int, default=200)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes
        for types, code in _ERROR_CODES:
            if isinstance(exc, types):
                print(f"error: {exc}", file=sys.stderr)
                return code
        if isinstance(exc, (ValueError, FileNotFoundError)):
            print(f"error: {exc}", file=sys.stderr)
            return 2
        raise


if __name__ == "__main__":
    sys.exit(main())
