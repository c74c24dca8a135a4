"""Command-line entry point: ``wsntopo {gen,baseline,oracle,train,eval,resume}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np
import yaml

from .baselines import brute_force_optimal
from .harness import (
    ExperimentConfig,
    baseline_rows,
    config_to_dict,
    generate_instance,
    parse_change,
    run_experiment,
    write_baselines,
    write_final_topologies,
)
from .network import LOAD_MODES, LITERAL, save_instance
from .nn import PolicyValueNet
from .trainer import TrainConfig, Trainer, evaluate

logger = logging.getLogger("wsntopo")

# flag name -> TrainConfig field
TRAIN_FLAGS = {
    "seed": "seed",
    "iterations": "iterations",
    "episodes": "episodes_per_iter",
    "sims": "sims_per_state",
    "batch": "minibatch",
    "lr": "learning_rate",
    "cpuct": "c_puct",
    "eval_count": "eval_realizations",
    "epochs": "epochs",
    "replay_episodes": "replay_episodes",
    "dirichlet": "dirichlet_alpha",
    "dirichlet_until": "dirichlet_iterations",
    "capacity": "capacity",
    "blocks": "conv_blocks",
    "filters": "filters",
}


def _add_instance_args(p):
    p.add_argument("--instance", help="instance file; otherwise one is generated")
    p.add_argument("--nodes", type=int, help="node count including the gateway (default 20)")
    p.add_argument("--radius", type=float, help="disc radius in meters (default 1000)")
    p.add_argument("--instance-seed", type=int, help="generator seed (default: --seed)")
    p.add_argument("--load-mode", choices=LOAD_MODES, help=f"aggregation recurrence (default {LITERAL})")


def _add_train_args(p):
    p.add_argument("--iterations", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--sims", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--cpuct", type=float)
    p.add_argument("--eval-count", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--replay-episodes", type=int)
    p.add_argument("--dirichlet", type=float, help="root Dirichlet noise alpha (off by default)")
    p.add_argument("--dirichlet-until", type=int, metavar="ITER",
                   help="stop root noise after this iteration")
    p.add_argument("--capacity", type=int, help="pad the network to this many node slots")
    p.add_argument("--blocks", type=int, help="residual blocks")
    p.add_argument("--filters", type=int)
    p.add_argument("--remove", action="append", default=[], metavar="AT:IDS",
                   help="disable sensors before iteration AT, e.g. 63:6,7,8")
    p.add_argument("--add", action="append", default=[], metavar="AT:IDS",
                   help="re-enable sensors before iteration AT")
    p.add_argument("--strict-paper", action="store_true",
                   help="unbounded dataset, no tree reuse, bare adjacency input")
    p.add_argument("--keep-checkpoints", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wsntopo", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a random instance file")
    p.add_argument("--nodes", type=int, default=20)
    p.add_argument("--radius", type=float, default=1000.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--load-mode", choices=LOAD_MODES, default=LITERAL)
    p.add_argument("--out", required=True, help="instance file to write")

    for name, helptext in (("baseline", "star/random/MST lifetimes (and optionally the oracle)"),
                           ("oracle", "exhaustive optimum for small networks")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config")
        _add_instance_args(p)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        if name == "baseline":
            p.add_argument("--oracle", action="store_true")

    p = sub.add_parser("train", help="full training run with metrics and checkpoints")
    p.add_argument("--config", help="YAML file; flags override its values")
    _add_instance_args(p)
    p.add_argument("--seed", type=int)
    _add_train_args(p)
    p.add_argument("--oracle", action="store_true")
    p.add_argument("--no-baselines", action="store_true")
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("eval", help="build topologies from a checkpoint's policy")
    p.add_argument("--checkpoint", required=True, help="run directory or checkpoint directory")
    p.add_argument("--eval-count", type=int, default=100)
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="directory for eval.csv and the best topology")

    p = sub.add_parser("resume", help="continue a run from its latest checkpoint")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--iterations", type=int, help="new total iteration count")
    return parser


def load_config(args) -> ExperimentConfig:
    data = {}
    if getattr(args, "config", None):
        data = yaml.safe_load(Path(args.config).read_text()) or {}
    train = dict(data.pop("train", {}) or {})
    changes = [parse_change(c, "remove") for c in data.pop("remove", [])]
    changes += [parse_change(c, "add") for c in data.pop("add", [])]

    for flag, name in TRAIN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            train[name] = value
    train_cfg = TrainConfig.from_dict(train)
    if getattr(args, "strict_paper", False) or data.pop("strict_paper", False):
        train_cfg = train_cfg.strict_paper()

    for flag, kind in (("remove", "remove"), ("add", "add")):
        changes += [parse_change(c, kind) for c in getattr(args, flag, []) or []]
    changes.sort(key=lambda t: t[0])

    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    cfg = ExperimentConfig(**data, train=train_cfg, changes=changes)
    overrides = {
        "out": args.out, "instance": getattr(args, "instance", None), "nodes": getattr(args, "nodes", None),
        "radius": getattr(args, "radius", None), "instance_seed": getattr(args, "instance_seed", None),
        "load_mode": getattr(args, "load_mode", None), "keep_checkpoints": getattr(args, "keep_checkpoints", None),
    }
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    if getattr(args, "oracle", False):
        cfg.oracle = True
    if getattr(args, "no_baselines", False):
        cfg.baselines = False
    return cfg


def cmd_gen(args) -> int:
    spec = generate_instance(args.nodes, args.radius, args.seed, load_mode=args.load_mode)
    save_instance(spec, args.out)
    print(args.out)
    return 0


def cmd_baseline(args, oracle_only=False) -> int:
    cfg = load_config(args)
    if oracle_only:
        cfg.oracle = True
    spec = cfg.build_spec()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_instance(spec, out / "instance.txt")
    if oracle_only:
        res = brute_force_optimal(spec)
        save_instance(spec, out / "topology_oracle.txt", res.best_topology)
        summary = {"best_lifetime": res.best_lifetime, "tree_count": res.tree_count,
                   "evaluated_count": res.evaluated_count, "best_parent": list(res.best_topology.parent)}
        (out / "oracle.json").write_text(json.dumps(summary, indent=1))
        print(json.dumps(summary))
        return 0
    rows, topos = baseline_rows(spec, cfg.train.seed, cfg.train.random_baseline_seeds, cfg.oracle)
    write_baselines(rows, out / "baselines.csv")
    for name, topo in topos.items():
        save_instance(spec, out / f"topology_{name}.txt", topo)
    for r in rows:
        print(f"{r['method']:>7}  {r['lifetime']:.1f}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=True))
    return run_experiment(cfg)


def cmd_eval(args) -> int:
    trainer = Trainer.from_checkpoint(args.checkpoint)
    net: PolicyValueNet = trainer.net
    mode = "greedy" if args.greedy else "sample"
    res = evaluate(trainer.spec, net, args.eval_count, mode, np.random.default_rng(args.seed))
    summary = {"mode": mode, "mean": res.mean, "std": res.std, "best": res.best, "count": len(res.lifetimes)}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "eval.csv", "w") as fh:
            fh.write("realization,lifetime\n")
            for i, life in enumerate(res.lifetimes):
                fh.write(f"{i},{life}\n")
        best = res.topologies[int(np.argmax(res.lifetimes))]
        save_instance(trainer.spec, out / "topology_eval_best.txt", best)
    print(json.dumps(summary))
    return 0


def cmd_resume(args) -> int:
    out = Path(args.out)
    overrides = {"iterations": args.iterations} if args.iterations else {}
    trainer = Trainer.from_checkpoint(out, out_dir=out, **overrides)
    trainer.run()
    write_final_topologies(trainer, out)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    handlers = {
        "gen": cmd_gen,
        "baseline": cmd_baseline,
        "oracle": lambda a: cmd_baseline(a, oracle_only=True),
        "train": cmd_train,
        "eval": cmd_eval,
        "resume": cmd_resume,
    }
    try:
        return handlers[args.command](args)
    except Exception as exc:  # reported as a structured line, exit status 1
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "command": args.command}),
              file=sys.stderr)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
