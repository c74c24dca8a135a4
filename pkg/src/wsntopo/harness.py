"""Instance generation and end-to-end experiment runs."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .baselines import (
    ORACLE_MAX_NODES,
    brute_force_optimal,
    mst_topology,
    random_topology,
    star_topology,
)
from .network import (
    LITERAL,
    NetworkSpec,
    lifetime_deterministic,
    load_instance,
    save_instance,
)
from .seeding import derive_seed
from .trainer import NetworkChange, TrainConfig, Trainer

logger = logging.getLogger(__name__)

PAPER_DEFAULTS = dict(energy=1.0, eps_proc=50e-9, rho=1e-12, data_bits=(500, 1000))


def generate_instance(n: int, radius_m: float = 1000.0, seed=0, *, energy: float = 1.0,
                      eps_proc: float = 50e-9, rho: float = 1e-12, data_bits=(500, 1000),
                      load_mode: str = LITERAL) -> NetworkSpec:
    """Gateway at the centre of a disc, ``n - 1`` sensors uniform over its area.

    Radii are drawn as ``radius * sqrt(u)`` (all radii first, then all
    angles) from ``numpy.random.default_rng(seed)``.
    """
    if n < 2:
        raise ValueError("need at least a gateway and one sensor")
    if not radius_m > 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(seed)
    r = radius_m * np.sqrt(rng.random(n - 1))
    theta = 2.0 * np.pi * rng.random(n - 1)
    pos = np.vstack([[0.0, 0.0], np.column_stack([r * np.cos(theta), r * np.sin(theta)])])
    return NetworkSpec(
        positions=pos,
        initial_energy=energy,
        eps_proc=eps_proc,
        rho=rho,
        data_bits_min=int(data_bits[0]),
        data_bits_max=int(data_bits[1]),
        load_mode=load_mode,
    )


def parse_change(text: str, kind: str) -> tuple[int, NetworkChange]:
    """``"63:6,7,8"`` -> ``(63, NetworkChange(kind, (6, 7, 8)))``."""
    try:
        at, ids = text.split(":", 1)
        nodes = tuple(int(x) for x in ids.split(",") if x.strip())
        return int(at), NetworkChange(kind, nodes)
    except ValueError as exc:
        raise ValueError(f"bad change {text!r}; expected ITERATION:id,id,...") from exc


@dataclass
class ExperimentConfig:
    out: str = "runs/latest"
    instance: str | None = None
    nodes: int = 20
    radius: float = 1000.0
    instance_seed: int | None = None
    load_mode: str = LITERAL
    train: TrainConfig = field(default_factory=TrainConfig)
    baselines: bool = True
    oracle: bool = False
    train_enabled: bool = True
    changes: list = field(default_factory=list)
    keep_checkpoints: int | None = None

    def __post_init__(self):
        its = [it for it, _ in self.changes]
        if any(b <= a for a, b in zip(its, its[1:])):
            raise ValueError("change-script iterations must be strictly increasing")

    def build_spec(self) -> NetworkSpec:
        if self.instance:
            spec, _ = load_instance(self.instance)
        else:
            seed = self.train.seed if self.instance_seed is None else self.instance_seed
            spec = generate_instance(self.nodes, self.radius, seed, load_mode=self.load_mode)
        if self.oracle and spec.n_active > ORACLE_MAX_NODES:
            raise ValueError(f"the oracle needs at most {ORACLE_MAX_NODES} active nodes, got {spec.n_active}")
        return spec


def baseline_rows(spec: NetworkSpec, seed=0, random_seeds: int = 100, oracle: bool = False):
    star = star_topology(spec)
    mst = mst_topology(spec)
    rand = [random_topology(spec, derive_seed(seed, "random", k)) for k in range(random_seeds)]
    rand_life = [lifetime_deterministic(spec, t) for t in rand]
    rows = [
        {"method": "star", "lifetime": lifetime_deterministic(spec, star), "std": 0.0},
        {"method": "random", "lifetime": float(np.mean(rand_life)), "std": float(np.std(rand_life))},
        {"method": "mst", "lifetime": lifetime_deterministic(spec, mst), "std": 0.0},
    ]
    topologies = {"star": star, "mst": mst}
    if oracle:
        res = brute_force_optimal(spec)
        rows.append({"method": "oracle", "lifetime": res.best_lifetime, "std": 0.0})
        topologies["oracle"] = res.best_topology
    return rows, topologies


def write_baselines(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["method", "lifetime", "std"])
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def read_baselines(path) -> dict:
    with open(path, newline="") as fh:
        return {r["method"]: float(r["lifetime"]) for r in csv.DictReader(fh)}


def run_experiment(config: ExperimentConfig) -> int:
    """Run baselines, the optional oracle and training; write every artifact under ``config.out``."""
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = config.build_spec()
    save_instance(spec, out / "instance.txt")

    if config.baselines or config.oracle:
        rows, topos = baseline_rows(spec, config.train.seed, config.train.random_baseline_seeds, config.oracle)
        write_baselines(rows, out / "baselines.csv")
        for name, topo in topos.items():
            save_instance(spec, out / f"topology_{name}.txt", topo)
        if config.oracle:
            (out / "oracle.json").write_text(json.dumps(rows[-1], indent=1))

    if config.train_enabled:
        trainer = Trainer(spec, config.train, config.changes, out_dir=out,
                          keep_checkpoints=config.keep_checkpoints)
        trainer.run()
        write_final_topologies(trainer, out)
    return 0


def write_final_topologies(trainer: Trainer, out: Path) -> None:
    from .network import Topology

    last = trainer.reports[-1]
    save_instance(trainer.spec, out / "topology_greedy.txt", Topology(last.greedy_topology))
    save_instance(trainer.spec, out / "topology_best.txt", Topology(last.best_topology))


def config_to_dict(config: ExperimentConfig) -> dict:
    data = asdict(config)
    data["changes"] = [[it, asdict(ch)] for it, ch in config.changes]
    return data
