"""Alternating search and training, evaluation and network changes.

Each iteration collects ``episodes_per_iter`` search-guided episodes into
a replay buffer, makes one shuffled minibatch pass over the buffer,
evaluates the network's own policy and records an :class:`IterationReport`.
All randomness for iteration ``i`` is derived from ``(seed, i)``, so a
checkpoint taken after any iteration fully determines the rest of the run.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import shutil
import time
from collections import deque
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .baselines import mst_topology, random_topology, star_topology
from .mcts import SearchTree, run_simulations
from .mdp import (
    BARE_CHANNELS,
    FULL_CHANNELS,
    apply,
    encode_state,
    initial_state,
    valid_mask,
)
from .network import (
    GATEWAY,
    NetworkSpec,
    lifetime_deterministic,
    load_instance,
    save_instance,
    validate_topology,
)
from .nn import EpisodeSample, NetConfig, PolicyValueNet
from .seeding import derive_rng, derive_seed

logger = logging.getLogger(__name__)

METRICS_COLUMNS = (
    "iteration", "mean_lifetime", "std_lifetime", "best_lifetime", "greedy_lifetime",
    "loss", "episodes", "sims", "mean_episode_reward", "active_sensors", "change",
    "star_lifetime", "random_mean_lifetime", "mst_lifetime",
)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 100
    episodes_per_iter: int = 10
    sims_per_state: int = 100
    minibatch: int = 16
    learning_rate: float = 1e-3
    c_puct: float = 1.5
    replay_episodes: int | None = 20  # None keeps every sample
    eval_realizations: int = 100
    seed: int = 0
    epochs: int = 1
    tree_reuse: bool = True
    bare_encoding: bool = False
    dirichlet_alpha: float | None = None
    dirichlet_frac: float = 0.25
    dirichlet_iterations: int | None = None  # noise only up to this iteration; None = always
    capacity: int | None = None  # pad the network to this many node slots
    conv_blocks: int = 3
    filters: int = 32
    value_head_hidden: int = 64
    use_residual: bool = True
    use_batchnorm: bool = True
    l2: float = 1e-4
    random_baseline_seeds: int = 100

    def __post_init__(self):
        for name in ("iterations", "episodes_per_iter", "sims_per_state", "minibatch",
                     "eval_realizations", "epochs", "random_baseline_seeds"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.learning_rate > 0 or not self.c_puct > 0:
            raise ValueError("learning_rate and c_puct must be positive")
        if self.replay_episodes is not None and self.replay_episodes < self.episodes_per_iter:
            raise ValueError("the replay buffer must hold at least one iteration of episodes")

    def strict_paper(self) -> "TrainConfig":
        """Unbounded dataset, a fresh search per move and the bare adjacency input."""
        return replace(self, replay_episodes=None, tree_reuse=False, bare_encoding=True)

    def paper_scale(self) -> "TrainConfig":
        return replace(self, episodes_per_iter=10, sims_per_state=100, minibatch=16, learning_rate=1e-6)

    def net_config(self, n_nodes: int) -> NetConfig:
        return NetConfig(
            n_nodes=n_nodes,
            input_channels=BARE_CHANNELS if self.bare_encoding else FULL_CHANNELS,
            conv_blocks=self.conv_blocks,
            filters=self.filters,
            value_head_hidden=self.value_head_hidden,
            use_residual=self.use_residual,
            use_batchnorm=self.use_batchnorm,
            weight_init_seed=derive_seed(self.seed, "net") % 2**32,
            l2=self.l2,
        )

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown training options: {', '.join(sorted(unknown))}")
        return cls(**data)


class ReplayBuffer:
    """Bounded FIFO of samples; the oldest are evicted first."""

    def __init__(self, capacity: int | None):
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity)

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def extend(self, samples):
        self._items.extend(samples)

    def clear(self):
        self._items.clear()

    def save(self, path):
        items = list(self._items)
        if items:
            np.savez(
                path,
                states=np.stack([s.encoded_state for s in items]),
                policies=np.stack([s.target_policy for s in items]),
                values=np.array([s.target_value for s in items]),
                masks=np.stack([s.valid_mask for s in items]),
            )
        else:
            np.savez(path, states=np.zeros(0), policies=np.zeros(0), values=np.zeros(0), masks=np.zeros(0))

    def load(self, path):
        self.clear()
        with np.load(path) as data:
            if data["values"].size:
                self.extend(
                    EpisodeSample(s, p, float(v), m.astype(bool))
                    for s, p, v, m in zip(data["states"], data["policies"], data["values"], data["masks"])
                )


@dataclass
class NetworkChange:
    """Sensors to disable (``remove``) or enable (``add``).

    ``add`` re-enables the listed inactive sensors; new sensors given by
    ``positions``/``energies`` take the first reserved slots.
    """

    kind: str
    nodes: tuple = ()
    positions: tuple = ()
    energies: tuple = ()

    def __post_init__(self):
        if self.kind not in ("add", "remove"):
            raise ValueError("change kind must be 'add' or 'remove'")
        self.nodes = tuple(int(i) for i in self.nodes)
        self.positions = tuple(tuple(float(c) for c in p) for p in self.positions)
        self.energies = tuple(float(e) for e in self.energies)
        if self.energies and len(self.energies) != len(self.positions):
            raise ValueError("give one energy per new sensor position")

    def describe(self) -> str:
        ids = ",".join(str(i) for i in self.nodes)
        extra = f"+{len(self.positions)}new" if self.positions else ""
        return f"{self.kind}:{ids}{extra}"


def apply_network_change(spec: NetworkSpec, net: PolicyValueNet | None, change: NetworkChange) -> NetworkSpec:
    """Return the changed spec. Node indices and the network weights stay as they are."""
    if net is not None and net.config.n_nodes != spec.node_count:
        raise ValueError("network and spec disagree on the number of node slots")
    active = spec.active.copy()
    n = spec.node_count
    first_reserved = n - spec.n_reserved
    if change.kind == "remove":
        for i in change.nodes:
            if i == GATEWAY:
                raise ValueError("the gateway cannot be removed")
            if not 0 < i < first_reserved:
                raise ValueError(f"node {i} does not exist")
        active[list(change.nodes)] = False
        if not active[1:].any():
            raise ValueError("a change must leave at least one active sensor")
        return spec.with_active(active)

    for i in change.nodes:
        if not 0 < i < first_reserved:
            raise ValueError(f"node {i} does not exist; new sensors need positions")
    active[list(change.nodes)] = True
    if not change.positions:
        return spec.with_active(active)
    k = len(change.positions)
    if k > spec.n_reserved:
        raise ValueError(
            f"adding {k} sensors needs {k} reserved slots but only {spec.n_reserved} are free; "
            "re-pad the network with a larger capacity and retrain"
        )
    slots = list(range(first_reserved, first_reserved + k))
    positions = spec.positions.copy()
    energy = spec.initial_energy.copy()
    positions[slots] = change.positions
    energy[slots] = change.energies if change.energies else 1.0
    active[slots] = True
    return spec.replace(positions=positions, initial_energy=energy, active=active,
                        n_reserved=spec.n_reserved - k)


def run_episode(spec: NetworkSpec, net, config: TrainConfig, rng: np.random.Generator):
    """Build one topology with search; returns (samples, normalised reward, topology)."""
    tree = SearchTree(seed=int(rng.integers(2**63)), dirichlet_alpha=config.dirichlet_alpha,
                      dirichlet_frac=config.dirichlet_frac)
    bare = net.config.input_channels == BARE_CHANNELS
    state = initial_state(spec)
    samples = []
    size = spec.node_count ** 2
    while not state.is_terminal:
        if not config.tree_reuse:
            tree.reset()
        dist = run_simulations(tree, state, net, config.sims_per_state, config.c_puct)
        samples.append(EpisodeSample(encode_state(state, bare=bare), dist, math.nan, valid_mask(state)))
        state = apply(state, int(rng.choice(size, p=dist)))
    reward = tree.reward(state)
    for s in samples:
        s.target_value = reward
    return samples, reward, state.topology()


@dataclass
class EvaluationResult:
    mean: float
    std: float
    best: int
    lifetimes: list
    topologies: list


def evaluate(spec: NetworkSpec, net, n_realizations: int = 100, mode: str = "sample",
             rng=None) -> EvaluationResult:
    """Construct topologies from the network's policy alone (no search)."""
    if mode not in ("sample", "greedy"):
        raise ValueError("mode must be 'sample' or 'greedy'")
    rng = np.random.default_rng(rng)
    bare = net.config.input_channels == BARE_CHANNELS
    count = 1 if mode == "greedy" else n_realizations
    states = [initial_state(spec)] * count
    size = spec.node_count ** 2
    while not states[0].is_terminal:
        x = np.stack([encode_state(s, bare=bare) for s in states])
        masks = np.stack([valid_mask(s) for s in states])
        policy, _ = net.predict_batch(x, masks)
        if mode == "greedy":
            actions = [int(np.argmax(policy[0]))]
        else:
            actions = [int(rng.choice(size, p=p / p.sum())) for p in policy]
        states = [apply(s, a) for s, a in zip(states, actions)]
    topologies = [validate_topology(spec, s.topology()) for s in states]
    lifetimes = [lifetime_deterministic(spec, t) for t in topologies]
    return EvaluationResult(
        mean=float(np.mean(lifetimes)),
        std=float(np.std(lifetimes)),
        best=int(max(lifetimes)),
        lifetimes=lifetimes,
        topologies=topologies,
    )


def baseline_lifetimes(spec: NetworkSpec, random_seeds: int = 100, seed=0) -> dict:
    rand = [lifetime_deterministic(spec, random_topology(spec, derive_seed(seed, "random", k)))
            for k in range(random_seeds)]
    return {
        "star_lifetime": lifetime_deterministic(spec, star_topology(spec)),
        "random_mean_lifetime": float(np.mean(rand)),
        "mst_lifetime": lifetime_deterministic(spec, mst_topology(spec)),
    }


@dataclass
class IterationReport:
    iteration: int
    mean_lifetime: float
    std_lifetime: float
    best_lifetime: int
    greedy_lifetime: int
    loss: float
    episodes: int
    sims: int
    mean_episode_reward: float
    active_sensors: int
    change: str
    star_lifetime: int
    random_mean_lifetime: float
    mst_lifetime: int
    episode_rewards: list = field(default_factory=list)
    greedy_topology: list = field(default_factory=list)
    best_topology: list = field(default_factory=list)
    wall_seconds: float = 0.0

    def row(self) -> list:
        return [getattr(self, c) for c in METRICS_COLUMNS]


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_metrics(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_COLUMNS)
        for r in reports:
            w.writerow([_fmt(v) for v in r.row()])


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class Trainer:
    """Mutable training run: network, replay buffer, reports and change script.

    Parameters
    ----------
    spec : NetworkSpec
        The network to optimise. Padded to ``config.capacity`` slots if set.
    config : TrainConfig
    changes : list of (iteration, NetworkChange), optional
        Applied just before the given iteration runs.
    out_dir : path, optional
        Where metrics and per-iteration checkpoints go.
    """

    def __init__(self, spec: NetworkSpec, config: TrainConfig, changes=(), out_dir=None,
                 net: PolicyValueNet | None = None, keep_checkpoints: int | None = None):
        if config.capacity is not None:
            spec = spec.padded(config.capacity)
        self.spec = spec
        self.config = config
        self.changes = sorted(((int(it), ch) for it, ch in changes), key=lambda t: t[0])
        its = [it for it, _ in self.changes]
        if len(set(its)) != len(its):
            raise ValueError("change-script iterations must be strictly increasing")
        self.net = net or PolicyValueNet(config.net_config(spec.node_count))
        if self.net.config.n_nodes != spec.node_count:
            raise ValueError("network size does not match the spec")
        self.buffer = ReplayBuffer(self._capacity())
        self.iteration = 0
        self.reports: list[IterationReport] = []
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.keep_checkpoints = keep_checkpoints
        self._baselines: dict[str, dict] = {}

    @property
    def horizon(self) -> int:
        return len(self.spec.active_sensors)

    def _capacity(self):
        if self.config.replay_episodes is None:
            return None
        return self.config.replay_episodes * self.horizon

    def baselines(self) -> dict:
        key = self.spec.fingerprint
        if key not in self._baselines:
            self._baselines[key] = baseline_lifetimes(
                self.spec, self.config.random_baseline_seeds, self.config.seed)
        return self._baselines[key]

    def apply_change(self, change: NetworkChange):
        self.spec = apply_network_change(self.spec, self.net, change)
        # Samples from the old network have stale masks and targets.
        self.buffer = ReplayBuffer(self._capacity())

    def _train_pass(self, rng) -> float:
        cfg = self.config
        losses = []
        for _ in range(cfg.epochs):
            order = rng.permutation(len(self.buffer))
            for start in range(0, len(order), cfg.minibatch):
                batch = [self.buffer[int(i)] for i in order[start:start + cfg.minibatch]]
                losses.append(self.net.train_step(batch, cfg.learning_rate))
        return float(np.mean(losses)) if losses else math.nan

    def run_iteration(self) -> IterationReport:
        cfg = self.config
        i = self.iteration + 1
        t0 = time.perf_counter()
        marker = []
        for it, change in self.changes:
            if it == i:
                self.apply_change(change)
                marker.append(change.describe())

        episode_cfg = cfg
        if cfg.dirichlet_iterations is not None and i > cfg.dirichlet_iterations:
            episode_cfg = replace(cfg, dirichlet_alpha=None)
        rewards = []
        for e in range(cfg.episodes_per_iter):
            samples, reward, _ = run_episode(self.spec, self.net, episode_cfg, derive_rng(cfg.seed, "episode", i, e))
            self.buffer.extend(samples)
            rewards.append(reward)
        loss = self._train_pass(derive_rng(cfg.seed, "shuffle", i))

        sampled = evaluate(self.spec, self.net, cfg.eval_realizations, "sample", derive_rng(cfg.seed, "eval", i))
        greedy = evaluate(self.spec, self.net, 1, "greedy")
        base = self.baselines()
        best_idx = int(np.argmax(sampled.lifetimes))
        report = IterationReport(
            iteration=i,
            mean_lifetime=sampled.mean,
            std_lifetime=sampled.std,
            best_lifetime=sampled.best,
            greedy_lifetime=greedy.best,
            loss=loss,
            episodes=cfg.episodes_per_iter,
            sims=cfg.sims_per_state,
            mean_episode_reward=float(np.mean(rewards)),
            active_sensors=self.horizon,
            change=";".join(marker),
            episode_rewards=[float(r) for r in rewards],
            greedy_topology=list(greedy.topologies[0].parent),
            best_topology=list(sampled.topologies[best_idx].parent),
            wall_seconds=time.perf_counter() - t0,
            **base,
        )
        self.iteration = i
        self.reports.append(report)
        logger.info("iteration %d: mean %.1f std %.1f greedy %d (mst %d) loss %.4f",
                    i, report.mean_lifetime, report.std_lifetime, report.greedy_lifetime,
                    report.mst_lifetime, loss)
        if self.out_dir is not None:
            self._write_outputs()
        return report

    def run(self, until: int | None = None) -> list[IterationReport]:
        until = self.config.iterations if until is None else until
        while self.iteration < until:
            self.run_iteration()
        return self.reports

    # -- persistence --------------------------------------------------------

    def _write_outputs(self):
        out = self.out_dir
        out.mkdir(parents=True, exist_ok=True)
        write_metrics(self.reports, out / "metrics.csv")
        with open(out / "timing.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "wall_seconds"])
            for r in self.reports:
                w.writerow([r.iteration, f"{r.wall_seconds:.3f}"])
        self.save_checkpoint(out / "checkpoints" / f"iter_{self.iteration:04d}")
        (out / "checkpoints" / "LATEST").write_text(f"iter_{self.iteration:04d}\n")
        if self.keep_checkpoints:
            ckpts = sorted((out / "checkpoints").glob("iter_*"))
            for old in ckpts[:-self.keep_checkpoints]:
                shutil.rmtree(old)

    def save_checkpoint(self, directory) -> Path:
        """Write net, buffer, instance and run state; the directory appears atomically."""
        directory = Path(directory)
        tmp = directory.with_name(directory.name + ".partial")
        if tmp.exists():
            shutil.rmtree(tmp)
        tmp.mkdir(parents=True)
        self.net.save(tmp / "net.ckpt", self.spec.fingerprint,
                      provenance={"seed": self.config.seed, "iteration": self.iteration})
        self.buffer.save(tmp / "buffer.npz")
        save_instance(self.spec, tmp / "instance.txt")
        state = {
            "iteration": self.iteration,
            "config": asdict(self.config),
            "changes": [[it, asdict(ch)] for it, ch in self.changes],
            "reports": [asdict(r) for r in self.reports],
        }
        (tmp / "trainer.json").write_text(json.dumps(state, indent=1))
        if directory.exists():
            shutil.rmtree(directory)
        tmp.rename(directory)
        return directory

    @classmethod
    def from_checkpoint(cls, directory, out_dir=None, **overrides) -> "Trainer":
        directory = Path(directory)
        if (directory / "LATEST").exists():
            directory = directory / (directory / "LATEST").read_text().strip()
        elif (directory / "checkpoints" / "LATEST").exists():
            directory = directory / "checkpoints" / (directory / "checkpoints" / "LATEST").read_text().strip()
        state = json.loads((directory / "trainer.json").read_text())
        config = TrainConfig.from_dict({**state["config"], **overrides, "capacity": None})
        spec, _ = load_instance(directory / "instance.txt")
        net = PolicyValueNet.load(directory / "net.ckpt", expect_nodes=spec.node_count,
                                  expect_fingerprint=spec.fingerprint)
        changes = [(it, NetworkChange(**ch)) for it, ch in state["changes"]]
        trainer = cls(spec, config, changes, out_dir=out_dir, net=net)
        trainer.config = replace(config, capacity=state["config"]["capacity"])
        trainer.buffer.load(directory / "buffer.npz")
        trainer.iteration = state["iteration"]
        trainer.reports = [IterationReport(**r) for r in state["reports"]]
        return trainer


def run_training(spec: NetworkSpec, config: TrainConfig, changes=(), out_dir=None):
    """Run every iteration; returns ``(net, reports)``."""
    trainer = Trainer(spec, config, changes, out_dir=out_dir)
    trainer.run()
    return trainer.net, trainer.reports
