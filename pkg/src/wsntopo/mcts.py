"""PUCT tree search over the topology MDP, guided by a policy/value network.

Nodes are keyed by the partial parent array, so a state reached through
different attachment orders shares one record.
"""
from __future__ import annotations

import csv
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from .mdp import (
    BARE_CHANNELS,
    TopologyState,
    apply,
    encode_state,
    terminal_reward,
    valid_indices,
)

DEFAULT_C_PUCT = 1.5


@dataclass
class SearchNode:
    """Statistics for one expanded state, stored over its valid actions only."""

    actions: np.ndarray
    priors: np.ndarray
    q: np.ndarray
    visits: np.ndarray
    total: int = 1
    value: float = 0.0
    noised: bool = False

    def dense(self, values: np.ndarray, size: int) -> np.ndarray:
        out = np.zeros(size, dtype=np.float64)
        out[self.actions] = values
        return out

    def ucb(self, c_puct: float) -> np.ndarray:
        return self.q + c_puct * self.priors * math.sqrt(self.total) / (1.0 + self.visits)


@dataclass
class SearchTree:
    """Per-episode search statistics plus the generator used for tie-breaks."""

    seed: object = None
    dirichlet_alpha: float | None = None
    dirichlet_frac: float = 0.25
    nodes: dict = field(default_factory=dict)
    terminal_rewards: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)

    def reset(self):
        self.nodes.clear()

    def __contains__(self, state: TopologyState) -> bool:
        return state.key in self.nodes

    def node(self, state: TopologyState) -> SearchNode:
        return self.nodes[state.key]

    def reward(self, state: TopologyState) -> float:
        r = self.terminal_rewards.get(state.key)
        if r is None:
            r = self.terminal_rewards[state.key] = terminal_reward(state)
        return r


def evaluate_state(net, state: TopologyState):
    """Query the network on ``state``; returns (policy over N*N, value)."""
    bare = net.config.input_channels == BARE_CHANNELS
    mask = np.zeros(state.spec.node_count ** 2, dtype=bool)
    mask[valid_indices(state)] = True
    return net.forward(encode_state(state, bare=bare), mask)


def _expand(tree: SearchTree, state: TopologyState, net) -> float:
    actions = valid_indices(state)
    policy, value = evaluate_state(net, state)
    priors = policy[actions]
    total = priors.sum()
    priors = priors / total if total > 0 and np.isfinite(total) else np.full(len(actions), 1.0 / len(actions))
    if not math.isfinite(value):
        raise FloatingPointError(f"network returned non-finite value {value} for {state}")
    tree.nodes[state.key] = SearchNode(
        actions=actions,
        priors=priors,
        q=np.zeros(len(actions)),
        visits=np.zeros(len(actions), dtype=np.int64),
        total=1,
        value=float(value),
    )
    return float(value)


def mcts_search(tree: SearchTree, state: TopologyState, net, c_puct: float = DEFAULT_C_PUCT) -> float:
    """One simulation from ``state``; returns the value backed up through it.

    Terminal states return their normalised reward, unseen states are
    expanded with the network's prior and value, and expanded states
    descend along the maximal PUCT score (random tie-break) and then fold
    the returned value into the running mean of that action.
    """
    if state.is_terminal:
        return tree.reward(state)
    node = tree.nodes.get(state.key)
    if node is None:
        return _expand(tree, state, net)

    u = node.ucb(c_puct)
    best = np.flatnonzero(u == u.max())
    k = int(best[0]) if len(best) == 1 else int(tree.rng.choice(best))
    value = mcts_search(tree, apply(state, int(node.actions[k])), net, c_puct)
    if not math.isfinite(value):
        raise FloatingPointError("non-finite value reached the search tree")

    m = node.visits[k]
    node.q[k] = (m * node.q[k] + value) / (m + 1)
    node.visits[k] = m + 1
    node.total += 1
    return value


def _add_root_noise(tree: SearchTree, node: SearchNode):
    if tree.dirichlet_alpha is None or node.noised:
        return
    noise = tree.rng.dirichlet(np.full(len(node.actions), tree.dirichlet_alpha))
    node.priors = (1 - tree.dirichlet_frac) * node.priors + tree.dirichlet_frac * noise
    node.noised = True


def run_simulations(tree: SearchTree, state: TopologyState, net, n_sims: int,
                    c_puct: float = DEFAULT_C_PUCT) -> np.ndarray:
    """Run ``n_sims`` searches from ``state``; return visit shares over all N*N actions.

    When no child has been visited yet (a single expansion-only pass) the
    shares fall back to uniform over the valid actions.
    """
    if n_sims < 1:
        raise ValueError("n_sims must be at least 1")
    if state.is_terminal:
        raise ValueError("cannot search from a terminal state")
    size = state.spec.node_count ** 2
    for _ in range(n_sims):
        mcts_search(tree, state, net, c_puct)
        if tree.dirichlet_alpha is not None:
            _add_root_noise(tree, tree.node(state))
    node = tree.node(state)
    counts = node.visits.astype(np.float64)
    if counts.sum() == 0:
        counts = np.ones(len(node.actions))
    return node.dense(counts / counts.sum(), size)


def dump_root_table(tree: SearchTree, state: TopologyState, c_puct: float = DEFAULT_C_PUCT,
                    stream=None) -> None:
    """Write ``child,parent,prior,q,visits,ucb`` rows for the root's actions as CSV."""
    stream = stream or sys.stderr
    node = tree.node(state)
    n = state.spec.node_count
    writer = csv.writer(stream)
    writer.writerow(["child", "parent", "prior", "q", "visits", "ucb"])
    for a, p, q, m, u in zip(node.actions, node.priors, node.q, node.visits, node.ucb(c_puct)):
        c, par = divmod(int(a), n)
        writer.writerow([c, par, f"{p:.6g}", f"{q:.6g}", int(m), f"{u:.6g}"])
