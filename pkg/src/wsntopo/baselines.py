"""Reference topologies: star, random, MST and the exhaustive oracle."""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

from .mdp import apply, initial_state, valid_indices
from .network import (
    GATEWAY,
    LITERAL,
    NO_PARENT,
    NetworkSpec,
    Topology,
)

logger = logging.getLogger(__name__)

ORACLE_MAX_NODES = 9


def star_topology(spec: NetworkSpec) -> Topology:
    parent = [NO_PARENT] * spec.node_count
    for i in spec.active_sensors:
        parent[i] = GATEWAY
    return Topology(parent)


def random_topology(spec: NetworkSpec, rng_seed=None) -> Topology:
    """Attach sensors by picking uniformly among the valid MDP actions."""
    rng = np.random.default_rng(rng_seed)
    state = initial_state(spec)
    while not state.is_terminal:
        state = apply(state, int(rng.choice(valid_indices(state))))
    return state.topology()


def mst_topology(spec: NetworkSpec) -> Topology:
    """Prim's algorithm from the gateway over the complete Euclidean graph.

    Ties are broken on ``(weight, min index, max index)``.
    """
    nodes = [int(i) for i in np.flatnonzero(spec.active)]
    d = spec.distances
    parent = [NO_PARENT] * spec.node_count
    best = {v: (d[GATEWAY, v], min(GATEWAY, v), max(GATEWAY, v), GATEWAY) for v in nodes if v != GATEWAY}
    while best:
        v = min(best, key=lambda u: best[u][:3])
        parent[v] = best.pop(v)[3]
        for u, old in best.items():
            cand = (d[v, u], min(v, u), max(v, u), v)
            if cand[:3] < old[:3]:
                best[u] = cand
    return Topology(parent)


# ---------------------------------------------------------------------------
# Pruefer sequences
# ---------------------------------------------------------------------------

def prufer_decode(seq, m: int) -> list[tuple[int, int]]:
    """Edges of the labeled tree on ``0..m-1`` encoded by ``seq``."""
    if len(seq) != m - 2:
        raise ValueError(f"a tree on {m} labels needs a sequence of length {m - 2}")
    degree = [1] * m
    for x in seq:
        degree[x] += 1
    edges = []
    for x in seq:
        leaf = next(i for i in range(m) if degree[i] == 1)
        edges.append((leaf, x))
        degree[leaf] -= 1
        degree[x] -= 1
    u, v = (i for i in range(m) if degree[i] == 1)
    edges.append((u, v))
    return edges


def prufer_encode(edges, m: int) -> list[int]:
    adj = {i: set() for i in range(m)}
    for u, v in edges:
        adj[u].add(v)
        adj[v].add(u)
    seq = []
    for _ in range(m - 2):
        leaf = min(i for i in adj if len(adj[i]) == 1)
        (nb,) = adj.pop(leaf)
        adj[nb].discard(leaf)
        seq.append(nb)
    return seq


def orient_edges(edges, labels, n: int) -> Topology:
    """Direct undirected edges over local labels toward local label 0."""
    adj: dict[int, list[int]] = {}
    for u, v in edges:
        adj.setdefault(u, []).append(v)
        adj.setdefault(v, []).append(u)
    parent = [NO_PARENT] * n
    stack, seen = [0], {0}
    while stack:
        u = stack.pop()
        for v in adj.get(u, ()):
            if v not in seen:
                seen.add(v)
                parent[labels[v]] = labels[u]
                stack.append(v)
    return Topology(parent)


def iter_prufer_trees(spec: NetworkSpec):
    """Yield every labeled spanning tree of the active nodes, oriented to the gateway."""
    labels = [int(i) for i in np.flatnonzero(spec.active)]
    m = len(labels)
    if m == 2:
        yield orient_edges([(0, 1)], labels, spec.node_count)
        return
    for seq in itertools.product(range(m), repeat=m - 2):
        yield orient_edges(prufer_decode(seq, m), labels, spec.node_count)


def _decode_batch(seqs: np.ndarray, m: int) -> np.ndarray:
    """Vectorised Pruefer decode; returns local parent arrays of shape (B, m)."""
    b = seqs.shape[0]
    rows = np.arange(b)
    degree = np.ones((b, m), dtype=np.int64)
    for t in range(m - 2):
        np.add.at(degree, (rows, seqs[:, t]), 1)
    eu = np.empty((b, m - 1), dtype=np.int64)
    ev = np.empty((b, m - 1), dtype=np.int64)
    for t in range(m - 2):
        leaf = np.argmax(degree == 1, axis=1)
        eu[:, t] = leaf
        ev[:, t] = seqs[:, t]
        degree[rows, leaf] -= 1
        degree[rows, seqs[:, t]] -= 1
    last = degree == 1
    first = np.argmax(last, axis=1)
    second = m - 1 - np.argmax(last[:, ::-1], axis=1)
    eu[:, -1] = first
    ev[:, -1] = second

    parent = np.full((b, m), -2, dtype=np.int64)
    parent[:, 0] = -1
    for _ in range(m - 1):
        known_u = parent[rows[:, None], eu] != -2
        known_v = parent[rows[:, None], ev] != -2
        fwd = known_u & ~known_v
        back = known_v & ~known_u
        r, c = np.nonzero(fwd)
        parent[r, ev[r, c]] = eu[r, c]
        r, c = np.nonzero(back)
        parent[r, eu[r, c]] = ev[r, c]
    return parent


def _batch_lifetimes(spec: NetworkSpec, labels: np.ndarray, local_parent: np.ndarray):
    """Integer and continuous lifetimes for a batch of local parent arrays."""
    b, m = local_parent.shape
    d = spec.distances[np.ix_(labels, labels)]
    eps = spec.eps_proc[labels]
    energy = spec.initial_energy[labels]
    rows = np.arange(b)[:, None]
    sensors = np.arange(1, m)
    par = local_parent[:, 1:]

    load = np.zeros((b, m))
    r = spec.mean_bits
    if spec.load_mode == LITERAL:
        load[:, 1:] = r
        np.add.at(load, (np.broadcast_to(rows, par.shape), par), r)
    else:
        anc = np.broadcast_to(sensors, par.shape).copy()
        alive = np.ones(par.shape, dtype=bool)
        for _ in range(m - 1):
            np.add.at(load, (np.broadcast_to(rows, par.shape)[alive], anc[alive]), r)
            nxt = local_parent[rows, anc]
            alive &= nxt > 0
            anc = np.where(alive, nxt, 0)
    g = load[:, 1:]
    dist = d[sensors[None, :], par]
    cost = eps[1:][None, :] + spec.rho * dist * dist
    with np.errstate(divide="ignore"):
        budget = np.where(cost > 0, energy[1:][None, :] / cost, np.inf)
    cont = np.min(budget / g, axis=1)
    k = np.floor(budget / g)
    k = np.where(np.isfinite(k), k, np.inf)
    finite = np.isfinite(k)
    kk = np.where(finite, k, 0.0)
    kk = kk - (kk * g > budget)
    kk = kk + ((kk + 1) * g <= budget)
    k = np.where(finite, kk, np.inf)
    return k.min(axis=1), cont


@dataclass
class OracleResult:
    best_topology: Topology
    best_lifetime: int
    tree_count: int
    evaluated_count: int
    best_continuous: float = math.nan


def brute_force_optimal(spec: NetworkSpec, batch_size: int = 100_000) -> OracleResult:
    """Score every labeled spanning tree of the active nodes; keep the longest-lived.

    Ties go to the lexicographically smallest parent array.
    """
    labels = np.flatnonzero(spec.active)
    m = len(labels)
    if m < 2:
        raise ValueError("the oracle needs at least one active sensor")
    if m > ORACLE_MAX_NODES:
        raise ValueError(
            f"{m} active nodes means {m}^{m - 2} trees; exhaustive search is limited "
            f"to {ORACLE_MAX_NODES} active nodes"
        )
    total = m ** (m - 2)
    best_life, best_cont, best_parent = -1.0, math.nan, None
    evaluated = 0
    for start in range(0, total, batch_size):
        idx = np.arange(start, min(start + batch_size, total), dtype=np.int64)
        seqs = np.empty((len(idx), max(m - 2, 0)), dtype=np.int64)
        rem = idx.copy()
        for t in range(m - 3, -1, -1):
            seqs[:, t] = rem % m
            rem //= m
        if m == 2:
            local = np.array([[-1, 0]])
        else:
            local = _decode_batch(seqs, m)
        life, cont = _batch_lifetimes(spec, labels, local)
        evaluated += len(idx)
        top = life.max()
        if top >= best_life:
            cand = np.flatnonzero(life == top)
            glob = np.full((len(cand), spec.node_count), NO_PARENT, dtype=np.int64)
            glob[:, labels[1:]] = labels[local[cand][:, 1:]]
            order = np.lexsort(glob.T[::-1])
            pick = tuple(int(x) for x in glob[order[0]])
            if top > best_life or best_parent is None or pick < best_parent:
                best_parent = pick
                best_cont = float(cont[cand[order[0]]])
            best_life = top
        logger.info("oracle: %d/%d trees evaluated, best lifetime %d", evaluated, total, best_life)
    return OracleResult(
        best_topology=Topology(best_parent),
        best_lifetime=int(best_life),
        tree_count=total,
        evaluated_count=evaluated,
        best_continuous=best_cont,
    )
