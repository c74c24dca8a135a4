"""Sequential arborescence construction as a finite-horizon MDP.

A state is a partial tree hanging off the gateway. An action attaches one
unconnected active sensor to a node already on the tree. Actions are
indexed in a fixed ``N * N`` space as ``child * N + parent`` so the policy
head keeps one shape for the whole episode.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .network import (
    GATEWAY,
    NO_PARENT,
    NetworkSpec,
    Topology,
    lifetime_continuous,
)

FULL_CHANNELS = 4
BARE_CHANNELS = 1


class InvalidActionError(ValueError):
    pass


@dataclass(frozen=True)
class Action:
    child: int
    parent: int

    def index(self, n: int) -> int:
        return self.child * n + self.parent

    @classmethod
    def from_index(cls, flat: int, n: int) -> "Action":
        return cls(*divmod(int(flat), n))


@dataclass(frozen=True, eq=False)
class TopologyState:
    """Partial arborescence. ``parent[i] == -1`` means ``i`` is not attached yet."""

    spec: NetworkSpec
    parent: tuple

    @cached_property
    def connected(self) -> frozenset:
        return frozenset([GATEWAY] + [i for i, p in enumerate(self.parent) if p != NO_PARENT])

    @property
    def step(self) -> int:
        return len(self.connected) - 1

    @cached_property
    def unconnected(self) -> tuple:
        return tuple(int(i) for i in self.spec.active_sensors if self.parent[i] == NO_PARENT)

    @property
    def is_terminal(self) -> bool:
        return not self.unconnected

    @property
    def key(self) -> tuple:
        return self.parent

    def topology(self) -> Topology:
        if not self.is_terminal:
            raise ValueError("state is not terminal")
        return Topology(self.parent)

    def __eq__(self, other):
        if not isinstance(other, TopologyState):
            return NotImplemented
        return self.spec is other.spec and self.parent == other.parent

    def __hash__(self):
        return hash((id(self.spec), self.parent))

    def __repr__(self):
        return f"TopologyState(step={self.step}, parent={self.parent})"


def initial_state(spec: NetworkSpec) -> TopologyState:
    if not spec.active[GATEWAY]:
        raise ValueError("the gateway must be active")
    return TopologyState(spec, (NO_PARENT,) * spec.node_count)


def valid_actions(state: TopologyState) -> list[Action]:
    parents = sorted(state.connected)
    return [Action(c, p) for c in state.unconnected for p in parents]


def valid_indices(state: TopologyState) -> np.ndarray:
    """Flat indices of the valid actions, ascending."""
    n = state.spec.node_count
    if state.is_terminal:
        return np.zeros(0, dtype=np.int64)
    children = np.array(state.unconnected, dtype=np.int64)
    parents = np.array(sorted(state.connected), dtype=np.int64)
    return (children[:, None] * n + parents[None, :]).ravel()


def valid_mask(state: TopologyState) -> np.ndarray:
    n = state.spec.node_count
    mask = np.zeros(n * n, dtype=bool)
    mask[valid_indices(state)] = True
    return mask


def apply(state: TopologyState, action: Action | int) -> TopologyState:
    """Return the successor state; ``state`` itself is left untouched."""
    n = state.spec.node_count
    if not isinstance(action, Action):
        action = Action.from_index(action, n)
    c, p = action.child, action.parent
    if not (0 <= c < n and 0 <= p < n):
        raise InvalidActionError(f"action {c}->{p} references a node outside 0..{n - 1}")
    if c == GATEWAY:
        raise InvalidActionError("the gateway cannot be attached to a parent")
    if c == p:
        raise InvalidActionError(f"sensor {c} cannot be its own parent")
    if not state.spec.active[c]:
        raise InvalidActionError(f"sensor {c} is inactive")
    if not state.spec.active[p]:
        raise InvalidActionError(f"parent {p} is inactive")
    if c in state.connected:
        raise InvalidActionError(f"sensor {c} is already connected")
    if p not in state.connected:
        raise InvalidActionError(f"parent {p} is not on the tree yet")
    parent = list(state.parent)
    parent[c] = p
    return TopologyState(state.spec, tuple(parent))


def state_from_topology(spec: NetworkSpec, topology: Topology) -> TopologyState:
    return TopologyState(spec, tuple(topology.parent))


_reward_scales: "weakref.WeakKeyDictionary[NetworkSpec, float]" = weakref.WeakKeyDictionary()


def reward_scale(spec: NetworkSpec) -> float:
    """Continuous lifetime of the MST topology; rewards are expressed relative to it."""
    scale = _reward_scales.get(spec)
    if scale is None:
        from .baselines import mst_topology

        scale = lifetime_continuous(spec, mst_topology(spec))
        _reward_scales[spec] = scale
    return scale


def terminal_reward(state: TopologyState) -> float:
    if not state.is_terminal:
        raise ValueError("reward is only defined for terminal states")
    return lifetime_continuous(state.spec, Topology(state.parent)) / reward_scale(state.spec)


def _static_channels(spec: NetworkSpec) -> np.ndarray:
    act = spec.active.astype(np.float64)
    d = spec.distances * act[:, None] * act[None, :]
    dmax = d.max()
    dist = d / dmax if dmax > 0 else d
    energy = np.where(spec.active, spec.initial_energy, 0.0)
    energy[GATEWAY] = 0.0
    emax = energy.max()
    energy = energy / emax if emax > 0 else energy
    energy[GATEWAY] = 1.0
    return np.stack([dist, energy[:, None] * act[None, :]])


_static_cache: "weakref.WeakKeyDictionary[NetworkSpec, np.ndarray]" = weakref.WeakKeyDictionary()


def encode_state(state: TopologyState, bare: bool = False) -> np.ndarray:
    """Encode a state as ``(C, N, N)`` planes.

    Channel 0 is the adjacency matrix (``[child, parent] = 1``). The full
    encoding adds the connected set on the diagonal, pairwise distances
    scaled to [0, 1] and each node's battery relative to the largest one
    broadcast along its row. Inactive nodes are zero in every plane.
    """
    spec = state.spec
    n = spec.node_count
    adj = np.zeros((n, n))
    for c, p in enumerate(state.parent):
        if p != NO_PARENT:
            adj[c, p] = 1.0
    if bare:
        return adj[None]
    static = _static_cache.get(spec)
    if static is None:
        static = _static_channels(spec)
        _static_cache[spec] = static
    diag = np.zeros((n, n))
    conn = np.fromiter(state.connected, dtype=np.int64)
    diag[conn, conn] = 1.0
    return np.concatenate([adj[None], diag[None], static])
