"""Physical model of a wireless sensor network.

Node 0 is always the gateway; nodes ``1..N-1`` are sensors. A topology is
a parent array in which every active sensor transmits to exactly one
active node, and following parents from any sensor reaches the gateway.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

GATEWAY = 0
NO_PARENT = -1

# Aggregation recurrences for per-round loads.
SUBTREE = "subtree"
LITERAL = "literal"
LOAD_MODES = (SUBTREE, LITERAL)


class TopologyError(ValueError):
    """Raised when a parent array is not an arborescence over the active nodes."""


class InstanceFormatError(ValueError):
    """Raised when an instance or topology file cannot be parsed."""


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    """Immutable description of a sensor network.

    Parameters
    ----------
    positions : array-like of shape (N, 2)
        Node coordinates in meters. Row 0 is the gateway.
    initial_energy : array-like of shape (N,)
        Battery energy in joules. The gateway entry is ignored and stored
        as ``inf``.
    eps_proc : float or array-like of shape (N,)
        Processing energy per bit, joules/bit.
    rho : float
        Power amplification constant, joules/(m^2 bit).
    data_bits_min, data_bits_max : int
        Inclusive bounds of the bits each sensor generates per round.
    active : array-like of bool, optional
        Per-node activity flags. The gateway must stay active.
    n_reserved : int
        Trailing inactive slots kept free for sensors added later.
    load_mode : {"subtree", "literal"}
        ``subtree`` forwards the whole aggregated subtree load; ``literal``
        adds only the children's own data.
    """

    positions: np.ndarray
    initial_energy: np.ndarray
    eps_proc: np.ndarray
    rho: float
    data_bits_min: int
    data_bits_max: int
    active: np.ndarray = None
    n_reserved: int = 0
    load_mode: str = LITERAL

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 2:
            raise ValueError(f"positions must have shape (N, 2), got {pos.shape}")
        n = pos.shape[0]
        if n < 2:
            raise ValueError("a network needs a gateway and at least one sensor")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")

        energy = np.broadcast_to(np.asarray(self.initial_energy, dtype=np.float64), (n,)).copy()
        energy[GATEWAY] = math.inf
        if not np.all(energy[1:] > 0) or np.any(np.isnan(energy)):
            raise ValueError("sensor initial energy must be positive")

        eps = np.broadcast_to(np.asarray(self.eps_proc, dtype=np.float64), (n,))
        if not np.all(np.isfinite(eps)) or np.any(eps < 0):
            raise ValueError("eps_proc must be finite and non-negative")
        rho = float(self.rho)
        if not (math.isfinite(rho) and rho > 0):
            raise ValueError("rho must be positive and finite")

        lo, hi = int(self.data_bits_min), int(self.data_bits_max)
        if lo != self.data_bits_min or hi != self.data_bits_max:
            raise ValueError("data bit bounds must be integers")
        if not 0 < lo <= hi:
            raise ValueError("need 0 < data_bits_min <= data_bits_max")

        active = np.ones(n, dtype=bool) if self.active is None else np.asarray(self.active, dtype=bool)
        if active.shape != (n,):
            raise ValueError("active must have one flag per node")
        if not active[GATEWAY]:
            raise ValueError("the gateway cannot be inactive")
        if not 0 <= self.n_reserved < n:
            raise ValueError("n_reserved out of range")
        if self.n_reserved and np.any(active[n - self.n_reserved:]):
            raise ValueError("reserved slots must be inactive")
        if self.load_mode not in LOAD_MODES:
            raise ValueError(f"load_mode must be one of {LOAD_MODES}")

        set_ = object.__setattr__
        set_(self, "positions", _frozen_array(pos, np.float64))
        set_(self, "initial_energy", _frozen_array(energy, np.float64))
        set_(self, "eps_proc", _frozen_array(eps, np.float64))
        set_(self, "rho", rho)
        set_(self, "data_bits_min", lo)
        set_(self, "data_bits_max", hi)
        set_(self, "active", _frozen_array(active, bool))

    @property
    def node_count(self) -> int:
        return self.positions.shape[0]

    @property
    def mean_bits(self) -> float:
        return (self.data_bits_min + self.data_bits_max) / 2.0

    @cached_property
    def active_sensors(self) -> np.ndarray:
        idx = np.flatnonzero(self.active)
        return idx[idx != GATEWAY]

    @property
    def n_active(self) -> int:
        """Active nodes including the gateway."""
        return int(self.active.sum())

    @cached_property
    def distances(self) -> np.ndarray:
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        d = np.sqrt((diff**2).sum(axis=-1))
        d.setflags(write=False)
        return d

    def distance(self, i: int, j: int) -> float:
        if self.node_count <= 512:
            return float(self.distances[i, j])
        return euclidean_distance(self, i, j)

    @cached_property
    def fingerprint(self) -> str:
        """Stable digest of every field, used to bind checkpoints to instances."""
        import hashlib

        h = hashlib.sha256()
        for arr in (self.positions, self.initial_energy, self.eps_proc, self.active):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(repr((self.rho, self.data_bits_min, self.data_bits_max,
                       self.n_reserved, self.load_mode)).encode())
        return h.hexdigest()[:16]

    def replace(self, **changes) -> "NetworkSpec":
        return replace(self, **changes)

    def with_active(self, active: Sequence[bool]) -> "NetworkSpec":
        return replace(self, active=np.asarray(active, dtype=bool))

    def padded(self, capacity: int) -> "NetworkSpec":
        """Append inactive reserved slots so the network holds ``capacity`` nodes."""
        extra = capacity - self.node_count
        if extra < 0:
            raise ValueError(f"spec already has {self.node_count} nodes > capacity {capacity}")
        if extra == 0:
            return self
        gw = self.positions[GATEWAY]
        return replace(
            self,
            positions=np.vstack([self.positions, np.repeat(gw[None, :], extra, axis=0)]),
            initial_energy=np.concatenate([self.initial_energy, np.ones(extra)]),
            eps_proc=np.concatenate([self.eps_proc, np.full(extra, self.eps_proc[GATEWAY])]),
            active=np.concatenate([self.active, np.zeros(extra, dtype=bool)]),
            n_reserved=self.n_reserved + extra,
        )


@dataclass(frozen=True)
class Topology:
    """Parent assignment; ``parent[i]`` is the node sensor ``i`` transmits to.

    Unused entries (gateway, inactive sensors) hold ``-1``.
    """

    parent: tuple = field()

    def __post_init__(self):
        object.__setattr__(self, "parent", tuple(int(p) for p in self.parent))

    def __len__(self):
        return len(self.parent)

    def __iter__(self):
        return iter(self.parent)

    def __getitem__(self, i):
        return self.parent[i]

    def as_array(self) -> np.ndarray:
        return np.array(self.parent, dtype=np.int64)

    def edges(self) -> list[tuple[int, int]]:
        return [(c, p) for c, p in enumerate(self.parent) if p != NO_PARENT]

    def children(self, i: int) -> list[int]:
        return [c for c, p in enumerate(self.parent) if p == i]

    def depth(self) -> int:
        best = 0
        for c in range(len(self.parent)):
            d, v = 0, c
            while self.parent[v] != NO_PARENT:
                v = self.parent[v]
                d += 1
            best = max(best, d)
        return best

    def total_length(self, spec: NetworkSpec) -> float:
        return float(sum(spec.distances[c, p] for c, p in self.edges()))


def validate_topology(spec: NetworkSpec, topology) -> Topology:
    """Check that ``topology`` is an arborescence toward the gateway.

    Returns the topology as a :class:`Topology`; raises :class:`TopologyError`.
    """
    topo = topology if isinstance(topology, Topology) else Topology(topology)
    n = spec.node_count
    parent = topo.parent
    if len(parent) != n:
        raise TopologyError(f"parent array has length {len(parent)}, expected {n}")
    if parent[GATEWAY] != NO_PARENT:
        raise TopologyError("the gateway has no parent")
    for i in range(1, n):
        p = parent[i]
        if not spec.active[i]:
            if p != NO_PARENT:
                raise TopologyError(f"inactive node {i} has a parent")
            continue
        if p == NO_PARENT:
            raise TopologyError(f"sensor {i} has no parent")
        if not 0 <= p < n:
            raise TopologyError(f"sensor {i} has out-of-range parent {p}")
        if p == i:
            raise TopologyError(f"sensor {i} is its own parent")
        if not spec.active[p]:
            raise TopologyError(f"sensor {i} transmits to inactive node {p}")
    for i in spec.active_sensors:
        v, hops = int(i), 0
        while v != GATEWAY:
            v = parent[v]
            hops += 1
            if hops > n:
                raise TopologyError(f"sensor {i} lies on a cycle")
    return topo


def euclidean_distance(spec: NetworkSpec, i: int, j: int) -> float:
    dx, dy = spec.positions[i] - spec.positions[j]
    return math.hypot(dx, dy)


def load_matrix(spec: NetworkSpec, topology: Topology) -> np.ndarray:
    """Matrix ``A`` with ``g = A @ R`` for the spec's aggregation mode.

    In subtree mode ``A[i, j] = 1`` when ``i`` lies on the path from ``j`` to
    the gateway (inclusive of ``j``); in literal mode only ``j`` itself and
    its direct parent count.
    """
    n = spec.node_count
    parent = topology.parent
    a = np.zeros((n, n))
    for j in spec.active_sensors:
        j = int(j)
        a[j, j] = 1.0
        if spec.load_mode == LITERAL:
            if parent[j] != GATEWAY:
                a[parent[j], j] = 1.0
            continue
        v = parent[j]
        while v != GATEWAY:
            a[v, j] = 1.0
            v = parent[v]
    return a


def compute_loads(spec: NetworkSpec, topology, data_bits) -> np.ndarray:
    """Bits each node forwards per round.

    ``data_bits[i]`` is sensor ``i``'s own data; entries for the gateway and
    inactive nodes are ignored. The gateway's load is the total it receives.
    """
    topo = validate_topology(spec, topology)
    r = np.asarray(data_bits, dtype=np.float64)
    if r.shape != (spec.node_count,):
        raise ValueError("data_bits must have one entry per node")
    r = np.where(spec.active, r, 0.0)
    r[GATEWAY] = 0.0
    g = load_matrix(spec, topo) @ r
    g[GATEWAY] = sum(g[c] for c in topo.children(GATEWAY)) if spec.load_mode == SUBTREE \
        else sum(r[c] for c in topo.children(GATEWAY))
    return g


def per_bit_cost(spec: NetworkSpec, topology: Topology) -> np.ndarray:
    """Joules per forwarded bit at each node: processing plus transmission."""
    cost = np.zeros(spec.node_count)
    for c, p in topology.edges():
        d = spec.distance(c, p)
        cost[c] = spec.eps_proc[c] + spec.rho * d * d
    return cost


def compute_round_energy(spec: NetworkSpec, topology, loads) -> np.ndarray:
    topo = validate_topology(spec, topology)
    e = per_bit_cost(spec, topo) * np.asarray(loads, dtype=np.float64)
    e[GATEWAY] = 0.0
    return e


def _bit_budget(spec: NetworkSpec, topology: Topology) -> np.ndarray:
    """Total bits each active sensor can forward before its battery runs out."""
    cost = per_bit_cost(spec, topology)
    sensors = spec.active_sensors
    with np.errstate(divide="ignore"):
        budget = np.where(cost[sensors] > 0, spec.initial_energy[sensors] / cost[sensors], np.inf)
    return budget


def lifetime_continuous(spec: NetworkSpec, topology) -> float:
    """``min_i E_i / e_i`` with every sensor generating the mean data size."""
    topo = validate_topology(spec, topology)
    r = np.full(spec.node_count, spec.mean_bits)
    g = (load_matrix(spec, topo) @ r)[spec.active_sensors]
    return float(np.min(_bit_budget(spec, topo) / g))


def lifetime_deterministic(spec: NetworkSpec, topology) -> int:
    """Whole rounds survived by the weakest sensor at mean data sizes."""
    topo = validate_topology(spec, topology)
    r = np.full(spec.node_count, spec.mean_bits)
    g = (load_matrix(spec, topo) @ r)[spec.active_sensors]
    budget = _bit_budget(spec, topo)
    best = math.inf
    for x, load in zip(budget, g):
        if math.isinf(x):
            continue
        k = math.floor(x / load)
        # Snap to the exact integer comparison used by the round simulator.
        if k * load > x:
            k -= 1
        elif (k + 1) * load <= x:
            k += 1
        best = min(best, k)
    if math.isinf(best):
        raise ValueError("no sensor spends energy; lifetime is unbounded")
    return int(best)


def lifetime_stochastic(spec: NetworkSpec, topology, rng_seed=None, *, chunk: int = 4096,
                        max_rounds: int = 10**9) -> int:
    """Simulate rounds with uniform random data sizes until a battery would go negative.

    Each round draws one integer per active sensor, in ascending node order,
    from ``rng.integers(data_bits_min, data_bits_max + 1)``.
    """
    topo = validate_topology(spec, topology)
    rng = np.random.default_rng(rng_seed)
    sensors = spec.active_sensors
    a = load_matrix(spec, topo)[np.ix_(sensors, sensors)]
    budget = _bit_budget(spec, topo)
    used = np.zeros(len(sensors))
    rounds = 0
    while rounds < max_rounds:
        r = rng.integers(spec.data_bits_min, spec.data_bits_max + 1, size=(chunk, len(sensors)))
        g = r.astype(np.float64) @ a.T
        cum = used + np.cumsum(g, axis=0)
        bad = np.any(cum > budget, axis=1)
        if bad.any():
            return rounds + int(np.argmax(bad))
        used = cum[-1]
        rounds += chunk
    return rounds


# ---------------------------------------------------------------------------
# Instance files
# ---------------------------------------------------------------------------

_HEADER_KEYS = ("rho", "eps_proc", "data_bits_min", "data_bits_max")


def format_instance(spec: NetworkSpec, topology: Topology | None = None) -> str:
    eps = spec.eps_proc
    if not np.all(eps == eps[0]):
        raise ValueError("the instance format stores a single eps_proc for all nodes")
    lines = [
        "# wsntopo instance v1",
        "# node lines: id x y energy_joules active" + (" parent" if topology else ""),
        f"rho {spec.rho!r}",
        f"eps_proc {float(eps[0])!r}",
        f"data_bits_min {spec.data_bits_min}",
        f"data_bits_max {spec.data_bits_max}",
    ]
    if spec.n_reserved:
        lines.append(f"reserved {spec.n_reserved}")
    lines.append(f"load_mode {spec.load_mode}")
    for i in range(spec.node_count):
        x, y = spec.positions[i]
        energy = "inf" if i == GATEWAY else repr(float(spec.initial_energy[i]))
        row = f"{i} {float(x)!r} {float(y)!r} {energy} {int(spec.active[i])}"
        if topology is not None:
            row += f" {topology.parent[i]}"
        lines.append(row)
    return "\n".join(lines) + "\n"


def parse_instance(text: str) -> tuple[NetworkSpec, Topology | None]:
    header: dict[str, str] = {}
    nodes: dict[int, list[str]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] in _HEADER_KEYS + ("reserved", "load_mode"):
            if len(parts) != 2:
                raise InstanceFormatError(f"line {lineno}: expected '<key> <value>'")
            header[parts[0]] = parts[1]
            continue
        if len(parts) not in (5, 6):
            raise InstanceFormatError(f"line {lineno}: expected 'id x y energy active [parent]'")
        try:
            idx = int(parts[0])
        except ValueError:
            raise InstanceFormatError(f"line {lineno}: bad node id {parts[0]!r}") from None
        if idx in nodes:
            raise InstanceFormatError(f"line {lineno}: duplicate node id {idx}")
        nodes[idx] = parts[1:]

    missing = [k for k in _HEADER_KEYS if k not in header]
    if missing:
        raise InstanceFormatError(f"missing header keys: {', '.join(missing)}")
    if sorted(nodes) != list(range(len(nodes))):
        raise InstanceFormatError("node ids must be exactly 0..N-1")

    def finite(value: str, what: str) -> float:
        try:
            v = float(value)
        except ValueError:
            raise InstanceFormatError(f"{what}: not a number: {value!r}") from None
        if not math.isfinite(v):
            raise InstanceFormatError(f"{what}: non-finite value {value!r}")
        return v

    n = len(nodes)
    pos = np.zeros((n, 2))
    energy = np.ones(n)
    active = np.zeros(n, dtype=bool)
    parents = []
    for i in range(n):
        row = nodes[i]
        pos[i] = finite(row[0], f"node {i} x"), finite(row[1], f"node {i} y")
        if i == GATEWAY:
            energy[i] = math.inf
        else:
            energy[i] = finite(row[2], f"node {i} energy")
        if row[3] not in ("0", "1"):
            raise InstanceFormatError(f"node {i}: active flag must be 0 or 1")
        active[i] = row[3] == "1"
        if len(row) == 5:
            try:
                parents.append(int(row[4]))
            except ValueError:
                raise InstanceFormatError(f"node {i}: bad parent {row[4]!r}") from None
    if parents and len(parents) != n:
        raise InstanceFormatError("either every node line has a parent column or none does")

    try:
        bits_lo = int(header["data_bits_min"])
        bits_hi = int(header["data_bits_max"])
        spec = NetworkSpec(
            positions=pos,
            initial_energy=energy,
            eps_proc=finite(header["eps_proc"], "eps_proc"),
            rho=finite(header["rho"], "rho"),
            data_bits_min=bits_lo,
            data_bits_max=bits_hi,
            active=active,
            n_reserved=int(header.get("reserved", 0)),
            load_mode=header.get("load_mode", LITERAL),
        )
    except ValueError as exc:
        raise InstanceFormatError(str(exc)) from exc
    try:
        topo = validate_topology(spec, parents) if parents else None
    except TopologyError as exc:
        raise InstanceFormatError(f"invalid topology: {exc}") from exc
    return spec, topo


def save_instance(spec: NetworkSpec, path, topology: Topology | None = None) -> None:
    Path(path).write_text(format_instance(spec, topology))


def load_instance(path) -> tuple[NetworkSpec, Topology | None]:
    return parse_instance(Path(path).read_text())


def topology_from_edges(n: int, edges: Iterable[tuple[int, int]]) -> Topology:
    parent = [NO_PARENT] * n
    for c, p in edges:
        parent[c] = p
    return Topology(parent)
