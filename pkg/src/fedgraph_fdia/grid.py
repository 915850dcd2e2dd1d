"""Power network graphs: case-file parsing, Laplacians and client partitioning."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

BUNDLED_CASES = ("ieee57", "ieee118", "ieee300")


class CaseParseError(ValueError):
    """Malformed case file line."""

    def __init__(self, message, line_no=None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class GridValidationError(ValueError):
    """Structurally invalid grid (dangling branch, disconnected graph, ...)."""


@dataclass(frozen=True)
class Bus:
    id: int
    base_load_p: float
    base_load_q: float
    shunt_g: float = 0.0
    shunt_b: float = 0.0
    label: str = ""


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    g: float
    b: float


@dataclass(frozen=True)
class GridGraph:
    """Buses and branches with 0-based contiguous bus indices.

    ``branches`` keeps every line from the case file. ``edges`` collapses
    parallel branches into one entry per bus pair with summed admittance.
    """

    name: str
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]

    def __post_init__(self):
        n = len(self.buses)
        if n == 0:
            raise GridValidationError("grid has no buses")
        for i, bus in enumerate(self.buses):
            if bus.id != i:
                raise GridValidationError(f"bus at position {i} has id {bus.id}")
            if bus.base_load_p < 0:
                raise GridValidationError(f"bus {bus.label or i} has negative base load")
        for br in self.branches:
            if not (0 <= br.from_bus < n and 0 <= br.to_bus < n):
                raise GridValidationError(
                    f"branch {br.from_bus}-{br.to_bus} references a missing bus"
                )
            if br.from_bus == br.to_bus:
                raise GridValidationError(f"branch {br.from_bus}-{br.to_bus} is a self loop")

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def labels(self) -> list[str]:
        return [b.label or str(b.id) for b in self.buses]

    @property
    def base_loads(self) -> np.ndarray:
        """(n_buses, 2) array of (p, q) base loads."""
        return np.array([[b.base_load_p, b.base_load_q] for b in self.buses], dtype=float)

    @property
    def edges(self) -> list[Branch]:
        merged: dict[tuple[int, int], list[float]] = {}
        order = []
        for br in self.branches:
            key = (br.from_bus, br.to_bus)
            if key not in merged and (br.to_bus, br.from_bus) in merged:
                key = (br.to_bus, br.from_bus)
            if key not in merged:
                merged[key] = [0.0, 0.0]
                order.append(key)
            merged[key][0] += br.g
            merged[key][1] += br.b
        return [Branch(f, t, *merged[(f, t)]) for f, t in order]

    def neighbors(self) -> list[list[int]]:
        nbrs: list[set[int]] = [set() for _ in self.buses]
        for br in self.branches:
            nbrs[br.from_bus].add(br.to_bus)
            nbrs[br.to_bus].add(br.from_bus)
        return [sorted(s) for s in nbrs]

    def is_connected(self) -> bool:
        return len(_reachable(self.neighbors(), 0)) == self.n_buses


def _reachable(nbrs, start, allowed=None):
    seen = {start}
    queue = deque([start])
    while queue:
        v = queue.popleft()
        for u in nbrs[v]:
            if u not in seen and (allowed is None or u in allowed):
                seen.add(u)
                queue.append(u)
    return seen


def _parse_float(tok, line_no, what):
    try:
        return float(tok)
    except ValueError:
        raise CaseParseError(f"{what} is not a number: {tok!r}", line_no) from None


def parse_case_text(text: str) -> GridGraph:
    name = None
    declared = None
    raw_buses = []
    raw_branches = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        kind = tokens[0].upper()
        if kind == "CASE":
            if len(tokens) != 3:
                raise CaseParseError("expected 'CASE <name> <num_buses>'", line_no)
            name = tokens[1]
            try:
                declared = int(tokens[2])
            except ValueError:
                raise CaseParseError(f"bus count is not an integer: {tokens[2]!r}", line_no) from None
        elif kind == "BUS":
            if len(tokens) != 6:
                raise CaseParseError("expected 'BUS <id> <p> <q> <shunt_g> <shunt_b>'", line_no)
            vals = [_parse_float(t, line_no, "bus field") for t in tokens[2:]]
            raw_buses.append((tokens[1], vals, line_no))
        elif kind == "BRANCH":
            if len(tokens) != 5:
                raise CaseParseError("expected 'BRANCH <from> <to> <g> <b>'", line_no)
            vals = [_parse_float(t, line_no, "branch field") for t in tokens[3:]]
            raw_branches.append((tokens[1], tokens[2], vals, line_no))
        else:
            raise CaseParseError(f"unknown record type {tokens[0]!r}", line_no)

    if name is None:
        raise CaseParseError("missing CASE header")
    if declared != len(raw_buses):
        raise GridValidationError(f"header declares {declared} buses, found {len(raw_buses)}")

    index = {}
    buses = []
    for label, (p, q, gs, bs), line_no in raw_buses:
        if label in index:
            raise CaseParseError(f"duplicate bus id {label}", line_no)
        if p < 0:
            raise GridValidationError(f"bus {label} has negative base load (line {line_no})")
        index[label] = len(buses)
        buses.append(Bus(len(buses), p, q, gs, bs, label))

    branches = []
    for f, t, (g, b), line_no in raw_branches:
        if f not in index or t not in index:
            missing = f if f not in index else t
            raise GridValidationError(f"branch on line {line_no} references unknown bus {missing}")
        if f == t:
            raise GridValidationError(f"branch on line {line_no} is a self loop")
        branches.append(Branch(index[f], index[t], g, b))

    grid = GridGraph(name, tuple(buses), tuple(branches))
    if not grid.is_connected():
        raise GridValidationError(f"grid {name} is not connected")
    return grid


def parse_case(path) -> GridGraph:
    return parse_case_text(Path(path).read_text())


def load_case(name_or_path) -> GridGraph:
    """Load a bundled case by name (``ieee57``...) or a case file by path."""
    if str(name_or_path) in BUNDLED_CASES:
        text = resources.files("fedgraph_fdia.cases").joinpath(f"{name_or_path}.case").read_text()
        return parse_case_text(text)
    return parse_case(name_or_path)


def adjacency(grid: GridGraph) -> np.ndarray:
    n = grid.n_buses
    A = np.zeros((n, n))
    for br in grid.branches:
        A[br.from_bus, br.to_bus] = 1.0
        A[br.to_bus, br.from_bus] = 1.0
    return A


def normalized_laplacian(grid: GridGraph) -> np.ndarray:
    """L = I - D^-1/2 A D^-1/2."""
    A = adjacency(grid)
    deg = A.sum(axis=1)
    isolated = np.flatnonzero(deg == 0)
    if isolated.size:
        raise GridValidationError(f"bus {grid.labels[isolated[0]]} has degree 0")
    d = 1.0 / np.sqrt(deg)
    return np.eye(grid.n_buses) - d[:, None] * A * d[None, :]


@dataclass(frozen=True)
class ClientPartition:
    num_clients: int
    assignment: np.ndarray
    boundary_edges: tuple[tuple[tuple[int, int, int], ...], ...] = field(repr=False)

    def members(self, client: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == client)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.num_clients)


def _make_partition(grid, assignment, num_clients):
    boundary = [[] for _ in range(num_clients)]
    for v, nbrs in enumerate(grid.neighbors()):
        for u in nbrs:
            if assignment[u] != assignment[v]:
                boundary[assignment[v]].append((v, u, int(assignment[u])))
    assignment = np.asarray(assignment, dtype=int)
    assignment.setflags(write=False)
    return ClientPartition(num_clients, assignment, tuple(tuple(b) for b in boundary))


def partition(grid: GridGraph, num_clients: int, seed: int = 0) -> ClientPartition:
    """Split buses into connected, size-balanced regions by seeded BFS growth.

    ``num_clients`` seed buses are drawn at random; the currently smallest region
    with an open frontier claims its next BFS node until every bus is assigned.
    Regions that got boxed in are then topped up from larger neighbours.
    """
    n = grid.n_buses
    if not 1 <= num_clients <= n:
        raise ValueError(f"num_clients must be in [1, {n}], got {num_clients}")
    nbrs = grid.neighbors()
    rng = np.random.default_rng(seed)
    seeds = rng.choice(n, size=num_clients, replace=False)
    assignment = np.full(n, -1)
    sizes = np.zeros(num_clients, dtype=int)
    frontiers = []
    for c, s in enumerate(seeds):
        assignment[s] = c
        sizes[c] = 1
        frontiers.append(deque(nbrs[s]))
    remaining = n - num_clients
    while remaining:
        open_clients = [c for c in range(num_clients) if frontiers[c]]
        if not open_clients:
            raise GridValidationError("grid is not connected; partition cannot cover it")
        c = min(open_clients, key=lambda k: (sizes[k], k))
        q = frontiers[c]
        while q and assignment[q[0]] != -1:
            q.popleft()
        if not q:
            continue
        v = q.popleft()
        assignment[v] = c
        sizes[c] += 1
        remaining -= 1
        q.extend(u for u in nbrs[v] if assignment[u] == -1)
    _rebalance(nbrs, assignment, num_clients)
    return _make_partition(grid, assignment, num_clients)


def _components(nbrs, nodes):
    left = set(nodes)
    comps = []
    while left:
        comp = _reachable(nbrs, min(left), left)
        comps.append(comp)
        left -= comp
    return comps


def _rebalance(nbrs, assignment, num_clients):
    """Shift boundary buses from larger regions to smaller neighbouring ones.

    Moving bus ``v`` out of region ``a`` may cut ``a`` apart; the pieces that
    would lose contact with the largest remainder travel with ``v``. A move of
    ``m`` buses from ``a`` to ``b`` is taken only if ``m < size_a - size_b``,
    which strictly lowers the sum of squared sizes, so the loop terminates.
    """
    sizes = np.bincount(assignment, minlength=num_clients)
    moved = True
    while moved:
        moved = False
        for v in range(len(nbrs)):
            a = assignment[v]
            for b in sorted({int(assignment[u]) for u in nbrs[v]} - {a}, key=lambda c: (sizes[c], c)):
                if sizes[a] - sizes[b] < 2:
                    break
                rest = set(np.flatnonzero(assignment == a).tolist()) - {v}
                comps = sorted(_components(nbrs, rest), key=lambda c: (-len(c), min(c)))
                chunk = {v}.union(*comps[1:])
                if len(chunk) >= sizes[a] - sizes[b]:
                    continue
                assignment[list(chunk)] = b
                sizes[a] -= len(chunk)
                sizes[b] += len(chunk)
                moved = True
                break
        if not moved:
            moved = _cascade(nbrs, assignment, sizes)


def _movable(nbrs, assignment, r, s):
    """Smallest bus of region ``r`` bordering ``s`` whose removal keeps ``r`` connected."""
    members = set(np.flatnonzero(assignment == r).tolist())
    if len(members) < 2:
        return None
    for v in sorted(members):
        if any(assignment[u] == s for u in nbrs[v]):
            rest = members - {v}
            if len(_reachable(nbrs, min(rest), rest)) == len(rest):
                return v
    return None


def _cascade(nbrs, assignment, sizes):
    """Move one bus per hop along a chain of regions from a large to a small one.

    Intermediate regions give one bus and receive one, so only the two ends
    change size. Returns True if a chain was applied.
    """
    k = len(sizes)
    for a in sorted(range(k), key=lambda c: (-sizes[c], c)):
        targets = {b for b in range(k) if sizes[b] <= sizes[a] - 2}
        if not targets:
            continue
        # BFS over regions along hops that currently have a movable bus
        prev = {a: None}
        queue = deque([a])
        found = None
        while queue and found is None:
            r = queue.popleft()
            border = sorted({int(assignment[u]) for v in np.flatnonzero(assignment == r) for u in nbrs[v]} - {r})
            for s in border:
                if s in prev or _movable(nbrs, assignment, r, s) is None:
                    continue
                prev[s] = r
                if s in targets:
                    found = s
                    break
                queue.append(s)
        if found is None:
            continue
        path = [found]
        while prev[path[-1]] is not None:
            path.append(prev[path[-1]])
        path.reverse()
        saved = assignment.copy()
        for r, s in zip(path, path[1:]):
            v = _movable(nbrs, assignment, r, s)
            if v is None:
                break
            assignment[v] = s
        else:
            sizes[a] -= 1
            sizes[found] += 1
            return True
        assignment[:] = saved
    return False


def partition_from_assignment(grid: GridGraph, assignment) -> ClientPartition:
    assignment = np.asarray(assignment, dtype=int)
    if assignment.shape != (grid.n_buses,):
        raise ValueError("assignment must have one entry per bus")
    k = int(assignment.max()) + 1
    if assignment.min() < 0 or len(np.unique(assignment)) != k:
        raise ValueError("client ids must be contiguous from 0")
    return _make_partition(grid, assignment, k)


@dataclass(frozen=True)
class ClientLaplacian:
    """Rows of the full Laplacian owned by one client, split by column owner."""

    local_buses: np.ndarray
    remote_buses: np.ndarray
    remote_clients: np.ndarray
    local_block: np.ndarray
    remote_block: np.ndarray


def client_laplacian(grid: GridGraph, part: ClientPartition, client: int,
                     L: np.ndarray | None = None) -> ClientLaplacian:
    if not 0 <= client < part.num_clients:
        raise ValueError(f"client {client} out of range")
    if L is None:
        L = normalized_laplacian(grid)
    local = part.members(client)
    remote = np.array(sorted({u for _, u, _ in part.boundary_edges[client]}), dtype=int)
    return ClientLaplacian(
        local_buses=local,
        remote_buses=remote,
        remote_clients=part.assignment[remote] if remote.size else np.zeros(0, dtype=int),
        local_block=L[np.ix_(local, local)],
        remote_block=L[np.ix_(local, remote)] if remote.size else np.zeros((local.size, 0)),
    )


def is_connected_subset(grid: GridGraph, buses) -> bool:
    buses = set(int(b) for b in buses)
    if not buses:
        return False
    start = next(iter(buses))
    return _reachable(grid.neighbors(), start, allowed=buses) == buses
