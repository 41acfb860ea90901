"""Synthetic benchmark generators: a community-migration stochastic block
model and an edge-conserving random rewirer."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DegenerateInputError
from .graphs import Snapshot, TemporalGraph


@dataclass(frozen=True)
class SbmConfig:
    vertex_count: int = 3000
    communities: int = 3
    snapshots: int = 30
    migrators_per_step: int = 20
    p_intra: float = 0.01
    p_inter: float = 0.0005
    seed: int = 0

    def __post_init__(self):
        if self.vertex_count < 1:
            raise ConfigError("vertex_count must be positive")
        if not 2 <= self.communities <= self.vertex_count:
            raise ConfigError("communities must lie in [2, vertex_count]")
        if self.snapshots < 1:
            raise ConfigError("snapshots must be positive")
        if not 0 <= self.migrators_per_step <= self.vertex_count:
            raise ConfigError("migrators_per_step must lie in [0, vertex_count]")
        if not 0.0 <= self.p_inter < self.p_intra <= 1.0:
            raise ConfigError("need 0 <= p_inter < p_intra <= 1")


def sbm_label_walk(config):
    """Community labels per snapshot, shape (snapshots, vertex_count).

    The first row splits vertices into near-even contiguous blocks; each
    later row moves a fresh uniform set of migrators_per_step vertices to
    a uniformly chosen different community.
    """
    rng = np.random.default_rng(config.seed)
    sizes = [len(block) for block in np.array_split(np.arange(config.vertex_count), config.communities)]
    labels = np.repeat(np.arange(config.communities), sizes)
    walk = [labels]
    for _ in range(1, config.snapshots):
        labels = labels.copy()
        movers = rng.choice(config.vertex_count, size=config.migrators_per_step, replace=False)
        hops = rng.integers(1, config.communities, size=config.migrators_per_step)
        labels[movers] = (labels[movers] + hops) % config.communities
        walk.append(labels)
    return np.stack(walk)


def generate_sbm(config):
    """Draw a snapshot sequence from the migrating block model.

    Snapshots are independent draws given that step's labels, so edge
    churn reflects community membership, not accumulation.
    """
    walk = sbm_label_walk(config)
    rng = np.random.default_rng([config.seed, 1])  # separate stream from the walk
    rows, cols = np.triu_indices(config.vertex_count, k=1)
    snapshots = []
    for labels in walk:
        p = np.where(labels[rows] == labels[cols], config.p_intra, config.p_inter)
        mask = rng.random(rows.size) < p
        edges = zip(rows[mask].tolist(), cols[mask].tolist())
        snapshots.append(Snapshot(config.vertex_count, edges))
    return TemporalGraph(snapshots, granularity_label="synthetic")


@dataclass(frozen=True)
class RewireConfig:
    source_graph: Snapshot
    snapshots: int
    edges_rewired_per_step: int
    mode: str = "erdos"
    seed: int = 0

    def __post_init__(self):
        if self.snapshots < 1:
            raise ConfigError("snapshots must be positive")
        if self.edges_rewired_per_step < 0:
            raise ConfigError("edges_rewired_per_step must be non-negative")
        if self.edges_rewired_per_step > self.source_graph.edge_count:
            raise ConfigError("cannot rewire more edges than the graph has")
        if self.mode != "erdos":
            raise ConfigError(f"unknown rewire mode {self.mode!r}")


def _draw_absent_pair(edges, vertex_count, rng, attempts=10_000):
    for _ in range(attempts):
        i = int(rng.integers(vertex_count))
        j = int(rng.integers(vertex_count))
        if i == j:
            continue
        pair = (i, j) if i < j else (j, i)
        if pair not in edges:
            return pair
    # dense graph: enumerate the complement exactly
    free = [
        (i, j)
        for i in range(vertex_count)
        for j in range(i + 1, vertex_count)
        if (i, j) not in edges
    ]
    if not free:
        raise DegenerateInputError("no absent pair available for rewiring")
    return free[int(rng.integers(len(free)))]


def rewire_step(g, config, rng):
    """Move a uniform batch of edges to uniform absent slots.

    One edge at a time: the selected edge leaves the graph, then a pair is
    drawn uniformly from the current non-edges (the vacated slot included,
    so an endpoint or even the whole edge may survive by chance). Edge and
    vertex counts are conserved exactly.
    """
    total_pairs = g.vertex_count * (g.vertex_count - 1) // 2
    if config.edges_rewired_per_step > 0 and g.edge_count >= total_pairs:
        raise DegenerateInputError("graph is complete; nothing can move")
    edges = set(g.edges)
    chosen = rng.choice(g.edge_count, size=config.edges_rewired_per_step, replace=False)
    ordered = g.sorted_edges()
    for index in chosen:
        edges.discard(ordered[index])
        edges.add(_draw_absent_pair(edges, g.vertex_count, rng))
    return Snapshot(g.vertex_count, edges)


def generate_rewire(config):
    """Snapshot sequence starting at the source graph, one rewiring batch
    per transition."""
    rng = np.random.default_rng(config.seed)
    snapshots = [config.source_graph]
    for _ in range(1, config.snapshots):
        snapshots.append(rewire_step(snapshots[-1], config, rng))
    return TemporalGraph(snapshots, granularity_label="synthetic")