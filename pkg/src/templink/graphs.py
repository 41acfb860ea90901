"""Temporal graph data model: snapshots, degree-normalized adjacency, and
ingestion of timestamped edge lists into cumulative snapshot sequences."""

from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, IngestionError
from .tensor import Tensor


def _canonical_pair(i, j):
    return (i, j) if i < j else (j, i)


class Snapshot:
    """One graph in the sequence: a fixed vertex universe and an undirected,
    self-loop-free edge set.  Immutable; derived matrices are cached."""

    __slots__ = ("vertex_count", "edges", "_csr", "_dense", "_pairs")

    def __init__(self, vertex_count, edges):
        if vertex_count < 1:
            raise ContractError("snapshot needs at least one vertex")
        canon = set()
        for i, j in edges:
            if i == j:
                raise ContractError(f"self-loop on vertex {i}")
            if not (0 <= i < vertex_count and 0 <= j < vertex_count):
                raise ContractError(f"edge ({i},{j}) outside universe of {vertex_count}")
            canon.add(_canonical_pair(i, j))
        self.vertex_count = vertex_count
        self.edges = frozenset(canon)
        self._csr = None
        self._dense = None
        self._pairs = None

    @property
    def edge_count(self):
        return len(self.edges)

    def sorted_edges(self):
        return sorted(self.edges)

    def edge_arrays(self):
        """Edge endpoints as two int64 arrays (i < j), sorted."""
        if not self.edges:
            e = np.empty(0, dtype=np.int64)
            return e, e.copy()
        arr = np.array(self.sorted_edges(), dtype=np.int64)
        return np.ascontiguousarray(arr[:, 0]), np.ascontiguousarray(arr[:, 1])

    @property
    def a_hat_csr(self):
        """Sparse D^{-1/2} (A + I) D^{-1/2}; symmetric, so it is its own
        transpose and can serve both sides of a sparse matmul."""
        if self._csr is None:
            n = self.vertex_count
            ei, ej = self.edge_arrays()
            loops = np.arange(n, dtype=np.int64)
            rows = np.concatenate([ei, ej, loops])
            cols = np.concatenate([ej, ei, loops])
            deg = np.bincount(rows, minlength=n).astype(np.float64)
            dinv = 1.0 / np.sqrt(deg)
            vals = dinv[rows] * dinv[cols]
            self._csr = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        return self._csr

    def dense_adjacency(self):
        """Plain 0/1 adjacency without self-loops."""
        a = np.zeros((self.vertex_count, self.vertex_count))
        ei, ej = self.edge_arrays()
        a[ei, ej] = 1.0
        a[ej, ei] = 1.0
        return a

    def positive_pairs(self):
        """Upper-triangle index pairs counted as positives when this snapshot
        is a prediction target: every edge plus the full diagonal."""
        if self._pairs is None:
            n = self.vertex_count
            ei, ej = self.edge_arrays()
            diag = np.arange(n, dtype=np.int64)
            pi = np.concatenate([ei, diag])
            pj = np.concatenate([ej, diag])
            order = np.lexsort((pj, pi))
            self._pairs = (np.ascontiguousarray(pi[order]), np.ascontiguousarray(pj[order]))
        return self._pairs

    def has_edge(self, i, j):
        return _canonical_pair(i, j) in self.edges

    def __eq__(self, other):
        return (
            isinstance(other, Snapshot)
            and self.vertex_count == other.vertex_count
            and self.edges == other.edges
        )

    def __hash__(self):
        return hash((self.vertex_count, self.edges))

    def __repr__(self):
        return f"Snapshot(|V|={self.vertex_count}, |E|={self.edge_count})"


def normalize_adjacency(s):
    """Dense Tensor of D^{-1/2} (A + I) D^{-1/2}.  Rows of isolated vertices
    reduce to identity rows (their only neighbour is the added self-loop)."""
    return Tensor(s.a_hat_csr.toarray())


def identity_features(s):
    """Identity feature matrix used as the input layer's X."""
    return Tensor(np.eye(s.vertex_count))


class TemporalGraph:
    """An ordered sequence of snapshots over a shared vertex universe."""

    def __init__(self, snapshots, granularity_label="unspecified"):
        snapshots = list(snapshots)
        if not snapshots:
            raise ContractError("temporal graph needs at least one snapshot")
        v = snapshots[0].vertex_count
        for s in snapshots:
            if s.vertex_count != v:
                raise ContractError("snapshots disagree on vertex universe size")
        if any(ch.isspace() for ch in granularity_label):
            raise ContractError("granularity label must be a single token")
        self.snapshots = snapshots
        self.granularity_label = granularity_label

    @property
    def T(self):
        return len(self.snapshots)

    @property
    def vertex_count(self):
        return self.snapshots[0].vertex_count

    def snapshot(self, t):
        """1-based access, matching the G_1..G_T indexing used throughout."""
        if not 1 <= t <= self.T:
            raise ContractError(f"snapshot index {t} outside 1..{self.T}")
        return self.snapshots[t - 1]

    def __eq__(self, other):
        return (
            isinstance(other, TemporalGraph)
            and self.granularity_label == other.granularity_label
            and self.snapshots == other.snapshots
        )

    def __repr__(self):
        return (
            f"TemporalGraph(T={self.T}, |V|={self.vertex_count}, "
            f"granularity={self.granularity_label})"
        )


def new_edges(graph, t):
    """Edges present in snapshot t but not in t-1 (1-based, 2 <= t <= T)."""
    if not 2 <= t <= graph.T:
        raise ContractError(f"new-edge index {t} outside 2..{graph.T}")
    return graph.snapshot(t).edges - graph.snapshot(t - 1).edges


# --- ingestion -----------------------------------------------------------

@dataclass(frozen=True)
class ColumnSchema:
    """Zero-based column positions in a delimited edge-list file."""

    source: int = 0
    target: int = 1
    timestamp: int = 2


def parse_granularity(text):
    """Accepts 'week', 'month', 'fixed_count(N)' or 'fixed_count:N'."""
    if text in ("week", "month"):
        return text, None
    for prefix, suffix in (("fixed_count(", ")"), ("fixed_count:", "")):
        if text.startswith(prefix) and text.endswith(suffix):
            body = text[len(prefix):len(text) - len(suffix) or None]
            try:
                n = int(body)
            except ValueError:
                break
            if n < 1:
                break
            return "fixed_count", n
    raise ContractError(f"unknown granularity {text!r}")


def _month_key(ts):
    d = datetime.fromtimestamp(ts, tz=timezone.utc)
    return (d.year, d.month)


def _next_month(key):
    y, m = key
    return (y + 1, 1) if m == 12 else (y, m + 1)


def _week_key(ts):
    iso = datetime.fromtimestamp(ts, tz=timezone.utc).isocalendar()
    return (iso[0], iso[1])


def _next_week(key):
    monday = datetime.fromisocalendar(key[0], key[1], 1)
    iso = (monday + timedelta(days=7)).isocalendar()
    return (iso[0], iso[1])


def _parse_rows(path, schema):
    """Yield (line_number, src, dst, timestamp) for each data row."""
    needed = max(schema.source, schema.target, schema.timestamp)
    events = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#") or line.startswith("%"):
                continue
            tokens = line.replace(",", " ").split()
            if len(tokens) <= needed:
                raise IngestionError(
                    f"expected at least {needed + 1} columns, got {len(tokens)}",
                    line_number,
                )
            try:
                src = int(tokens[schema.source])
                dst = int(tokens[schema.target])
                ts = float(tokens[schema.timestamp])
            except ValueError as exc:
                raise IngestionError(str(exc), line_number) from None
            events.append((line_number, src, dst, ts))
    return events


def ingest_edge_list(path, schema=None, granularity="month", directed_input=True):
    """Read a timestamped edge list into a cumulative TemporalGraph.

    Lines starting with '#' or '%' are comments; fields split on commas or
    whitespace.  Vertices are re-indexed densely in sorted original-id order.
    Self-loops are dropped; direction is discarded either way, the flag only
    documents the source convention.  Snapshots accumulate every edge whose
    first appearance falls at or before the bucket's end; empty leading
    periods are dropped.
    """
    del directed_input
    schema = schema or ColumnSchema()
    kind, n_buckets = parse_granularity(granularity)
    events = _parse_rows(path, schema)

    ids = sorted({e[1] for e in events} | {e[2] for e in events})
    index = {orig: k for k, orig in enumerate(ids)}

    pair_first_ts = {}
    for _, src, dst, ts in events:
        if src == dst:
            continue
        pair = _canonical_pair(index[src], index[dst])
        if pair not in pair_first_ts or ts < pair_first_ts[pair]:
            pair_first_ts[pair] = ts
    if not pair_first_ts:
        raise ContractError("no usable edges in input")
    vertex_count = len(ids)

    if kind == "fixed_count":
        ranked = sorted(pair_first_ts, key=lambda p: (pair_first_ts[p], p))
        chunks = np.array_split(np.arange(len(ranked)), n_buckets)
        batches = [[ranked[i] for i in chunk] for chunk in chunks]
        label = f"fixed_count({n_buckets})"
    else:
        key_of, advance = (_month_key, _next_month) if kind == "month" else (_week_key, _next_week)
        by_key = {}
        for pair, ts in pair_first_ts.items():
            by_key.setdefault(key_of(ts), []).append(pair)
        first, last = min(by_key), max(by_key)
        batches = []
        key = first
        while True:
            batches.append(by_key.get(key, []))
            if key == last:
                break
            key = advance(key)
        label = "monthly" if kind == "month" else "weekly"

    running = set()
    snapshots = []
    for batch in batches:
        running.update(batch)
        snapshots.append(Snapshot(vertex_count, running))
    if len(snapshots) < 3:
        raise ContractError(f"only {len(snapshots)} snapshots; need at least 3")
    return TemporalGraph(snapshots, granularity_label=label)


# --- snapshot file format ------------------------------------------------

def write_snapshot_file(graph, path):
    """Textual container: header `|V| T granularity`, then per snapshot a
    line `t |E_t|` followed by one sorted `i j` pair per edge."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{graph.vertex_count} {graph.T} {graph.granularity_label}\n")
        for t in range(1, graph.T + 1):
            s = graph.snapshot(t)
            fh.write(f"{t} {s.edge_count}\n")
            for i, j in s.sorted_edges():
                fh.write(f"{i} {j}\n")


def read_snapshot_file(path):
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise IngestionError("empty snapshot file", 1)

    def split(line_number, expect):
        tokens = lines[line_number - 1].split()
        if len(tokens) != expect:
            raise IngestionError(f"expected {expect} fields", line_number)
        return tokens

    head = split(1, 3)
    try:
        vertex_count, t_count = int(head[0]), int(head[1])
    except ValueError as exc:
        raise IngestionError(str(exc), 1) from None
    label = head[2]

    snapshots = []
    line_number = 2
    for t in range(1, t_count + 1):
        if line_number > len(lines):
            raise IngestionError(f"missing header for snapshot {t}", line_number)
        marker = split(line_number, 2)
        try:
            t_read, m = int(marker[0]), int(marker[1])
        except ValueError as exc:
            raise IngestionError(str(exc), line_number) from None
        if t_read != t:
            raise IngestionError(f"expected snapshot {t}, found {t_read}", line_number)
        line_number += 1
        edges = []
        for _ in range(m):
            if line_number > len(lines):
                raise IngestionError("truncated edge block", line_number)
            pair = split(line_number, 2)
            try:
                edges.append((int(pair[0]), int(pair[1])))
            except ValueError as exc:
                raise IngestionError(str(exc), line_number) from None
            line_number += 1
        try:
            snapshots.append(Snapshot(vertex_count, edges))
        except ContractError as exc:
            raise IngestionError(str(exc), line_number - 1) from None
    if line_number <= len(lines):
        raise IngestionError("trailing content after last snapshot", line_number)
    return TemporalGraph(snapshots, granularity_label=label)
