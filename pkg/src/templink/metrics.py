"""Ranking metrics and evaluation-set construction for next-graph link
prediction."""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .errors import ContractError, DegenerateInputError, NoNewEdges
from .graphs import new_edges
from .tensor import Tensor


@dataclass(frozen=True)
class EvalSet:
    """Balanced positive/negative vertex-pair sets for one target snapshot."""

    positives: tuple
    negatives: tuple

    @property
    def n_pos(self):
        return len(self.positives)

    @property
    def n_neg(self):
        return len(self.negatives)


@dataclass(frozen=True)
class MetricsRecord:
    auc: float
    ap: float
    threshold_precision: float
    n_pos: int
    n_neg: int

    def as_dict(self):
        return {
            "auc": self.auc,
            "ap": self.ap,
            "threshold_precision": self.threshold_precision,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
        }


def _require_scores(scores_pos, scores_neg, op):
    scores_pos = np.asarray(scores_pos, dtype=np.float64)
    scores_neg = np.asarray(scores_neg, dtype=np.float64)
    if scores_pos.size == 0 or scores_neg.size == 0:
        raise ContractError(f"{op} needs non-empty score lists")
    return scores_pos, scores_neg


def auc(scores_pos, scores_neg):
    """Mann-Whitney estimate: P(score_pos > score_neg), ties counted half."""
    scores_pos, scores_neg = _require_scores(scores_pos, scores_neg, "auc")
    n_pos, n_neg = scores_pos.size, scores_neg.size
    ranks = rankdata(np.concatenate([scores_pos, scores_neg]), method="average")
    rank_sum = ranks[:n_pos].sum()
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def average_precision(scores_pos, scores_neg):
    """Mean precision-at-rank over the positives, scores sorted descending
    with ties broken by stable input order (positives listed first)."""
    scores_pos, scores_neg = _require_scores(scores_pos, scores_neg, "average_precision")
    scores = np.concatenate([scores_pos, scores_neg])
    labels = np.concatenate([
        np.ones(scores_pos.size, dtype=bool),
        np.zeros(scores_neg.size, dtype=bool),
    ])
    order = np.argsort(-scores, kind="stable")
    ranked = labels[order]
    hits = np.cumsum(ranked)
    ranks = np.arange(1, ranked.size + 1)
    return float(np.mean(hits[ranked] / ranks[ranked]))


def threshold_precision(scores_pos, scores_neg, threshold=0.5):
    """Precision of the classifier 'score strictly above threshold'."""
    scores_pos, scores_neg = _require_scores(scores_pos, scores_neg, "threshold_precision")
    tp = int(np.sum(scores_pos > threshold))
    fp = int(np.sum(scores_neg > threshold))
    if tp + fp == 0:
        return 0.0
    return tp / (tp + fp)


def _forbidden_codes(vertex_count, edge_sets):
    codes = set()
    for edges in edge_sets:
        for i, j in edges:
            codes.add(i * vertex_count + j)
    return codes


def _sample_absent_pairs(vertex_count, forbidden_codes, count, rng):
    """Uniform sample without replacement of unordered non-self pairs whose
    codes are not forbidden."""
    total_pairs = vertex_count * (vertex_count - 1) // 2
    if total_pairs - len(forbidden_codes) < count:
        raise DegenerateInputError(
            f"need {count} absent pairs but only "
            f"{total_pairs - len(forbidden_codes)} exist"
        )
    picked = []
    seen = set()
    while len(picked) < count:
        k = max(32, 2 * (count - len(picked)))
        ii = rng.integers(0, vertex_count, size=k)
        jj = rng.integers(0, vertex_count, size=k)
        lo = np.minimum(ii, jj)
        hi = np.maximum(ii, jj)
        for i, j in zip(lo.tolist(), hi.tolist()):
            if i == j:
                continue
            code = i * vertex_count + j
            if code in forbidden_codes or code in seen:
                continue
            seen.add(code)
            picked.append((i, j))
            if len(picked) == count:
                break
    return picked


def build_new_edge_evalset(g, t, rng):
    """Positives are every edge added at t; negatives are an equal number of
    pairs present in neither snapshot t nor t-1."""
    fresh = sorted(new_edges(g, t))
    if not fresh:
        raise NoNewEdges(t)
    v = g.vertex_count
    forbidden = _forbidden_codes(
        v, [g.snapshot(t).edges, g.snapshot(t - 1).edges]
    )
    negatives = _sample_absent_pairs(v, forbidden, len(fresh), rng)
    return EvalSet(positives=tuple(fresh), negatives=tuple(negatives))


def build_full_graph_evalset(g, t, rng, cap=10_000):
    """Balanced sample of existing edges vs non-edges of snapshot t."""
    s = g.snapshot(t)
    edges = s.sorted_edges()
    if not edges:
        raise DegenerateInputError(f"snapshot {t} has no edges to sample")
    if len(edges) > cap:
        take = rng.choice(len(edges), size=cap, replace=False)
        positives = [edges[k] for k in sorted(take.tolist())]
    else:
        positives = edges
    forbidden = _forbidden_codes(s.vertex_count, [s.edges])
    negatives = _sample_absent_pairs(s.vertex_count, forbidden, len(positives), rng)
    return EvalSet(positives=tuple(positives), negatives=tuple(negatives))


def pair_probabilities(z, pairs):
    """sigma(z_i . z_j) for each (i, j) pair."""
    values = z.values if isinstance(z, Tensor) else np.asarray(z, dtype=np.float64)
    if not pairs:
        return np.empty(0)
    idx = np.asarray(pairs, dtype=np.int64)
    if idx.min() < 0 or idx.max() >= values.shape[0]:
        raise ContractError("evaluation pair references a vertex outside the embedding")
    return expit(np.einsum("ij,ij->i", values[idx[:, 0]], values[idx[:, 1]]))


def score_evalset(z, evalset):
    """Score every pair with the inner-product decoder and compute metrics."""
    scores_pos = pair_probabilities(z, evalset.positives)
    scores_neg = pair_probabilities(z, evalset.negatives)
    return MetricsRecord(
        auc=auc(scores_pos, scores_neg),
        ap=average_precision(scores_pos, scores_neg),
        threshold_precision=threshold_precision(scores_pos, scores_neg),
        n_pos=evalset.n_pos,
        n_neg=evalset.n_neg,
    )
