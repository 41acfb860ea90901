"""Autoregressive multi-step forecasting: binarize the decoded prediction,
feed it back as the next input snapshot, and score each step against the
true future graph."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, NoNewEdges
from .graphs import Snapshot
from .metrics import MetricsRecord, build_new_edge_evalset, score_evalset
from .model import build_model, decode, forward_sequence, forward_step
from .training import train_on_sequence

BINARIZE_POLICIES = ("threshold", "top_k")


@dataclass(frozen=True)
class RolloutStep:
    k: int  # steps ahead of the last real input
    t: int  # true snapshot index being predicted
    record: MetricsRecord


@dataclass(frozen=True)
class RolloutResult:
    steps: tuple
    skipped: tuple  # target indices with no new edges to score


def predicted_snapshot(mu, vertex_count, binarize="threshold", tau=0.5, edge_budget=None):
    """Turn a decoded embedding into a synthetic input snapshot.

    threshold: keep pairs with probability strictly above tau, so an
    all-0.5 decode (zero embeddings) yields an empty graph. top_k: keep
    the edge_budget highest-probability pairs, ties broken by vertex
    order. The diagonal is never an edge.
    """
    if binarize not in BINARIZE_POLICIES:
        raise ConfigError(f"unknown binarize policy {binarize!r}")
    probabilities = decode(mu).data
    rows, cols = np.triu_indices(vertex_count, k=1)
    p = probabilities[rows, cols]
    if binarize == "threshold":
        keep = np.flatnonzero(p > tau)
    else:
        if edge_budget is None:
            raise ConfigError("top_k binarization needs an edge budget")
        order = np.lexsort((cols, rows, -p))
        keep = order[:edge_budget]
    return Snapshot(vertex_count, list(zip(rows[keep], cols[keep])))


def rollout(model, graph, start_t, horizon, *, seed=0, binarize="threshold", tau=0.5):
    """Score a trained model against the next `horizon` true snapshots.

    The model is assumed fitted to G_1..G_{start_t}. Step k scores the new
    edges of the true snapshot start_t + k against the current embedding;
    between steps the prediction is binarized and fed back as input. With
    horizon 1 nothing synthetic is ever consumed, so the result is
    bit-identical to the standard next-graph evaluation at start_t + 1.
    """
    if horizon < 1:
        raise ContractError(f"horizon must be at least 1, got {horizon}")
    if not 1 <= start_t <= graph.T:
        raise ContractError(f"start_t={start_t} outside [1, {graph.T}]")
    if start_t + horizon > graph.T:
        raise ContractError(
            f"rollout to t={start_t + horizon} overruns the sequence (T={graph.T})"
        )
    if binarize not in BINARIZE_POLICIES:
        raise ConfigError(f"unknown binarize policy {binarize!r}")
    history = [graph.snapshot(s) for s in range(1, start_t + 1)]
    outputs, state = forward_sequence(model, history, sample=False)
    mu = outputs[-1].mu
    edge_budget = graph.snapshot(start_t).edge_count
    steps, skipped = [], []
    for k in range(1, horizon + 1):
        t = start_t + k
        eval_rng = np.random.default_rng([seed, t, 1])
        try:
            evalset = build_new_edge_evalset(graph, t, eval_rng)
        except NoNewEdges:
            skipped.append(t)
        else:
            steps.append(RolloutStep(k, t, score_evalset(mu, evalset)))
        if k < horizon:
            synthetic = predicted_snapshot(
                mu, graph.vertex_count, binarize, tau, edge_budget
            )
            output, state = forward_step(model, synthetic, state, sample=False)
            mu = output.mu
    return RolloutResult(tuple(steps), tuple(skipped))


def trained_rollout(
    graph,
    model_config,
    train_config,
    start_t,
    horizon,
    *,
    seed=0,
    binarize="threshold",
    tau=0.5,
):
    """Fit a fresh model on G_1..G_{start_t}, then roll it forward.

    Generators are derived exactly as the per-target sweep derives them for
    target start_t + 1, which is what makes the horizon-1 equality hold.
    Returns (RolloutResult, training history).
    """
    if start_t < 2:
        raise ContractError(f"training needs start_t >= 2, got {start_t}")
    if start_t + horizon > graph.T:
        raise ContractError(
            f"rollout to t={start_t + horizon} overruns the sequence (T={graph.T})"
        )
    model_rng = np.random.default_rng([seed, start_t + 1, 0])
    history = [graph.snapshot(s) for s in range(1, start_t + 1)]
    model = build_model(model_config, graph.vertex_count, model_rng)
    model, log = train_on_sequence(model, history, train_config, rng=model_rng)
    result = rollout(
        model, graph, start_t, horizon, seed=seed, binarize=binarize, tau=tau
    )
    return result, log


def history_cut(total_snapshots, train_fraction):
    """Snapshot count covered by a leading share of the sequence.

    Rounded to the nearest snapshot, with at least the two a model needs
    to train on.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ContractError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    return max(2, round(train_fraction * total_snapshots))