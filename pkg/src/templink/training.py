"""Full-batch training over a snapshot sequence and the rolling next-graph
evaluation harness built on top of it."""

import math
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DegenerateInputError, NoNewEdges, StateError
from .losses import LossBreakdown, kl_loss, l2_loss, reconstruction_loss_fused
from .metrics import (
    MetricsRecord,
    build_full_graph_evalset,
    build_new_edge_evalset,
    score_evalset,
)
from .model import build_model, forward_sequence, forward_step, save_checkpoint
from .tensor import Tape


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 200
    l2_lambda: float = 1e-5
    optimizer: str = "rmsprop"
    rmsprop_decay: float = 0.99
    rmsprop_eps: float = 1e-8
    kl_scale_mode: str = "per_vertex"
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.optimizer != "rmsprop":
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not 0.0 <= self.rmsprop_decay < 1.0:
            raise ConfigError("rmsprop_decay must lie in [0, 1)")
        if self.kl_scale_mode != "per_vertex":
            raise ConfigError(f"unknown kl_scale_mode {self.kl_scale_mode!r}")

    def to_dict(self):
        return {
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "l2_lambda": self.l2_lambda,
            "optimizer": self.optimizer,
            "rmsprop_decay": self.rmsprop_decay,
            "rmsprop_eps": self.rmsprop_eps,
            "kl_scale_mode": self.kl_scale_mode,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


class RmsProp:
    """Root-mean-square propagation with per-element running second moments."""

    def __init__(self, parameters, config):
        self.parameters = list(parameters)
        self.learning_rate = config.learning_rate
        self.decay = config.rmsprop_decay
        self.eps = config.rmsprop_eps
        self.cache = [np.zeros_like(p.data) for p in self.parameters]

    def step(self):
        for p, s in zip(self.parameters, self.cache):
            if p.grad is None:
                raise StateError("parameter has no gradient; run backward first")
            g = p.grad
            s *= self.decay
            s += (1.0 - self.decay) * g * g
            p.data -= self.learning_rate * g / (np.sqrt(s) + self.eps)

    def zero_grad(self):
        for p in self.parameters:
            p.grad = None


def _sequence_loss(model, graphs, config, rng):
    """One taped pass: forward every input snapshot, score each step against
    the following snapshot, and sum reconstruction + divergence + decay."""
    variational = model.config.variational
    state = model.initial_state()
    recon_sum = None
    kl_sum = None
    for s_idx in range(len(graphs) - 1):
        step, state = forward_step(
            model, graphs[s_idx], state, sample=variational, rng=rng
        )
        recon = reconstruction_loss_fused(step.z, graphs[s_idx + 1])
        recon_sum = recon if recon_sum is None else T.add(recon_sum, recon)
        if variational:
            kl = kl_loss(step.mu, step.log_sigma)
            kl_sum = kl if kl_sum is None else T.add(kl_sum, kl)
    l2 = l2_loss(model.parameters(), config.l2_lambda)
    total = recon_sum
    if kl_sum is not None:
        total = T.add(total, kl_sum)
    total = T.add(total, l2)
    breakdown = LossBreakdown(
        reconstruction=recon_sum.item(),
        kl=kl_sum.item() if kl_sum is not None else 0.0,
        l2=l2.item(),
    )
    return total, breakdown


def train_on_sequence(model, graphs, config, rng=None):
    """Fit the model to predict each snapshot from its predecessor.

    graphs is the history G_1..G_{t-1}; forwards run over all but the last
    snapshot, each step scored against the following graph. One full-batch
    update per epoch. Returns (model, per-epoch LossBreakdown list).
    """
    graphs = list(graphs)
    if len(graphs) < 2:
        raise ContractError(f"training needs at least 2 snapshots, got {len(graphs)}")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    optimizer = RmsProp(model.parameters(), config)
    history = []
    for _ in range(config.epochs):
        optimizer.zero_grad()
        with Tape() as tape:
            total, breakdown = _sequence_loss(model, graphs, config, rng)
            tape.backward(total)
        optimizer.step()
        history.append(breakdown)
    return model, history


EVAL_MODES = ("new-edges", "full-graph")


@dataclass(frozen=True)
class TargetResult:
    t: int
    record: MetricsRecord


@dataclass(frozen=True)
class SweepResult:
    """Outcome of the rolling per-target evaluation."""

    results: tuple
    skipped: tuple  # targets with no new edges to score
    training_logs: dict  # t -> tuple of (reconstruction, kl, l2, total) rows

    def _values(self, field):
        if not self.results:
            raise DegenerateInputError("every target was skipped; nothing to aggregate")
        return np.array([getattr(r.record, field) for r in self.results])

    @property
    def mean_auc(self):
        return float(self._values("auc").mean())

    @property
    def std_auc(self):
        return float(self._values("auc").std())  # population std

    @property
    def mean_ap(self):
        return float(self._values("ap").mean())

    @property
    def std_ap(self):
        return float(self._values("ap").std())


def _target_rngs(seed, t):
    # disjoint streams: one drives init + training noise, one the negatives
    return np.random.default_rng([seed, t, 0]), np.random.default_rng([seed, t, 1])


def evaluate_target(
    graph, model_config, train_config, t, seed, mode="new-edges", checkpoint_path=None
):
    """Train a fresh model on everything before t, then score target t.

    The scoring embedding is the mean output for the latest known snapshot,
    taken from a forward pass over the full history. Returns
    (TargetResult, training history); raises NoNewEdges when the target
    has nothing new to predict.
    """
    if mode not in EVAL_MODES:
        raise ConfigError(f"unknown evaluation mode {mode!r}")
    if not 3 <= t <= graph.T:
        raise ContractError(f"target t={t} outside [3, {graph.T}]")
    model_rng, eval_rng = _target_rngs(seed, t)
    history = [graph.snapshot(s) for s in range(1, t)]
    model = build_model(model_config, graph.vertex_count, model_rng)
    model, log = train_on_sequence(model, history, train_config, rng=model_rng)
    if mode == "new-edges":
        evalset = build_new_edge_evalset(graph, t, eval_rng)
    else:
        evalset = build_full_graph_evalset(graph, t, eval_rng)
    outputs, _ = forward_sequence(model, history, sample=False)
    record = score_evalset(outputs[-1].mu, evalset)
    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path)
    return TargetResult(t, record), log


def _sweep_worker(args):
    graph, model_config, train_config, t, seed, mode, checkpoint_path = args
    try:
        result, log = evaluate_target(
            graph, model_config, train_config, t, seed, mode, checkpoint_path
        )
    except NoNewEdges:
        return ("skip", t, ())
    return ("ok", result, tuple(b.as_row() for b in log))


def rolling_evaluation(
    graph,
    model_config,
    train_config,
    *,
    seed=0,
    fraction=1.0,
    mode="new-edges",
    workers=1,
    checkpoint_dir=None,
):
    """Per-target retraining sweep over every predictable snapshot.

    Targets run from t=3 to T (each needs two earlier graphs to train on);
    fraction < 1 keeps only the leading share of them, rounded up. Each
    target gets its own model and generators derived from (seed, t), so
    results are independent of evaluation order and worker count. With a
    checkpoint_dir, each target's trained model lands there as
    checkpoint_t{t}.npz.
    """
    if graph.T < 3:
        raise ContractError(f"need at least 3 snapshots, got {graph.T}")
    if not 0.0 < fraction <= 1.0:
        raise ContractError(f"fraction must lie in (0, 1], got {fraction}")
    if mode not in EVAL_MODES:
        raise ConfigError(f"unknown evaluation mode {mode!r}")
    if workers < 1:
        raise ConfigError(f"workers must be positive, got {workers}")
    targets = list(range(3, graph.T + 1))
    targets = targets[: math.ceil(fraction * len(targets))]

    def _checkpoint_path(t):
        if checkpoint_dir is None:
            return None
        return os.path.join(checkpoint_dir, f"checkpoint_t{t}.npz")

    jobs = [
        (graph, model_config, train_config, t, seed, mode, _checkpoint_path(t))
        for t in targets
    ]
    if workers == 1:
        outcomes = [_sweep_worker(job) for job in jobs]
    else:
        context = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=context) as pool:
            outcomes = list(pool.map(_sweep_worker, jobs, chunksize=1))
    results, skipped, logs = [], [], {}
    for kind, payload, log in outcomes:
        if kind == "skip":
            skipped.append(payload)
        else:
            results.append(payload)
            logs[payload.t] = log
    return SweepResult(tuple(results), tuple(skipped), logs)
