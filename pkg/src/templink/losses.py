"""Training objective pieces: weighted reconstruction cross-entropy, the
Gaussian-prior divergence, and parameter decay."""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DegenerateInputError, ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class LossBreakdown:
    reconstruction: float
    kl: float
    l2: float

    @property
    def total(self):
        return self.reconstruction + self.kl + self.l2

    def as_row(self):
        return (self.reconstruction, self.kl, self.l2, self.total)


def dense_targets(a_next):
    """0/1 target matrix for a prediction step: adjacency with diagonal 1."""
    y = a_next.dense_adjacency()
    np.fill_diagonal(y, 1.0)
    return y


def positive_weight(a_next):
    """w_pos = (|V|^2 - n_pos) / n_pos, counting the forced-positive diagonal
    and both orientations of each edge."""
    n = a_next.vertex_count
    n_pos = 2 * a_next.edge_count + n
    if n_pos == 0:
        raise DegenerateInputError("target has no positive entries")
    return (n * n - n_pos) / n_pos


def reconstruction_loss(p, a_next):
    """Weighted Bernoulli cross-entropy of probabilities p against the next
    snapshot, positives up-weighted by positive_weight, scaled by 1/|V|^2.

    Differentiable; intended for the composed decode route and for small
    graphs. Training uses the fused logit-space equivalent.
    """
    n = a_next.vertex_count
    if p.shape != (n, n):
        raise ShapeError(f"probabilities {p.shape} vs target {(n, n)}")
    y = dense_targets(a_next)
    w = positive_weight(a_next)
    pos_mask = Tensor(y * w)
    neg_mask = Tensor(1.0 - y)
    one_minus_p = T.add_scalar(T.scale(p, -1.0), 1.0)
    term_pos = T.sum_all(T.hadamard(pos_mask, T.log(p)))
    term_neg = T.sum_all(T.hadamard(neg_mask, T.log(one_minus_p)))
    return T.scale(T.add(term_pos, term_neg), -1.0 / (n * n))


def reconstruction_loss_fused(z, a_next):
    """Same objective computed from the embedding via packed logits; never
    materializes the |V|^2 probability matrix on the tape."""
    if z.rows != a_next.vertex_count:
        raise ShapeError(f"embedding rows {z.rows} vs {a_next.vertex_count} vertices")
    pos_i, pos_j = a_next.positive_pairs()
    return T.inner_product_bce(z, pos_i, pos_j, positive_weight(a_next))


def kl_loss(mu, log_sigma):
    """(1/|V|) * sum of 0.5*(mu^2 + sigma^2 - 1 - log sigma^2)."""
    if mu.shape != log_sigma.shape:
        raise ShapeError.binary("kl_loss", mu.shape, log_sigma.shape)
    mu_sq = T.hadamard(mu, mu)
    sigma_sq = T.exp(T.scale(log_sigma, 2.0))
    inner = T.add_scalar(T.sub(T.add(mu_sq, sigma_sq), T.scale(log_sigma, 2.0)), -1.0)
    return T.scale(T.sum_all(inner), 0.5 / mu.rows)


def l2_loss(parameters, lam):
    """lam * sum of squares over every parameter element."""
    total = None
    for p in parameters:
        term = T.sum_all(T.hadamard(p, p))
        total = term if total is None else T.add(total, term)
    if total is None:
        return Tensor([[0.0]])
    return T.scale(total, lam)
