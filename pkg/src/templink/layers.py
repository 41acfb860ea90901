"""Learnable layers: graph convolution, GRU cell, and the temporal block
that chains them with optional layer norm and a linear skip mix."""

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor


def glorot(rng, fan_in, fan_out):
    """Glorot-uniform weight draw with bound sqrt(6 / (fan_in + fan_out))."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)


def _zeros_row(d):
    return Tensor(np.zeros((1, d)), requires_grad=True)


def _propagate(a_hat, h):
    """Multiply by the normalized adjacency, sparse or dense."""
    if sp.issparse(a_hat):
        return T.spmm(a_hat, h, a_hat)  # symmetric, so it is its own transpose
    return T.matmul(a_hat, h)


class GcnLayer:
    """ReLU of normalized-adjacency propagation times a weight; no bias."""

    def __init__(self, d_in, d_out, rng):
        self.d_in = d_in
        self.d_out = d_out
        self.weight = glorot(rng, d_in, d_out)

    def forward(self, a_hat, h=None):
        """h=None means identity input features, so the projection is just
        the weight itself."""
        hw = self.weight if h is None else T.matmul(h, self.weight)
        return T.relu(_propagate(a_hat, hw))

    def named_parameters(self):
        yield "weight", self.weight


class GruCell:
    """Gated recurrent unit over vertex rows; all transforms are d x d."""

    def __init__(self, d, rng):
        self.d = d
        self.update_x = glorot(rng, d, d)
        self.update_h = glorot(rng, d, d)
        self.reset_x = glorot(rng, d, d)
        self.reset_h = glorot(rng, d, d)
        self.candidate_x = glorot(rng, d, d)
        self.candidate_h = glorot(rng, d, d)
        self.update_b = _zeros_row(d)
        self.reset_b = _zeros_row(d)
        self.candidate_b = _zeros_row(d)

    def _gate(self, x, h_prev, wx, wh, b):
        return T.add(T.add(T.matmul(x, wx), T.matmul(h_prev, wh)), b)

    def step(self, x, h_prev):
        if x.shape != h_prev.shape or x.cols != self.d:
            raise ShapeError.binary("gru_step", x.shape, h_prev.shape)
        u = T.sigmoid(self._gate(x, h_prev, self.update_x, self.update_h, self.update_b))
        r = T.sigmoid(self._gate(x, h_prev, self.reset_x, self.reset_h, self.reset_b))
        cand = T.tanh(
            self._gate(x, T.hadamard(r, h_prev), self.candidate_x, self.candidate_h,
                       self.candidate_b)
        )
        keep = T.hadamard(T.add_scalar(T.scale(u, -1.0), 1.0), h_prev)
        return T.add(keep, T.hadamard(u, cand))

    def named_parameters(self):
        yield "update_x", self.update_x
        yield "update_h", self.update_h
        yield "reset_x", self.reset_x
        yield "reset_h", self.reset_h
        yield "candidate_x", self.candidate_x
        yield "candidate_h", self.candidate_h
        yield "update_b", self.update_b
        yield "reset_b", self.reset_b
        yield "candidate_b", self.candidate_b


class _LayerNormAffine:
    def __init__(self, d):
        self.gain = Tensor(np.ones((1, d)), requires_grad=True)
        self.bias = _zeros_row(d)

    def apply(self, x):
        return T.layer_norm(x, self.gain, self.bias)

    def named_parameters(self):
        yield "gain", self.gain
        yield "bias", self.bias


class TemporalBlock:
    """One architecture stage: graph convolution feeding a GRU, each output
    optionally row-normalized, plus an optional linear mix of the two paths.

    Parameters are shared across every step of a sequence; the hidden state
    threads the GRU output (post-norm) from one snapshot to the next.
    """

    def __init__(self, d_in, d_out, rng, use_layer_norm=False, use_skip=False,
                 leaky_slope=0.01):
        self.d_in = d_in
        self.d_out = d_out
        self.use_layer_norm = use_layer_norm
        self.use_skip = use_skip
        self.leaky_slope = leaky_slope
        self.gcn = GcnLayer(d_in, d_out, rng)
        self.gru = GruCell(d_out, rng)
        self.ln_gcn = _LayerNormAffine(d_out) if use_layer_norm else None
        self.ln_gru = _LayerNormAffine(d_out) if use_layer_norm else None
        if use_skip:
            self.skip_weight = glorot(rng, 2 * d_out, d_out)
            self.skip_bias = _zeros_row(d_out)
        else:
            self.skip_weight = None
            self.skip_bias = None

    def initial_state(self, n_rows):
        return Tensor(np.zeros((n_rows, self.d_out)))

    def forward(self, a_hat, h_in, h_prev):
        """Returns (block output, new hidden state)."""
        g = self.gcn.forward(a_hat, h_in)
        if self.ln_gcn is not None:
            g = self.ln_gcn.apply(g)
        h_new = self.gru.step(g, h_prev)
        if self.ln_gru is not None:
            h_new = self.ln_gru.apply(h_new)
        if self.use_skip:
            mixed = T.add(T.matmul(T.concat_cols(g, h_new), self.skip_weight),
                          self.skip_bias)
            out = T.leaky_relu(mixed, self.leaky_slope)
        else:
            out = h_new
        return out, h_new

    def named_parameters(self):
        for name, p in self.gcn.named_parameters():
            yield f"gcn.{name}", p
        for name, p in self.gru.named_parameters():
            yield f"gru.{name}", p
        if self.ln_gcn is not None:
            for name, p in self.ln_gcn.named_parameters():
                yield f"ln_gcn.{name}", p
            for name, p in self.ln_gru.named_parameters():
                yield f"ln_gru.{name}", p
        if self.use_skip:
            yield "skip.weight", self.skip_weight
            yield "skip.bias", self.skip_bias
