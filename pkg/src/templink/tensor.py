"""Dense 2-D float64 tensors with reverse-mode automatic differentiation.

A Tape records every differentiable operation while active; backward() walks
the record once in reverse, accumulating gradients into requires_grad leaves.
Ops executed with no active tape just compute values, which is what the
evaluation paths use. Only the op set the model needs is implemented; all of
it is float64 and 2-D by contract.
"""

import threading

import numpy as np
from scipy.special import expit

from . import _pairloss
from .errors import ContractError, ShapeError, StateError

_active = threading.local()


def _tape_stack():
    stack = getattr(_active, "stack", None)
    if stack is None:
        stack = []
        _active.stack = stack
    return stack


def _current_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """2-D float64 array, optionally a differentiable leaf."""

    __slots__ = ("data", "requires_grad", "grad", "_on_tape")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got ndim={arr.ndim}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._on_tape = False

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape

    @property
    def values(self):
        return self.data

    @property
    def gradient(self):
        return self.grad

    def item(self):
        if self.data.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Computation record; use as a context manager around a forward pass."""

    def __init__(self):
        self.nodes = []  # (out, inputs, backward_fn)
        self._done = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise StateError("tape stack corrupted: exiting a non-innermost tape")
        stack.pop()
        return False

    def backward(self, loss):
        """Accumulate d(loss)/d(leaf) into every reachable requires_grad leaf."""
        if self._done:
            raise StateError("backward already ran on this tape; record a new pass")
        if loss.data.shape != (1, 1):
            raise ContractError(f"loss must be 1x1, got {loss.shape}")
        if not loss._on_tape:
            raise StateError("loss is not connected to this tape")
        self._done = True

        grads = {id(loss): np.ones((1, 1))}
        for out, inputs, backward_fn in reversed(self.nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for tensor, piece in zip(inputs, backward_fn(g)):
                if piece is None:
                    continue
                if not (tensor.requires_grad or tensor._on_tape):
                    continue
                # stored partials are mutated in place, so they must own
                # their memory: views of g and g itself may alias another slot
                if piece is g or piece.base is not None:
                    piece = piece.copy()
                key = id(tensor)
                if key in grads:
                    grads[key] += piece
                else:
                    grads[key] = piece

        for _, inputs, _ in self.nodes:
            for tensor in inputs:
                if tensor.requires_grad:
                    piece = grads.pop(id(tensor), None)
                    if piece is not None:
                        if tensor.grad is None:
                            tensor.grad = piece
                        else:
                            tensor.grad = tensor.grad + piece


def backward(loss):
    """Run backward on the innermost active tape (the usual entry point)."""
    tape = _current_tape()
    if tape is None:
        raise StateError("no active tape to run backward on")
    tape.backward(loss)


def _record(out, inputs, backward_fn):
    tape = _current_tape()
    if tape is None:
        return out
    if any(t.requires_grad or t._on_tape for t in inputs):
        out._on_tape = True
        tape.nodes.append((out, inputs, backward_fn))
    return out


def _check_same_shape(op, a, b):
    if a.data.shape != b.data.shape:
        raise ShapeError.binary(op, a.data.shape, b.data.shape)


def matmul(a, b):
    if a.cols != b.rows:
        raise ShapeError.binary("matmul", a.data.shape, b.data.shape)
    out = Tensor(a.data @ b.data)

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return _record(out, (a, b), bwd)


def spmm(a_csr, b, a_csr_t=None):
    """Sparse constant (CSR) times dense tensor; gradient flows to b only."""
    if a_csr.shape[1] != b.rows:
        raise ShapeError.binary("spmm", a_csr.shape, b.data.shape)
    out = Tensor(a_csr @ b.data)

    def bwd(g):
        at = a_csr_t if a_csr_t is not None else a_csr.T.tocsr()
        return (at @ g,)

    return _record(out, (b,), bwd)


def add(a, b):
    """Elementwise add; b may be a 1 x d row vector broadcast over rows."""
    if b.data.shape == a.data.shape:
        out = Tensor(a.data + b.data)

        def bwd(g):
            return g, g

    elif b.rows == 1 and b.cols == a.cols:
        out = Tensor(a.data + b.data)

        def bwd(g):
            return g, g.sum(axis=0, keepdims=True)

    else:
        raise ShapeError.binary("add", a.data.shape, b.data.shape)
    return _record(out, (a, b), bwd)


def sub(a, b):
    _check_same_shape("sub", a, b)
    out = Tensor(a.data - b.data)

    def bwd(g):
        return g, -g

    return _record(out, (a, b), bwd)


def hadamard(a, b):
    _check_same_shape("hadamard", a, b)
    out = Tensor(a.data * b.data)

    def bwd(g):
        return g * b.data, g * a.data

    return _record(out, (a, b), bwd)


def scale(a, c):
    c = float(c)
    out = Tensor(a.data * c)

    def bwd(g):
        return (g * c,)

    return _record(out, (a,), bwd)


def add_scalar(a, c):
    c = float(c)
    out = Tensor(a.data + c)

    def bwd(g):
        return (g,)

    return _record(out, (a,), bwd)


def sigmoid(a):
    y = expit(a.data)
    out = Tensor(y)

    def bwd(g):
        return (g * y * (1.0 - y),)

    return _record(out, (a,), bwd)


def tanh(a):
    y = np.tanh(a.data)
    out = Tensor(y)

    def bwd(g):
        return (g * (1.0 - y * y),)

    return _record(out, (a,), bwd)


def relu(a):
    out = Tensor(np.maximum(a.data, 0.0))

    def bwd(g):
        return (g * (a.data > 0.0),)

    return _record(out, (a,), bwd)


def leaky_relu(a, slope=0.01):
    out = Tensor(np.where(a.data > 0.0, a.data, slope * a.data))

    def bwd(g):
        return (g * np.where(a.data > 0.0, 1.0, slope),)

    return _record(out, (a,), bwd)


def exp(a):
    y = np.exp(a.data)
    out = Tensor(y)

    def bwd(g):
        return (g * y,)

    return _record(out, (a,), bwd)


def log(a):
    out = Tensor(np.log(a.data))

    def bwd(g):
        return (g / a.data,)

    return _record(out, (a,), bwd)


def softplus(a):
    out = Tensor(np.logaddexp(0.0, a.data))

    def bwd(g):
        return (g * expit(a.data),)

    return _record(out, (a,), bwd)


def clamp(a, lo, hi):
    """Clamp to [lo, hi]; gradient passes through strictly inside the range."""
    out = Tensor(np.clip(a.data, lo, hi))

    def bwd(g):
        return (g * ((a.data > lo) & (a.data < hi)),)

    return _record(out, (a,), bwd)


def transpose(a):
    out = Tensor(np.ascontiguousarray(a.data.T))

    def bwd(g):
        return (g.T,)

    return _record(out, (a,), bwd)


def concat_cols(a, b):
    if a.rows != b.rows:
        raise ShapeError.binary("concat_cols", a.data.shape, b.data.shape)
    out = Tensor(np.concatenate([a.data, b.data], axis=1))
    split = a.cols

    def bwd(g):
        return g[:, :split], g[:, split:]

    return _record(out, (a, b), bwd)


def layer_norm(x, gain, bias, eps=1e-5):
    """Row-wise normalization (population variance + eps), then affine."""
    if gain.data.shape != (1, x.cols) or bias.data.shape != (1, x.cols):
        raise ShapeError(
            f"layer_norm affine shapes {gain.data.shape}/{bias.data.shape} "
            f"do not match feature width {x.cols}")
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centered * inv_std
    out = Tensor(x_hat * gain.data + bias.data)

    def bwd(g):
        g_hat = g * gain.data
        # dx = (1/std) * (g_hat - mean(g_hat) - x_hat * mean(g_hat * x_hat))
        m1 = g_hat.mean(axis=1, keepdims=True)
        m2 = (g_hat * x_hat).mean(axis=1, keepdims=True)
        dx = inv_std * (g_hat - m1 - x_hat * m2)
        dgain = (g * x_hat).sum(axis=0, keepdims=True)
        dbias = g.sum(axis=0, keepdims=True)
        return dx, dgain, dbias

    return _record(out, (x, gain, bias), bwd)


def sum_all(a):
    out = Tensor([[a.data.sum()]])

    def bwd(g):
        return (np.full(a.data.shape, g[0, 0]),)

    return _record(out, (a,), bwd)


def inner_product_bce(z, pos_i, pos_j, w_pos):
    """Weighted dense BCE over the logits z z' with positives given as
    upper-triangle index pairs (i <= j, diagonal included by the caller).

    Semantically identical to composing decode + reconstruction loss over the
    full n x n matrix, but retains only z and a packed sigmoid cache instead
    of n^2 tape intermediates; see _pairloss for the numeric path.
    """
    if pos_i.shape != pos_j.shape:
        raise ShapeError.binary("inner_product_bce", pos_i.shape, pos_j.shape)
    if pos_i.size == 0:
        raise ContractError("inner_product_bce needs at least one positive pair")
    loss, saved = _pairloss.pairwise_bce_forward(z.data, pos_i, pos_j, w_pos)
    out = Tensor([[loss]])

    def bwd(g):
        return (_pairloss.pairwise_bce_backward(saved, float(g[0, 0])),)

    return _record(out, (z,), bwd)
