"""Layer-level oracles: hand evaluations, zero cases, and gradient checks."""

import math

import numpy as np
import pytest
from scipy.special import expit

from templink import tensor as T
from templink.errors import ShapeError
from templink.graphs import Snapshot, normalize_adjacency
from templink.layers import GcnLayer, GruCell, TemporalBlock, glorot
from templink.tensor import Tape, Tensor

from conftest import finite_difference, norm_relative_error


# --- independent numpy reference ------------------------------------------

def ref_layer_norm(x, gain, bias, eps=1e-5):
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    return gain * (x - mu) / np.sqrt(var + eps) + bias


def ref_gru(cell, x, h):
    p = {name: t.values for name, t in cell.named_parameters()}
    u = expit(x @ p["update_x"] + h @ p["update_h"] + p["update_b"])
    r = expit(x @ p["reset_x"] + h @ p["reset_h"] + p["reset_b"])
    cand = np.tanh(x @ p["candidate_x"] + (r * h) @ p["candidate_h"] + p["candidate_b"])
    return (1.0 - u) * h + u * cand


def ref_block(block, a, h_in, h_prev):
    g = np.maximum(a @ h_in @ block.gcn.weight.values, 0.0)
    if block.ln_gcn is not None:
        g = ref_layer_norm(g, block.ln_gcn.gain.values, block.ln_gcn.bias.values)
    h_new = ref_gru(block.gru, g, h_prev)
    if block.ln_gru is not None:
        h_new = ref_layer_norm(h_new, block.ln_gru.gain.values, block.ln_gru.bias.values)
    if block.use_skip:
        mixed = np.concatenate([g, h_new], axis=1) @ block.skip_weight.values
        mixed = mixed + block.skip_bias.values
        out = np.where(mixed > 0, mixed, 0.01 * mixed)
    else:
        out = h_new
    return out, h_new


def _zero_params(module):
    for _, p in module.named_parameters():
        p.data[:] = 0.0


class TestGlorot:
    def test_bound(self, rng):
        w = glorot(rng, 64, 32).values
        bound = math.sqrt(6.0 / 96.0)
        assert abs(bound - 0.25) < 1e-12
        assert np.abs(w).max() <= bound
        assert np.abs(w).max() > 0.2  # 2048 draws hug the bound

    def test_same_seed_bitwise_identical(self):
        a = glorot(np.random.default_rng(11), 8, 4).values
        b = glorot(np.random.default_rng(11), 8, 4).values
        assert np.array_equal(a, b)


class TestGcnLayer:
    def test_identity_chain(self, rng):
        layer = GcnLayer(3, 3, rng)
        layer.weight.data[:] = np.eye(3)
        got = layer.forward(Tensor(np.eye(3)), Tensor(np.eye(3)))
        assert np.array_equal(got.values, np.eye(3))

    def test_negative_column_zeroed(self, rng):
        layer = GcnLayer(2, 2, rng)
        layer.weight.data[:] = np.array([[1.0, -1.0], [1.0, -1.0]])
        got = layer.forward(Tensor(np.eye(2)), Tensor(np.eye(2)))
        assert np.all(got.values[:, 1] == 0.0)
        assert np.array_equal(got.values[:, 0], [1.0, 1.0])

    def test_path_graph_hand_evaluation(self, rng):
        s = Snapshot(3, [(0, 1), (1, 2)])
        a = normalize_adjacency(s)
        h = Tensor(rng.normal(size=(3, 2)))
        layer = GcnLayer(2, 2, rng)
        got = layer.forward(a, h).values
        want = np.maximum(a.values @ h.values @ layer.weight.values, 0.0)
        assert np.abs(got - want).max() < 1e-12

    def test_sparse_path_matches_dense(self, rng):
        s = Snapshot(5, [(0, 1), (1, 2), (2, 3), (3, 4)])
        h = Tensor(rng.normal(size=(5, 3)))
        layer = GcnLayer(3, 2, rng)
        dense = layer.forward(normalize_adjacency(s), h).values
        sparse = layer.forward(s.a_hat_csr, h).values
        assert np.abs(dense - sparse).max() < 1e-12

    def test_identity_feature_shortcut(self, rng):
        s = Snapshot(4, [(0, 1), (2, 3)])
        layer = GcnLayer(4, 3, rng)
        full = layer.forward(normalize_adjacency(s), Tensor(np.eye(4))).values
        shortcut = layer.forward(s.a_hat_csr).values
        assert np.abs(full - shortcut).max() < 1e-12

    def test_shape_mismatch(self, rng):
        layer = GcnLayer(3, 2, rng)
        with pytest.raises(ShapeError):
            layer.forward(Tensor(np.eye(2)), Tensor(np.zeros((2, 4))))


class TestGruCell:
    def test_zero_parameters_halve_hidden(self, rng):
        cell = GruCell(3, rng)
        _zero_params(cell)
        h_prev = Tensor(rng.normal(size=(4, 3)))
        x = Tensor(rng.normal(size=(4, 3)))
        got = cell.step(x, h_prev).values
        assert np.abs(got - 0.5 * h_prev.values).max() < 1e-15

    def test_zero_parameters_zero_hidden(self, rng):
        cell = GruCell(2, rng)
        _zero_params(cell)
        got = cell.step(Tensor(rng.normal(size=(5, 2))), Tensor(np.zeros((5, 2))))
        assert np.all(got.values == 0.0)

    def test_scalar_hand_case(self, rng):
        cell = GruCell(1, rng)
        _zero_params(cell)
        cell.update_x.data[:] = 1.0
        cell.reset_x.data[:] = 1.0
        cell.candidate_x.data[:] = 1.0
        got = cell.step(Tensor([[1.0]]), Tensor([[0.0]])).item()
        want = expit(1.0) * math.tanh(1.0)
        assert abs(want - 0.5567699411459397) < 1e-15
        assert abs(got - want) < 1e-15

    def test_saturated_update_gate_returns_candidate(self, rng):
        cell = GruCell(3, rng)
        cell.update_b.data[:] = 50.0
        x = Tensor(rng.normal(size=(4, 3)))
        h_prev = Tensor(rng.normal(size=(4, 3)))
        got = cell.step(x, h_prev).values
        p = {name: t.values for name, t in cell.named_parameters()}
        r = expit(x.values @ p["reset_x"] + h_prev.values @ p["reset_h"] + p["reset_b"])
        cand = np.tanh(
            x.values @ p["candidate_x"]
            + (r * h_prev.values) @ p["candidate_h"]
            + p["candidate_b"]
        )
        assert np.abs(got - cand).max() < 1e-8

    def test_matches_reference(self, rng):
        cell = GruCell(4, rng)
        x = Tensor(rng.normal(size=(6, 4)))
        h = Tensor(rng.normal(size=(6, 4)))
        assert np.abs(cell.step(x, h).values - ref_gru(cell, x.values, h.values)).max() < 1e-14

    def test_shape_mismatch(self, rng):
        cell = GruCell(3, rng)
        with pytest.raises(ShapeError):
            cell.step(Tensor(np.zeros((4, 3))), Tensor(np.zeros((5, 3))))


class TestTemporalBlock:
    def test_zero_gru_identity_skip_reduces_to_gcn(self, rng):
        block = TemporalBlock(3, 2, rng, use_layer_norm=False, use_skip=True)
        _zero_params(block.gru)
        block.skip_weight.data[:] = np.vstack([np.eye(2), np.eye(2)])
        block.skip_bias.data[:] = 0.0
        s = Snapshot(4, [(0, 1), (1, 2), (2, 3)])
        h_in = Tensor(rng.normal(size=(4, 3)))
        out, h_new = block.forward(normalize_adjacency(s), h_in, block.initial_state(4))
        g = np.maximum(normalize_adjacency(s).values @ h_in.values @ block.gcn.weight.values, 0.0)
        assert np.all(h_new.values == 0.0)
        assert np.abs(out.values - np.where(g > 0, g, 0.01 * g)).max() < 1e-14

    def test_no_skip_output_is_hidden_state(self, rng):
        block = TemporalBlock(3, 2, rng, use_layer_norm=True, use_skip=False)
        s = Snapshot(4, [(0, 1), (2, 3)])
        h_in = Tensor(rng.normal(size=(4, 3)))
        out, h_new = block.forward(normalize_adjacency(s), h_in, block.initial_state(4))
        assert out is h_new

    @pytest.mark.parametrize("ln,skip", [(False, False), (True, False), (False, True), (True, True)])
    def test_two_step_hand_evaluation(self, rng, ln, skip):
        block = TemporalBlock(4, 3, rng, use_layer_norm=ln, use_skip=skip)
        graphs = [Snapshot(6, [(0, 1), (1, 2), (3, 4)]), Snapshot(6, [(0, 1), (1, 2), (3, 4), (4, 5)])]
        h = block.initial_state(6)
        h_ref = np.zeros((6, 3))
        for s in graphs:
            h_in = Tensor(rng.normal(size=(6, 4)))
            a = normalize_adjacency(s)
            out, h = block.forward(a, h_in, h)
            out_ref, h_ref = ref_block(block, a.values, h_in.values, h_ref)
            assert np.abs(out.values - out_ref).max() < 1e-10
            assert np.abs(h.values - h_ref).max() < 1e-10

    def test_repeated_snapshot_hidden_state_settles(self):
        rng = np.random.default_rng(3)
        block = TemporalBlock(3, 3, rng, use_layer_norm=False, use_skip=False)
        s = Snapshot(5, [(0, 1), (1, 2), (2, 3), (3, 4)])
        a = normalize_adjacency(s)
        h_in = Tensor(rng.normal(size=(5, 3)))
        h = block.initial_state(5)
        diffs = []
        for _ in range(40):
            _, h_next = block.forward(a, h_in, h)
            diffs.append(np.linalg.norm(h_next.values - h.values))
            h = h_next
        assert diffs[-1] < 0.1 * diffs[9]
        assert max(diffs[30:]) <= min(diffs[9:15]) + 1e-12

    def test_parameter_sets_by_flags(self, rng):
        base = dict(TemporalBlock(3, 2, rng, False, False).named_parameters())
        with_ln = dict(TemporalBlock(3, 2, rng, True, False).named_parameters())
        with_all = dict(TemporalBlock(3, 2, rng, True, True).named_parameters())
        assert set(with_ln) - set(base) == {"ln_gcn.gain", "ln_gcn.bias", "ln_gru.gain", "ln_gru.bias"}
        assert set(with_all) - set(with_ln) == {"skip.weight", "skip.bias"}

    def test_outputs_finite_on_default_init(self, rng):
        block = TemporalBlock(5, 4, rng, use_layer_norm=True, use_skip=True)
        s = Snapshot(5, [(0, 1), (1, 2), (2, 4), (0, 3)])
        h = block.initial_state(5)
        for _ in range(5):
            out, h = block.forward(s.a_hat_csr, Tensor(np.eye(5)), h)
            assert np.all(np.isfinite(out.values))

    def test_gradcheck_every_parameter(self, rng):
        """Composed two-step block loss vs finite differences, all parameters.

        Biases are jittered away from zero: at exact zeros a ReLU-killed row
        drives layer norm into its eps regime, where the loss is too sharply
        curved for finite differences to certify anything."""
        block = TemporalBlock(3, 3, rng, use_layer_norm=True, use_skip=True)
        for _, p in block.named_parameters():
            if p.rows == 1:
                p.data[:] = rng.normal(scale=0.3, size=p.shape)
        graphs = [
            Snapshot(4, [(0, 1), (1, 2), (2, 3), (0, 3)]),
            Snapshot(4, [(0, 1), (1, 2), (2, 3), (0, 3), (0, 2)]),
        ]
        h_ins = [Tensor(rng.normal(size=(4, 3))) for _ in graphs]

        def run():
            h = block.initial_state(4)
            total = None
            for s, h_in in zip(graphs, h_ins):
                out, h = block.forward(normalize_adjacency(s), h_in, h)
                term = T.sum_all(T.hadamard(out, out))
                total = term if total is None else T.add(total, term)
            return total

        with Tape() as tape:
            loss = run()
            tape.backward(loss)
        grads = {name: p.grad.copy() for name, p in block.named_parameters()}

        for name, p in block.named_parameters():
            fd = finite_difference(lambda: run().item(), p.data, h=1e-5)
            err = norm_relative_error(grads[name], fd)
            assert err < 1e-4, f"{name}: rel err {err:.3e}"
