import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from templink import _pairloss, tensor as T
from templink.errors import ContractError, ShapeError, StateError

from conftest import finite_difference, relative_error


def leaf(arr):
    return T.Tensor(arr, requires_grad=True)


class TestForwardValues:
    def test_matmul_identity(self):
        m = T.Tensor([[1.0, 2.0], [3.0, 4.0]])
        eye = T.Tensor(np.eye(2))
        assert np.array_equal(T.matmul(eye, m).data, m.data)
        assert np.array_equal(T.matmul(m, eye).data, m.data)

    def test_matmul_hand_example(self):
        a = T.Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = T.Tensor([[1.0], [1.0]])
        assert np.array_equal(T.matmul(a, b).data, [[3.0], [7.0]])

    def test_matmul_shape_error(self):
        with pytest.raises(ShapeError):
            T.matmul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((2, 3))))

    def test_sigmoid_at_zero(self):
        assert T.sigmoid(T.Tensor([[0.0]])).item() == 0.5

    def test_leaky_relu_negative_slope(self):
        out = T.leaky_relu(T.Tensor([[-1.0]]), slope=0.01)
        assert out.item() == pytest.approx(-0.01)

    def test_concat_cols_values(self):
        a = T.Tensor([[1.0], [2.0]])
        b = T.Tensor([[3.0], [4.0]])
        assert np.array_equal(T.concat_cols(a, b).data, [[1.0, 3.0], [2.0, 4.0]])

    def test_concat_cols_empty_identity(self):
        a = T.Tensor([[1.0], [2.0]])
        empty = T.Tensor(np.zeros((2, 0)))
        assert np.array_equal(T.concat_cols(a, empty).data, a.data)

    def test_concat_row_mismatch(self):
        with pytest.raises(ShapeError):
            T.concat_cols(T.Tensor(np.ones((2, 1))), T.Tensor(np.ones((3, 1))))

    def test_layer_norm_constant_row_is_zero(self):
        x = T.Tensor([[5.0, 5.0, 5.0]])
        gain = T.Tensor(np.ones((1, 3)))
        bias = T.Tensor(np.zeros((1, 3)))
        out = T.layer_norm(x, gain, bias)
        assert np.allclose(out.data, 0.0)

    def test_layer_norm_already_normalized(self):
        x = T.Tensor([[1.0, -1.0]])
        gain = T.Tensor(np.ones((1, 2)))
        bias = T.Tensor(np.zeros((1, 2)))
        out = T.layer_norm(x, gain, bias, eps=1e-15)
        assert np.allclose(out.data, [[1.0, -1.0]], atol=1e-7)

    def test_layer_norm_row_statistics(self, rng):
        x = T.Tensor(rng.standard_normal((5, 8)) * 3.0 + 1.0)
        gain = T.Tensor(np.ones((1, 8)))
        bias = T.Tensor(np.zeros((1, 8)))
        out = T.layer_norm(x, gain, bias).data
        assert np.abs(out.mean(axis=1)).max() < 1e-10
        assert np.abs(out.var(axis=1) - 1.0).max() < 1e-4

    def test_clamp_values(self):
        out = T.clamp(T.Tensor([[-20.0, 0.0, 20.0]]), -10.0, 10.0)
        assert np.array_equal(out.data, [[-10.0, 0.0, 10.0]])

    def test_softplus_stability(self):
        out = T.softplus(T.Tensor([[-800.0, 0.0, 800.0]]))
        assert np.all(np.isfinite(out.data))
        assert out.data[0, 2] == pytest.approx(800.0)

    def test_spmm_matches_dense(self, rng):
        a = sp.random(6, 6, density=0.4, random_state=7, format="csr")
        b = T.Tensor(rng.standard_normal((6, 3)))
        assert np.allclose(T.spmm(a, b).data, a.toarray() @ b.data)


class TestBackward:
    def test_sum_gradient_ones(self):
        x = leaf(np.arange(6.0).reshape(2, 3))
        with T.Tape() as tape:
            loss = T.sum_all(x)
            tape.backward(loss)
        assert np.array_equal(x.grad, np.ones((2, 3)))

    def test_square_gradient(self):
        x = leaf([[3.0]])
        with T.Tape() as tape:
            loss = T.sum_all(T.hadamard(x, x))
            tape.backward(loss)
        assert x.grad[0, 0] == pytest.approx(6.0)

    def test_sigmoid_derivative_at_zero(self):
        x = leaf([[0.0]])
        with T.Tape() as tape:
            loss = T.sum_all(T.sigmoid(x))
            tape.backward(loss)
        assert x.grad[0, 0] == pytest.approx(0.25)

    def test_matmul_gradient_structure(self, rng):
        a = leaf(rng.standard_normal((3, 4)))
        b = T.Tensor(rng.standard_normal((4, 2)))
        with T.Tape() as tape:
            loss = T.sum_all(T.matmul(a, b))
            tape.backward(loss)
        # d sum(ab)/da = row-broadcast of column sums of b
        expected = np.tile(b.data.sum(axis=1), (3, 1))
        assert np.allclose(a.grad, expected)

    def test_double_backward_raises(self):
        x = leaf([[1.0]])
        with T.Tape() as tape:
            loss = T.sum_all(x)
            tape.backward(loss)
            with pytest.raises(StateError):
                tape.backward(loss)

    def test_non_scalar_loss_raises(self):
        x = leaf(np.ones((2, 2)))
        with T.Tape() as tape:
            y = T.relu(x)
            with pytest.raises(ContractError):
                tape.backward(y)

    def test_disconnected_loss_raises(self):
        x = T.Tensor([[1.0]])
        with T.Tape() as tape:
            with pytest.raises(StateError):
                tape.backward(x)

    def test_no_tape_no_recording(self):
        x = leaf([[1.0, 2.0]])
        out = T.relu(x)
        assert not out._on_tape

    def test_shared_upstream_not_corrupted(self, rng):
        # add returns the same array object for both inputs; later in-place
        # accumulation must not leak between them
        a = leaf(rng.standard_normal((2, 2)))
        b = leaf(rng.standard_normal((2, 2)))
        with T.Tape() as tape:
            s = T.add(a, b)
            loss = T.sum_all(T.hadamard(s, s))
            tape.backward(loss)
        expected = 2.0 * (a.data + b.data)
        assert np.allclose(a.grad, expected)
        assert np.allclose(b.grad, expected)


OPS = {
    "sigmoid": (T.sigmoid, lambda r, s: r.standard_normal(s) * 2),
    "tanh": (T.tanh, lambda r, s: r.standard_normal(s) * 2),
    "relu": (T.relu, lambda r, s: r.standard_normal(s) * 2 + 0.1),
    "leaky_relu": (T.leaky_relu, lambda r, s: r.standard_normal(s) * 2 + 0.1),
    "exp": (T.exp, lambda r, s: r.standard_normal(s)),
    "softplus": (T.softplus, lambda r, s: r.standard_normal(s) * 3),
    "log": (T.log, lambda r, s: r.uniform(0.2, 3.0, s)),
}


class TestGradientChecks:
    @pytest.mark.parametrize("name", sorted(OPS))
    def test_unary_op(self, name, rng):
        op, sample = OPS[name]
        x = leaf(sample(rng, (3, 4)))
        with T.Tape() as tape:
            loss = T.sum_all(op(x))
            tape.backward(loss)

        def f():
            return T.sum_all(op(T.Tensor(x.data))).item()

        fd = finite_difference(f, x.data)
        assert relative_error(x.grad, fd) < 1e-4

    def test_matmul(self, rng):
        a = leaf(rng.standard_normal((3, 4)))
        b = leaf(rng.standard_normal((4, 2)))
        with T.Tape() as tape:
            loss = T.sum_all(T.tanh(T.matmul(a, b)))
            tape.backward(loss)

        def f():
            return T.sum_all(T.tanh(T.matmul(T.Tensor(a.data), T.Tensor(b.data)))).item()

        assert relative_error(a.grad, finite_difference(f, a.data)) < 1e-6
        assert relative_error(b.grad, finite_difference(f, b.data)) < 1e-6

    def test_transpose(self, rng):
        a = leaf(rng.standard_normal((3, 4)))
        w = T.Tensor(rng.standard_normal((3, 2)))
        with T.Tape() as tape:
            loss = T.sum_all(T.tanh(T.matmul(T.transpose(a), w)))
            tape.backward(loss)
        assert np.array_equal(T.transpose(T.Tensor(a.data)).values, a.data.T)

        def f():
            return T.sum_all(T.tanh(T.matmul(T.transpose(T.Tensor(a.data)), w))).item()

        assert relative_error(a.grad, finite_difference(f, a.data)) < 1e-6

    def test_concat_cols(self, rng):
        a = leaf(rng.standard_normal((3, 2)))
        b = leaf(rng.standard_normal((3, 3)))
        w = T.Tensor(rng.standard_normal((5, 1)))
        with T.Tape() as tape:
            loss = T.sum_all(T.sigmoid(T.matmul(T.concat_cols(a, b), w)))
            tape.backward(loss)

        def f():
            cat = T.concat_cols(T.Tensor(a.data), T.Tensor(b.data))
            return T.sum_all(T.sigmoid(T.matmul(cat, w))).item()

        assert relative_error(a.grad, finite_difference(f, a.data)) < 1e-6
        assert relative_error(b.grad, finite_difference(f, b.data)) < 1e-6

    def test_layer_norm(self, rng):
        x = leaf(rng.standard_normal((3, 4)) * 2.0)
        gain = leaf(rng.uniform(0.5, 1.5, (1, 4)))
        bias = leaf(rng.standard_normal((1, 4)) * 0.1)
        with T.Tape() as tape:
            loss = T.sum_all(T.tanh(T.layer_norm(x, gain, bias)))
            tape.backward(loss)

        def f():
            out = T.layer_norm(T.Tensor(x.data), T.Tensor(gain.data), T.Tensor(bias.data))
            return T.sum_all(T.tanh(out)).item()

        assert relative_error(x.grad, finite_difference(f, x.data)) < 1e-5
        assert relative_error(gain.grad, finite_difference(f, gain.data)) < 1e-5
        assert relative_error(bias.grad, finite_difference(f, bias.data)) < 1e-5

    def test_spmm(self, rng):
        a = sp.random(5, 5, density=0.5, random_state=3, format="csr")
        b = leaf(rng.standard_normal((5, 2)))
        with T.Tape() as tape:
            loss = T.sum_all(T.tanh(T.spmm(a, b)))
            tape.backward(loss)

        def f():
            return T.sum_all(T.tanh(T.spmm(a, T.Tensor(b.data)))).item()

        assert relative_error(b.grad, finite_difference(f, b.data)) < 1e-6

    def test_broadcast_add_bias(self, rng):
        x = leaf(rng.standard_normal((4, 3)))
        bias = leaf(rng.standard_normal((1, 3)))
        with T.Tape() as tape:
            loss = T.sum_all(T.sigmoid(T.add(x, bias)))
            tape.backward(loss)

        def f():
            return T.sum_all(T.sigmoid(T.add(T.Tensor(x.data), T.Tensor(bias.data)))).item()

        assert relative_error(bias.grad, finite_difference(f, bias.data)) < 1e-6

    def test_randomized_composites(self, rng):
        # the module-level contract: every differentiable op chain passes a
        # finite-difference check on randomized inputs
        for trial in range(20):
            x = leaf(rng.standard_normal((2, 3)))
            with T.Tape() as tape:
                h = T.leaky_relu(T.scale(x, 1.7))
                h = T.add_scalar(T.hadamard(h, T.sigmoid(x)), 0.3)
                loss = T.sum_all(T.softplus(h))
                tape.backward(loss)

            def f():
                xt = T.Tensor(x.data)
                h2 = T.leaky_relu(T.scale(xt, 1.7))
                h2 = T.add_scalar(T.hadamard(h2, T.sigmoid(xt)), 0.3)
                return T.sum_all(T.softplus(h2)).item()

            assert relative_error(x.grad, finite_difference(f, x.data)) < 1e-4


class TestFusedPairwiseLoss:
    def _random_case(self, rng, n=7, d=3):
        z = rng.standard_normal((n, d))
        iu = np.triu_indices(n)
        take = rng.random(iu[0].size) < 0.3
        pos_i = np.concatenate([np.arange(n), iu[0][take]])
        pos_j = np.concatenate([np.arange(n), iu[1][take]])
        uniq = sorted(set(zip(pos_i.tolist(), pos_j.tolist())))
        pos_i = np.array([p[0] for p in uniq], dtype=np.int64)
        pos_j = np.array([p[1] for p in uniq], dtype=np.int64)
        n_pos = int(np.sum(np.where(pos_i == pos_j, 1, 2)))
        w = (n * n - n_pos) / n_pos
        return z, pos_i, pos_j, w

    def test_matches_reference_value_and_grad(self, rng):
        for _ in range(10):
            z, pi, pj, w = self._random_case(rng)
            zt = leaf(z.copy())
            with T.Tape() as tape:
                loss = T.inner_product_bce(zt, pi, pj, w)
                tape.backward(loss)
            ref_loss, ref_grad = _pairloss.reference_loss_and_grad(z, pi, pj, w)
            assert loss.item() == pytest.approx(ref_loss, rel=1e-10)
            assert relative_error(zt.grad, ref_grad) < 1e-10

    def test_finite_difference(self, rng):
        z, pi, pj, w = self._random_case(rng, n=5, d=2)
        zt = leaf(z.copy())
        with T.Tape() as tape:
            loss = T.inner_product_bce(zt, pi, pj, w)
            tape.backward(loss)

        def f():
            return T.inner_product_bce(T.Tensor(zt.data), pi, pj, w).item()

        assert relative_error(zt.grad, finite_difference(f, zt.data)) < 1e-4

    def test_extreme_logits_stay_finite(self):
        z = np.array([[30.0, 0.0], [-30.0, 0.0], [0.0, 30.0]])
        pi = np.array([0, 1, 2], dtype=np.int64)
        pj = np.array([0, 1, 2], dtype=np.int64)
        loss, saved = _pairloss.pairwise_bce_forward(z, pi, pj, 2.0)
        assert np.isfinite(loss)
        grad = _pairloss.pairwise_bce_backward(saved, 1.0)
        assert np.all(np.isfinite(grad))

    def test_empty_positives_rejected(self):
        z = leaf(np.ones((3, 2)))
        empty = np.array([], dtype=np.int64)
        with pytest.raises(ContractError):
            T.inner_product_bce(z, empty, empty, 1.0)


class TestKernelsAgainstNumpy:
    @pytest.mark.skipif(not _pairloss.HAVE_NUMBA, reason="numba unavailable")
    def test_packed_passes_match_numpy(self, rng):
        n = 31
        z = rng.standard_normal((n, 4)) * 3.0
        s_buf = np.zeros((n, n), order="F")
        sv = _pairloss._syrk_upper_view(z, s_buf)
        m = _pairloss.packed_size(n)
        e_pack, sig_pack, sp_pack = np.empty(m), np.empty(m), np.empty(m)
        _pairloss._pass_exp(sv, e_pack)
        _pairloss._pass_sigma(sv, e_pack, sig_pack)
        _pairloss._pass_softplus(sv, e_pack, sp_pack)

        s = z @ z.T
        iu = np.triu_indices(n)
        flat = s[iu]
        assert np.abs(e_pack - np.exp(-np.abs(flat))).max() < 5e-13
        assert np.abs(sig_pack - 1.0 / (1.0 + np.exp(-flat))).max() < 5e-13
        assert np.abs(sp_pack - np.logaddexp(0.0, flat)).max() < 1e-12
        total = _pairloss._tri_weighted_sum(sp_pack, n)
        assert total == pytest.approx(np.logaddexp(0.0, s).sum(), rel=1e-12)

    @pytest.mark.skipif(not _pairloss.HAVE_NUMBA, reason="numba unavailable")
    def test_kernel_extreme_inputs(self):
        vals = np.array([0.0, 1e-300, -1e-300, -37.0, 37.0, -710.0, 710.0, 0.5])
        n = vals.size
        sv = np.zeros((n, n))
        sv[0, :] = vals  # row 0 of the upper triangle carries the cases
        m = _pairloss.packed_size(n)
        e_pack, sig_pack, sp_pack = np.empty(m), np.empty(m), np.empty(m)
        _pairloss._pass_exp(sv, e_pack)
        _pairloss._pass_sigma(sv, e_pack, sig_pack)
        _pairloss._pass_softplus(sv, e_pack, sp_pack)
        assert np.abs(e_pack[:n] - np.exp(-np.minimum(np.abs(vals), 700))).max() < 1e-13
        with np.errstate(over="ignore"):
            ref_sig = 1.0 / (1.0 + np.exp(-vals))
        assert np.abs(sig_pack[:n] - ref_sig).max() < 1e-13
        assert np.abs(sp_pack[:n] - np.logaddexp(0.0, vals)).max() < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=9))
def test_softplus_sigmoid_consistency(vals):
    # d softplus / dx = sigmoid, and both stay finite
    x = T.Tensor([vals], requires_grad=True)
    with T.Tape() as tape:
        loss = T.sum_all(T.softplus(x))
        tape.backward(loss)
    assert np.allclose(x.grad, 1.0 / (1.0 + np.exp(-np.asarray([vals]))))


@settings(max_examples=40, deadline=None)
@given(
    st.integers(1, 5), st.integers(1, 5), st.integers(1, 5),
    st.integers(0, 2 ** 31 - 1),
)
def test_matmul_matches_numpy(m, k, n, seed):
    r = np.random.default_rng(seed)
    a, b = r.standard_normal((m, k)), r.standard_normal((k, n))
    assert np.allclose(T.matmul(T.Tensor(a), T.Tensor(b)).data, a @ b, atol=1e-12)


def test_replay_determinism(rng):
    x0 = rng.standard_normal((4, 3))
    results = []
    for _ in range(2):
        x = leaf(x0.copy())
        with T.Tape() as tape:
            h = T.tanh(T.matmul(x, T.Tensor(np.ones((3, 2)))))
            loss = T.sum_all(h)
            tape.backward(loss)
        results.append((loss.item(), x.grad.copy()))
    assert results[0][0] == results[1][0]
    assert np.array_equal(results[0][1], results[1][1])
