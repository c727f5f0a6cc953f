"""Autodiff engine: op semantics, gradient checks, invariants."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from energytl.errors import ConfigError, ContractError, DimensionError, NumericError
from energytl.gradcheck import central_diff, max_rel_error
from energytl.tensor import Tensor, dropout, layer_norm, matmul, mse_loss, patchify, softmax

N_GRAD_TRIALS = 50
GRAD_TOL = 1e-5


def _away_from_kink(rng, shape, margin=0.05):
    x = rng.normal(size=shape)
    return x + np.sign(x) * margin


# --- matmul -------------------------------------------------------------------


def test_matmul_identity():
    eye = Tensor(np.eye(2))
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(matmul(eye, m).data, m.data)


def test_matmul_annihilator():
    eye = Tensor(np.eye(2))
    zero = Tensor(np.zeros((2, 2)))
    np.testing.assert_array_equal(matmul(eye, zero).data, np.zeros((2, 2)))


def triple_loop_matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for p in range(k):
                out[i, j] += a[i, p] * b[p, j]
    return out


def test_matmul_against_triple_loop_oracle():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, triple_loop_matmul(a, b), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    m=st.integers(1, 16),
    k=st.integers(1, 16),
    n=st.integers(1, 16),
    seed=st.integers(0, 2**31 - 1),
)
def test_matmul_oracle_all_shapes_to_16(m, k, n, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(m, k))
    b = rng.normal(size=(k, n))
    np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, triple_loop_matmul(a, b), atol=1e-12)


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


# --- softmax ------------------------------------------------------------------


def test_softmax_symmetry():
    np.testing.assert_allclose(softmax(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])


def test_softmax_stabilized_no_overflow():
    out = softmax(Tensor([[1000.0, 0.0]])).data
    assert np.isfinite(out).all()
    np.testing.assert_allclose(out, [[1.0, 0.0]], atol=1e-12)


def test_softmax_matches_direct_formula():
    rng = np.random.default_rng(7)
    x = rng.normal(size=8)
    expected = np.exp(x) / np.exp(x).sum()
    np.testing.assert_allclose(softmax(Tensor(x[None, :])).data[0], expected, atol=1e-10)


def test_softmax_nan_input_raises():
    with pytest.raises(NumericError):
        softmax(Tensor([[np.nan, 1.0]]))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 10), st.integers(0, 2**31 - 1))
def test_softmax_sums_to_one_and_permutation_equivariant(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n) * 5.0
    out = softmax(Tensor(x[None, :])).data[0]
    assert abs(out.sum() - 1.0) < 1e-6
    assert (out >= 0).all()
    perm = rng.permutation(n)
    out_perm = softmax(Tensor(x[perm][None, :])).data[0]
    np.testing.assert_allclose(out_perm, out[perm], atol=1e-12)


# --- elementwise suite ----------------------------------------------------------


def test_layer_norm_constant_vector_is_zero_pre_affine():
    out = layer_norm(Tensor([[3.0, 3.0, 3.0, 3.0]]))
    np.testing.assert_allclose(out.data, np.zeros((1, 4)), atol=1e-10)


def test_dropout_rate_zero_is_identity():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    rng = np.random.default_rng(0)
    out = dropout(x, 0.0, True, rng)
    np.testing.assert_array_equal(out.data, x.data)


def test_dropout_eval_mode_is_identity():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    out = dropout(x, 0.5, False, np.random.default_rng(0))
    np.testing.assert_array_equal(out.data, x.data)


def test_dropout_bad_rate():
    with pytest.raises(ConfigError):
        dropout(Tensor([1.0]), 1.0, True, np.random.default_rng(0))


def test_relu():
    np.testing.assert_array_equal(Tensor([-1.0, 2.0]).relu().data, [0.0, 2.0])


def test_add_incompatible_shapes():
    with pytest.raises(DimensionError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((4, 5)))


# --- backward ------------------------------------------------------------------


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_sum_of_squares():
    x = Tensor([1.0, 2.0], requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_allclose(x.grad, [2.0, 4.0])


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        (x * x).backward()


def test_backward_attention_block_matches_finite_differences():
    # one-layer attention on a 4x8 input: project, attend, reduce
    rng = np.random.default_rng(42)
    x_arr = rng.normal(size=(4, 8))
    w_arr = rng.normal(size=(8, 8)) * 0.3

    x = Tensor(x_arr, requires_grad=True)
    w = Tensor(w_arr, requires_grad=True)

    def loss_value():
        xt, wt = Tensor(x.data), Tensor(w.data)
        q = matmul(xt, wt)
        scores = matmul(q, q.transpose((1, 0))) * (1.0 / np.sqrt(8.0))
        return (matmul(softmax(scores), xt) * Tensor(weights)).sum().item()

    weights = rng.normal(size=(4, 8))
    q = matmul(x, w)
    scores = matmul(q, q.transpose((1, 0))) * (1.0 / np.sqrt(8.0))
    loss = (matmul(softmax(scores), x) * Tensor(weights)).sum()
    loss.backward()

    for tensor in (x, w):
        numeric = central_diff(loss_value, tensor.data, h=1e-4)
        assert max_rel_error(tensor.grad, numeric) < 1e-3


# --- per-op gradient checks vs central differences -----------------------------


def scalarize(out, w):
    return (out * Tensor(w)).sum()


OP_CASES = {
    "add": lambda xs: xs[0] + xs[1],
    "sub": lambda xs: xs[0] - xs[1],
    "mul": lambda xs: xs[0] * xs[1],
    "matmul": lambda xs: matmul(xs[0], xs[1]),
    "relu": lambda xs: xs[0].relu(),
    "gelu": lambda xs: xs[0].gelu(),
    "softmax": lambda xs: softmax(xs[0], axis=-1),
    "layer_norm": lambda xs: layer_norm(xs[0], xs[1], xs[2]),
    "patchify": lambda xs: patchify(xs[0], 3, 2),
    "mean": lambda xs: xs[0].mean(axis=0),
    "transpose": lambda xs: xs[0].transpose((1, 0)),
}


def _inputs_for(op, rng):
    if op in ("add", "sub", "mul"):
        return [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))]
    if op == "matmul":
        return [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))]
    if op == "relu":
        return [_away_from_kink(rng, (3, 4))]
    if op == "layer_norm":
        return [rng.normal(size=(3, 6)), rng.normal(size=6), rng.normal(size=6)]
    if op == "patchify":
        return [rng.normal(size=9)]
    return [rng.normal(size=(3, 4))]


@pytest.mark.parametrize("op", sorted(OP_CASES))
def test_op_gradients_match_central_differences(op):
    fn = OP_CASES[op]
    rng = np.random.default_rng(hash(op) % (2**32))
    for _ in range(N_GRAD_TRIALS):
        arrays = _inputs_for(op, rng)
        tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
        w = rng.normal(size=fn([Tensor(a) for a in arrays]).data.shape)

        loss = scalarize(fn(tensors), w)
        loss.backward()

        for t_idx, t in enumerate(tensors):
            def loss_value(idx=t_idx):
                fresh = [Tensor(t2.data) for t2 in tensors]
                return scalarize(fn(fresh), w).item()

            numeric = central_diff(loss_value, t.data, h=1e-4)
            analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
            assert max_rel_error(analytic, numeric) < GRAD_TOL, f"{op} input {t_idx}"


def test_dropout_gradient_with_fixed_mask():
    rng = np.random.default_rng(3)
    for _ in range(N_GRAD_TRIALS):
        x_arr = rng.normal(size=(4, 5))
        w = rng.normal(size=(4, 5))
        seed = int(rng.integers(0, 2**31))

        def run(arr):
            t = Tensor(arr, requires_grad=True)
            out = dropout(t, 0.4, True, np.random.default_rng(seed))
            return t, scalarize(out, w)

        t, loss = run(x_arr.copy())
        loss.backward()

        holder = x_arr.copy()

        def loss_value():
            return run(holder)[1].item()

        numeric = central_diff(loss_value, holder, h=1e-4)
        assert max_rel_error(t.grad, numeric) < GRAD_TOL


# --- purity / determinism -------------------------------------------------------


def test_forward_without_dropout_is_pure():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(5, 6))
    w = rng.normal(size=(6, 6))

    def run():
        out = layer_norm(softmax(matmul(Tensor(x), Tensor(w)), axis=-1).gelu())
        return out.data.tobytes()

    assert run() == run()


def test_op_output_nan_guard():
    big = Tensor(np.array([1e308]))
    with np.errstate(over="ignore"), pytest.raises(NumericError):
        big * big  # overflows to inf


def test_mse_loss_scalar_value():
    pred = Tensor([[1.0, 2.0]])
    target = np.array([[0.0, 0.0]])
    assert mse_loss(pred, target).item() == pytest.approx(2.5)
