import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from tabxplain.errors import GraphCycle, ShapeMismatch, SwitchOutOfRange
from tabxplain.numeric import (AdamState, GradTape, Tensor, adam_step, center_switches, checkpoint,
                               glorot_init, ops)
from tabxplain.numeric.optim import glorot_bound
from tabxplain.numeric.tensor import emit

import gradcheck
from oracles import conv1d_loops, maxpool_loops

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


# conv1d

def test_conv1d_hand_example():
    y = ops.conv1d(Tensor([[1.0, 2.0, 3.0]]), Tensor([[[1.0, 0.0, -1.0]]]), Tensor([0.0]))
    assert y.value.tolist() == [[-2.0]]


def test_conv1d_identity_kernel_adds_bias():
    x = np.array([[0.5, -1.0, 2.0, 4.0]])
    y = ops.conv1d(Tensor(x), Tensor([[[1.0]]]), Tensor([0.25]))
    np.testing.assert_array_equal(y.value, x + 0.25)


def test_conv1d_zero_kernel_gives_bias():
    y = ops.conv1d(Tensor(np.ones((2, 7))), Tensor(np.zeros((3, 2, 3))), Tensor([5.0, 5.0, 5.0]))
    assert np.all(y.value == 5.0)


@pytest.mark.parametrize("stride,padding", [(1, 0), (2, 1), (3, 2)])
def test_conv1d_matches_loop_oracle(stride, padding):
    rng = np.random.default_rng(stride * 10 + padding)
    x, W, b = rng.normal(size=(3, 13)), rng.normal(size=(4, 3, 5)), rng.normal(size=4)
    got = ops.conv1d(Tensor(x), Tensor(W), Tensor(b), stride, padding).value
    np.testing.assert_allclose(got, conv1d_loops(x, W, b, stride, padding), atol=1e-12)
    assert got.shape[1] == (13 + 2 * padding - 5) // stride + 1


def test_conv1d_batched_equals_per_row():
    rng = np.random.default_rng(3)
    x, W, b = rng.normal(size=(4, 2, 9)), rng.normal(size=(3, 2, 3)), rng.normal(size=3)
    batch = ops.conv1d(Tensor(x), Tensor(W), Tensor(b), 2, 1).value
    for i in range(4):
        np.testing.assert_allclose(batch[i], ops.conv1d(Tensor(x[i]), Tensor(W), Tensor(b), 2, 1).value)


def test_conv1d_kernel_longer_than_signal():
    with pytest.raises(ShapeMismatch):
        ops.conv1d(Tensor(np.ones((1, 2))), Tensor(np.ones((1, 1, 3))), Tensor([0.0]))


# transposed conv

@pytest.mark.parametrize("seed", range(10))
def test_transposed_conv_is_adjoint(seed):
    rng = np.random.default_rng(seed)
    stride, pad, width = 1 + seed % 2, seed % 3, 3
    x = rng.normal(size=(2, 5))
    W = rng.normal(size=(3, 2, width))
    y = rng.normal(size=(3, ops.conv_out_len(5, width, stride, pad)))
    lhs = np.sum(ops.conv1d(Tensor(x), Tensor(W), Tensor(np.zeros(3)), stride, pad).value * y)
    rhs = np.sum(x * ops.transposed_conv1d(Tensor(y), Tensor(W), Tensor(np.zeros(2)), stride, pad, 5).value)
    assert abs(lhs - rhs) <= 1e-10


def test_transposed_conv_unit_kernel_is_identity():
    y = np.array([[1.0, -2.0, 3.0]])
    out = ops.transposed_conv1d(Tensor(y), Tensor([[[1.0]]]), Tensor([0.0])).value
    np.testing.assert_array_equal(out, y)


def test_transposed_conv_zero_input_gives_bias():
    out = ops.transposed_conv1d(Tensor(np.zeros((2, 4))), Tensor(np.ones((2, 3, 3))), Tensor([1.0, 2.0, 3.0]))
    np.testing.assert_array_equal(out.value, np.repeat([[1.0], [2.0], [3.0]], 6, axis=1))


def test_transposed_conv_rejects_bad_out_len():
    with pytest.raises(ShapeMismatch):
        ops.transposed_conv1d(Tensor(np.zeros((1, 4))), Tensor(np.ones((1, 1, 3))), Tensor([0.0]), out_len=9)


# pooling

def test_maxpool_example():
    out, sw = ops.maxpool(Tensor([[3.0, 1.0, 4.0, 1.0]]), 2)
    assert out.value.tolist() == [[3.0, 4.0]]
    assert sw.indices.tolist() == [[0, 2]]


def test_maxpool_ties_pick_first():
    _, sw = ops.maxpool(Tensor(np.full((1, 6), 2.0)), 3)
    assert sw.indices.tolist() == [[0, 3]]


def test_maxpool_global_window():
    out, sw = ops.maxpool(Tensor([[1.0, 9.0, 2.0]]), 3)
    assert out.value.tolist() == [[9.0]] and sw.indices.tolist() == [[1]]


def test_maxpool_partial_window_never_selects_padding():
    out, sw = ops.maxpool(Tensor([[-5.0, -6.0, -7.0]]), 2)
    assert out.value.tolist() == [[-5.0, -7.0]]
    assert sw.indices.tolist() == [[0, 2]]


def test_unpool_examples():
    pooled, sw = ops.maxpool(Tensor([[3.0, 1.0, 4.0, 1.0]]), 2)
    assert ops.unpool(pooled, sw, 4).value.tolist() == [[3.0, 0.0, 4.0, 0.0]]
    assert ops.unpool(Tensor(np.zeros((1, 2))), sw, 4).value.tolist() == [[0.0] * 4]
    single = ops.Switches(np.array([[2]]), 4, 4)
    assert ops.unpool(Tensor([[7.0]]), single, 4).value.tolist() == [[0.0, 0.0, 7.0, 0.0]]


def test_unpool_out_of_range():
    with pytest.raises(SwitchOutOfRange):
        ops.unpool(Tensor([[1.0]]), ops.Switches(np.array([[5]]), 4, 4), 4)
    with pytest.raises(SwitchOutOfRange):
        ops.unpool(Tensor([[1.0, 2.0]]), ops.Switches(np.array([[0]]), 2, 2), 2)


def test_center_switches():
    sw = center_switches((1, 3), 2, 5)
    assert sw.indices.tolist() == [[0, 2, 4]]


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 12)), elements=finite),
       st.integers(1, 5))
def test_maxpool_matches_loop_oracle(x, window):
    out, sw = ops.maxpool(Tensor(x), window)
    vals, idx = maxpool_loops(x, window)
    np.testing.assert_array_equal(out.value, vals)
    np.testing.assert_array_equal(sw.indices, idx)
    back = ops.unpool(out, sw, x.shape[1]).value
    mask = np.zeros_like(x, dtype=bool)
    np.put_along_axis(mask, idx, True, axis=1)
    np.testing.assert_array_equal(back[mask], x[mask])
    assert np.all(back[~mask] == 0)


# activations

def test_softmax_closed_forms():
    np.testing.assert_allclose(ops.softmax_np(np.array([2.0, 2.0, 2.0])), [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(ops.softmax_np(np.array([0.0, np.log(2.0)])), [1 / 3, 2 / 3], atol=1e-15)


def test_elu_and_sigmoid_at_zero():
    assert ops.elu_np(np.array(0.0)) == 0.0
    assert ops.sigmoid_np(np.array(0.0)) == 0.5


@given(hnp.arrays(np.float64, st.integers(1, 20), elements=finite), st.floats(-100, 100))
def test_softmax_sums_to_one_and_is_shift_invariant(v, c):
    p = ops.softmax_np(v)
    assert abs(p.sum() - 1.0) <= 1e-12
    np.testing.assert_allclose(ops.softmax_np(v + c), p, atol=1e-12)


@given(hnp.arrays(np.float64, st.integers(1, 20), elements=st.floats(-800, 800)))
def test_sigmoid_stable_for_large_inputs(v):
    s = ops.sigmoid_np(v)
    assert np.all(np.isfinite(s)) and np.all((s >= 0) & (s <= 1))


def test_elu_negative_branch():
    np.testing.assert_allclose(ops.elu_np(np.array([-1.0, 2.0])), [np.exp(-1) - 1, 2.0])


# tape

def test_sum_gradient_is_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    with GradTape() as tape:
        y = ops.sum(x)
    (g,) = tape.backward(y, [x])
    np.testing.assert_array_equal(g, np.ones((2, 3)))


def test_unused_tensor_gets_zero_gradient():
    x, unused = Tensor([1.0, 2.0]), Tensor(np.ones((3, 3)))
    with GradTape() as tape:
        y = ops.sum(ops.square(x))
    gx, gu = tape.backward(y, [x, unused])
    np.testing.assert_array_equal(gx, [2.0, 4.0])
    np.testing.assert_array_equal(gu, np.zeros((3, 3)))


def test_non_scalar_loss_rejected():
    x = Tensor([1.0, 2.0])
    with GradTape() as tape:
        y = ops.square(x)
    with pytest.raises(ShapeMismatch):
        tape.backward(y, [x])


def test_graph_cycle_detected():
    x = Tensor([1.0])
    late = Tensor([0.0])
    with GradTape() as tape:
        y = emit(np.array([2.0]), (late,), lambda g: (g,))
        tape.record(late, (x,), lambda g: (g,))  # produced after its consumer
    with pytest.raises(GraphCycle):
        tape.backward(y, [x])


def test_double_record_rejected():
    with GradTape() as tape:
        y = emit(np.array([1.0]), (), lambda g: ())
        with pytest.raises(GraphCycle):
            tape.record(y, (), lambda g: ())


def test_gradient_accumulates_over_reuse():
    x = Tensor([3.0])
    with GradTape() as tape:
        y = ops.sum(ops.mul(x, x))
    (g,) = tape.backward(y, [x])
    assert g.tolist() == [6.0]


def test_maxpool_gradient_routes_through_switches():
    x = Tensor([[1.0, 5.0, 2.0, 0.0]])
    with GradTape() as tape:
        out, _ = ops.maxpool(x, 2)
        y = ops.sum(out)
    (g,) = tape.backward(y, [x])
    assert g.tolist() == [[0.0, 1.0, 1.0, 0.0]]


@pytest.mark.parametrize("seed", [0, 1])
def test_primitive_gradients_match_finite_differences(seed):
    for name, build, arrays in gradcheck.primitive_cases(seed):
        assert gradcheck.tape_vs_fd(build, arrays, seed) <= 1e-4, name


def test_ops_outside_tape_record_nothing():
    x = Tensor([1.0])
    with GradTape() as tape:
        pass
    ops.square(x)
    assert len(tape) == 0


# Adam and Glorot

def test_adam_zero_gradient_keeps_params():
    p = [np.array([1.0, -2.0])]
    new, st_ = adam_step(p, [np.zeros(2)], AdamState.zeros_like(p))
    np.testing.assert_array_equal(new[0], p[0])
    assert st_.t == 1


@given(hnp.arrays(np.float64, st.integers(1, 8), elements=st.floats(1e-3, 1e3) | st.floats(-1e3, -1e-3)))
def test_adam_first_step_moves_by_lr(g):
    p = [np.zeros_like(g)]
    new, _ = adam_step(p, [g], AdamState.zeros_like(p), lr=1e-3)
    # step 1: m_hat = g, v_hat = g^2, so |update| = lr * |g| / (|g| + eps)
    np.testing.assert_allclose(np.abs(new[0]), 1e-3 * np.abs(g) / (np.abs(g) + 1e-8), rtol=1e-12)


def test_adam_deterministic_trajectory():
    def run():
        p = [np.array([1.0, 2.0])]
        s = AdamState.zeros_like(p)
        for k in range(20):
            p, s = adam_step(p, [np.sin(p[0] + k)], s)
        return p[0]
    assert run().tobytes() == run().tobytes()


def test_glorot_bounds_and_determinism():
    w = glorot_init((16, 8, 5), 3)
    assert np.abs(w).max() <= glorot_bound((16, 8, 5))
    assert glorot_bound((4, 6)) == np.sqrt(6 / 10)
    np.testing.assert_array_equal(w, glorot_init((16, 8, 5), 3))


def test_glorot_sample_mean_near_zero():
    w = glorot_init((400, 250), 0)
    bound = glorot_bound((400, 250))
    sigma = bound / np.sqrt(3)
    assert abs(w.mean()) <= 3 * sigma / np.sqrt(w.size)


# checkpoint

@given(hnp.arrays(np.float64, hnp.array_shapes(max_dims=3, max_side=4),
                  elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_checkpoint_round_trip_bit_exact(a):
    back = checkpoint.loads(checkpoint.dumps({"w": a}))["w"]
    assert back.shape == a.shape and back.tobytes() == a.tobytes()


def test_checkpoint_layout():
    doc = json.loads(checkpoint.dumps({"b": np.array([0.1, 2.0])}))
    assert doc == {"b": {"shape": [2], "values": [0.1, 2.0]}}
