"""Tensor engine: op semantics, reverse-mode gradients, optimizer."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import max_rel_error
from vitalcast.engine import (Adam, DimensionError, Tensor, activation, concat,
                              elu, finite_difference_gradient, glu,
                              interpolate_linear, layer_norm, linear,
                              masked_softmax, max_pool_1d, relu, sigmoid,
                              softmax, stack)


# -- linear ------------------------------------------------------------------


def test_linear_identity_weights():
    out = linear(Tensor([[1.0, 2.0]]), Tensor(np.eye(2)), Tensor([0.0, 0.0]))
    assert np.array_equal(out.data, [[1.0, 2.0]])


def test_linear_direct_arithmetic():
    out = linear(Tensor([[1.0, 1.0]]), Tensor([[2.0], [3.0]]), Tensor([1.0]))
    assert np.array_equal(out.data, [[6.0]])


def test_linear_shape_mismatch_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(1, 3\).*\(2, 2\)"):
        linear(Tensor([[1.0, 2.0, 3.0]]), Tensor(np.eye(2)), Tensor([0.0, 0.0]))


def test_linear_weight_gradient_matches_fd():
    x = np.array([[1.0, 2.0]])
    w0 = np.array([[0.5], [-0.25]])
    b0 = np.array([0.1])

    w = Tensor(w0, requires_grad=True)
    loss = linear(Tensor(x), w, Tensor(b0)).sum()
    loss.backward()

    def f(values):
        return linear(Tensor(x), Tensor(values), Tensor(b0)).sum().item()

    fd = finite_difference_gradient(f, w0, 1e-6)
    assert np.allclose(w.grad, [[1.0], [2.0]])
    assert max_rel_error(w.grad, fd) < 1e-6


# -- activations ----------------------------------------------------------------


def test_elu_boundary_and_negative_branch():
    assert elu(Tensor([0.0])).data[0] == 0.0
    assert np.isclose(elu(Tensor([-1.0])).data[0], -0.6321205588285577)


def test_relu_definition():
    assert np.array_equal(relu(Tensor([-2.0, 3.0])).data, [0.0, 3.0])


def test_unknown_activation_rejected():
    with pytest.raises(ValueError, match="tanhish"):
        activation(Tensor([0.0]), "tanhish")


# -- glu --------------------------------------------------------------------------


def test_glu_zero_gate_halves_value():
    out = glu(Tensor([[3.0, 0.0]]))
    assert np.isclose(out.data[0, 0], 1.5)


def test_glu_saturated_gate_passes_value():
    out = glu(Tensor([[1.0, 50.0]]))
    assert np.isclose(out.data[0, 0], 1.0, atol=1e-12)


def test_glu_direct_evaluation():
    out = glu(Tensor([[2.0, 0.5]]))
    assert np.isclose(out.data[0, 0], 1.2449186624037092)


def test_glu_odd_dimension_rejected():
    with pytest.raises(DimensionError):
        glu(Tensor([[1.0, 2.0, 3.0]]))


# -- layer norm ----------------------------------------------------------------------


def test_layer_norm_constant_row_collapses_to_shift():
    one = Tensor(np.ones(3))
    zero = Tensor(np.zeros(3))
    out = layer_norm(Tensor([[4.0, 4.0, 4.0]]), one, zero)
    assert np.allclose(out.data, 0.0)
    shifted = layer_norm(Tensor([[4.0, 4.0, 4.0]]), Tensor(np.zeros(3)),
                         Tensor(np.full(3, 7.0)))
    assert np.allclose(shifted.data, 7.0)


def test_layer_norm_unit_variance_row():
    out = layer_norm(Tensor([[1.0, -1.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
    assert np.allclose(out.data, [[0.9999950000374997, -0.9999950000374997]])


# -- pooling and interpolation -----------------------------------------------------------


def test_max_pool_definition():
    assert np.array_equal(max_pool_1d(Tensor([1.0, 3.0, 2.0, 4.0]), 2).data, [3.0, 4.0])


def test_max_pool_kernel_one_is_identity():
    series = np.array([0.3, -1.2, 5.0, 0.0])
    assert np.array_equal(max_pool_1d(Tensor(series), 1).data, series)


def test_max_pool_partial_final_window():
    assert np.array_equal(max_pool_1d(Tensor([5.0, 1.0, 2.0]), 2).data, [5.0, 2.0])


def test_max_pool_rejects_bad_kernel():
    with pytest.raises(ValueError):
        max_pool_1d(Tensor([1.0]), 0)


def test_max_pool_tie_routes_gradient_to_first_index():
    x = Tensor(np.array([2.0, 2.0]), requires_grad=True)
    max_pool_1d(x, 2).sum().backward()
    assert np.array_equal(x.grad, [1.0, 0.0])


def test_interpolate_midpoint_of_line():
    assert np.allclose(interpolate_linear(Tensor([0.0, 2.0]), 3).data, [0.0, 1.0, 2.0])


def test_interpolate_single_knot_broadcasts():
    assert np.array_equal(interpolate_linear(Tensor([4.2]), 5).data, np.full(5, 4.2))


def test_interpolate_piecewise_form():
    out = interpolate_linear(Tensor([0.0, 3.0, 0.0]), 5)
    assert np.allclose(out.data, [0.0, 1.5, 3.0, 1.5, 0.0])


def test_interpolate_same_length_is_identity():
    series = np.array([0.1, -2.0, 3.3, 0.7])
    assert np.array_equal(interpolate_linear(Tensor(series), 4).data, series)


# -- softmax ---------------------------------------------------------------------------


def test_softmax_symmetry_and_saturation():
    assert np.allclose(softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    sat = softmax(Tensor([500.0, 0.0])).data
    assert np.isclose(sat[0], 1.0) and sat[1] < 1e-12


def test_softmax_direct_evaluation():
    out = softmax(Tensor([1.0, 2.0, 3.0])).data
    assert np.allclose(out, [0.09003057317038046, 0.24472847105479767,
                             0.6652409557748219])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(min_value=-50, max_value=50), min_size=1, max_size=8))
def test_softmax_rows_are_distributions(values):
    out = softmax(Tensor(np.array(values))).data
    assert (out >= 0.0).all()
    assert abs(out.sum() - 1.0) < 1e-12


def test_masked_softmax_exact_zero_on_masked_positions():
    mask = np.array([True, False, True])
    out = masked_softmax(Tensor([1.0, 100.0, 2.0]), mask).data
    assert out[1] == 0.0
    assert abs(out.sum() - 1.0) < 1e-12


def test_masked_softmax_rejects_fully_masked_row():
    with pytest.raises(ValueError):
        masked_softmax(Tensor([1.0, 2.0]), np.array([False, False]))


# -- backward ----------------------------------------------------------------------------


def test_backward_of_sum_is_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    x.sum().backward()
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_backward_power_rule():
    x = Tensor(3.0, requires_grad=True)
    (x ** 2).backward()
    assert np.isclose(x.grad, 6.0)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_backward_sums_contributions_from_two_consumers():
    x0 = np.array([0.7, -0.3])
    x = Tensor(x0, requires_grad=True)
    y = x * x + x.exp()  # x feeds both consumers
    y.sum().backward()

    fd = finite_difference_gradient(
        lambda v: float((v * v + np.exp(v)).sum()), x0, 1e-6)
    assert max_rel_error(x.grad, fd) < 1e-6


def test_composite_mlp_gradient_matches_fd():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 3))
    w1 = rng.normal(size=(3, 4))
    b1 = rng.normal(size=4)
    w2 = rng.normal(size=(4, 1))
    b2 = rng.normal(size=1)

    def forward(w1v):
        h = relu(linear(Tensor(x), Tensor._lift(w1v), Tensor(b1)))
        return linear(h, Tensor(w2), Tensor(b2)).sum()

    w1_t = Tensor(w1, requires_grad=True)
    forward(w1_t).backward()
    fd = finite_difference_gradient(lambda v: forward(Tensor(v)).item(), w1, 1e-5)
    assert max_rel_error(w1_t.grad, fd) < 1e-4


OPS = [
    ("add", lambda a, b: a + b, 2),
    ("mul", lambda a, b: a * b, 2),
    ("sub", lambda a, b: a - b, 2),
    ("div", lambda a, b: a / (b * b + 1.0), 2),
    ("matmul", lambda a, b: a.reshape(2, 3) @ b.reshape(3, 2), 2),
    ("pow", lambda a: (a * a + 1.0) ** 1.5, 1),
    ("exp", lambda a: a.exp(), 1),
    ("log", lambda a: (a * a + 1.0).log(), 1),
    ("tanh", lambda a: a.tanh(), 1),
    ("sigmoid", lambda a: sigmoid(a), 1),
    ("elu", lambda a: elu(a), 1),
    ("relu", lambda a: relu(a), 1),
    ("glu", lambda a: glu(a.reshape(3, 2)), 1),
    ("softmax", lambda a: softmax(a.reshape(2, 3)), 1),
    ("layer_norm", lambda a: layer_norm(a.reshape(2, 3), Tensor(np.ones(3)),
                                        Tensor(np.zeros(3))), 1),
    ("max_pool", lambda a: max_pool_1d(a, 2), 1),
    ("interpolate", lambda a: interpolate_linear(a, 11), 1),
    ("mean", lambda a: a.reshape(2, 3).mean(axis=1), 1),
    ("slice", lambda a: a[1:4], 1),
    ("swapaxes", lambda a: a.reshape(2, 3).swapaxes(0, 1), 1),
    ("concat", lambda a, b: concat([a, b], axis=0), 2),
    ("stack", lambda a, b: stack([a, b], axis=0), 2),
]


@pytest.mark.parametrize("name,op,arity", OPS, ids=[o[0] for o in OPS])
def test_op_gradients_match_finite_differences(name, op, arity):
    # ten random points per op, as squared-sum scalarization
    rng = np.random.default_rng(hash(name) % 2 ** 32)
    worst = 0.0
    for _ in range(10):
        args = [rng.uniform(0.2, 1.5, size=6) * rng.choice([-1.0, 1.0], size=6)
                for _ in range(arity)]
        tensors = [Tensor(a, requires_grad=True) for a in args]
        out = op(*tensors)
        (out * out).sum().backward()
        for slot in range(arity):
            def f(v, slot=slot):
                probe = [Tensor(a) for a in args]
                probe[slot] = Tensor(v)
                o = op(*probe)
                return (o * o).sum().item()

            fd = finite_difference_gradient(f, args[slot], 1e-5)
            worst = max(worst, max_rel_error(tensors[slot].grad, fd))
    assert worst < 1e-4, f"{name}: worst relative error {worst}"


def test_ops_are_pure_and_bit_identical():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(3, 4))
    a = softmax(Tensor(x)).data
    b = softmax(Tensor(x)).data
    assert np.array_equal(a, b)
    p1 = max_pool_1d(Tensor(x), 3).data
    p2 = max_pool_1d(Tensor(x), 3).data
    assert np.array_equal(p1, p2)


def test_constant_inputs_build_no_graph():
    out = Tensor([1.0, 2.0]) * Tensor([3.0, 4.0])
    assert not out.requires_grad and out._rule is None


# -- optimizer ------------------------------------------------------------------------


def test_adam_zero_gradient_leaves_parameter_unchanged():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam([p], lr=0.1)
    p.grad = np.zeros(2)
    opt.step()
    assert np.array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_moves_by_lr_sign():
    p = Tensor(np.array([1.0, 1.0]), requires_grad=True)
    opt = Adam([p], lr=0.05)
    p.grad = np.array([0.3, -2.0])
    opt.step()
    # bias-corrected first step is -lr * g / (|g| + eps) ~ -lr * sign(g)
    assert np.allclose(p.data, [1.0 - 0.05, 1.0 + 0.05], atol=1e-6)
    assert opt.step_count == 1


def test_adam_is_deterministic():
    def run():
        p = Tensor(np.array([0.5, -0.5]), requires_grad=True)
        opt = Adam([p], lr=0.01)
        for step in range(5):
            p.grad = np.array([0.1 * (step + 1), -0.2])
            opt.step()
        return p.data.copy()

    assert np.array_equal(run(), run())


# -- finite differences -----------------------------------------------------------------


def test_fd_gradient_of_sum_of_squares():
    g = finite_difference_gradient(lambda v: float((v * v).sum()),
                                   np.array([1.0, 2.0]), 1e-6)
    assert np.allclose(g, [2.0, 4.0], atol=1e-6)


def test_fd_gradient_of_constant_is_zero():
    g = finite_difference_gradient(lambda v: 3.0, np.array([1.0, 2.0]))
    assert np.array_equal(g, [0.0, 0.0])


def test_fd_rejects_nonpositive_step():
    with pytest.raises(ValueError):
        finite_difference_gradient(lambda v: 0.0, np.zeros(1), 0.0)
