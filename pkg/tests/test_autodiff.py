import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tmrn import autodiff as ad
from tmrn.autodiff import DimensionError, GraphError, NonFiniteError, Tensor, finite_diff_check


def rand(rng, *shape, grad=True, name=""):
    return Tensor(rng.standard_normal(shape), requires_grad=grad, name=name)


# matmul -----------------------------------------------------------------------


def test_matmul_identity():
    eye = Tensor(np.eye(2))
    np.testing.assert_array_equal(ad.matmul(eye, eye).data, np.eye(2))


def test_matmul_hand_product():
    out = ad.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_matmul_zero_annihilates():
    rng = np.random.default_rng(0)
    out = ad.matmul(Tensor(np.zeros((3, 4))), rand(rng, 4, 2))
    assert out.shape == (3, 2)
    assert not out.data.any()


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_batched_against_loop():
    rng = np.random.default_rng(1)
    a, b = rand(rng, 3, 2, 4), rand(rng, 3, 4, 5)
    out = ad.matmul(a, b)
    for i in range(3):
        np.testing.assert_allclose(out.data[i], a.data[i] @ b.data[i], rtol=0, atol=1e-14)


# softmax ----------------------------------------------------------------------


def test_softmax_symmetric():
    np.testing.assert_array_equal(ad.softmax_rows(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])


def test_softmax_values():
    # mpmath, 30 digits
    out = ad.softmax_rows(Tensor([[1.0, 2.0, 3.0]])).data
    np.testing.assert_allclose(out, [[0.0900305731704, 0.244728471055, 0.665240955775]], rtol=0, atol=1e-12)


def test_softmax_large_inputs_do_not_overflow():
    np.testing.assert_array_equal(ad.softmax_rows(Tensor([[1000.0, 1000.0]])).data, [[0.5, 0.5]])


def test_softmax_mask_gives_zero_weight():
    out = ad.softmax_rows(Tensor([[1.0, 5.0, 2.0]]), mask=np.array([[True, False, True]])).data
    assert out[0, 1] == 0.0
    np.testing.assert_allclose(out[0, [0, 2]], np.exp([1, 2]) / np.exp([1, 2]).sum(), atol=1e-15)


def test_softmax_fully_masked_row_rejected():
    with pytest.raises(DimensionError):
        ad.softmax_rows(Tensor([[1.0, 2.0]]), mask=np.array([[False, False]]))


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=7).map(tuple),
        min_size=1,
        max_size=5,
    ).filter(lambda rows: len({len(r) for r in rows}) == 1)
)
def test_softmax_rows_sum_to_one(rows):
    out = ad.softmax_rows(Tensor(np.array(rows))).data
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, rtol=0, atol=1e-12)


# layer norm -------------------------------------------------------------------


def test_layer_norm_constant_row_maps_to_beta():
    out = ad.layer_norm(Tensor([[5.0, 5.0, 5.0]]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
    np.testing.assert_array_equal(out.data, [[0.0, 0.0, 0.0]])


def test_layer_norm_closed_form():
    out = ad.layer_norm(Tensor([[1.0, 2.0, 3.0]]), Tensor(np.ones(3)), Tensor(np.zeros(3)), eps=0.0)
    # mean 2, population std sqrt(2/3)
    np.testing.assert_allclose(out.data, [[-1.22474487139, 0.0, 1.22474487139]], atol=1e-10)


def test_layer_norm_affine_override():
    rng = np.random.default_rng(2)
    out = ad.layer_norm(rand(rng, 1, 3), Tensor(np.zeros(3)), Tensor(np.full(3, 7.0)))
    np.testing.assert_array_equal(out.data, [[7.0, 7.0, 7.0]])


def test_layer_norm_rows_standardized():
    rng = np.random.default_rng(3)
    x = Tensor(rng.standard_normal((6, 9)) * 4 + 2)
    out = ad.layer_norm(x, Tensor(np.ones(9)), Tensor(np.zeros(9)), eps=0.0).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-9)
    np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-9)


# elementwise ------------------------------------------------------------------


def test_sigmoid_zero():
    assert ad.sigmoid(Tensor([0.0])).item() == 0.5


def test_sigmoid_tanh_ranges():
    x = Tensor(np.linspace(-30, 30, 61))
    s, t = ad.sigmoid(x).data, ad.tanh(x).data
    assert np.all((s >= 0) & (s <= 1))
    assert np.all((t >= -1) & (t <= 1))
    mid = Tensor(np.linspace(-5, 5, 11))
    assert np.all((ad.sigmoid(mid).data > 0) & (ad.sigmoid(mid).data < 1))


def test_hadamard_hand_product():
    np.testing.assert_array_equal(ad.hadamard(Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).data, [3.0, 8.0])


def test_concat_cols_shape():
    assert ad.concat_cols(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2)))).shape == (2, 5)


def test_bias_broadcast_only():
    x = Tensor(np.ones((2, 3)))
    assert ad.add(x, Tensor([1.0, 2.0, 3.0])).shape == (2, 3)
    with pytest.raises(DimensionError):
        ad.add(x, Tensor(np.ones((1, 3))))
    with pytest.raises(DimensionError):
        ad.hadamard(x, Tensor(np.ones(2)))


def test_linear_examples():
    out = ad.linear(Tensor(np.eye(2)), Tensor([[2.0, 0.0], [0.0, 2.0]]), Tensor([0.0, 0.0]))
    np.testing.assert_array_equal(out.data, [[2.0, 0.0], [0.0, 2.0]])
    out = ad.linear(Tensor([[1.0, 1.0]]), Tensor([[1.0], [1.0]]), Tensor([1.0]))
    np.testing.assert_array_equal(out.data, [[3.0]])
    b = Tensor([0.5, -1.0, 2.0])
    out = ad.linear(Tensor(np.zeros((1, 3))), Tensor(np.ones((3, 3))), b)
    np.testing.assert_array_equal(out.data[0], b.data)


def test_non_finite_is_an_error():
    with pytest.raises(NonFiniteError):
        Tensor([np.nan])
    with pytest.raises(NonFiniteError), np.errstate(over="ignore"):
        ad.scale(Tensor([1e308]), 10.0)


# backward ---------------------------------------------------------------------


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    ad.sum_all(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_square():
    x = Tensor([3.0], requires_grad=True)
    ad.sum_all(ad.hadamard(x, x)).backward()
    np.testing.assert_array_equal(x.grad, [6.0])


def test_fan_out_accumulates():
    # loss = sum(2x) + sum(x*x): two consumers of x
    x = Tensor([1.5, -2.0], requires_grad=True)
    loss = ad.add(ad.sum_all(ad.scale(x, 2.0)), ad.sum_all(ad.hadamard(x, x)))
    loss.backward()
    np.testing.assert_array_equal(x.grad, 2.0 + 2 * x.data)


def test_double_backward_rejected():
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = ad.sum_all(ad.hadamard(x, x))
    loss.backward()
    with pytest.raises(GraphError):
        loss.backward()


def test_non_scalar_loss_rejected():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(GraphError):
        ad.scale(x, 2.0).backward()


def test_no_grad_builds_no_graph():
    x = Tensor([1.0], requires_grad=True)
    with ad.no_grad():
        y = ad.scale(x, 3.0)
    assert not y.requires_grad


def test_composite_graph_matches_finite_differences():
    rng = np.random.default_rng(4)
    x = rand(rng, 3, 4, name="x")
    W = rand(rng, 4, 2, name="W")
    b = rand(rng, 2, name="b")

    def f():
        h = ad.tanh(ad.linear(x, W, b))
        s = ad.softmax_rows(ad.hadamard(h, ad.sigmoid(h)))
        return ad.sum_all(ad.hadamard(s, s))

    report = finite_diff_check(f, [x, W, b], step=1e-5, rtol=1e-4)
    assert report.passed, report


def test_graph_order_is_topological():
    rng = np.random.default_rng(5)
    x = rand(rng, 2, 2)
    y = ad.tanh(ad.matmul(x, x))
    loss = ad.sum_all(ad.add(y, x))
    order = ad.graph_order(loss)
    pos = {id(t): i for i, t in enumerate(order)}
    for t in order:
        for p in t._parents:
            assert pos[id(p)] < pos[id(t)]


# finite_diff_check ------------------------------------------------------------


def test_gradcheck_sum_of_squares():
    rng = np.random.default_rng(6)
    report = finite_diff_check(lambda t: ad.sum_all(ad.hadamard(t, t)), rand(rng, 5), rtol=1e-6)
    assert report.passed, report


def test_gradcheck_softmax_pick():
    rng = np.random.default_rng(7)
    pick = Tensor(np.eye(4)[1])

    def f(t):
        return ad.sum_all(ad.hadamard(ad.reshape(ad.softmax_rows(ad.reshape(t, (1, 4))), (4,)), pick))

    report = finite_diff_check(f, rand(rng, 4), rtol=1e-4)
    assert report.passed, report


def test_gradcheck_zero_step_rejected():
    with pytest.raises(ValueError):
        finite_diff_check(lambda t: ad.sum_all(t), Tensor([1.0]), step=0.0)


def test_gradcheck_detects_nondeterminism():
    rng = np.random.default_rng(8)
    with pytest.raises(ValueError, match="deterministic"):
        finite_diff_check(lambda t: ad.sum_all(ad.scale(t, rng.uniform())), Tensor([1.0]))


def test_gradcheck_flags_wrong_gradient():
    x = Tensor([0.3, -0.7], requires_grad=True)

    def broken(t):
        out = ad.tanh(t)
        out._backward = lambda g: ad._accumulate(t, 2 * g)  # wrong rule
        return ad.sum_all(out)

    assert not finite_diff_check(broken, x).passed


SHAPES = [(3,), (2, 3), (2, 3, 4)]


def _unary_cases():
    return {
        "sigmoid": ad.sigmoid,
        "tanh": ad.tanh,
        "relu": ad.relu,
        "abs": ad.absolute,
        "scale": lambda t: ad.scale(t, -1.7),
        "add_scalar": lambda t: ad.add_scalar(t, 0.4),
        "transpose": lambda t: ad.transpose(t) if t.data.ndim >= 2 else t,
        "softmax": ad.softmax_rows,
        "slice": lambda t: ad.slice_cols(t, 1, 3),
        "select": lambda t: ad.select(t, 0, 1) if t.data.ndim >= 2 else ad.slice_cols(t, 0, 2),
    }


@pytest.mark.parametrize("shape", SHAPES)
@pytest.mark.parametrize("op", sorted(_unary_cases()))
def test_unary_ops_gradcheck(op, shape):
    rng = np.random.default_rng(abs(hash((op, shape))) % 2**32)
    x = rand(rng, *shape, name="x")
    w = Tensor(rng.standard_normal(_unary_cases()[op](Tensor(x.data)).shape))
    report = finite_diff_check(lambda t: ad.sum_all(ad.hadamard(_unary_cases()[op](t), w)), x)
    assert report.passed, report


@pytest.mark.parametrize("shape", SHAPES)
@pytest.mark.parametrize("op", ["add", "sub", "hadamard", "add_bias", "hadamard_bias", "concat", "stack"])
def test_binary_ops_gradcheck(op, shape):
    rng = np.random.default_rng(len(op) * 31 + len(shape))
    a = rand(rng, *shape, name="a")
    b = rand(rng, *(shape[-1:] if op.endswith("bias") else shape), name="b")
    fn = {
        "add": ad.add,
        "sub": ad.sub,
        "hadamard": ad.hadamard,
        "add_bias": ad.add,
        "hadamard_bias": ad.hadamard,
        "concat": lambda x, y: ad.concat([x, y], axis=-1),
        "stack": lambda x, y: ad.stack([x, y], axis=0),
    }[op]
    w = Tensor(rng.standard_normal(fn(Tensor(a.data), Tensor(b.data)).shape))
    report = finite_diff_check(lambda: ad.sum_all(ad.hadamard(fn(a, b), w)), [a, b])
    assert report.passed, report


@pytest.mark.parametrize("shapes", [((2, 3), (3, 4)), ((1, 5), (5, 1)), ((2, 3, 4), (4, 2)), ((2, 3, 4), (2, 4, 3))])
def test_matmul_gradcheck(shapes):
    rng = np.random.default_rng(sum(map(sum, shapes)))
    a, b = rand(rng, *shapes[0], name="a"), rand(rng, *shapes[1], name="b")
    w = Tensor(rng.standard_normal((a.data @ b.data).shape))
    assert finite_diff_check(lambda: ad.sum_all(ad.hadamard(ad.matmul(a, b), w)), [a, b]).passed


@pytest.mark.parametrize("shape", [(1, 4), (3, 5), (2, 3, 6)])
def test_layer_norm_gradcheck(shape):
    rng = np.random.default_rng(shape[-1])
    x = rand(rng, *shape, name="x")
    g, b = rand(rng, shape[-1], name="gamma"), rand(rng, shape[-1], name="beta")
    w = Tensor(rng.standard_normal(shape))
    assert finite_diff_check(lambda: ad.sum_all(ad.hadamard(ad.layer_norm(x, g, b), w)), [x, g, b]).passed


@pytest.mark.parametrize("shape", [(2, 3), (1, 4), (3, 5)])
def test_masked_softmax_gradcheck(shape):
    rng = np.random.default_rng(11)
    x = rand(rng, *shape, name="x")
    mask = np.ones(shape, dtype=bool)
    mask[..., -1] = False
    w = Tensor(rng.standard_normal(shape))
    assert finite_diff_check(lambda t: ad.sum_all(ad.hadamard(ad.softmax_rows(t, mask), w)), x).passed


def test_gather_rows_gradcheck():
    rng = np.random.default_rng(12)
    x = rand(rng, 2, 4, 3, name="x")
    idx = np.array([[2, 1, 0, 3], [0, 0, 3, 1]])
    w = Tensor(rng.standard_normal((2, 4, 3)))
    assert finite_diff_check(lambda t: ad.sum_all(ad.hadamard(ad.gather_rows(t, idx), w)), x).passed


def test_ops_are_bitwise_deterministic():
    rng = np.random.default_rng(13)
    x, W = rng.standard_normal((4, 5)), rng.standard_normal((5, 5))

    def run():
        t = Tensor(x)
        return ad.softmax_rows(ad.layer_norm(ad.matmul(t, Tensor(W)), Tensor(np.ones(5)), Tensor(np.zeros(5)))).data

    assert run().tobytes() == run().tobytes()
