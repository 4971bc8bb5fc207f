import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tracksorter import tensor as T
from tracksorter.tensor import Tensor, finite_difference_grad, relative_error

SEEDS = range(100)


def leaf(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0, scale, size=shape), requires_grad=True, dtype=np.float64)


def check_grads(build, leaves, rng, tol):
    """Compare tape gradients of sum(build() * R) with central differences."""
    out0 = build()
    weights = rng.normal(size=out0.shape)

    def scalar():
        with T.no_grad():
            return float((build().data * weights).sum())

    for x in leaves:
        x.grad = None
    T.backward(T.sum(T.mul(build(), Tensor(weights, dtype=np.float64))))
    worst = 0.0
    for x in leaves:
        numeric = finite_difference_grad(scalar, x.data)
        worst = max(worst, relative_error(x.grad, numeric))
    assert worst < tol, worst
    return worst


# --------------------------------------------------------------------- forward values


def test_matmul_identity_and_hand_example():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[5.0, 6.0], [7.0, 8.0]])
    np.testing.assert_array_equal(T.matmul(a, b).data, [[19, 22], [43, 50]])
    np.testing.assert_array_equal(T.matmul(Tensor(np.eye(2)), a).data, a.data)


def test_matmul_shape_mismatch():
    with pytest.raises(ValueError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_softmax_uniform_and_masked():
    np.testing.assert_allclose(T.softmax(Tensor(np.zeros((1, 4)))).data, 0.25)
    np.testing.assert_array_equal(T.softmax(Tensor([[0.0, -np.inf]])).data, [[1.0, 0.0]])
    with pytest.raises(ValueError):
        T.softmax(Tensor([[-np.inf, -np.inf]]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
def test_softmax_rows_sum_to_one(values):
    p = T.softmax(Tensor(np.array([values]), dtype=np.float64)).data
    assert abs(p.sum() - 1) < 1e-6
    assert ((p >= 0) & (p <= 1)).all()


def test_layer_norm_constant_vector_gives_bias():
    x = Tensor(np.full((2, 5), 3.7))
    bias = Tensor(np.arange(5.0))
    out = T.layer_norm(x, Tensor(np.ones(5) * 2), bias)
    np.testing.assert_array_equal(out.data, np.broadcast_to(bias.data, (2, 5)))


def test_cross_entropy_perfect_logits_approach_zero():
    targets = np.array([0, 2, 1])
    losses = []
    for margin in (1.0, 10.0, 50.0):
        logits = np.zeros((3, 4))
        logits[np.arange(3), targets] = margin
        losses.append(float(T.cross_entropy(Tensor(logits, dtype=np.float64), targets).data))
    assert losses[0] > losses[1] > losses[2] >= 0
    assert losses[2] < 1e-12


def test_cross_entropy_ignore_and_range():
    logits = Tensor(np.zeros((3, 4)), dtype=np.float64)
    loss = T.cross_entropy(logits, np.array([0, 3, 0]), ignore_id=0)
    assert float(loss.data) == pytest.approx(np.log(4))
    with pytest.raises(IndexError):
        T.cross_entropy(logits, np.array([1, 4, 2]))


def test_backward_sum_gives_ones_and_rejects_non_scalar():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    T.backward(T.sum(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))
    with pytest.raises(ValueError):
        T.backward(x)


def test_chain_rule_on_scalars():
    # f(g(x)) with g = 3x, f = u * u  ->  d/dx = 18x
    x = Tensor(np.array([[2.0]]), requires_grad=True, dtype=np.float64)
    u = T.scale(x, 3.0)
    T.backward(T.sum(T.mul(u, u)))
    assert x.grad[0, 0] == pytest.approx(36.0)


def test_shared_subexpression_visited_once():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True, dtype=np.float64)
    y = T.mul(x, x)
    tape = T.backward(T.sum(T.add(y, y)))
    np.testing.assert_allclose(x.grad, 4 * x.data)
    assert len(tape) == len({id(n) for n in tape.nodes})


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with T.no_grad():
        y = T.scale(x, 2.0)
    assert not y.requires_grad and y._parents == ()


# --------------------------------------------------------------------- gradient checks


@pytest.mark.parametrize("seed", SEEDS)
def test_matmul_gradients(seed):
    rng = np.random.default_rng(seed)
    a, b = leaf(rng, 3, 4), leaf(rng, 4, 2)
    check_grads(lambda: T.matmul(a, b), [a, b], rng, 1e-6)


@pytest.mark.parametrize("seed", SEEDS[:20])
def test_batched_matmul_gradients(seed):
    rng = np.random.default_rng(seed)
    a, b, w = leaf(rng, 2, 3, 4), leaf(rng, 2, 4, 3), leaf(rng, 3, 2)
    check_grads(lambda: T.matmul(T.matmul(a, b), w), [a, b, w], rng, 1e-6)


@pytest.mark.parametrize("seed", SEEDS)
def test_elementwise_gradients(seed):
    rng = np.random.default_rng(seed)
    a, b, bias = leaf(rng, 2, 3), leaf(rng, 2, 3), leaf(rng, 3)
    check_grads(lambda: T.add(T.mul(T.sub(a, b), T.scale(b, 0.7)), bias), [a, b, bias], rng, 1e-6)


@pytest.mark.parametrize("seed", SEEDS)
def test_structural_gradients(seed):
    rng = np.random.default_rng(seed)
    a, b = leaf(rng, 2, 3, 2), leaf(rng, 2, 1, 2)
    check_grads(
        lambda: T.reshape(T.transpose(T.concat([a, b], axis=1), (2, 0, 1)), (4, 4)), [a, b], rng, 1e-6
    )


@pytest.mark.parametrize("seed", SEEDS)
def test_relu_gradient(seed):
    rng = np.random.default_rng(seed)
    x = leaf(rng, 3, 4)
    x.data[np.abs(x.data) < 1e-3] = 0.5  # keep away from the kink
    check_grads(lambda: T.relu(x), [x], rng, 1e-6)


@pytest.mark.parametrize("seed", SEEDS)
def test_softmax_jacobian(seed):
    rng = np.random.default_rng(seed)
    x = leaf(rng, 1, 5, scale=2.0)
    check_grads(lambda: T.softmax(x), [x], rng, 1e-6)


@pytest.mark.parametrize("seed", SEEDS[:20])
def test_masked_softmax_gradient(seed):
    rng = np.random.default_rng(seed)
    x = leaf(rng, 3, 4)
    mask = np.tril(np.ones((3, 4), dtype=bool))
    check_grads(lambda: T.softmax(x, mask=mask), [x], rng, 1e-6)


@pytest.mark.parametrize("seed", SEEDS)
def test_layer_norm_gradients(seed):
    rng = np.random.default_rng(seed)
    x, g, b = leaf(rng, 3, 6), leaf(rng, 6), leaf(rng, 6)
    check_grads(lambda: T.layer_norm(x, g, b), [x, g, b], rng, 1e-5)


@pytest.mark.parametrize("seed", SEEDS)
def test_embedding_lookup_gradient(seed):
    rng = np.random.default_rng(seed)
    table = leaf(rng, 7, 3)
    ids = rng.integers(0, 7, size=(2, 5))  # repeats exercise accumulation
    check_grads(lambda: T.embedding_lookup(table, ids), [table], rng, 1e-5)


@pytest.mark.parametrize("seed", SEEDS)
def test_cross_entropy_gradient(seed):
    rng = np.random.default_rng(seed)
    logits = leaf(rng, 2, 3, 6)
    targets = rng.integers(0, 6, size=(2, 3))
    targets[0, 0] = 0
    loss = lambda: T.cross_entropy(logits, targets, ignore_id=0)  # noqa: E731
    logits.grad = None
    T.backward(loss())

    def scalar():
        with T.no_grad():
            return float(loss().data)

    numeric = finite_difference_grad(scalar, logits.data)
    assert relative_error(logits.grad, numeric) < 1e-5


def test_determinism_bit_identical():
    def run():
        rng = np.random.default_rng(5)
        a, b = Tensor(rng.random((4, 4)), requires_grad=True), Tensor(rng.random((4, 4)), requires_grad=True)
        T.backward(T.sum(T.softmax(T.matmul(a, b))))
        return a.grad.tobytes() + b.grad.tobytes()

    assert run() == run()
