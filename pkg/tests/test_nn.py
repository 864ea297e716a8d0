import numpy as np
import pytest

from avgraph import nn
from avgraph.errors import BadMagicError, ShapeError, TruncatedFileError, VersionMismatchError

from conftest import central_difference, gradcheck, max_relative_error


def away_from_zero(rng, shape, margin=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, margin * np.sign(x + 1e-12) + x, x)


OPS = {
    "add": (lambda a, b: nn.add(a, b), [(2, 3, 4), (3, 4)]),
    "add_broadcast_row": (lambda a, b: nn.add(a, b), [(3, 4), (1, 4)]),
    "sub": (lambda a, b: nn.sub(a, b), [(3, 4), (3, 1)]),
    "mul": (lambda a, b: nn.mul(a, b), [(2, 3, 4), (2, 1, 4)]),
    "add_bias": (lambda x, b: nn.add_bias(x, b), [(5, 3), (1, 3)]),
    "matmul": (lambda a, b: nn.matmul(a, b), [(3, 4), (4, 2)]),
    "matmul_batched": (lambda a, b: nn.matmul(a, b), [(2, 3, 4), (4, 5)]),
    "matmul_both_batched": (lambda a, b: nn.matmul(a, b), [(2, 3, 4), (2, 4, 2)]),
    "transpose": (lambda a: nn.transpose(a), [(2, 3, 4)]),
    "relu": (lambda a: nn.relu(a), [(4, 5)]),
    "exp": (lambda a: nn.exp(a), [(3, 3)]),
    "sum_all": (lambda a: nn.sum(a), [(3, 4)]),
    "sum_axis": (lambda a: nn.sum(a, axis=-1, keepdims=True), [(2, 3, 4)]),
    "sum_axes": (lambda a: nn.sum(a, axis=(-2, -1)), [(2, 3, 4)]),
    "mean": (lambda a: nn.mean(a, axis=0), [(3, 4)]),
    "mean_rows": (lambda a: nn.mean_rows(a), [(2, 5, 3)]),
    "row_softmax": (lambda a: nn.row_softmax(a), [(2, 4, 5)]),
    "concat_rows": (lambda u, v: nn.concat_rows(u, v), [(2, 3), (2, 4)]),
    "reshape": (lambda a: nn.reshape(a, (-1,)), [(2, 3)]),
    "neg_scale": (lambda a: -a * 2.5, [(2, 3)]),
}


@pytest.mark.parametrize("name", sorted(OPS))
@pytest.mark.parametrize("seed", range(5))
def test_op_gradients(name, seed):
    build, shapes = OPS[name]
    rng = np.random.default_rng(seed)
    arrays = [away_from_zero(rng, s) for s in shapes]
    assert gradcheck(build, arrays, seed) < 1e-5


@pytest.mark.parametrize("seed", range(5))
def test_positive_domain_ops(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.5, 2.0, (3, 4))
    assert gradcheck(lambda a: nn.log(a), [x], seed) < 1e-5
    assert gradcheck(lambda a: nn.power(a, -0.5), [x], seed) < 1e-5
    assert gradcheck(lambda a: nn.power(a, 3.0), [x], seed) < 1e-5


@pytest.mark.parametrize("seed", range(5))
def test_three_layer_composition(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((6, 4))
    w1, w2, w3 = rng.standard_normal((4, 5)), rng.standard_normal((5, 5)), rng.standard_normal((5, 3))
    b = rng.standard_normal((1, 5))

    def build(x, w1, b, w2, w3):
        h = nn.relu(nn.add_bias(nn.matmul(x, w1), b))
        h = nn.row_softmax(nn.matmul(h, w2))
        return nn.matmul(h, w3)

    assert gradcheck(build, [x, w1, b, w2, w3], seed) < 1e-5


def test_fan_out_sums_gradients(rng):
    x = rng.standard_normal((3, 3))

    def build(a):
        return nn.add(nn.mul(a, a), nn.matmul(a, a))

    assert gradcheck(build, [x]) < 1e-5
    t = nn.Tensor(np.array([[2.0]]), requires_grad=True)
    nn.sum(nn.add(t, t)).backward()
    assert t.grad[0, 0] == 2.0


def test_row_softmax_rows_sum_to_one(rng):
    s = nn.row_softmax(rng.standard_normal((4, 7, 9)) * 30).data
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(s >= 0)


def test_matmul_identity(rng):
    b = rng.standard_normal((4, 3))
    np.testing.assert_array_equal(nn.matmul(np.eye(4), b).data, b)


def test_shape_errors_name_op_and_shapes():
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        nn.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeError, match="add"):
        nn.add(np.ones((2, 3)), np.ones((4,)))
    with pytest.raises(ShapeError, match="add_bias"):
        nn.add_bias(np.ones((2, 3)), np.ones((1, 2)))
    with pytest.raises(ShapeError, match="concat"):
        nn.concat_rows(np.ones((2, 3)), np.ones((3, 3)))


def test_cross_entropy_uniform_logits():
    loss = nn.softmax_cross_entropy(np.zeros((3, 7)), [0, 3, 6])
    assert loss.item() == pytest.approx(np.log(7), abs=1e-12)


def test_cross_entropy_saturated():
    logits = np.zeros((2, 4))
    logits[0, 1] = 50
    logits[1, 3] = 50
    assert nn.softmax_cross_entropy(logits, [1, 3]).item() < 1e-6


def test_cross_entropy_matches_direct_formula(rng):
    logits = rng.standard_normal((2, 5))
    labels = [4, 1]
    expected = np.mean([
        -np.log(np.exp(logits[k, labels[k]]) / np.exp(logits[k]).sum()) for k in range(2)
    ])
    t = nn.Tensor(logits, requires_grad=True)
    loss = nn.softmax_cross_entropy(t, labels)
    assert loss.item() == pytest.approx(expected, rel=1e-12)
    loss.backward()
    probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    onehot = np.eye(5)[labels]
    np.testing.assert_allclose(t.grad, (probs - onehot) / 2, atol=1e-14)


def test_cross_entropy_gradient_fd(rng):
    logits = rng.standard_normal((4, 3))
    labels = [0, 2, 1, 2]
    t = nn.Tensor(logits, requires_grad=True)
    nn.softmax_cross_entropy(t, labels).backward()
    num = central_difference(lambda: nn.softmax_cross_entropy(logits, labels).item(), [logits])
    assert max_relative_error([t.grad], num) < 1e-5


def test_cross_entropy_label_range():
    with pytest.raises(ValueError, match="label"):
        nn.softmax_cross_entropy(np.zeros((1, 3)), [3])


def _store(rng):
    s = nn.ParamStore()
    s.add("a/w", rng.standard_normal((2, 3)))
    s.add("b", rng.standard_normal((1, 4)))
    return s


def test_adam_zero_gradient_keeps_params(rng):
    s = _store(rng)
    before = s.values()
    nn.adam_step(s, {k: np.zeros_like(v) for k, v in before.items()}, 0.1)
    for k, v in before.items():
        np.testing.assert_array_equal(s[k].data, v)
    assert s.t == 1


def test_adam_first_step_is_signed_lr(rng):
    s = _store(rng)
    before = s.values()
    grads = {k: rng.standard_normal(v.shape) for k, v in before.items()}
    nn.adam_step(s, grads, 0.01)
    for k in before:
        np.testing.assert_allclose(s[k].data - before[k], -0.01 * np.sign(grads[k]), atol=1e-8)


def test_adam_quadratic_descends():
    s = nn.ParamStore()
    s.add("theta", [[1.0]])
    # hand iteration of the recurrences for f = theta^2, lr = 0.1
    theta, m, v = 1.0, 0.0, 0.0
    expected = []
    for t in range(1, 4):
        g = 2 * theta
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta -= 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        expected.append(theta)
    seen = [1.0]
    for t in range(3):
        nn.adam_step(s, {"theta": 2 * s["theta"].data}, 0.1)
        seen.append(s["theta"].item())
    np.testing.assert_allclose(seen[1:], expected, rtol=1e-14)
    assert seen[0] > seen[1] > seen[2] > seen[3] > 0


def test_adam_shape_mismatch(rng):
    s = _store(rng)
    with pytest.raises(ShapeError):
        nn.adam_step(s, {"b": np.zeros((4, 1))}, 0.1)


def test_checkpoint_round_trip(tmp_path, rng):
    s = _store(rng)
    for _ in range(3):
        nn.adam_step(s, {k: rng.standard_normal(v.shape) for k, v in s.values().items()}, 0.01)
    path = tmp_path / "c.avgc"
    nn.write_checkpoint(s, path)
    back = nn.read_checkpoint(path)
    assert back.names() == s.names() and back.t == 3
    for k in s:
        np.testing.assert_array_equal(back[k].data, s[k].data.astype(np.float32))
        np.testing.assert_array_equal(back.m[k], s.m[k].astype(np.float32))
        np.testing.assert_array_equal(back.v[k], s.v[k].astype(np.float32))
    # once values are float32-representable the round trip is bit exact
    assert nn.checkpoint_to_bytes(back) == path.read_bytes()
    again = nn.checkpoint_from_bytes(nn.checkpoint_to_bytes(back))
    for k in s:
        np.testing.assert_array_equal(again[k].data, back[k].data)


def test_checkpoint_layout(rng):
    s = _store(rng)
    raw = nn.checkpoint_to_bytes(s)
    assert raw[:4] == b"AVGC"
    block = (2 + 3 + 8 + 24) + (2 + 1 + 8 + 16)
    assert len(raw) == 12 + 3 * block + 8


def test_checkpoint_errors(rng):
    raw = nn.checkpoint_to_bytes(_store(rng))
    with pytest.raises(BadMagicError):
        nn.checkpoint_from_bytes(b"AVGD" + raw[4:])
    bumped = bytearray(raw)
    bumped[4] = 9
    with pytest.raises(VersionMismatchError):
        nn.checkpoint_from_bytes(bytes(bumped))
    with pytest.raises(TruncatedFileError):
        nn.checkpoint_from_bytes(raw[:-3])


def test_param_store_rejects_non_matrix():
    s = nn.ParamStore()
    with pytest.raises(ShapeError):
        s.add("v", np.ones(3))
    s.add("w", np.ones((1, 3)))
    with pytest.raises(KeyError):
        s.add("w", np.ones((1, 3)))
