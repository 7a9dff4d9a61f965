import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from gazesum import ndops as nd
from gazesum.exceptions import ShapeError, UsageError

from conftest import grad_check


def T(a, grad=True):
    return nd.Tensor(np.asarray(a, dtype=float), grad)


def test_forward_examples():
    a = T([[1, 2], [3, 4]], False)
    assert (a @ T(np.eye(2), False)).data.tolist() == [[1, 2], [3, 4]]
    assert nd.sigmoid(T(0.0, False)).item() == 0.5
    np.testing.assert_allclose(nd.softmax(T([2.0, 2.0, 2.0], False)).data, [1 / 3] * 3)


def test_shape_errors_name_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        nd.matmul(T(np.ones((2, 3))), T(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        nd.add(T(np.ones(3)), T(np.ones(4)))
    with pytest.raises(ShapeError):
        nd.mse(T(np.ones(2)), T(np.ones(3)))


def test_mse_examples():
    assert nd.mse(T([1.0]), T([1.0])).item() == 0
    assert nd.mse(T([0.0]), T([1.0])).item() == 1
    assert nd.mse(T([0.2, 0.4]), T([0.0, 1.0])).item() == pytest.approx(0.2, abs=1e-15)


def test_cross_entropy_examples():
    assert nd.cross_entropy(T(np.zeros(7)), 3).item() == pytest.approx(math.log(7), abs=1e-14)
    big = np.zeros(5)
    big[2] = 1e3
    assert nd.cross_entropy(T(big), 2).item() == pytest.approx(0.0, abs=1e-12)
    assert nd.cross_entropy(T([1.0, 2.0]), 1).item() == pytest.approx(math.log1p(math.exp(-1)),
                                                                       abs=1e-15)
    with pytest.raises(IndexError):
        nd.cross_entropy(T([1.0, 2.0]), 2)


def gru_oracle(x, h, p):
    """Scalar loops, no matrix products."""
    d_in, d_h = len(x), len(h)
    sig = lambda v: 1 / (1 + math.exp(-v))

    def lin(W, U, b, hv):
        return [sum(x[i] * W[i][j] for i in range(d_in)) + sum(hv[i] * U[i][j] for i in range(d_h))
                + b[j] for j in range(d_h)]
    z = [sig(v) for v in lin(p["W_z"], p["U_z"], p["b_z"], h)]
    r = [sig(v) for v in lin(p["W_r"], p["U_r"], p["b_r"], h)]
    rh = [r[j] * h[j] for j in range(d_h)]
    ht = [math.tanh(v) for v in lin(p["W_h"], p["U_h"], p["b_h"], rh)]
    return [(1 - z[j]) * h[j] + z[j] * ht[j] for j in range(d_h)]


def test_gru_cell_examples(rng):
    params = nd.init_gru(rng, 3, 4)
    for t in params.values():
        t.data[...] = 0
    out = nd.gru_cell(T(rng.normal(size=3)), T(np.zeros(4)), params)
    assert np.all(out.data == 0)
    params["b_z"].data[...] = -50.0
    h = rng.normal(size=4)
    np.testing.assert_allclose(nd.gru_cell(T(rng.normal(size=3)), T(h), params).data, h,
                               atol=1e-20)
    params = nd.init_gru(rng, 3, 4)
    for t in params.values():
        t.data += rng.normal(0, 0.3, t.shape)
    x, h = rng.normal(size=3), rng.normal(size=4)
    raw = {k: v.data.tolist() for k, v in params.items()}
    np.testing.assert_allclose(nd.gru_cell(T(x), T(h), params).data, gru_oracle(x, h, raw),
                               rtol=0, atol=1e-12)


def hop_oracle(states, adj, W, b):
    """Explicit message passing: average neighbor messages, transform, squash."""
    m, d = states.shape
    out = np.zeros((m, d))
    for i in range(m):
        nbrs = [j for j in range(m) if adj[i][j]]
        if not nbrs:
            continue
        agg = [sum(states[j][k] for j in nbrs) / len(nbrs) for k in range(d)]
        for c in range(d):
            out[i][c] = math.tanh(sum(agg[k] * W[k][c] for k in range(d)) + b[c])
    return out


def test_gnn_hop_examples(rng):
    s = rng.normal(size=(4, 3))
    out = nd.gnn_hop(T(s), np.eye(4), T(np.eye(3)), T(np.zeros(3)))
    np.testing.assert_allclose(out.data, np.tanh(s), atol=1e-15)
    path = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]], dtype=float)
    ones = np.ones((3, 2))
    out = nd.gnn_hop(T(ones * np.array([[1], [2], [3]])), path, T(np.eye(2)), T(np.zeros(2)))
    np.testing.assert_allclose(out.data[:, 0], np.tanh([1.5, 2.0, 2.5]), atol=1e-15)
    adj = path.copy()
    padded = np.zeros((4, 4))
    padded[:3, :3] = adj
    out = nd.gnn_hop(T(rng.normal(size=(4, 2))), padded, T(np.eye(2)), T(np.ones(2)))
    assert np.all(out.data[3] == 0)


def test_gnn_hop_matches_message_passing_oracle(rng):
    for _ in range(30):
        m = int(rng.integers(1, 11))
        adj = np.eye(m)
        for c in range(1, m):
            p = int(rng.integers(c))
            adj[p, c] = adj[c, p] = 1
        s, W, b = rng.normal(size=(m, 4)), rng.normal(size=(4, 4)), rng.normal(size=4)
        np.testing.assert_allclose(nd.gnn_hop(T(s), adj, T(W), T(b)).data,
                                   hop_oracle(s, adj, W, b), atol=1e-12)


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
              elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    out = nd.softmax(T(x, False), axis=1).data
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)


def test_softmax_mask_zeroes_padding():
    out = nd.softmax(T([[1.0, 2.0, 3.0]], False), axis=1, mask=[[True, True, False]]).data
    assert out[0, 2] == 0.0 and out.sum() == pytest.approx(1.0, abs=1e-15)


def test_backward_examples():
    x = T(3.0)
    with nd.Tape() as tape:
        loss = x * x
    nd.backward(tape, loss)
    assert x.grad == 6.0
    y, unused = T([1.0, 2.0]), T([5.0])
    with nd.Tape() as tape:
        loss = nd.sum_(y * y)
    nd.backward(tape, loss, [y, unused])
    assert unused.grad.tolist() == [0.0] and len(tape) == 0
    with nd.Tape() as tape:
        vec = y * y
    with pytest.raises(UsageError):
        nd.backward(tape, vec)


# every primitive through a scalar head, 20 probes each
def _primitive_losses(rng):
    a, b = T(rng.normal(size=(3, 4))), T(rng.normal(size=(4, 2)))
    v = T(rng.normal(size=(3, 4)))
    w = T(rng.normal(size=4))
    table = T(rng.normal(size=(6, 4)))
    ids = np.array([[0, 5, 2], [2, 2, 1]])
    mask = np.array([[1, 1, 0], [1, 1, 1]], dtype=bool)
    logits = T(rng.normal(size=(4, 5)))
    gru = nd.init_gru(rng, 4, 3)
    h0 = T(rng.normal(size=(3, 3)))
    adj = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]], dtype=float)
    W, bias = T(rng.normal(size=(4, 4))), T(rng.normal(size=4))
    target = T(rng.random((3, 4)), False)
    r = lambda t: nd.sum_(t * T(np.linspace(0.3, 1.7, t.size).reshape(t.shape), False))
    return {
        "matmul": (lambda: r(a @ b), [a, b]),
        "add_sub_mul": (lambda: r((a + v) * v - w), [a, v, w]),
        "concat_stack": (lambda: r(nd.concat([a, v], axis=1)) + r(nd.stack([a, v], axis=2)), [a, v]),
        "unbind": (lambda: sum((r(p) * (k + 1) for k, p in enumerate(nd.unbind(a, 1))), T(0.0, False)),
                   [a]),
        "take_reshape_flatten": (lambda: r(nd.flatten(nd.take(nd.reshape(a, (4, 3)), [0, 2]))), [a]),
        "nonlinearities": (lambda: r(nd.sigmoid(a)) + r(nd.tanh(v)) + r(nd.relu(a + 0.1)), [a, v]),
        "softmax_masked": (lambda: r(nd.softmax(nd.take(a, slice(0, 2)), axis=1,
                                                mask=[[1, 1, 0, 1], [1, 0, 1, 1]])), [a]),
        "embed_lookup": (lambda: r(nd.embed_lookup(table, ids)), [table]),
        "mean_masked_mean": (lambda: nd.mean(a * a) + r(nd.masked_mean(v, [1, 0, 1])), [a, v]),
        "mse": (lambda: nd.mse(nd.sigmoid(a), target), [a]),
        "cross_entropy": (lambda: nd.cross_entropy(logits, [0, 4, 1, 1], [1, 1, 0, 1]), [logits]),
        "gru_cell": (lambda: r(nd.gru_cell(nd.take(a, slice(0, 3)), h0, gru)),
                     [a, h0] + list(gru.values())),
        "gnn_hop": (lambda: r(nd.gnn_hop(nd.take(a, slice(0, 3)), adj, W, bias)), [a, W, bias]),
    }


@pytest.mark.parametrize("name", list(_primitive_losses(np.random.default_rng(0))))
def test_primitive_gradients(name):
    fn, params = _primitive_losses(np.random.default_rng(7))[name]
    assert grad_check(fn, params, probes=20) <= 1e-4


def test_optimizer_examples():
    p = T([1.0])
    p.grad = np.array([2.0])
    opt = nd.make_optimizer("sgd", [p], 0.1)
    opt.step()
    assert p.data[0] == pytest.approx(0.8)
    assert p.grad.tolist() == [0.0]
    opt.step()
    assert p.data[0] == pytest.approx(0.8)       # zero grad, unchanged
    q = T(np.array([0.5, -2.0]))
    q.grad = np.array([3.0, -0.01])
    adam = nd.make_optimizer("adam", [q], 1e-3)
    adam.step()
    np.testing.assert_allclose(q.data, [0.5 - 1e-3, -2.0 + 1e-3], rtol=0, atol=1e-8)
    with pytest.raises(UsageError):
        nd.SGD([T([1.0])]).step()


def test_checkpoint_roundtrip_and_bytes(tmp_path, rng):
    params = {"b": T(rng.normal(size=(2, 3))), "a": T(rng.normal(size=4))}
    p1, p2 = tmp_path / "one.ckpt", tmp_path / "two.ckpt"
    nd.save_checkpoint(p1, params, {"kind": "x"})
    nd.save_checkpoint(p2, params, {"kind": "x"})
    assert p1.read_bytes() == p2.read_bytes()
    arrays, meta = nd.load_checkpoint(p1)
    assert meta["kind"] == "x"
    for k in params:
        assert np.array_equal(arrays[k], params[k].data)


def test_tape_determinism(rng):
    a = rng.normal(size=(5, 5))
    vals = []
    for _ in range(2):
        x = T(a)
        with nd.Tape() as tape:
            loss = nd.sum_(nd.tanh(x @ x))
        nd.backward(tape, loss)
        vals.append((loss.item(), x.grad.tobytes()))
    assert vals[0] == vals[1]
