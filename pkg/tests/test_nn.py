import numpy as np
import pytest
from helpers import PRIMITIVES, fd_error
from hypothesis import given
from hypothesis import strategies as st

from waydest.nn import Adam, AdamState, CheckpointError, Tensor, adam_step, backward, grad, load_checkpoint, no_grad, save_checkpoint
from waydest.nn import functional as F


def fd_check(fn, shapes, seed=0, tol=1e-4, positive=False):
    err = fd_error(fn, shapes, seed=seed, positive=positive)
    assert err < tol, err


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    fn, shapes, positive = PRIMITIVES[name]
    fd_check(fn, shapes, positive=positive)


def test_dropout_gradient_fixed_mask():
    fd_check(lambda x: F.dropout(x, 0.4, np.random.default_rng(9)), [(4, 5)])


def test_composite_five_parameters():
    def f(a, b, c, d, e):
        z = F.tanh(F.add(F.matmul(a, b), c))
        z = F.layer_norm(F.mul(z, d))
        return F.softmax(F.add(z, F.sigmoid(e)), axis=-1)

    fd_check(f, [(2, 3), (3, 4), (4,), (2, 4), (4,)], seed=5)


def test_fan_out_accumulates():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    loss = F.sum(F.add(F.mul(x, x), x))
    (g,) = grad(loss, [x])
    np.testing.assert_array_equal(g, 2 * x.data + 1)


def test_backward_simple_losses():
    x = Tensor(np.arange(4.0), requires_grad=True)
    backward(F.sum(x))
    np.testing.assert_array_equal(x.grad, np.ones(4))
    x.zero_grad()
    backward(F.sum(x * x))
    np.testing.assert_array_equal(x.grad, 2 * x.data)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        backward(x * 2.0)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = F.sum(x * 2.0)
    assert not y.requires_grad


# -- forward values -----------------------------------------------------------------


def test_softmax_uniform():
    np.testing.assert_allclose(F.softmax(np.zeros(3)).data, [1 / 3] * 3, rtol=1e-15)


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
def test_softmax_rows_sum_to_one(vals):
    s = F.softmax(np.array(vals)).data
    assert abs(s.sum() - 1.0) < 1e-12 and np.all(s >= 0)


def test_softmax_masked_row():
    x = F.causal_mask_fill(Tensor(np.zeros((3, 3))))
    np.testing.assert_allclose(F.softmax(x).data, [[1, 0, 0], [0.5, 0.5, 0], [1 / 3, 1 / 3, 1 / 3]])


def test_layer_norm_constant_vector():
    assert F.layer_norm(np.full((2, 5), 3.7)).data.tolist() == [[0.0] * 5] * 2


def test_layer_norm_stats():
    y = F.layer_norm(np.random.default_rng(0).normal(3, 2, (4, 64))).data
    np.testing.assert_allclose(y.mean(-1), 0, atol=1e-12)
    np.testing.assert_allclose(y.var(-1), 1, atol=1e-4)


def test_matmul_triple_loop_oracle():
    a = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    b = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    want = [[sum(a[i, k] * b[k, j] for k in range(3)) for j in range(2)] for i in range(2)]
    assert F.matmul(a, b).data.tolist() == want == [[1.0, 2.0], [4.0, 5.0]]


def test_shape_errors_name_both_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 3\)|\(2, 3\).*\(4, 2\)"):
        F.matmul(np.zeros((2, 3)), np.zeros((4, 2)))
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(4,\)"):
        F.add(np.zeros((2, 3)), np.zeros(4))


def test_dropout_identity_and_scaling():
    x = np.random.default_rng(0).normal(size=(50, 40))
    assert F.dropout(x, 0.0, None).data is not None
    np.testing.assert_array_equal(F.dropout(x, 0.0, None).data, x)
    np.testing.assert_array_equal(F.dropout(x, 0.3, None, training=False).data, x)
    y = F.dropout(x, 0.3, np.random.default_rng(1)).data
    kept = y != 0
    np.testing.assert_allclose(y[kept], x[kept] / 0.7, rtol=1e-15)
    assert abs(kept.mean() - 0.7) < 0.03
    with pytest.raises(ValueError):
        F.dropout(x, 1.0, np.random.default_rng(0))


def test_seeded_replay_bit_identical():
    def run():
        rng = np.random.default_rng(42)
        w = Tensor(rng.normal(size=(5, 5)), requires_grad=True)
        x = rng.normal(size=(3, 5))
        loss = F.sum(F.dropout(F.tanh(F.matmul(x, w)), 0.3, rng))
        return loss.data.copy(), grad(loss, [w])[0]

    (l1, g1), (l2, g2) = run(), run()
    assert l1 == l2 and np.array_equal(g1, g2)


# -- Adam ----------------------------------------------------------------------------


def test_adam_defaults():
    s = AdamState()
    assert (s.lr, s.beta1, s.beta2, s.eps) == (1e-4, 0.9, 0.999, 1e-8)


def test_adam_zero_gradient():
    p = np.array([1.0, -2.0])
    adam_step([p], [np.zeros(2)], AdamState())
    assert p.tolist() == [1.0, -2.0]


def test_adam_three_step_trace():
    # hand arithmetic: m_t, v_t, bias-corrected update, lr 0.1
    p = np.array([1.0])
    st_ = AdamState(lr=0.1)
    grads = [0.5, -1.0, 2.0]
    m = v = 0.0
    want = 1.0
    for t, g in enumerate(grads, 1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        want -= 0.1 * (m / (1 - 0.9**t)) / ((v / (1 - 0.999**t)) ** 0.5 + 1e-8)
        adam_step([p], [np.array([g])], st_)
        assert p[0] == pytest.approx(want, rel=1e-14)
    # first step is exactly lr * sign(g) up to eps
    q = np.array([0.0])
    adam_step([q], [np.array([0.5])], AdamState(lr=0.1))
    assert q[0] == pytest.approx(-0.1, rel=1e-7)


def test_adam_constant_gradient_limit():
    p = np.array([0.0, 0.0])
    s = AdamState(lr=0.01)
    prev = p.copy()
    for _ in range(500):
        adam_step([p], [np.array([3.0, -0.2])], s)
    step = p - prev
    adam_step([p], [np.array([3.0, -0.2])], s)
    np.testing.assert_allclose(p - (prev + step), [-0.01, 0.01], rtol=1e-6)


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step([np.zeros(2)], [np.zeros(3)], AdamState())


def test_adam_optimizer_minimizes_quadratic():
    w = Tensor(np.array([3.0, -4.0]), requires_grad=True)
    opt = Adam([w], lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        backward(F.sum(w * w))
        opt.step()
    assert np.abs(w.data).max() < 0.05


# -- checkpoints ---------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    arrays = {"a": np.arange(6.0).reshape(2, 3), "b": np.array([np.pi])}
    save_checkpoint(tmp_path / "m.npz", arrays, {"preset": "tiny"})
    got, meta = load_checkpoint(tmp_path / "m.npz")
    assert meta["preset"] == "tiny" and meta["version"] == 1
    for k in arrays:
        assert np.array_equal(got[k], arrays[k])


def test_checkpoint_version_mismatch(tmp_path):
    save_checkpoint(tmp_path / "m.npz", {"a": np.zeros(1)}, {"version": 99})
    with pytest.raises(CheckpointError, match="version 99"):
        load_checkpoint(tmp_path / "m.npz")


def test_checkpoint_garbage(tmp_path):
    (tmp_path / "bad.npz").write_bytes(b"not a zip")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.npz")
