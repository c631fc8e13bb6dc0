import numpy as np
import pytest

from gradcheck import analytic_grad, numeric_grad, rel_error
from wanbench.neural import (DESK_WAN, WAN, Tape, Tensor, WanConfig, abs_mean, adam_init,
                             adam_step, add, concat, conv2d, load_checkpoint, relu, save_checkpoint,
                             scale, split, sub)

rng = np.random.default_rng(0)


def _param(*shape, low=-1, high=1):
    return Tensor(rng.uniform(low, high, shape), requires_grad=True)


def _away_from_zero(*shape):
    x = rng.uniform(0.2, 1.0, shape) * rng.choice([-1, 1], shape)
    return Tensor(x, requires_grad=True)


def _check(f, tensors, tol=1e-4):
    grads = analytic_grad(f, tensors)
    for t, g in zip(tensors, grads):
        assert rel_error(g, numeric_grad(f, t)) <= tol


def test_conv3x3_gradients():
    x, w, b = _param(2, 5, 6, 3), _param(4, 3, 3, 3), _param(4)
    probe = _away_from_zero(2, 5, 6, 4)
    f = lambda: abs_mean(add(conv2d(x, w, b), probe))
    _check(f, [x, w, b])


def test_conv1x1_gradients_and_matmul_oracle():
    x, w, b = _param(2, 4, 4, 5), _param(3, 5, 1, 1), _param(3)
    probe = _away_from_zero(2, 4, 4, 3)
    _check(lambda: abs_mean(add(conv2d(x, w, b), probe)), [x, w, b])
    expected = np.einsum("oc,nhwc->nhwo", w.data[:, :, 0, 0], x.data) + b.data
    np.testing.assert_allclose(conv2d(x, w, b).data, expected, atol=1e-12)


def test_conv3x3_direct_oracle():
    x = Tensor(rng.normal(size=(1, 5, 5, 2)))
    w = Tensor(rng.normal(size=(3, 2, 3, 3)))
    xp = np.pad(x.data, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ref = np.zeros((1, 5, 5, 3))
    for o in range(3):
        for i in range(5):
            for j in range(5):
                ref[0, i, j, o] = (xp[0, i:i + 3, j:j + 3].transpose(2, 0, 1) * w.data[o]).sum()
    np.testing.assert_allclose(conv2d(x, w).data, ref, atol=1e-12)
    ident = np.zeros((1, 1, 3, 3))
    ident[0, 0, 1, 1] = 1
    img = Tensor(rng.normal(size=(2, 7, 7, 1)))
    np.testing.assert_array_equal(conv2d(img, Tensor(ident)).data, img.data)


def test_relu_concat_split_gradients():
    x = _away_from_zero(2, 4, 4, 3)
    y = _away_from_zero(2, 4, 4, 2)
    probe = _away_from_zero(2, 4, 4, 5)
    _check(lambda: abs_mean(add(concat([relu(x), y]), probe)), [x, y])
    z = _away_from_zero(6, 2, 2, 3)
    p1 = _away_from_zero(2, 2, 2, 3)
    p2 = _away_from_zero(4, 2, 2, 3)

    def f():
        a, b = split(z, [2, 4], axis=0)
        return add(abs_mean(add(a, p1)), scale(abs_mean(sub(b, p2)), 0.7))

    _check(f, [z])


def test_relu_values():
    x = Tensor(np.array([-1.0, 0.0, 2.0]), requires_grad=True)
    with Tape() as tape:
        out = abs_mean(relu(x), per=1)
    tape.backward(out)
    np.testing.assert_array_equal(out.data, 2.0)
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


def test_add_sub_scale_abs_mean_gradients():
    a, b = _away_from_zero(3, 4), _away_from_zero(3, 4)
    _check(lambda: abs_mean(sub(scale(add(a, b), 2.5), scale(b, -1.5)), per=3), [a, b])
    np.testing.assert_allclose(abs_mean(Tensor(np.array([-2.0, 4.0]))).data, 3.0)


def test_shape_errors():
    with pytest.raises(ValueError):
        add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))
    with pytest.raises(ValueError):
        conv2d(Tensor(np.zeros((1, 4, 4, 2))), Tensor(np.zeros((1, 3, 3, 3))))
    with pytest.raises(ValueError):
        conv2d(Tensor(np.zeros((1, 4, 4, 2))), Tensor(np.zeros((1, 2, 5, 5))))
    with pytest.raises(ValueError):
        split(Tensor(np.zeros((4, 2))), [1, 2], axis=0)
    with pytest.raises(ValueError):
        Tape().backward(Tensor(np.zeros(3)))


def test_gradients_accumulate_when_reused():
    x = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    with Tape() as tape:
        out = add(abs_mean(x, per=1), abs_mean(x, per=1))
    tape.backward(out)
    np.testing.assert_array_equal(x.grad, [2.0, -2.0])


def test_no_recording_without_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    y = add(x, x)
    assert not y.requires_grad


def test_full_wan_gradient_double_precision():
    cfg = DESK_WAN
    net = WAN(cfg, seed=3, dtype=np.float64)
    x = Tensor(np.random.default_rng(5).uniform(0, 1, (2, 8, 8, 1)), requires_grad=True)
    target = Tensor(np.random.default_rng(6).uniform(0, 1, (2, 8, 8, 1)))
    f = lambda: abs_mean(sub(net(x), target))
    params = net.parameters()
    grads = analytic_grad(f, params + [x])
    sel = np.random.default_rng(7)
    for t, g in zip(params + [x], grads):
        idx = sel.choice(t.data.size, size=min(6, t.data.size), replace=False)
        num = numeric_grad(f, t, index=idx)
        assert rel_error(g.reshape(-1)[idx], num) <= 1e-4


def test_wan_is_fully_convolutional():
    net = WAN(WanConfig(1, 2, 4, 2), seed=0)
    for shape in ((1, 64, 64, 1), (3, 16, 24, 1)):
        assert net(Tensor(np.zeros(shape))).shape == shape
    with pytest.raises(ValueError):
        net(Tensor(np.zeros((1, 8, 8, 2))))


def test_wan_seed_determinism():
    a = [p.data for p in WAN(DESK_WAN, seed=1).parameters()]
    b = [p.data for p in WAN(DESK_WAN, seed=1).parameters()]
    c = [p.data for p in WAN(DESK_WAN, seed=2).parameters()]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not all(np.array_equal(x, y) for x, y in zip(a, c))


def _reference_adam(p, grads, lr, b1, b2, eps):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return p


def test_adam_first_step_moves_by_lr():
    p = Tensor(np.array([1.0, -2.0, 3.0]))
    state = adam_init([p])
    adam_step([p], [np.array([0.5, -4.0, 1e-3])], state, lr=0.1)
    np.testing.assert_allclose(p.data, [0.9, -1.9, 2.9], atol=1e-5)
    assert state.t == 1


def test_adam_matches_reference():
    p0 = rng.normal(size=5)
    grads = [rng.normal(size=5) for _ in range(4)]
    p = Tensor(p0.copy())
    state = adam_init([p])
    for g in grads:
        adam_step([p], [g], state, lr=1e-2, beta1=0.8, beta2=0.99, eps=1e-8)
    np.testing.assert_allclose(p.data, _reference_adam(p0, grads, 1e-2, 0.8, 0.99, 1e-8), atol=1e-12)
    with pytest.raises(ValueError):
        adam_step([p], [np.zeros(4)], state)


def test_checkpoint_round_trip(tmp_path):
    net = WAN(WanConfig(2, 2, 4, 3), seed=9, dtype=np.float32)
    save_checkpoint(tmp_path / "n.ckpt", net, {"method": "M3", "best_epoch": 4})
    loaded, meta = load_checkpoint(tmp_path / "n.ckpt")
    assert meta == {"method": "M3", "best_epoch": 4}
    assert loaded.cfg == net.cfg and loaded.seed == 9
    for a, b in zip(net.parameters(), loaded.parameters()):
        assert a.data.dtype == b.data.dtype and np.array_equal(a.data, b.data)
    x = np.random.default_rng(0).uniform(0, 1, (2, 16, 16))
    np.testing.assert_array_equal(net.infer(x), loaded.infer(x))
    (tmp_path / "bad.ckpt").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad.ckpt")


def test_config_validation():
    with pytest.raises(ValueError):
        WanConfig(0, 3, 16, 8)
    with pytest.raises(ValueError):
        WanConfig(3, 3, 16.5, 8)


def test_identity_init_passes_input_through():
    from wanbench.neural import build_wan

    net = build_wan(DESK_WAN, seed=2)
    x = np.random.default_rng(8).uniform(0, 1, (2, 16, 16))
    np.testing.assert_allclose(net.infer(x), x, atol=1e-12)
    assert not np.allclose(build_wan(DESK_WAN, seed=2, identity=False).infer(x), x)
