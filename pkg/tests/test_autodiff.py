import numpy as np
import pytest

from arsq import autodiff as ad
from arsq.autodiff import Adam, DenseNetwork, DenseNetworkConfig, Tensor

from _fd import probe_gradients


def param(values):
    return Tensor(np.array(values, dtype=float), requires_grad=True, name="p")


def test_square_gradient():
    x = param(3.0)
    (x * x).backward()
    assert x.grad == pytest.approx(6.0)


def test_logsumexp_gradient():
    u = param([0.0, 0.0])
    ad.logsumexp(u, axis=-1).backward()
    assert u.grad == pytest.approx([0.5, 0.5])


def test_backward_requires_scalar():
    with pytest.raises(ValueError):
        param([1.0, 2.0]).backward()


def test_gradients_accumulate_over_shared_subexpressions():
    x = param(2.0)
    y = x * x + x * 3.0
    y.backward()
    assert x.grad == pytest.approx(7.0)


def test_no_grad_records_nothing():
    x = param([1.0, 2.0])
    with ad.no_grad():
        y = (x * 2.0).sum()
    assert not y.requires_grad


def test_zero_weight_bias_free_network_outputs_zero():
    net = DenseNetwork(DenseNetworkConfig(3, (4,), 2, use_bias=False), np.random.default_rng(0))
    for p in net.parameters():
        p.data[...] = 0.0
    assert np.all(net(np.ones((5, 3))).data == 0.0)


def test_identity_linear_layer():
    layer = ad.Linear(2, 2, np.random.default_rng(0), "lin", use_bias=False)
    layer.weight.data[...] = np.eye(2)
    assert layer(Tensor(np.array([[1.0, 2.0]]))).data.tolist() == [[1.0, 2.0]]


def test_seeded_network_is_bit_identical():
    cfg = DenseNetworkConfig(3, (8, 8), 2)
    x = np.random.default_rng(1).normal(size=(4, 3))
    a = DenseNetwork(cfg, np.random.default_rng(5))(x).data
    b = DenseNetwork(cfg, np.random.default_rng(5))(x).data
    assert a.tobytes() == b.tobytes()


def test_forward_shape_mismatch_raises():
    net = DenseNetwork(DenseNetworkConfig(3, (4,), 1), np.random.default_rng(0))
    with pytest.raises(ValueError):
        net(np.ones((2, 4)))


@pytest.mark.parametrize("activation", ["tanh", "silu_layernorm"])
def test_network_gradients_match_finite_differences(activation):
    rng = np.random.default_rng(0)
    net = DenseNetwork(DenseNetworkConfig(3, (6, 5), 2, activation), rng)
    x = rng.normal(size=(7, 3))
    target = rng.normal(size=(7, 2))

    def loss():
        return ad.square(net(x) - target).mean()

    assert probe_gradients(loss, net.parameters(), rng, 60) < 1e-4


def test_elementwise_ops_match_finite_differences():
    rng = np.random.default_rng(1)
    a = Tensor(rng.normal(size=(4, 5)), True, "a")
    b = Tensor(rng.uniform(0.5, 2.0, size=(4, 5)), True, "b")
    idx = rng.integers(0, 5, size=(4, 1))

    def loss():
        x = ad.sigmoid(a) * ad.log(b) + ad.exp(a * 0.3) / b - ad.power(b, 1.5)
        y = ad.concat([x, ad.silu(a)], axis=1)[:, 2:8]
        z = ad.gather(x, idx).sum() + ad.logsumexp(y, axis=-1).sum() + ad.clamp_min(a, 0.1).sum()
        return z + ad.reshape(y, (-1,)).mean()

    assert probe_gradients(loss, [a, b], rng, 60) < 1e-4


def test_masked_logsumexp_ignores_masked_entries():
    u = param([[1.0, 2.0, 3.0]])
    mask = np.array([[True, False, True]])
    out = ad.logsumexp(u, axis=-1, mask=mask)
    assert out.data[0] == pytest.approx(np.log(np.exp(1) + np.exp(3)))
    out.sum().backward()
    assert u.grad[0, 1] == 0.0


def test_adam_zero_gradient_leaves_parameters():
    p = param([1.0, -2.0])
    opt = Adam([p], lr=0.1)
    p.grad = np.zeros(2)
    opt.step()
    assert p.data.tolist() == [1.0, -2.0]


def test_adam_first_step_moves_by_lr():
    p = param([1.0])
    opt = Adam([p], lr=0.1)
    p.grad = np.ones(1)
    opt.step()
    assert p.data[0] == pytest.approx(0.9, abs=1e-6)


def test_adam_decoupled_weight_decay():
    p = param([2.0])
    opt = Adam([p], lr=0.1, weight_decay=0.1)
    p.grad = np.zeros(1)
    opt.step()
    assert p.data[0] == pytest.approx(2.0 - 0.1 * 0.1 * 2.0)


def test_adam_rejects_non_finite_gradient_with_name():
    p = Tensor(np.ones(2), True, "layer/weight")
    opt = Adam([p])
    p.grad = np.array([1.0, np.nan])
    with pytest.raises(ad.DivergenceError, match="layer/weight"):
        opt.step()


def test_ema_limits_and_formula():
    t, o = param([1.0]), param([0.0])
    ad.ema_update([t], [o], 1.0)
    assert t.data[0] == 1.0
    ad.ema_update([t], [o], 0.995)
    assert t.data[0] == pytest.approx(0.995)
    ad.ema_update([t], [o], 0.0)
    assert t.data[0] == 0.0
    with pytest.raises(ValueError):
        ad.ema_update([t], [o], 1.5)


def test_checkpoint_round_trip_and_layout(tmp_path):
    arrays = {"a/weight": np.arange(6.0).reshape(2, 3), "b": np.array(2.5), "ü": np.array([1.0, -1.0])}
    path = tmp_path / "m.ckpt"
    ad.save_checkpoint(path, arrays)
    raw = path.read_bytes()
    assert raw[:8] == b"ARSQCKPT"
    assert int.from_bytes(raw[8:12], "little") == 1
    assert int.from_bytes(raw[12:20], "little") == 3
    back = ad.load_checkpoint(path)
    assert list(back) == list(arrays)
    for k in arrays:
        assert np.array_equal(back[k], arrays[k])


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTACKPT" + bytes(12))
    with pytest.raises(ValueError):
        ad.load_checkpoint(path)
    ad.save_checkpoint(path, {"x": np.ones(2)})
    path.write_bytes(path.read_bytes() + b"\0")
    with pytest.raises(ValueError, match="trailing"):
        ad.load_checkpoint(path)
