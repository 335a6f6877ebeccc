import numpy as np
import pytest

from nodestage.errors import BatchSizeError, FormatError, ShapeError
from nodestage.segnet import layers as L
from nodestage.segnet.unet import (NetConfig, backward, bce_loss, checkpoint_layout, forward, init_params,
                                   load_checkpoint, save_checkpoint)

from oracles import bce_scalar

TINY = NetConfig(input_px=8, depth=1, base_channels=2)


def tiny_batch(seed=0):
    r = np.random.default_rng(seed)
    x = r.random((2, 3, 8, 8))
    y = (r.random((2, 1, 8, 8)) > 0.5).astype(np.float64)
    return x, y


def layer_type(name):
    if name.endswith(".gamma"):
        return "bn.gamma"
    if name.endswith(".beta"):
        return "bn.beta"
    if ".up." in name:
        return "upconv." + name[-1]
    if name.startswith("final"):
        return "final." + name[-1]
    return "conv3x3.w"


def gradient_check(params, x, y, step=1e-4):
    """Worst relative error per layer type over every parameter."""
    def loss():
        probs, _ = forward(params, x, "train", np.random.default_rng(7), keep=False)
        return bce_loss(probs, y)

    probs, cache = forward(params, x, "train", np.random.default_rng(7))
    grads = backward(params, cache, y)
    worst, counts = {}, {}
    for name, w in params.weights.items():
        flat = w.reshape(-1)
        g = grads[name].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            up = loss()
            flat[i] = old - step
            down = loss()
            flat[i] = old
            num = (up - down) / (2 * step)
            denom = max(abs(num), abs(g[i]))
            rel = 0.0 if denom < 1e-10 else abs(num - g[i]) / denom
            kind = layer_type(name)
            worst[kind] = max(worst.get(kind, 0.0), rel)
            counts[kind] = counts.get(kind, 0) + 1
    return worst, counts


def test_gradient_check_all_parameters():
    params = init_params(TINY, seed=3, dtype=np.float64)
    # Non-trivial BN affine terms so their gradients are exercised.
    r = np.random.default_rng(4)
    for k in params.weights:
        if k.endswith((".gamma", ".beta", ".b")):
            params.weights[k] = params.weights[k] + 0.3 * r.standard_normal(params.weights[k].shape)
    x, y = tiny_batch()
    worst, counts = gradient_check(params, x, y)
    assert set(worst) == {"conv3x3.w", "bn.gamma", "bn.beta", "upconv.w", "upconv.b", "final.w", "final.b"}
    assert max(worst.values()) <= 1e-4, worst


def test_loss_scale_scales_gradients():
    params = init_params(TINY, seed=1)
    x, y = tiny_batch()
    _, cache = forward(params, x, "train", np.random.default_rng(0))
    g1 = backward(params, cache, y)
    g3 = backward(params, cache, y, scale=3.0)
    for k in g1:
        np.testing.assert_allclose(g3[k], 3.0 * g1[k], rtol=1e-12, atol=1e-15)


def test_final_bias_stationary_at_saturated_optimum():
    params = init_params(TINY, seed=1)
    x, _ = tiny_batch()
    params.weights["final.w"][:] = 0.0
    params.weights["final.b"][:] = 50.0  # sigmoid saturates beyond the clamp
    _, cache = forward(params, x, "train", np.random.default_rng(0))
    g = backward(params, cache, np.ones((2, 1, 8, 8)))
    assert abs(g["final.b"][0]) < 1e-12


def test_output_shape_and_range():
    cfg = NetConfig(input_px=16, depth=2, base_channels=4)
    params = init_params(cfg, seed=0)
    probs, _ = forward(params, np.random.default_rng(0).random((3, 3, 16, 16)), "eval")
    assert probs.shape == (3, 1, 16, 16)
    assert ((probs > 0) & (probs < 1)).all()


def test_zero_final_gives_half():
    params = init_params(TINY, seed=0, zero_final=True)
    probs, _ = forward(params, np.random.default_rng(0).random((2, 3, 8, 8)), "eval")
    assert (probs == 0.5).all()


def test_shape_and_batch_errors():
    params = init_params(TINY)
    with pytest.raises(ShapeError):
        forward(params, np.zeros((2, 3, 16, 16)), "eval")
    with pytest.raises(BatchSizeError):
        forward(params, np.zeros((1, 3, 8, 8)), "train")


def test_bn_batch_statistics():
    cfg = NetConfig(input_px=16, depth=2, base_channels=4)
    params = init_params(cfg, seed=2)
    x = np.random.default_rng(5).standard_normal((4, 3, 16, 16))
    _, cache = forward(params, x, "train", np.random.default_rng(0))
    bns = [k for k in cache.items if ".bn" in k]
    assert len(bns) == 4 * cfg.depth + 2
    for k in bns:
        xhat = cache.items[k][0]
        assert np.abs(xhat.mean(axis=(0, 1, 2))).max() <= 1e-6
        assert np.abs(xhat.var(axis=(0, 1, 2)) - 1).max() <= 1e-4


def test_bn_running_stats_update():
    x = np.random.default_rng(0).standard_normal((2, 3, 3, 2)) * 2 + 1
    _, _, rm, rv = L.batchnorm_forward(x, np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), True, 1e-5, 0.1)
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 1, 2)))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 1, 2), ddof=1))


def test_dropout_monte_carlo_mean():
    cfg = NetConfig(input_px=8, depth=1, base_channels=4, dropout_p=0.5)
    params = init_params(cfg, seed=0)
    _, cache = forward(params, np.random.default_rng(1).random((2, 3, 8, 8)), "train", np.random.default_rng(0))
    h = cache.items["bott.pre_dropout"]
    r = np.random.default_rng(11)
    acc = np.zeros_like(h)
    draws = 10_000
    for _ in range(draws):
        acc += L.dropout_forward(h, cfg.dropout_p, r)[0]
    rel = np.linalg.norm(acc / draws - h) / np.linalg.norm(h)
    assert rel <= 0.02


def test_bce_examples():
    y = (np.random.default_rng(0).random((1, 1, 4, 4)) > 0.5).astype(float)
    assert bce_loss(y, y) <= -np.log(1 - 1e-7) + 1e-15
    assert bce_loss(np.full((1, 1, 4, 4), 0.5), y) == pytest.approx(np.log(2), abs=1e-15)
    p = np.random.default_rng(1).random((1, 1, 4, 4))
    assert bce_loss(p, y) == pytest.approx(bce_scalar(p.ravel().tolist(), y.ravel().tolist()), abs=1e-12)


def test_checkpoint_round_trip(tmp_path):
    cfg = NetConfig(input_px=16, depth=2, base_channels=3, dropout_p=0.25)
    params = init_params(cfg, seed=9)
    params.stats["enc0.bn1.mean"][:] = [0.1, 0.2, 0.3]
    p = tmp_path / "m.unet"
    save_checkpoint(params, p)
    back = load_checkpoint(p)
    assert back.config == cfg
    for k in params.weights:
        assert np.array_equal(back.weights[k], params.weights[k])
    for k in params.stats:
        assert np.array_equal(back.stats[k], params.stats[k])
    n_values = sum(v.size for v in params.weights.values()) + sum(v.size for v in params.stats.values())
    assert p.stat().st_size == 4 + 5 * 4 + 3 * 8 + 8 * n_values
    assert checkpoint_layout(cfg)[:4] == ["enc0.conv1.w", "enc0.bn1.gamma", "enc0.bn1.beta", "enc0.bn1.mean"]


def test_checkpoint_errors(tmp_path):
    p = tmp_path / "m.unet"
    save_checkpoint(init_params(TINY), p)
    data = p.read_bytes()
    (tmp_path / "bad").write_bytes(b"XNET" + data[4:])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "bad")
    (tmp_path / "short").write_bytes(data[:-8])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "short")
