"""Hand-written backprop against central finite differences, Adam's
first-step closed form, and checkpoint byte-stability."""

import math

import numpy as np
import pytest

from ddmlab.diskio import CacheFormatError
from ddmlab.nets import (
    EXPERT_HIDDEN,
    ROUTER_HIDDEN,
    Grads,
    adam_update,
    assemble_input,
    checkpoint_roundtrip,
    default_expert_widths,
    default_router_widths,
    forward_mlp,
    forward_velocity,
    init_opt_state,
    init_params,
    load_checkpoint,
    loss_and_gradients,
    save_checkpoint,
    time_features,
    xent_loss_and_gradients,
)

GRADCHECK_WIDTHS = [40, 32, 32, 40]


def _perturbed(net, layer, idx, delta, bias=False):
    ws = [w.copy() for w in net.weights]
    bs = [b.copy() for b in net.biases]
    if bias:
        bs[layer][idx] += delta
    else:
        ws[layer][idx] += delta
    return type(net)(weights=tuple(ws), biases=tuple(bs))


def _rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def _mse_batch(rng, in_w, out_w, n=4, cond_dim=8):
    # x_t fills whatever the input width leaves after time features and cond
    x_dim = in_w - 8 - cond_dim
    batch = []
    for _ in range(n):
        batch.append((
            rng.standard_normal(x_dim),
            float(rng.uniform(0.0, 1.0)),
            rng.standard_normal(cond_dim),
            rng.standard_normal(out_w),
        ))
    return batch


def test_gradcheck_mse_central_differences():
    """Analytic gradients vs (L(p+h) - L(p-h)) / 2h on 150 sampled entries."""
    rng = np.random.default_rng(0)
    net = init_params(GRADCHECK_WIDTHS, seed=1)
    batch = _mse_batch(rng, GRADCHECK_WIDTHS[0], GRADCHECK_WIDTHS[-1])
    _, grads = loss_and_gradients(net, batch)
    h = 1e-5
    worst = 0.0
    for _ in range(150):
        layer = int(rng.integers(len(net.weights)))
        use_bias = rng.uniform() < 0.2
        if use_bias:
            idx = int(rng.integers(net.biases[layer].size))
            analytic = grads.biases[layer][idx]
        else:
            idx = tuple(int(rng.integers(s)) for s in net.weights[layer].shape)
            analytic = grads.weights[layer][idx]
        lp, _ = loss_and_gradients(_perturbed(net, layer, idx, +h, use_bias), batch)
        lm, _ = loss_and_gradients(_perturbed(net, layer, idx, -h, use_bias), batch)
        worst = max(worst, _rel_err(analytic, (lp - lm) / (2 * h)))
    assert worst < 1e-4


def test_gradcheck_cross_entropy():
    rng = np.random.default_rng(2)
    widths = [10, 16, 16, 3]
    net = init_params(widths, seed=3)
    inputs = rng.standard_normal((6, 10))
    labels = rng.integers(0, 3, size=6)
    _, grads = xent_loss_and_gradients(net, inputs, labels)
    h = 1e-5
    worst = 0.0
    for _ in range(100):
        layer = int(rng.integers(len(net.weights)))
        use_bias = rng.uniform() < 0.2
        if use_bias:
            idx = int(rng.integers(net.biases[layer].size))
            analytic = grads.biases[layer][idx]
        else:
            idx = tuple(int(rng.integers(s)) for s in net.weights[layer].shape)
            analytic = grads.weights[layer][idx]
        lp, _ = xent_loss_and_gradients(_perturbed(net, layer, idx, +h, use_bias), inputs, labels)
        lm, _ = xent_loss_and_gradients(_perturbed(net, layer, idx, -h, use_bias), inputs, labels)
        worst = max(worst, _rel_err(analytic, (lp - lm) / (2 * h)))
    assert worst < 1e-4


# -------------------------------------------------------------- init / widths


def test_init_bounds_and_zero_biases():
    net = init_params([12, 7, 5], seed=0)
    for w, fan_in in zip(net.weights, [12, 7]):
        assert np.max(np.abs(w)) <= 1.0 / math.sqrt(fan_in)
        assert np.std(w) > 0.0
    for b in net.biases:
        assert np.all(b == 0.0)


def test_init_deterministic_in_seed():
    a = init_params([8, 8, 4], seed=5)
    b = init_params([8, 8, 4], seed=5)
    c = init_params([8, 8, 4], seed=6)
    assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
    assert any(not np.array_equal(x, y) for x, y in zip(a.weights, c.weights))


def test_default_width_helpers():
    assert default_expert_widths(32, 16) == [32 + 16 + 8, *EXPERT_HIDDEN, 32]
    assert default_router_widths(32, 4, 3) == [32 + 4 + 8, *ROUTER_HIDDEN, 3]


# ------------------------------------------------------------- time features


def test_time_features_at_zero_and_shape():
    f = time_features(0.0)
    assert f.shape == (8,)
    assert np.allclose(f[0::2], 0.0)  # sines
    assert np.allclose(f[1::2], 1.0)  # cosines


def test_time_features_frequency_doubling():
    t = 0.13
    f = time_features(t, t_w=6)
    for i, freq in enumerate([1.0, 2.0, 4.0]):
        assert f[2 * i] == pytest.approx(math.sin(2 * math.pi * freq * t))
        assert f[2 * i + 1] == pytest.approx(math.cos(2 * math.pi * freq * t))


def test_time_features_rejects_bad_inputs():
    with pytest.raises(ValueError):
        time_features(-0.1)
    with pytest.raises(ValueError):
        time_features(1.1)
    with pytest.raises(ValueError):
        time_features(0.5, t_w=7)


def test_assemble_input_width_mismatch():
    # 9 - 4 - 3 = 2 leaves a valid even time-feature width
    assert assemble_input(np.zeros(4), 0.5, np.zeros(3), 9).shape == (9,)
    with pytest.raises(ValueError):
        assemble_input(np.zeros(4), 0.5, np.zeros(3), 10)  # odd remainder
    with pytest.raises(ValueError):
        assemble_input(np.zeros(4), 0.5, np.zeros(3), 7)  # no room for time features


def test_forward_velocity_matches_batch_forward():
    net = init_params([12, 9, 4], seed=7)
    rng = np.random.default_rng(8)
    x_t = rng.standard_normal(4)
    cond = rng.standard_normal(0)  # cond may be empty if widths say so
    # 12 = 4 + 0 + 8
    v1 = forward_velocity(net, x_t, 0.3, cond)
    v2 = forward_mlp(net, assemble_input(x_t, 0.3, cond, 12))
    assert np.allclose(v1, v2)
    batch_out = forward_mlp(net, np.stack([assemble_input(x_t, 0.3, cond, 12)] * 3))
    assert batch_out.shape == (3, 4)
    assert np.allclose(batch_out[1], v1)


# ---------------------------------------------------------------------- adam


def test_adam_first_step_closed_form():
    """With constant gradient g, the bias-corrected first step is
    -lr * g / (|g| + eps) regardless of magnitude."""
    net = init_params([3, 2], seed=9)
    opt = init_opt_state(net)
    g = Grads(
        weights=(np.full((2, 3), 0.25),),
        biases=(np.full(2, -4.0),),
    )
    new_net, new_opt = adam_update(net, g, opt)
    expect_w = -1e-3 * 0.25 / (0.25 + 1e-8)
    expect_b = -1e-3 * -4.0 / (4.0 + 1e-8)
    assert np.allclose(new_net.weights[0] - net.weights[0], expect_w, rtol=0, atol=1e-15)
    assert np.allclose(new_net.biases[0] - net.biases[0], expect_b, rtol=0, atol=1e-15)
    assert new_opt.step == 1
    # unit gradient reproduces the canonical -1e-3 / (1 + 1e-8) displacement
    g1 = Grads(weights=(np.ones((2, 3)),), biases=(np.ones(2),))
    stepped, _ = adam_update(net, g1, opt)
    assert np.allclose(stepped.weights[0] - net.weights[0], -1e-3 / (1.0 + 1e-8))


def test_adam_rejects_shape_and_nonfinite():
    net = init_params([3, 2], seed=10)
    opt = init_opt_state(net)
    bad_shape = Grads(weights=(np.zeros((3, 2)),), biases=(np.zeros(2),))
    with pytest.raises(ValueError):
        adam_update(net, bad_shape, opt)
    bad_val = Grads(weights=(np.full((2, 3), np.nan),), biases=(np.zeros(2),))
    with pytest.raises(ValueError):
        adam_update(net, bad_val, opt)


def test_adam_decreases_quadratic_loss():
    # sanity: 200 steps on f(w) = |w|^2 shrink the parameters
    net = init_params([4, 3], seed=11)
    opt = init_opt_state(net, lr=1e-2)
    start = float(sum(np.sum(w ** 2) for w in net.weights))
    for _ in range(200):
        g = Grads(
            weights=tuple(2.0 * w for w in net.weights),
            biases=tuple(2.0 * b for b in net.biases),
        )
        net, opt = adam_update(net, g, opt)
    assert float(sum(np.sum(w ** 2) for w in net.weights)) < 0.05 * start


# --------------------------------------------------------------- checkpoints


def test_checkpoint_roundtrip_bit_identical(tmp_path):
    net = init_params([10, 8, 6], seed=12)
    opt = init_opt_state(net, lr=3e-4)
    rng = np.random.default_rng(13)
    g = Grads(
        weights=tuple(rng.standard_normal(w.shape) for w in net.weights),
        biases=tuple(rng.standard_normal(b.shape) for b in net.biases),
    )
    net, opt = adam_update(net, g, opt)
    path = tmp_path / "ck.ckpt"
    net2, opt2 = checkpoint_roundtrip(net, opt, path)
    for a, b in zip(net.weights + net.biases, net2.weights + net2.biases):
        assert a.tobytes() == b.tobytes()
    for a, b in zip(opt.m_weights + opt.v_weights, opt2.m_weights + opt2.v_weights):
        assert a.tobytes() == b.tobytes()
    assert opt2.step == 1 and opt2.lr == 3e-4


def test_checkpoint_rewrite_is_byte_stable(tmp_path):
    net = init_params([6, 5], seed=14)
    opt = init_opt_state(net)
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(net, opt, p1)
    save_checkpoint(net, opt, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_header_width_edit_detected(tmp_path):
    net = init_params([6, 5], seed=15)
    opt = init_opt_state(net)
    path = tmp_path / "w.ckpt"
    save_checkpoint(net, opt, path)
    raw = path.read_bytes()
    path.write_bytes(raw.replace(b"6,5", b"6,7", 1))
    with pytest.raises(CacheFormatError):
        load_checkpoint(path)
