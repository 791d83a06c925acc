"""Low-latency recurrent enhancer: cells, shapes, streaming, budgets."""

import numpy as np
import pytest

from nwfbeam.framing import CONCAT, OVERLAP_ADD, FrameSpec, pad_and_frame
from nwfbeam.llrnn import (
    LlrnnConfig,
    LlrnnWeights,
    count_flops,
    count_params,
    forward,
    forward_frames,
    init_weights,
    layer_norm,
    lstm_cell,
    prelu,
)


def _config(channels=8, window=256, hop=16, out=32, hidden=128, blocks=2,
            mode=OVERLAP_ADD):
    return LlrnnConfig(
        channels=channels,
        frame=FrameSpec(window, hop, out, mode=mode),
        hidden=hidden,
        blocks=blocks,
    )


def test_layer_norm_unit_example():
    # x=[1,-1]: zero mean, unit population variance, identity gain
    out = layer_norm(np.array([1.0, -1.0]), np.ones(2), np.zeros(2), eps=0.0)
    np.testing.assert_allclose(out, [1.0, -1.0], atol=1e-12)


def test_layer_norm_gain_bias_and_eps():
    x = np.array([[2.0, 2.0, 2.0]])  # zero variance: eps keeps it finite
    out = layer_norm(x, np.full(3, 2.0), np.full(3, 0.5), eps=1e-5)
    np.testing.assert_allclose(out, np.full((1, 3), 0.5), atol=1e-12)


def test_prelu_per_feature_slopes():
    x = np.array([[3.0, -2.0], [-4.0, 1.0]])
    a = np.array([0.25, 0.5])
    np.testing.assert_allclose(prelu(x, a), [[3.0, -1.0], [-1.0, 1.0]])


def test_lstm_cell_zero_weights_frozen_value():
    # all-zero weights and inputs with carried cell state c=1:
    # i=f=o=sigmoid(0)=0.5, g=tanh(0)=0, c'=0.5, h'=0.5*tanh(0.5)
    hidden = 3
    wx = np.zeros((4 * hidden, hidden))
    wh = np.zeros((4 * hidden, hidden))
    b = np.zeros(4 * hidden)
    h, c = lstm_cell(np.zeros(hidden), np.zeros(hidden), np.ones(hidden), wx, wh, b)
    np.testing.assert_allclose(c, np.full(hidden, 0.5), atol=1e-12)
    np.testing.assert_allclose(h, np.full(hidden, 0.5 * np.tanh(0.5)), atol=1e-12)


def test_lstm_cell_gate_order_input_forget_cell_output():
    # drive one gate at a time through the bias to pin the [i, f, g, o] layout
    hidden = 1
    wx = np.zeros((4, 1))
    wh = np.zeros((4, 1))
    big = 30.0
    # open input gate only, g stays tanh(0)=0: cell resets toward i*g = 0
    b = np.array([big, -big, 0.0, -big])
    h, c = lstm_cell(np.zeros(1), np.zeros(1), np.ones(1), wx, wh, b)
    np.testing.assert_allclose(c, [0.0], atol=1e-10)
    # open forget gate only: cell state carried through unchanged
    b = np.array([-big, big, 0.0, -big])
    h, c = lstm_cell(np.zeros(1), np.zeros(1), np.ones(1), wx, wh, b)
    np.testing.assert_allclose(c, [1.0], atol=1e-10)
    np.testing.assert_allclose(h, [0.0], atol=1e-10)
    # open output gate too: h = tanh(c)
    b = np.array([-big, big, 0.0, big])
    h, c = lstm_cell(np.zeros(1), np.zeros(1), np.ones(1), wx, wh, b)
    np.testing.assert_allclose(h, [np.tanh(1.0)], atol=1e-10)


def test_init_weights_shapes_and_determinism():
    cfg = _config(channels=3, window=32, hop=8, out=8, hidden=16, mode=CONCAT)
    w1 = init_weights(cfg, seed=5)
    w2 = init_weights(cfg, seed=5)
    assert w1.in_proj_w.shape == (16, 32)
    assert w1.spatial_w.shape == (16, 3 * 16)
    assert len(w1.blocks) == 2
    assert w1.blocks[0].lstm_wx.shape == (64, 16)
    assert w1.out_proj_w.shape == (8, 16)
    np.testing.assert_array_equal(w1.in_proj_w, w2.in_proj_w)
    np.testing.assert_array_equal(w1.blocks[1].lstm_wh, w2.blocks[1].lstm_wh)
    np.testing.assert_allclose(w1.prelu_a, np.full(16, 0.25))


def test_zero_weights_give_zero_output():
    cfg = _config(channels=2, window=16, hop=4, out=4, hidden=8, mode=CONCAT)
    weights = init_weights(cfg, seed=0)
    zeroed = LlrnnWeights(
        in_proj_w=np.zeros_like(weights.in_proj_w),
        in_proj_b=np.zeros_like(weights.in_proj_b),
        in_ln_g=np.zeros_like(weights.in_ln_g),
        in_ln_b=np.zeros_like(weights.in_ln_b),
        prelu_a=np.zeros_like(weights.prelu_a),
        spatial_w=np.zeros_like(weights.spatial_w),
        spatial_b=np.zeros_like(weights.spatial_b),
        blocks=[
            type(b)(
                ln_g=np.zeros_like(b.ln_g),
                ln_b=np.zeros_like(b.ln_b),
                lstm_wx=np.zeros_like(b.lstm_wx),
                lstm_wh=np.zeros_like(b.lstm_wh),
                lstm_b=np.zeros_like(b.lstm_b),
            )
            for b in weights.blocks
        ],
        out_proj_w=np.zeros_like(weights.out_proj_w),
        out_proj_b=np.zeros_like(weights.out_proj_b),
    )
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 64))
    out = forward(x, zeroed, cfg)
    np.testing.assert_array_equal(out, np.zeros((1, 64)))


def test_forward_output_shape_and_alignment():
    cfg = _config(channels=4, window=64, hop=16, out=16, hidden=24, mode=CONCAT)
    weights = init_weights(cfg, seed=2)
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 500))
    out = forward(x, weights, cfg)
    assert out.shape == (1, 500)
    assert np.all(np.isfinite(out))


def test_chunked_streaming_equals_full_utterance():
    # feeding the frame stream in pieces with carried recurrent state
    # reproduces the one-shot result
    cfg = _config(channels=3, window=32, hop=8, out=8, hidden=12, mode=CONCAT)
    weights = init_weights(cfg, seed=4)
    rng = np.random.default_rng(5)
    x = rng.standard_normal((3, 400))
    frames = pad_and_frame(x, cfg.frame).data
    full, _ = forward_frames(frames, weights)
    state = None
    chunks = []
    for lo, hi in ((0, 7), (7, 8), (8, 31), (31, frames.shape[1])):
        out, state = forward_frames(frames[:, lo:hi, :], weights, state=state)
        chunks.append(out)
    np.testing.assert_allclose(np.vstack(chunks), full, atol=1e-10)


def test_forward_rejects_channel_mismatch():
    cfg = _config(channels=4, window=32, hop=8, out=8, hidden=8, mode=CONCAT)
    weights = init_weights(cfg, seed=0)
    with pytest.raises(ValueError):
        forward(np.zeros((3, 100)), weights, cfg)


def test_count_params_frozen_values():
    # derived by summing the per-piece shapes; the published budget table
    # values 0.44M / 1.03M / 1.66M must sit within 5%
    table = {128: 432_288, 200: 1_021_032, 256: 1_650_976}
    published = {128: 0.44e6, 200: 1.03e6, 256: 1.66e6}
    for hidden, exact in table.items():
        cfg = _config(hidden=hidden)
        got = count_params(cfg)
        assert got == exact
        assert abs(got - published[hidden]) / published[hidden] < 0.05


def test_count_params_monotone_in_hidden():
    sizes = [count_params(_config(hidden=h)) for h in (128, 200, 256, 300, 400, 512)]
    assert all(a < b for a, b in zip(sizes, sizes[1:]))


def test_count_flops_frozen_value_and_published_band():
    cfg = _config(hidden=128)
    got = count_flops(cfg, sample_rate=16000)
    assert got == 1_322_240 * 1000  # flops/frame * frames/s
    assert abs(got - 1.34e9) / 1.34e9 < 0.05


def test_count_flops_halves_when_hop_doubles():
    cfg = _config(hidden=128)
    cfg2 = _config(hidden=128, hop=32, out=32)
    assert count_flops(cfg2) * 2 == count_flops(cfg)


def test_weight_tensor_naming_round_trip():
    cfg = _config(channels=2, window=16, hop=4, out=4, hidden=8, mode=CONCAT)
    weights = init_weights(cfg, seed=9)
    tensors = weights.to_tensors("dnn1")
    assert "dnn1.in_proj.w" in tensors
    assert "dnn1.blk0.lstm.wx" in tensors
    assert "dnn1.blk1.ln.g" in tensors
    assert "dnn1.out_proj.b" in tensors
    back = LlrnnWeights.from_tensors("dnn1", tensors)
    np.testing.assert_array_equal(back.spatial_w, weights.spatial_w)
    np.testing.assert_array_equal(back.blocks[1].lstm_b, weights.blocks[1].lstm_b)
