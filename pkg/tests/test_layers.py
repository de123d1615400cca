import math

import numpy as np
import pytest

from cruse.layers import (
    GruWeights,
    LstmWeights,
    activation_apply,
    conv2d_step,
    fc_forward,
    gru_step,
    lstm_step,
    parallel_rnn_step,
    skip_combine,
    tconv2d_step,
    zero_gru_weights,
    zero_lstm_weights,
)


def random_gru(rng, in_dims, width):
    return GruWeights(
        rng.standard_normal((3 * width, in_dims)),
        rng.standard_normal((3 * width, width)),
        rng.standard_normal(3 * width),
        rng.standard_normal(3 * width),
    )


def random_lstm(rng, in_dims, width):
    return LstmWeights(
        rng.standard_normal((4 * width, in_dims)),
        rng.standard_normal((4 * width, width)),
        rng.standard_normal(4 * width),
        rng.standard_normal(4 * width),
    )


# ---------------------------------------------------------------------------
# scalar-loop oracles, independent of the vectorized implementations


def _sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def gru_oracle(w, x, h):
    width = w.width
    out = np.zeros(width)
    for i in range(width):
        pre = [0.0, 0.0, 0.0]
        rec = [0.0, 0.0, 0.0]
        for gate in range(3):
            row = gate * width + i
            pre[gate] = w.b_input[row] + sum(w.w_input[row][j] * x[j] for j in range(len(x)))
            rec[gate] = w.b_hidden[row] + sum(w.w_hidden[row][j] * h[j] for j in range(width))
        r = _sig(pre[0] + rec[0])
        z = _sig(pre[1] + rec[1])
        n = math.tanh(pre[2] + r * rec[2])
        out[i] = (1.0 - z) * n + z * h[i]
    return out


def lstm_oracle(w, x, h, c):
    width = w.width
    h_out = np.zeros(width)
    c_out = np.zeros(width)
    for idx in range(width):
        g = [0.0] * 4
        for gate in range(4):
            row = gate * width + idx
            g[gate] = (
                w.b_input[row]
                + w.b_hidden[row]
                + sum(w.w_input[row][j] * x[j] for j in range(len(x)))
                + sum(w.w_hidden[row][j] * h[j] for j in range(width))
            )
        i, f, gg, o = _sig(g[0]), _sig(g[1]), math.tanh(g[2]), _sig(g[3])
        c_out[idx] = f * c[idx] + i * gg
        h_out[idx] = o * math.tanh(c_out[idx])
    return h_out, c_out


def conv_batch_oracle(weight, bias, frames):
    """Dense causal convolution over a whole utterance, loop form."""
    t_len, c_in, freq = frames.shape
    c_out, _, kt, kf = weight.shape
    f_out = (freq - 1) // 2 + 1
    out = np.zeros((t_len, c_out, f_out))
    for t in range(t_len):
        for o in range(c_out):
            for j in range(f_out):
                acc = bias[o]
                for dt in range(kt):
                    ts = t - (kt - 1) + dt
                    if ts < 0:
                        continue
                    for c in range(c_in):
                        for k in range(kf):
                            fi = 2 * j + k - 1  # symmetric pad of 1
                            if 0 <= fi < freq:
                                acc += weight[o, c, dt, k] * frames[ts, c, fi]
                out[t, o, j] = acc
    return out


def tconv_batch_oracle(weight, bias, frames, f_target):
    """Dense transposed convolution over a whole utterance, causally cropped."""
    t_len, c_in, freq = frames.shape
    c_out, _, kt, kf = weight.shape
    full = (freq - 1) * 2 + kf
    left = (full - f_target) // 2
    up = np.zeros((t_len + kt - 1, c_out, full))
    for t in range(t_len):
        for dt in range(kt):
            for o in range(c_out):
                for c in range(c_in):
                    for j in range(freq):
                        for k in range(kf):
                            up[t + dt, o, 2 * j + k] += weight[o, c, dt, k] * frames[t, c, j]
    return up[:t_len, :, left : left + f_target] + bias[None, :, None]


# ---------------------------------------------------------------------------
# fully connected


def test_fc_identity_and_constant():
    x = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(fc_forward(np.eye(3), np.zeros(3), x), x)
    np.testing.assert_array_equal(fc_forward(np.zeros((2, 3)), np.array([5.0, 6.0]), x), [5.0, 6.0])


def test_fc_matches_dot_product_oracle():
    rng = np.random.default_rng(0)
    w = rng.standard_normal((3, 2))
    b = rng.standard_normal(3)
    x = rng.standard_normal(2)
    expected = [sum(w[i][j] * x[j] for j in range(2)) + b[i] for i in range(3)]
    np.testing.assert_allclose(fc_forward(w, b, x), expected, atol=1e-12)


def test_fc_shape_mismatch():
    with pytest.raises(ValueError):
        fc_forward(np.zeros((2, 3)), np.zeros(2), np.zeros(4))


# ---------------------------------------------------------------------------
# recurrent cells


def test_gru_zero_weights_gives_zero_state():
    w = zero_gru_weights(3, 4)
    y, h = gru_step(w, np.ones(3), np.zeros(4))
    np.testing.assert_array_equal(y, np.zeros(4))
    np.testing.assert_array_equal(h, np.zeros(4))


def test_gru_saturated_update_gate_passes_memory():
    w = zero_gru_weights(3, 4)
    w.b_input[4:8] = 60.0  # z rows saturate to 1
    h0 = np.array([0.3, -0.7, 1.5, 0.01])
    _, h = gru_step(w, np.zeros(3), h0)
    np.testing.assert_allclose(h, h0, atol=1e-12)


def test_gru_matches_scalar_oracle():
    rng = np.random.default_rng(1)
    w = random_gru(rng, 3, 4)
    x = rng.standard_normal(3)
    h = rng.standard_normal(4)
    y, h_new = gru_step(w, x, h)
    np.testing.assert_allclose(h_new, gru_oracle(w, x, h), atol=1e-12)
    np.testing.assert_array_equal(y, h_new)


def test_gru_shape_mismatch():
    with pytest.raises(ValueError):
        gru_step(zero_gru_weights(3, 4), np.zeros(5), np.zeros(4))


def test_lstm_zero_weights_gives_zero_state():
    w = zero_lstm_weights(3, 4)
    y, h, c = lstm_step(w, np.ones(3), np.zeros(4), np.zeros(4))
    np.testing.assert_array_equal(h, np.zeros(4))
    np.testing.assert_array_equal(c, np.zeros(4))


def test_lstm_gate_limits_preserve_cell():
    w = zero_lstm_weights(2, 3)
    w.b_input[3:6] = 60.0   # forget gate -> 1
    w.b_input[0:3] = -60.0  # input gate -> 0
    c0 = np.array([0.5, -1.0, 2.0])
    _, _, c = lstm_step(w, np.ones(2), np.zeros(3), c0)
    np.testing.assert_allclose(c, c0, atol=1e-12)


def test_lstm_matches_scalar_oracle():
    rng = np.random.default_rng(2)
    w = random_lstm(rng, 3, 4)
    x = rng.standard_normal(3)
    h = rng.standard_normal(4)
    c = rng.standard_normal(4)
    y, h_new, c_new = lstm_step(w, x, h, c)
    h_ref, c_ref = lstm_oracle(w, x, h, c)
    np.testing.assert_allclose(h_new, h_ref, atol=1e-12)
    np.testing.assert_allclose(c_new, c_ref, atol=1e-12)


def test_recurrent_streaming_matches_sequential_scan():
    rng = np.random.default_rng(3)
    w = random_gru(rng, 4, 5)
    xs = rng.standard_normal((12, 4))
    h = np.zeros(5)
    outs = []
    for x in xs:
        _, h = gru_step(w, x, h)
        outs.append(h)
    h2 = np.zeros(5)
    for t, x in enumerate(xs):
        _, h2 = gru_step(w, x, h2)
        np.testing.assert_array_equal(h2, outs[t])


# ---------------------------------------------------------------------------
# convolutions


def test_conv_zero_kernel_bias_only():
    w = np.zeros((3, 2, 2, 3))
    out, _ = conv2d_step(w, np.ones(3), np.zeros((2, 8)))
    assert out.shape == (3, 4)
    np.testing.assert_array_equal(out, np.ones((3, 4)))


def test_conv_delta_kernel_copies_strided_input():
    w = np.zeros((1, 1, 2, 3))
    w[0, 0, 1, 1] = 1.0  # current frame, center tap
    x = np.arange(8.0)[None, :]
    out, _ = conv2d_step(w, np.zeros(1), x)
    np.testing.assert_array_equal(out[0], x[0, ::2])


def test_conv_streaming_matches_batch_oracle():
    rng = np.random.default_rng(4)
    w = rng.standard_normal((2, 1, 2, 3))
    b = rng.standard_normal(2)
    frames = rng.standard_normal((6, 1, 8))
    expected = conv_batch_oracle(w, b, frames)
    state = None
    for t in range(6):
        out, state = conv2d_step(w, b, frames[t], state)
        np.testing.assert_allclose(out, expected[t], atol=1e-12)


def test_conv_first_frame_equals_zero_padded_batch():
    rng = np.random.default_rng(5)
    w = rng.standard_normal((3, 2, 2, 3))
    b = rng.standard_normal(3)
    x = rng.standard_normal((2, 9))
    out, _ = conv2d_step(w, b, x, None)
    np.testing.assert_allclose(out, conv_batch_oracle(w, b, x[None])[0], atol=1e-12)


def test_conv_1d_kernel_needs_no_state():
    rng = np.random.default_rng(6)
    w = rng.standard_normal((2, 1, 1, 3))
    b = rng.standard_normal(2)
    frames = rng.standard_normal((3, 1, 8))
    expected = conv_batch_oracle(w, b, frames)
    state = None
    for t in range(3):
        out, state = conv2d_step(w, b, frames[t], state)
        np.testing.assert_allclose(out, expected[t], atol=1e-12)


def test_conv_channel_mismatch():
    with pytest.raises(ValueError):
        conv2d_step(np.zeros((2, 3, 2, 3)), np.zeros(2), np.zeros((1, 8)))


def test_tconv_zero_kernel_constant_output():
    w = np.zeros((2, 3, 2, 3))
    out, state = tconv2d_step(w, np.array([1.5, -0.5]), np.zeros((3, 11)), None, 21)
    assert out.shape == (2, 21)
    np.testing.assert_array_equal(out[0], np.full(21, 1.5))
    np.testing.assert_array_equal(out[1], np.full(21, -0.5))
    np.testing.assert_array_equal(state, np.zeros((2, 21)))


def test_tconv_streaming_matches_batch_oracle():
    rng = np.random.default_rng(7)
    w = rng.standard_normal((1, 2, 2, 3))
    b = rng.standard_normal(1)
    frames = rng.standard_normal((5, 2, 6))
    expected = tconv_batch_oracle(w, b, frames, 11)
    state = None
    for t in range(5):
        out, state = tconv2d_step(w, b, frames[t], state, 11)
        np.testing.assert_allclose(out, expected[t], atol=1e-12)


def test_tconv_upsampling_shapes():
    # decoder chain mirror: 11 -> 21 -> 41 -> 81 -> 161
    for f_in, f_target in [(11, 21), (21, 41), (41, 81), (81, 161)]:
        out, _ = tconv2d_step(np.zeros((1, 1, 2, 3)), np.zeros(1), np.zeros((1, f_in)), None, f_target)
        assert out.shape == (1, f_target)


def test_tconv_invalid_target_width():
    w = np.zeros((1, 1, 2, 3))
    for bad in (24, 18):
        with pytest.raises(ValueError):
            tconv2d_step(w, np.zeros(1), np.zeros((1, 11)), None, bad)


# ---------------------------------------------------------------------------
# activations, grouping, skips


def test_activations():
    x = np.array([-1.0, 0.0, 2.0])
    np.testing.assert_array_equal(activation_apply("relu", x), [0.0, 0.0, 2.0])
    np.testing.assert_array_equal(activation_apply("leaky_relu", x), [-0.2, 0.0, 2.0])
    assert activation_apply("sigmoid", np.array([0.0]))[0] == 0.5
    np.testing.assert_array_equal(activation_apply("none", x), x)
    with pytest.raises(ValueError):
        activation_apply("tanh", x)


def test_parallel_rnn_single_group_is_plain_gru():
    rng = np.random.default_rng(8)
    w = random_gru(rng, 6, 6)
    x = rng.standard_normal(6)
    h = rng.standard_normal(6)
    y_grouped, _ = parallel_rnn_step([w], x, [h])
    y_plain, _ = gru_step(w, x, h)
    np.testing.assert_array_equal(y_grouped, y_plain)


def test_parallel_rnn_zero_group_outputs_zero():
    rng = np.random.default_rng(9)
    groups = [random_gru(rng, 3, 3), zero_gru_weights(3, 3)]
    y, _ = parallel_rnn_step(groups, rng.standard_normal(6), [np.zeros(3), np.zeros(3)])
    np.testing.assert_array_equal(y[3:], np.zeros(3))
    assert np.any(y[:3] != 0)


def test_parallel_rnn_equals_block_diagonal_gru():
    rng = np.random.default_rng(10)
    p, chunk = 4, 5
    width = p * chunk
    groups = [random_gru(rng, chunk, chunk) for _ in range(p)]
    big = zero_gru_weights(width, width)
    for g, cell in enumerate(groups):
        lo = g * chunk
        for gate in range(3):
            rows = slice(gate * width + lo, gate * width + lo + chunk)
            cell_rows = slice(gate * chunk, (gate + 1) * chunk)
            big.w_input[rows, lo : lo + chunk] = cell.w_input[cell_rows]
            big.w_hidden[rows, lo : lo + chunk] = cell.w_hidden[cell_rows]
            big.b_input[rows] = cell.b_input[cell_rows]
            big.b_hidden[rows] = cell.b_hidden[cell_rows]
    x = rng.standard_normal(width)
    h = rng.standard_normal(width)
    y_grouped, _ = parallel_rnn_step(groups, x, [h[g * chunk : (g + 1) * chunk] for g in range(p)])
    y_full, _ = gru_step(big, x, h)
    np.testing.assert_allclose(y_grouped, y_full, atol=1e-6)


def test_parallel_rnn_indivisible_length_errors():
    rng = np.random.default_rng(11)
    groups = [random_gru(rng, 2, 2)] * 3
    with pytest.raises(ValueError):
        parallel_rnn_step(groups, np.zeros(7), [np.zeros(2)] * 3)


def test_skip_combine_variants():
    rng = np.random.default_rng(12)
    enc = rng.standard_normal((16, 81))
    dec = rng.standard_normal((16, 81))
    np.testing.assert_array_equal(skip_combine("none", enc, dec), dec)
    np.testing.assert_array_equal(skip_combine("add", np.zeros_like(enc), dec), dec)
    np.testing.assert_allclose(
        skip_combine("add_conv1x1", enc, dec, np.ones(16), np.zeros(16)),
        skip_combine("add", enc, dec),
        atol=1e-15,
    )
    assert skip_combine("concat", enc, dec).shape == (32, 81)
    scale = rng.standard_normal(16)
    bias = rng.standard_normal(16)
    expected = scale[:, None] * enc + bias[:, None] + dec
    np.testing.assert_allclose(skip_combine("add_conv1x1", enc, dec, scale, bias), expected)


def test_skip_combine_shape_mismatch():
    with pytest.raises(ValueError):
        skip_combine("add", np.zeros((2, 3)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        skip_combine("wormhole", np.zeros((2, 3)), np.zeros((2, 3)))
