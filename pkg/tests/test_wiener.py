"""Per-frequency multichannel Wiener solver, batch and frame-recursive."""

import numpy as np
import pytest

from nwfbeam.framing import FrameSpec
from nwfbeam.transform import dft_init
from nwfbeam.wiener import (
    CovarianceDegeneracyError,
    accumulate_batch,
    apply_filter,
    init_online_state,
    nwf_enhance,
    solve_batch,
    update_online,
    weights_from_state,
)


def test_accumulate_hand_outer_product():
    # single frame, one bin: covariance is the plain outer product y y^H
    noisy = np.array([1.0 + 0j, 1j]).reshape(2, 1, 1)
    target = np.array([1.0 + 0j]).reshape(1, 1)
    cov, cross = accumulate_batch(noisy, target)
    np.testing.assert_allclose(cov[0], [[1, -1j], [1j, 1]])
    np.testing.assert_allclose(cross[0], [1, 1j])


def test_accumulate_matches_loop_oracle():
    rng = np.random.default_rng(21)
    m, t, f = 3, 11, 5
    noisy = rng.standard_normal((m, t, f)) + 1j * rng.standard_normal((m, t, f))
    target = rng.standard_normal((t, f)) + 1j * rng.standard_normal((t, f))
    cov, cross = accumulate_batch(noisy, target)
    for fi in range(f):
        c = np.zeros((m, m), complex)
        p = np.zeros(m, complex)
        for ti in range(t):
            y = noisy[:, ti, fi]
            c += np.outer(y, y.conj())
            p += y * np.conj(target[ti, fi])
        np.testing.assert_allclose(cov[fi], c, atol=1e-12)
        np.testing.assert_allclose(cross[fi], p, atol=1e-12)


def test_solve_batch_matches_least_squares_oracle():
    # with no loading the Wiener weights solve the normal equations of the
    # complex regression min_w sum_t |w^H y_t - s_t|^2
    rng = np.random.default_rng(22)
    m, t = 4, 50
    y = rng.standard_normal((m, t)) + 1j * rng.standard_normal((m, t))
    s = rng.standard_normal(t) + 1j * rng.standard_normal(t)
    cov, cross = accumulate_batch(y[:, :, None], s[:, None])
    w = solve_batch(cov, cross, loading=0.0)
    oracle, *_ = np.linalg.lstsq(y.conj().T, np.conj(s), rcond=None)
    np.testing.assert_allclose(w[0], oracle, atol=1e-10)


def test_solve_batch_dead_channel_gets_zero_weight():
    rng = np.random.default_rng(23)
    t = 40
    live = rng.standard_normal(t) + 1j * rng.standard_normal(t)
    y = np.stack([live, np.zeros(t, complex)])
    cov, cross = accumulate_batch(y[:, :, None], live[:, None])
    w = solve_batch(cov, cross, loading=1e-4)
    assert w[0, 1] == 0
    assert abs(w[0, 0]) > 0.9


def test_solve_batch_scale_invariant_weights():
    # relative diagonal loading keeps weights invariant to input scale
    rng = np.random.default_rng(24)
    y = rng.standard_normal((3, 30, 2)) + 1j * rng.standard_normal((3, 30, 2))
    s = rng.standard_normal((30, 2)) + 1j * rng.standard_normal((30, 2))
    w1 = solve_batch(*accumulate_batch(y, s), loading=1e-4)
    w2 = solve_batch(*accumulate_batch(8.0 * y, 8.0 * s), loading=1e-4)
    np.testing.assert_allclose(w1, w2, atol=1e-12)


def test_solve_batch_singular_without_loading_raises():
    y = np.zeros((2, 5, 1), complex)
    y[0] = 1.0  # rank-1 covariance
    s = np.ones((5, 1), complex)
    cov, cross = accumulate_batch(y, s)
    with pytest.raises(CovarianceDegeneracyError):
        solve_batch(cov, cross, loading=0.0)
    # caller retry with loading succeeds
    w = solve_batch(cov, cross, loading=1e-4)
    assert np.all(np.isfinite(w))


def test_solve_batch_zero_energy_bin_gives_zero_weights():
    cov = np.zeros((1, 2, 2), complex)
    cross = np.zeros((1, 2), complex)
    w = solve_batch(cov, cross, loading=1e-4)
    np.testing.assert_array_equal(w, np.zeros((1, 2)))


def test_solve_batch_nonfinite_bin_zeroed_with_warning():
    rng = np.random.default_rng(25)
    y = rng.standard_normal((2, 20, 3)) + 1j * rng.standard_normal((2, 20, 3))
    s = rng.standard_normal((20, 3)) + 1j * rng.standard_normal((20, 3))
    cov, cross = accumulate_batch(y, s)
    cov[1, 0, 0] = np.nan
    with pytest.warns(RuntimeWarning):
        w = solve_batch(cov, cross, loading=1e-4)
    np.testing.assert_array_equal(w[1], np.zeros(2))
    assert np.all(np.isfinite(w))
    assert np.any(w[0] != 0) and np.any(w[2] != 0)


def test_online_single_channel_hand_example():
    # M=1, delta=1, lambda=1, one update with y=2: P = 1/(1+|y|^2) = 0.2
    state = init_online_state(bins=1, channels=1, forgetting=1.0, loading=1.0)
    state = update_online(
        state, np.array([[2.0 + 0j]]), np.array([1.0 + 0j])
    )
    np.testing.assert_allclose(state.inverse_cov[0, 0, 0], 0.2)


def test_online_zero_frame_decays_statistics():
    rng = np.random.default_rng(26)
    state = init_online_state(bins=2, channels=2, forgetting=0.9, loading=1e-2)
    y = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    s = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    state = update_online(state, y, s)
    p_before = state.inverse_cov.copy()
    phi_before = state.cross_cov.copy()
    state = update_online(state, np.zeros((2, 2), complex), np.zeros(2, complex))
    np.testing.assert_allclose(state.inverse_cov, p_before / 0.9, atol=1e-12)
    np.testing.assert_allclose(state.cross_cov, 0.9 * phi_before, atol=1e-12)


def test_online_matches_direct_inverse_oracle():
    # maintain the forgetting-weighted covariance explicitly and invert it
    # each frame; the rank-1 recursion must track it
    rng = np.random.default_rng(27)
    bins, m, frames = 3, 4, 60
    lam, delta = 0.97, 1e-2
    state = init_online_state(bins, m, forgetting=lam, loading=delta)
    cov = np.repeat(delta * np.eye(m, dtype=complex)[None], bins, axis=0)
    phi = np.zeros((bins, m), complex)
    for _ in range(frames):
        y = rng.standard_normal((bins, m)) + 1j * rng.standard_normal((bins, m))
        s = rng.standard_normal(bins) + 1j * rng.standard_normal(bins)
        state = update_online(state, y, s)
        cov = lam * cov + np.einsum("fm,fn->fmn", y, y.conj())
        phi = lam * phi + y * np.conj(s)[:, None]
        w_direct = np.linalg.solve(cov, phi[..., None])[..., 0]
        w_rec = weights_from_state(state)
        err = np.linalg.norm(w_rec - w_direct) / np.linalg.norm(w_direct)
        assert err < 1e-8


def test_online_growing_window_equals_batch():
    # lambda=1 and init loading delta: after T updates the weights equal the
    # batch solve of (cov + delta I) w = cross
    rng = np.random.default_rng(28)
    bins, m, frames = 2, 3, 25
    delta = 1e-2
    noisy = rng.standard_normal((m, frames, bins)) + 1j * rng.standard_normal(
        (m, frames, bins)
    )
    target = rng.standard_normal((frames, bins)) + 1j * rng.standard_normal(
        (frames, bins)
    )
    state = init_online_state(bins, m, forgetting=1.0, loading=delta)
    for t in range(frames):
        state = update_online(state, noisy[:, t, :].T, target[t])
    cov, cross = accumulate_batch(noisy, target)
    cov += delta * np.eye(m)[None]
    w_batch = solve_batch(cov, cross, loading=0.0)
    np.testing.assert_allclose(weights_from_state(state), w_batch, atol=1e-8)


def test_online_state_hermitian_after_updates():
    rng = np.random.default_rng(29)
    state = init_online_state(4, 3, forgetting=0.99, loading=1e-2)
    for _ in range(200):
        y = rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3))
        s = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        state = update_online(state, y, s)
    p = state.inverse_cov
    np.testing.assert_allclose(p, p.conj().transpose(0, 2, 1), atol=1e-12)


def test_initial_state_gives_zero_weights():
    state = init_online_state(5, 4)
    np.testing.assert_array_equal(weights_from_state(state), np.zeros((5, 4)))


def test_apply_filter_conjugates_weights():
    w = np.array([[1j]])
    noisy = np.array([[[1.0 + 0j]]])
    np.testing.assert_allclose(apply_filter(w, noisy), [[-1j]])


def test_nwf_enhance_zero_input_zero_output():
    spec = FrameSpec(input_frame=16, hop=4, output_frame=4)
    analysis, synthesis = dft_init(16, output_frame=4)
    out = nwf_enhance(
        np.zeros((2, 64)), np.zeros((1, 64)), analysis, synthesis, spec
    )
    np.testing.assert_array_equal(out, np.zeros((1, 64)))


def test_nwf_enhance_silent_target_suppresses_output():
    rng = np.random.default_rng(30)
    spec = FrameSpec(input_frame=16, hop=4, output_frame=4)
    analysis, synthesis = dft_init(16, output_frame=4)
    noisy = rng.standard_normal((2, 400))
    out = nwf_enhance(noisy, np.zeros((1, 400)), analysis, synthesis, spec)
    assert np.sum(out**2) <= 1e-12 * np.sum(noisy**2)


def test_nwf_enhance_batch_scales_linearly():
    rng = np.random.default_rng(31)
    spec = FrameSpec(input_frame=16, hop=4, output_frame=4)
    analysis, synthesis = dft_init(16, output_frame=4)
    noisy = rng.standard_normal((2, 300))
    target = rng.standard_normal((1, 300))
    out1 = nwf_enhance(noisy, target, analysis, synthesis, spec)
    out2 = nwf_enhance(3.0 * noisy, 3.0 * target, analysis, synthesis, spec)
    np.testing.assert_allclose(out2, 3.0 * out1, atol=1e-9)


def _textbook_mcwf(noisy, target, window, hop, loading):
    """Independent frequency-domain multichannel Wiener filter.

    Uses numpy's FFT directly: causal rectangular framing, per-bin
    covariance solve, filter, inverse FFT, rightmost-hop concatenation.
    """
    m, length = noisy.shape
    t_count = -(-length // hop)
    lead = window - hop
    pad_n = np.zeros((m, lead + t_count * hop))
    pad_n[:, lead : lead + length] = noisy
    pad_t = np.zeros(lead + t_count * hop)
    pad_t[lead : lead + length] = target[0]
    spec_n = np.stack(
        [
            np.fft.rfft(pad_n[:, t * hop : t * hop + window], axis=-1)
            for t in range(t_count)
        ],
        axis=1,
    )  # [M, T, F]
    spec_t = np.stack(
        [np.fft.rfft(pad_t[t * hop : t * hop + window]) for t in range(t_count)]
    )  # [T, F]
    f_count = window // 2 + 1
    out = np.zeros((t_count, f_count), complex)
    for f in range(f_count):
        y = spec_n[:, :, f]  # [M, T]
        cov = y @ y.conj().T
        cross = y @ np.conj(spec_t[:, f])
        a = cov + loading * np.trace(cov).real / m * np.eye(m)
        w = np.linalg.solve(a, cross)
        out[:, f] = w.conj() @ y
    frames = np.fft.irfft(out, window, axis=-1)[:, -hop:]
    return frames.reshape(-1)[:length][None, :]


def test_nwf_enhance_dft_init_equals_textbook_filter():
    rng = np.random.default_rng(32)
    m, length, window, hop = 3, 800, 32, 8
    clean = rng.standard_normal((1, length))
    noisy = np.vstack([clean, clean, clean]) * rng.uniform(0.5, 1.5, (m, 1))
    noisy += 0.3 * rng.standard_normal((m, length))
    spec = FrameSpec(input_frame=window, hop=hop, output_frame=hop)
    analysis, synthesis = dft_init(window, output_frame=hop)
    got = nwf_enhance(noisy, clean, analysis, synthesis, spec, loading=1e-4)
    want = _textbook_mcwf(noisy, clean, window, hop, loading=1e-4)
    err = np.linalg.norm(got - want) / np.linalg.norm(want)
    assert err < 1e-10


def test_nwf_enhance_online_runs_and_converges_toward_batch():
    rng = np.random.default_rng(33)
    spec = FrameSpec(input_frame=16, hop=4, output_frame=4)
    analysis, synthesis = dft_init(16, output_frame=4)
    clean = rng.standard_normal((1, 2000))
    noisy = np.vstack([clean, 0.8 * clean]) + 0.2 * rng.standard_normal((2, 2000))
    batch = nwf_enhance(noisy, clean, analysis, synthesis, spec, mode="batch")
    online = nwf_enhance(
        noisy, clean, analysis, synthesis, spec, mode="online", forgetting=1.0
    )
    # after settling, the growing-window online filter tracks the batch one
    tail = slice(1000, 2000)
    err = np.linalg.norm(online[0, tail] - batch[0, tail]) / np.linalg.norm(
        batch[0, tail]
    )
    assert err < 0.05


def test_nwf_enhance_validates_shapes():
    spec = FrameSpec(input_frame=16, hop=4, output_frame=4)
    analysis, synthesis = dft_init(16, output_frame=4)
    with pytest.raises(ValueError):
        nwf_enhance(
            np.zeros((2, 64)), np.zeros((1, 32)), analysis, synthesis, spec
        )
    with pytest.raises(ValueError):
        nwf_enhance(
            np.zeros((2, 64)), np.zeros((2, 64)), analysis, synthesis, spec
        )
