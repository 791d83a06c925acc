"""Room simulation: image-source reverb, stems bookkeeping, dataset output."""

import json

import numpy as np
import pytest

from nwfbeam.simulate import (
    SceneConfig,
    colored_noise,
    generate_dataset,
    image_method_rir,
    pseudo_speech,
    simulate_mixture,
)
from nwfbeam.wavio import read_wav


def _quick_config(**overrides):
    base = dict(
        mics=4,
        utterance_seconds=0.5,
        image_order=2,
        noise_sources=(1, 3),
    )
    base.update(overrides)
    return SceneConfig(**base)


def test_direct_path_delay_and_amplitude():
    # source 3.43 m from the mic: delay is exactly 160 samples at 16 kHz
    # (c = 343 m/s) and the direct tap is 1/(4 pi d)
    room = np.array([6.0, 6.0, 3.0])
    src = np.array([1.0, 3.0, 1.5])
    mic = np.array([4.43, 3.0, 1.5])
    rir = image_method_rir(room, 0.3, src, mic, fs=16000, max_order=0)
    peak = np.argmax(np.abs(rir))
    assert peak == 160
    np.testing.assert_allclose(rir[160], 1.0 / (4 * np.pi * 3.43), rtol=1e-9)
    # integer delay: the windowed sinc collapses onto a single tap
    others = np.delete(rir, 160)
    assert np.abs(others).max() < 1e-12


def test_fractional_delay_kernel():
    # 100.25-sample path: energy concentrated around the fractional delay,
    # matching the analytic windowed-sinc kernel
    d = 100.25 * 343.0 / 16000.0
    room = np.array([8.0, 8.0, 3.0])
    src = np.array([1.0, 4.0, 1.5])
    mic = np.array([1.0 + d, 4.0, 1.5])
    rir = image_method_rir(room, 0.3, src, mic, fs=16000, max_order=0)
    assert abs(int(np.argmax(np.abs(rir))) - 100.25) <= 1
    idx = np.arange(60, 141)
    x = idx - 100.25
    kernel = 0.5 * (1 + np.cos(2 * np.pi * x / 81)) * np.sinc(x)
    kernel *= 1.0 / (4 * np.pi * d)
    corr = np.dot(rir[idx], kernel) / (
        np.linalg.norm(rir[idx]) * np.linalg.norm(kernel)
    )
    assert corr > 0.999999


def test_reflections_arrive_after_direct_and_scale_with_absorption():
    room = np.array([5.0, 4.0, 3.0])
    src = np.array([1.5, 2.0, 1.5])
    mic = np.array([3.5, 2.0, 1.5])
    direct = image_method_rir(room, 0.1, src, mic, 16000, max_order=0)
    low_abs = image_method_rir(room, 0.1, src, mic, 16000, max_order=2)
    high_abs = image_method_rir(room, 0.4, src, mic, 16000, max_order=2)
    n = len(direct)
    refl_low = low_abs.copy()
    refl_low[:n] -= direct
    refl_high = high_abs.copy()
    refl_high[:n] -= direct
    # direct tap identical regardless of wall absorption
    d_peak = int(np.argmax(np.abs(direct)))
    np.testing.assert_allclose(low_abs[d_peak], direct[d_peak], rtol=1e-12)
    # first reflection is a longer path than the direct one
    first_refl = np.flatnonzero(np.abs(refl_low) > 1e-9)[0]
    assert first_refl > d_peak - 41  # kernel half-width before its center
    assert np.sum(refl_high**2) < np.sum(refl_low**2)
    assert np.sum(low_abs**2) > np.sum(direct**2)


def test_higher_order_adds_energy():
    room = np.array([4.0, 5.0, 2.5])
    src = np.array([1.0, 1.5, 1.2])
    mic = np.array([2.8, 3.2, 1.4])
    energies = [
        np.sum(image_method_rir(room, 0.2, src, mic, 16000, max_order=k) ** 2)
        for k in (0, 1, 2, 4)
    ]
    assert all(a < b for a, b in zip(energies, energies[1:]))


def test_mixture_stems_sum_exactly():
    mix = simulate_mixture(_quick_config(), seed=100)
    total = (
        mix.stems["speech_direct"]
        + mix.stems["speech_reverb"]
        + mix.stems["noise_direct"]
        + mix.stems["noise_reverb"]
    )
    np.testing.assert_array_equal(mix.noisy.data, total)
    m = mix.noisy.channels
    length = mix.noisy.samples
    assert all(s.shape == (m, length) for s in mix.stems.values())
    np.testing.assert_array_equal(mix.target.data[0], mix.stems["speech_direct"][0])


def test_mixture_hits_requested_snr():
    for seed in (7, 8):
        mix = simulate_mixture(_quick_config(), seed=seed)
        noise_ref = mix.stems["noise_direct"][0] + mix.stems["noise_reverb"][0]
        achieved = 10 * np.log10(
            np.sum(mix.stems["speech_direct"][0] ** 2) / np.sum(noise_ref**2)
        )
        assert abs(achieved - mix.snr_db) < 1e-6
        assert -10.0 <= mix.snr_db <= 10.0


def test_mixture_geometry_within_configured_ranges():
    cfg = _quick_config()
    mix = simulate_mixture(cfg, seed=11)
    lx, ly, lz = mix.room
    assert 3.0 <= lx <= 10.0 and 3.0 <= ly <= 10.0 and 2.0 <= lz <= 5.0
    assert 0.1 <= mix.absorption <= 0.4
    assert 1 <= mix.noise_count <= 3
    room = np.array(mix.room)
    for pos in [mix.speech_position, *mix.noise_positions]:
        assert np.all(pos >= 0.1) and np.all(pos <= room - 0.1)
        dists = np.linalg.norm(mix.mic_positions - pos, axis=1)
        assert dists.min() >= 0.5
    for mic in mix.mic_positions:
        assert np.all(mic >= 0.1) and np.all(mic <= room - 0.1)


def test_intermic_direct_delays_match_geometry():
    cfg = _quick_config(mics=6)
    mix = simulate_mixture(cfg, seed=12)
    c, fs = 343.0, 16000
    room = np.array(mix.room)
    ref_delay = None
    for m, mic in enumerate(mix.mic_positions):
        rir = image_method_rir(
            room, mix.absorption, mix.speech_position, mic, fs, max_order=0
        )
        measured = int(np.argmax(np.abs(rir)))
        if m == 0:
            ref_delay = measured
        geometric = (
            np.linalg.norm(mix.speech_position - mic)
            - np.linalg.norm(mix.speech_position - mix.mic_positions[0])
        ) / c * fs
        assert abs((measured - ref_delay) - geometric) <= 1.0


def test_simulation_deterministic_per_seed():
    cfg = _quick_config()
    a = simulate_mixture(cfg, seed=55)
    b = simulate_mixture(cfg, seed=55)
    np.testing.assert_array_equal(a.noisy.data, b.noisy.data)
    c = simulate_mixture(cfg, seed=56)
    assert not np.array_equal(a.noisy.data, c.noisy.data)


def test_pseudo_speech_band_limited_and_modulated():
    rng = np.random.default_rng(60)
    x = pseudo_speech(16000, 16000, rng)
    assert x.shape == (16000,)
    assert np.all(np.isfinite(x))
    rms = np.sqrt(np.mean(x**2))
    assert rms > 1e-4
    spec = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(len(x), 1 / 16000)
    assert spec[freqs > 4200].sum() < 0.05 * spec.sum()
    # syllabic amplitude modulation: block energies swing substantially
    blocks = x[: len(x) // 10 * 10].reshape(10, -1)
    block_rms = np.sqrt(np.mean(blocks**2, axis=1))
    assert block_rms.max() / (block_rms.min() + 1e-12) > 1.5


def test_colored_noise_nonsilent_and_deterministic():
    a = colored_noise(8000, 16000, np.random.default_rng(61))
    b = colored_noise(8000, 16000, np.random.default_rng(61))
    np.testing.assert_array_equal(a, b)
    assert np.sqrt(np.mean(a**2)) > 1e-4


def test_scene_config_validation():
    with pytest.raises(ValueError):
        SceneConfig(room_length=(10, 3))  # inverted range
    with pytest.raises(ValueError):
        SceneConfig(absorption=(0.0, 0.4))  # absorption must be positive
    with pytest.raises(ValueError):
        SceneConfig(mics=0)
    with pytest.raises(ValueError):
        SceneConfig(noise_sources=(0, 4))
    with pytest.raises(ValueError):
        SceneConfig(array_radius=-0.1)


def test_generate_dataset_layout_and_reproducibility(tmp_path):
    cfg = _quick_config(mics=3, utterance_seconds=0.3, image_order=1)
    out_a = tmp_path / "run_a"
    out_b = tmp_path / "run_b"
    manifest_a = generate_dataset(cfg, count=2, seed=77, out_dir=out_a)
    manifest_b = generate_dataset(cfg, count=2, seed=77, out_dir=out_b)
    lines = manifest_a.read_text().strip().split("\n")
    assert len(lines) == 2
    for line in lines:
        rec = json.loads(line)
        assert set(rec) >= {
            "id",
            "noisy_path",
            "target_path",
            "snr_db",
            "room",
            "absorption",
            "noise_count",
            "seed",
        }
        noisy = read_wav(out_a / rec["noisy_path"])
        target = read_wav(out_a / rec["target_path"])
        assert noisy.channels == 3
        assert target.channels == 1
        assert noisy.sample_rate == 16000
        assert noisy.samples == target.samples
    # byte-identical reruns
    assert manifest_a.read_bytes() == manifest_b.read_bytes()
    for line in lines:
        rec = json.loads(line)
        assert (out_a / rec["noisy_path"]).read_bytes() == (
            out_b / rec["noisy_path"]
        ).read_bytes()
