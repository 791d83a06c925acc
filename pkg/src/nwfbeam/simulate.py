"""Rectangular-room acoustics simulation and dataset generation.

Image-source reverberation with fractional-delay stamping, desk-scale
pseudo-speech and colored-noise sources, and a mixture builder that
keeps the four stems (speech/noise x direct/reverberant) exact: the
noisy signal is their sum by construction, and the SNR is defined
between direct-path speech and total noise at reference mic 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from nwfbeam.framing import MultichannelSignal
from nwfbeam.wavio import write_wav

SPEED_OF_SOUND = 343.0
KERNEL_TAPS = 81  # windowed-sinc fractional delay support


@dataclass
class SceneConfig:
    """Random scene distribution; ranges are inclusive (low, high)."""

    fs: int = 16000
    utterance_seconds: float = 2.0
    mics: int = 8
    array_radius: float = 0.10
    room_length: tuple = (3.0, 10.0)
    room_width: tuple = (3.0, 10.0)
    room_height: tuple = (2.0, 5.0)
    absorption: tuple = (0.1, 0.4)
    snr_db: tuple = (-10.0, 10.0)
    noise_sources: tuple = (1, 10)
    image_order: int = 6
    wall_margin: float = 0.1
    min_source_mic_distance: float = 0.5

    def __post_init__(self):
        for name in ("room_length", "room_width", "room_height", "absorption",
                     "snr_db", "noise_sources"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: low {lo} exceeds high {hi}")
        if self.absorption[0] <= 0 or self.absorption[1] > 1:
            raise ValueError("absorption must lie in (0, 1]")
        if self.mics < 1:
            raise ValueError("need at least one mic")
        if self.array_radius <= 0:
            raise ValueError("array radius must be positive")
        if self.noise_sources[0] < 1:
            raise ValueError("need at least one noise source")
        if self.fs <= 0 or self.utterance_seconds <= 0:
            raise ValueError("fs and utterance length must be positive")
        if self.image_order < 0:
            raise ValueError("image order must be >= 0")
        if self.room_height[0] <= 1.0:
            raise ValueError("room height must exceed 1 m")
        if min(self.room_length[0], self.room_width[0]) <= 2 * (
            self.wall_margin + self.array_radius
        ):
            raise ValueError("rooms too small for the array and margins")


@dataclass
class Mixture:
    """One simulated utterance with exact stem bookkeeping."""

    noisy: MultichannelSignal
    target: MultichannelSignal
    stems: dict
    snr_db: float
    room: tuple
    absorption: float
    noise_count: int
    mic_positions: np.ndarray
    speech_position: np.ndarray
    noise_positions: np.ndarray
    seed: object = None


def _image_set(room, source, max_order):
    """All image-source positions with bounce count <= max_order.

    Images are pos_d = (1 - 2 p_d) src_d + 2 r_d L_d for p in {0,1}^3 and
    integer r; the bounce count is sum_d |r_d - p_d| + |r_d|.
    """
    lim = max_order // 2 + 1
    r = np.arange(-lim, lim + 1)
    rx, ry, rz, px, py, pz = np.meshgrid(
        r, r, r, [0, 1], [0, 1], [0, 1], indexing="ij"
    )
    rr = np.stack([rx, ry, rz], axis=-1).reshape(-1, 3)
    pp = np.stack([px, py, pz], axis=-1).reshape(-1, 3)
    bounces = (np.abs(rr - pp) + np.abs(rr)).sum(axis=1)
    keep = bounces <= max_order
    rr, pp, bounces = rr[keep], pp[keep], bounces[keep]
    positions = (1 - 2 * pp) * source[None, :] + 2 * rr * room[None, :]
    return positions, bounces


def image_method_rir(
    room,
    absorption: float,
    source,
    mic,
    fs: int,
    max_order: int,
    c: float = SPEED_OF_SOUND,
) -> np.ndarray:
    """Room impulse response between one source and one mic.

    Each image contributes beta^bounces / (4 pi d) at delay d/c, stamped
    with an 81-tap Hann-windowed sinc so fractional delays are preserved.
    """
    room = np.asarray(room, dtype=np.float64)
    source = np.asarray(source, dtype=np.float64)
    mic = np.asarray(mic, dtype=np.float64)
    positions, bounces = _image_set(room, source, max_order)
    beta = np.sqrt(1.0 - absorption)
    dists = np.linalg.norm(positions - mic[None, :], axis=1)
    dists = np.maximum(dists, 1e-9)
    amps = beta**bounces / (4 * np.pi * dists)
    delays = dists / c * fs

    half = (KERNEL_TAPS - 1) // 2
    centers = np.round(delays).astype(int)
    offsets = np.arange(-half, half + 1)
    idx = centers[:, None] + offsets[None, :]
    x = idx - delays[:, None]
    taps = 0.5 * (1 + np.cos(2 * np.pi * x / KERNEL_TAPS)) * np.sinc(x)
    taps *= amps[:, None]
    length = int(idx.max()) + 1
    rir = np.zeros(length)
    valid = idx >= 0
    np.add.at(rir, idx[valid], taps[valid])
    return rir


def pseudo_speech(length: int, fs: int, rng: np.random.Generator) -> np.ndarray:
    """Band-limited speech stand-in: an amplitude-modulated harmonic
    complex with slow pitch drift, harmonics kept below 3.8 kHz."""
    t = np.arange(length) / fs
    f0 = rng.uniform(100.0, 250.0)
    drift_phase = rng.uniform(0, 2 * np.pi)
    f0_track = f0 * (1.0 + 0.04 * np.sin(2 * np.pi * 0.4 * t + drift_phase))
    phase = 2 * np.pi * np.cumsum(f0_track) / fs
    k_max = max(1, int(3800.0 / f0_track.max()))
    x = np.zeros(length)
    for k in range(1, k_max + 1):
        x += np.sin(k * phase + rng.uniform(0, 2 * np.pi)) / k
    am_rate = rng.uniform(2.0, 6.0)
    am_phase = rng.uniform(0, 2 * np.pi)
    envelope = 0.55 + 0.45 * np.sin(2 * np.pi * am_rate * t + am_phase)
    x *= envelope
    rms = np.sqrt(np.mean(x**2))
    return 0.05 * x / rms


def colored_noise(length: int, fs: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-RMS noise with a random spectral tilt."""
    white = rng.standard_normal(length)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(length, 1.0 / fs)
    tilt = rng.uniform(0.3, 1.2)
    spectrum *= (1.0 + freqs / 300.0) ** (-tilt)
    x = np.fft.irfft(spectrum, length)
    return x / np.sqrt(np.mean(x**2))


def _draw_positions(config: SceneConfig, room, rng):
    margin = config.wall_margin
    radius = config.array_radius
    center = np.array(
        [
            rng.uniform(margin + radius, room[0] - margin - radius),
            rng.uniform(margin + radius, room[1] - margin - radius),
            rng.uniform(0.5, room[2] - 0.5),
        ]
    )
    rotation = rng.uniform(0, 2 * np.pi)
    angles = rotation + 2 * np.pi * np.arange(config.mics) / config.mics
    mics = center[None, :] + radius * np.stack(
        [np.cos(angles), np.sin(angles), np.zeros_like(angles)], axis=1
    )
    return mics


def _draw_source(config: SceneConfig, room, mics, rng) -> np.ndarray:
    margin = config.wall_margin
    for _ in range(10000):
        pos = rng.uniform(margin, room - margin)
        if np.linalg.norm(mics - pos[None, :], axis=1).min() >= (
            config.min_source_mic_distance
        ):
            return pos
    raise RuntimeError("could not place a source with the required clearances")


def simulate_mixture(config: SceneConfig, seed) -> Mixture:
    """Simulate one utterance. Deterministic in (config, seed)."""
    rng = np.random.default_rng(seed)
    room = np.array(
        [
            rng.uniform(*config.room_length),
            rng.uniform(*config.room_width),
            rng.uniform(*config.room_height),
        ]
    )
    absorption = rng.uniform(*config.absorption)
    mics = _draw_positions(config, room, rng)
    speech_pos = _draw_source(config, room, mics, rng)
    noise_count = int(rng.integers(config.noise_sources[0], config.noise_sources[1] + 1))
    noise_pos = np.stack(
        [_draw_source(config, room, mics, rng) for _ in range(noise_count)]
    )
    snr_db = rng.uniform(*config.snr_db)

    length = int(round(config.utterance_seconds * config.fs))
    speech = pseudo_speech(length, config.fs, rng)
    noises = [colored_noise(length, config.fs, rng) for _ in range(noise_count)]

    m = config.mics
    s_dir = np.zeros((m, length))
    s_rev = np.zeros((m, length))
    z_dir = np.zeros((m, length))
    z_rev = np.zeros((m, length))
    for mi in range(m):
        full = image_method_rir(
            room, absorption, speech_pos, mics[mi], config.fs, config.image_order
        )
        direct = image_method_rir(
            room, absorption, speech_pos, mics[mi], config.fs, max_order=0
        )
        wet = fftconvolve(speech, full)[:length]
        dry = fftconvolve(speech, direct)[:length]
        s_dir[mi] = dry
        s_rev[mi] = wet - dry
        for src, noise in zip(noise_pos, noises):
            full_n = image_method_rir(
                room, absorption, src, mics[mi], config.fs, config.image_order
            )
            direct_n = image_method_rir(
                room, absorption, src, mics[mi], config.fs, max_order=0
            )
            wet_n = fftconvolve(noise, full_n)[:length]
            dry_n = fftconvolve(noise, direct_n)[:length]
            z_dir[mi] += dry_n
            z_rev[mi] += wet_n - dry_n

    noise_ref_energy = np.sum((z_dir[0] + z_rev[0]) ** 2)
    if noise_ref_energy <= 0:
        raise RuntimeError("noise is silent at the reference mic")
    gain = np.sqrt(
        np.sum(s_dir[0] ** 2) / (noise_ref_energy * 10.0 ** (snr_db / 10.0))
    )
    z_dir *= gain
    z_rev *= gain

    noisy = s_dir + s_rev + z_dir + z_rev
    return Mixture(
        noisy=MultichannelSignal(noisy, config.fs),
        target=MultichannelSignal(s_dir[0:1], config.fs),
        stems={
            "speech_direct": s_dir,
            "speech_reverb": s_rev,
            "noise_direct": z_dir,
            "noise_reverb": z_rev,
        },
        snr_db=float(snr_db),
        room=tuple(float(v) for v in room),
        absorption=float(absorption),
        noise_count=noise_count,
        mic_positions=mics,
        speech_position=speech_pos,
        noise_positions=noise_pos,
        seed=seed,
    )


def generate_dataset(config: SceneConfig, count: int, seed: int, out_dir) -> Path:
    """Write count simulated utterances and a line-delimited manifest.

    Byte-identical across reruns with the same config, count, and seed.
    Returns the manifest path.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(count):
        sub_seed = [int(seed), i]
        mix = simulate_mixture(config, seed=sub_seed)
        utt = f"utt{i:05d}"
        noisy_name = f"{utt}_noisy.wav"
        target_name = f"{utt}_target.wav"
        write_wav(out / noisy_name, mix.noisy)
        write_wav(out / target_name, mix.target)
        records.append(
            {
                "id": utt,
                "noisy_path": noisy_name,
                "target_path": target_name,
                "snr_db": mix.snr_db,
                "room": list(mix.room),
                "absorption": mix.absorption,
                "noise_count": mix.noise_count,
                "seed": sub_seed,
            }
        )
    manifest = out / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return manifest
