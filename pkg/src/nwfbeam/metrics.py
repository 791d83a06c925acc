"""Objective speech quality metrics and evaluation reports.

Provides scale-invariant SDR, a short-time intelligibility score computed
from one-third-octave band envelope correlations at 10 kHz, and the
phase-constrained magnitude loss used for training and evaluation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import resample_poly

SI_SDR_CAP_DB = 100.0

# Intelligibility metric constants (10 kHz analysis rate).
_STOI_FS = 10000
_STOI_FRAME = 256
_STOI_HOP = 128
_STOI_NFFT = 512
_STOI_BANDS = 15
_STOI_LOW_HZ = 150.0
_STOI_SEGMENT = 30
_STOI_DYN_RANGE_DB = 40.0
_STOI_BETA_DB = -15.0
_EPS = np.finfo(np.float64).eps

PCM_FRAME = 512
PCM_HOP = 256

METRIC_NAMES = ("si_sdr", "stoi", "pcm")


def _as_1d_pair(reference, estimate):
    ref = np.asarray(reference, dtype=np.float64).reshape(-1)
    est = np.asarray(estimate, dtype=np.float64).reshape(-1)
    if ref.shape != est.shape:
        raise ValueError(f"length mismatch: {ref.size} vs {est.size}")
    if ref.size == 0:
        raise ValueError("empty signals")
    if not (np.all(np.isfinite(ref)) and np.all(np.isfinite(est))):
        raise ValueError("signals must be finite")
    return ref, est


def si_sdr(reference, estimate, zero_mean: bool = True, cap_db: float = SI_SDR_CAP_DB) -> float:
    """Scale-invariant signal-to-distortion ratio in dB.

    Projects the estimate onto the reference and compares projected energy
    against residual energy. Capped at +cap_db when the residual is
    numerically zero (and at -cap_db for a vanishing projection).
    """
    ref, est = _as_1d_pair(reference, estimate)
    if zero_mean:
        ref = ref - ref.mean()
        est = est - est.mean()
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0.0:
        raise ValueError("silent reference: SI-SDR undefined")
    alpha = float(np.dot(est, ref)) / ref_energy
    target = alpha * ref
    residual = est - target
    num = float(np.dot(target, target))
    den = float(np.dot(residual, residual))
    if num == 0.0:
        return -cap_db
    if den == 0.0:
        return cap_db
    val = 10.0 * np.log10(num / den)
    return float(np.clip(val, -cap_db, cap_db))


def _third_octave_bands(fs: int, nfft: int, bands: int, low_hz: float) -> np.ndarray:
    """Boolean [bands, nfft//2+1] matrix mapping FFT bins to octave bands."""
    freqs = np.arange(nfft // 2 + 1) * fs / nfft
    centers = low_hz * 2.0 ** (np.arange(bands) / 3.0)
    obm = np.zeros((bands, freqs.size), dtype=np.float64)
    for k, cf in enumerate(centers):
        lo = np.argmin(np.square(freqs - cf / 2.0 ** (1.0 / 6.0)))
        hi = np.argmin(np.square(freqs - cf * 2.0 ** (1.0 / 6.0)))
        obm[k, lo:hi] = 1.0
    return obm


def _frame_rows(x: np.ndarray, frame: int, hop: int) -> np.ndarray:
    count = (x.size - frame) // hop + 1
    idx = np.arange(frame)[None, :] + hop * np.arange(count)[:, None]
    return x[idx]


def stoi(reference, estimate, fs: int = 16000) -> float:
    """Short-time intelligibility score in [0, 1].

    Both signals are resampled to 10 kHz, silent reference frames are
    removed, and normalized correlations of clipped one-third-octave band
    envelopes are averaged over 384 ms segments.
    """
    ref, est = _as_1d_pair(reference, estimate)
    if fs != 16000:
        raise ValueError("expected 16 kHz input: resample before scoring")
    x = resample_poly(ref, _STOI_FS, fs)
    y = resample_poly(est, _STOI_FS, fs)

    window = np.hanning(_STOI_FRAME + 2)[1:-1]
    if x.size < _STOI_FRAME:
        raise ValueError("signal too short for intelligibility scoring")
    xf = _frame_rows(x, _STOI_FRAME, _STOI_HOP) * window
    yf = _frame_rows(y, _STOI_FRAME, _STOI_HOP) * window

    # Drop frames more than 40 dB below the loudest reference frame.
    levels = 20.0 * np.log10(np.linalg.norm(xf, axis=1) + _EPS)
    keep = levels > levels.max() - _STOI_DYN_RANGE_DB
    xf, yf = xf[keep], yf[keep]
    if xf.shape[0] < _STOI_SEGMENT:
        raise ValueError("fewer than 30 active frames after silence removal")

    spec_x = np.abs(np.fft.rfft(xf, n=_STOI_NFFT, axis=1)) ** 2
    spec_y = np.abs(np.fft.rfft(yf, n=_STOI_NFFT, axis=1)) ** 2
    obm = _third_octave_bands(_STOI_FS, _STOI_NFFT, _STOI_BANDS, _STOI_LOW_HZ)
    env_x = np.sqrt(spec_x @ obm.T).T  # [bands, frames]
    env_y = np.sqrt(spec_y @ obm.T).T

    clip_gain = 10.0 ** (-_STOI_BETA_DB / 20.0)
    total = 0.0
    segments = env_x.shape[1] - _STOI_SEGMENT + 1
    for m in range(segments):
        seg_x = env_x[:, m : m + _STOI_SEGMENT]
        seg_y = env_y[:, m : m + _STOI_SEGMENT]
        scale = np.linalg.norm(seg_x, axis=1) / (np.linalg.norm(seg_y, axis=1) + _EPS)
        seg_y = np.minimum(seg_y * scale[:, None], seg_x * (1.0 + clip_gain))
        seg_x = seg_x - seg_x.mean(axis=1, keepdims=True)
        seg_y = seg_y - seg_y.mean(axis=1, keepdims=True)
        num = np.sum(seg_x * seg_y, axis=1)
        den = np.linalg.norm(seg_x, axis=1) * np.linalg.norm(seg_y, axis=1) + _EPS
        total += np.sum(num / den)
    score = total / (segments * _STOI_BANDS)
    return float(np.clip(score, 0.0, 1.0))


def pcm_loss(reference, estimate, frame: int = PCM_FRAME, hop: int = PCM_HOP) -> float:
    """Phase-constrained magnitude distance between two waveforms.

    Mean absolute difference of |real| and |imaginary| STFT parts under a
    rectangular window. Signals shorter than one frame are zero padded to
    a single frame.
    """
    ref, est = _as_1d_pair(reference, estimate)
    if ref.size < frame:
        ref = np.pad(ref, (0, frame - ref.size))
        est = np.pad(est, (0, frame - est.size))
    spec_r = np.fft.rfft(_frame_rows(ref, frame, hop), axis=1)
    spec_e = np.fft.rfft(_frame_rows(est, frame, hop), axis=1)
    diff = np.abs(np.abs(spec_r.real) - np.abs(spec_e.real))
    diff += np.abs(np.abs(spec_r.imag) - np.abs(spec_e.imag))
    return float(diff.mean())


def evaluate_pair(reference, estimate, fs: int, metrics=METRIC_NAMES) -> dict:
    """Compute the named metrics for one reference/estimate pair.

    Record keys follow the report serialization: si_sdr_db, stoi, pcm.
    A pesq field is always present but null (not computed).
    """
    out = {}
    for name in metrics:
        if name == "si_sdr":
            out["si_sdr_db"] = si_sdr(reference, estimate)
        elif name == "stoi":
            out["stoi"] = stoi(reference, estimate, fs=fs)
        elif name == "pcm":
            out["pcm"] = pcm_loss(reference, estimate)
        else:
            raise ValueError(f"unknown metric: {name!r}")
    out["pesq"] = None
    return out


@dataclass
class MetricsReport:
    """Per-utterance metric records plus corpus-level means and counts."""

    records: list = field(default_factory=list)

    def summary(self) -> dict:
        keys: list = []
        for rec in self.records:
            keys.extend(k for k in rec if k != "id" and k not in keys)
        out = {}
        for k in keys:
            vals = [r[k] for r in self.records if r.get(k) is not None]
            out[k] = float(np.mean(vals)) if vals else None
        out["count"] = len(self.records)
        return out

    def to_jsonl(self) -> str:
        lines = [json.dumps(r, sort_keys=True) for r in self.records]
        lines.append(json.dumps({"summary": self.summary()}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())
