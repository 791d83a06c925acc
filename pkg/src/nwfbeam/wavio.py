"""WAV file helpers: RIFF/WAVE, 16-bit PCM or 32-bit float in, float out."""

from __future__ import annotations

import numpy as np
from scipy.io import wavfile

from nwfbeam.framing import MultichannelSignal


def read_wav(path) -> MultichannelSignal:
    """Read a WAV file into [channels, samples] float64.

    Accepts 16-bit PCM (scaled by 1/32768) and 32/64-bit float payloads.
    """
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        scaled = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        scaled = data.astype(np.float64)
    else:
        raise ValueError(
            f"unsupported WAV sample format {data.dtype}; "
            "need 16-bit PCM or 32-bit float"
        )
    if scaled.ndim == 1:
        scaled = scaled[:, None]
    return MultichannelSignal(scaled.T, sample_rate=int(rate))


def write_wav(path, signal: MultichannelSignal) -> None:
    """Write as 32-bit float WAV, one column per channel."""
    frames = np.ascontiguousarray(signal.data.T.astype(np.float32))
    if frames.shape[1] == 1:
        frames = frames[:, 0]
    wavfile.write(path, signal.sample_rate, frames)
