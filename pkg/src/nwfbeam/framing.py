"""Causal framing and frame-to-signal assembly.

Streaming convention used throughout the engine: the signal is prepended
with input_frame - hop zeros, frame t covers padded samples
[t*hop, t*hop + input_frame), so the last sample of frame t is input
sample (t+1)*hop - 1 and no frame looks ahead. A stage emits
output_frame samples per frame, aligned to the rightmost output_frame
samples of its input frame; "concat" stages emit hop samples back to
back, "overlap_add" stages sum overlapping output frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CONCAT = "concat"
OVERLAP_ADD = "overlap_add"


@dataclass(frozen=True)
class FrameSpec:
    """Frame geometry of one processing stage.

    input_frame:  window length in samples
    hop:          frame advance in samples
    output_frame: samples emitted per frame
    mode:         CONCAT or OVERLAP_ADD
    """

    input_frame: int
    hop: int
    output_frame: int
    mode: str = CONCAT

    def __post_init__(self):
        if not (1 <= self.hop <= self.output_frame <= self.input_frame):
            raise ValueError(
                "frame geometry must satisfy 1 <= hop <= output_frame <= "
                f"input_frame, got hop={self.hop} output_frame="
                f"{self.output_frame} input_frame={self.input_frame}"
            )
        if self.mode not in (CONCAT, OVERLAP_ADD):
            raise ValueError(f"unknown synthesis mode {self.mode!r}")
        if self.mode == CONCAT and self.output_frame != self.hop:
            raise ValueError("concat synthesis requires output_frame == hop")


@dataclass
class MultichannelSignal:
    """Time-domain signal, shape [channels, samples], float64."""

    data: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError("signal must be 2-D [channels, samples]")
        if self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise ValueError("signal needs at least one channel and one sample")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("signal contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def samples(self) -> int:
        return self.data.shape[1]


@dataclass
class FrameTensor:
    """Framed signal, shape [channels, frames, width], plus its hop."""

    data: np.ndarray
    hop: int


def _as_2d(signal) -> np.ndarray:
    if isinstance(signal, MultichannelSignal):
        return signal.data
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError("expected [channels, samples] or [samples]")
    return x


def pad_and_frame(signal, spec: FrameSpec) -> FrameTensor:
    """Frame a signal causally.

    Prepends input_frame - hop zeros so the first frame is flush with the
    start of the signal, zero-pads the tail so the final partial hop still
    yields a frame. Produces ceil(samples / hop) frames.
    """
    x = _as_2d(signal)
    channels, length = x.shape
    if length < 1:
        raise ValueError("cannot frame an empty signal")
    t_count = -(-length // spec.hop)
    lead = spec.input_frame - spec.hop
    padded = np.zeros((channels, lead + t_count * spec.hop), dtype=np.float64)
    padded[:, lead : lead + length] = x
    view = np.lib.stride_tricks.sliding_window_view(
        padded, spec.input_frame, axis=1
    )
    frames = np.ascontiguousarray(view[:, :: spec.hop, :])
    assert frames.shape[1] == t_count
    return FrameTensor(frames, spec.hop)


def concat_frames(frames) -> np.ndarray:
    """Concatenate frames along time: [..., T, W] -> [..., T*W]."""
    f = np.asarray(frames, dtype=np.float64)
    if f.ndim < 2:
        raise ValueError("expected at least [frames, width]")
    return f.reshape(f.shape[:-2] + (f.shape[-2] * f.shape[-1],))


def overlap_add(frames, hop: int) -> np.ndarray:
    """Sum frames at the given hop: output[n] = sum_t frame[t][n - t*hop].

    Output length is (T-1)*hop + W. No window and no normalization; any
    scaling is the synthesis transform's responsibility.
    """
    f = np.asarray(frames, dtype=np.float64)
    if f.ndim < 2:
        raise ValueError("expected at least [frames, width]")
    if hop < 1:
        raise ValueError("hop must be positive")
    t_count, width = f.shape[-2], f.shape[-1]
    out = np.zeros(f.shape[:-2] + ((t_count - 1) * hop + width,), dtype=np.float64)
    for t in range(t_count):
        out[..., t * hop : t * hop + width] += f[..., t, :]
    return out


def algorithmic_latency(spec: FrameSpec) -> int:
    """Samples of lookahead the stage's output implies: hop for concat,
    output_frame for overlap-add."""
    if spec.mode == OVERLAP_ADD:
        return spec.output_frame
    return spec.hop


def frames_to_signal(frames, spec: FrameSpec, length: int) -> np.ndarray:
    """Assemble output frames into a signal aligned with the stage input.

    Output frames represent the rightmost output_frame samples of each
    analysis frame, so overlap-add output leads the input by
    output_frame - hop samples; those are dropped, then the result is
    truncated to the input length. Concat mode drops nothing.
    """
    f = np.asarray(frames, dtype=np.float64)
    if spec.mode == CONCAT:
        y = concat_frames(f)
    else:
        y = overlap_add(f, spec.hop)[..., spec.output_frame - spec.hop :]
    if y.shape[-1] < length:
        raise ValueError(
            f"frames cover {y.shape[-1]} samples, need {length}"
        )
    return y[..., :length]
