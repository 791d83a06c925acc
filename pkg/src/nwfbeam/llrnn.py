"""Low-latency recurrent enhancer.

Per frame: each input channel goes through one shared linear projection
(window -> hidden), layer norm, and a per-feature PReLU; the per-channel
latents are concatenated (reference mic first) and reduced to hidden
size by a spatial projection; a small stack of (layer norm -> LSTM)
blocks carries state across frames; a final projection emits the output
frame. All math is float64; weights are plain numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from nwfbeam.framing import FrameSpec, _as_2d, frames_to_signal, pad_and_frame


@dataclass(frozen=True)
class LlrnnConfig:
    """Architecture of one enhancer stage."""

    channels: int
    frame: FrameSpec
    hidden: int
    blocks: int = 2

    def __post_init__(self):
        if self.channels < 1:
            raise ValueError("need at least one channel")
        if self.hidden < 1 or self.blocks < 1:
            raise ValueError("hidden size and block count must be >= 1")


@dataclass
class BlockWeights:
    """One recurrent block: layer norm followed by an LSTM."""

    ln_g: np.ndarray
    ln_b: np.ndarray
    lstm_wx: np.ndarray  # [4H, H], gate order [input, forget, cell, output]
    lstm_wh: np.ndarray  # [4H, H]
    lstm_b: np.ndarray  # [4H]


@dataclass
class LlrnnWeights:
    in_proj_w: np.ndarray  # [H, window]
    in_proj_b: np.ndarray  # [H]
    in_ln_g: np.ndarray
    in_ln_b: np.ndarray
    prelu_a: np.ndarray  # [H] per-feature negative slopes
    spatial_w: np.ndarray  # [H, channels*H]
    spatial_b: np.ndarray
    blocks: list[BlockWeights] = field(default_factory=list)
    out_proj_w: np.ndarray = None  # [out_frame, H]
    out_proj_b: np.ndarray = None

    @property
    def hidden(self) -> int:
        return self.in_proj_w.shape[0]

    @property
    def channels(self) -> int:
        return self.spatial_w.shape[1] // self.hidden

    def to_tensors(self, prefix: str) -> dict[str, np.ndarray]:
        """Flatten into the container naming contract."""
        out = {
            f"{prefix}.in_proj.w": self.in_proj_w,
            f"{prefix}.in_proj.b": self.in_proj_b,
            f"{prefix}.in_ln.g": self.in_ln_g,
            f"{prefix}.in_ln.b": self.in_ln_b,
            f"{prefix}.prelu.a": self.prelu_a,
            f"{prefix}.spatial.w": self.spatial_w,
            f"{prefix}.spatial.b": self.spatial_b,
        }
        for k, blk in enumerate(self.blocks):
            out[f"{prefix}.blk{k}.ln.g"] = blk.ln_g
            out[f"{prefix}.blk{k}.ln.b"] = blk.ln_b
            out[f"{prefix}.blk{k}.lstm.wx"] = blk.lstm_wx
            out[f"{prefix}.blk{k}.lstm.wh"] = blk.lstm_wh
            out[f"{prefix}.blk{k}.lstm.b"] = blk.lstm_b
        out[f"{prefix}.out_proj.w"] = self.out_proj_w
        out[f"{prefix}.out_proj.b"] = self.out_proj_b
        return out

    @classmethod
    def from_tensors(cls, prefix: str, tensors: dict) -> "LlrnnWeights":
        def get(name):
            key = f"{prefix}.{name}"
            if key not in tensors:
                raise KeyError(f"missing tensor {key}")
            return np.asarray(tensors[key], dtype=np.float64)

        blocks = []
        k = 0
        while f"{prefix}.blk{k}.ln.g" in tensors:
            blocks.append(
                BlockWeights(
                    ln_g=get(f"blk{k}.ln.g"),
                    ln_b=get(f"blk{k}.ln.b"),
                    lstm_wx=get(f"blk{k}.lstm.wx"),
                    lstm_wh=get(f"blk{k}.lstm.wh"),
                    lstm_b=get(f"blk{k}.lstm.b"),
                )
            )
            k += 1
        if not blocks:
            raise KeyError(f"no recurrent blocks found under {prefix!r}")
        return cls(
            in_proj_w=get("in_proj.w"),
            in_proj_b=get("in_proj.b"),
            in_ln_g=get("in_ln.g"),
            in_ln_b=get("in_ln.b"),
            prelu_a=get("prelu.a"),
            spatial_w=get("spatial.w"),
            spatial_b=get("spatial.b"),
            blocks=blocks,
            out_proj_w=get("out_proj.w"),
            out_proj_b=get("out_proj.b"),
        )


def layer_norm(x, gain, bias, eps: float = 1e-5) -> np.ndarray:
    """Normalize over the last axis with population variance."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return gain * (x - mean) / np.sqrt(var + eps) + bias


def prelu(x, slopes) -> np.ndarray:
    """Per-feature parametric ReLU over the last axis."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, x, slopes * x)


def lstm_cell(x, h, c, wx, wh, b):
    """One LSTM step; gate layout along rows is [input, forget, cell, output].

    c' = f * c + i * g,  h' = o * tanh(c') with sigmoid on i, f, o and
    tanh on g. Returns (h', c').
    """
    z = wx @ x + wh @ h + b
    hidden = h.shape[-1]
    i = expit(z[:hidden])
    f = expit(z[hidden : 2 * hidden])
    g = np.tanh(z[2 * hidden : 3 * hidden])
    o = expit(z[3 * hidden :])
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    return h_new, c_new


def init_weights(config: LlrnnConfig, seed: int) -> LlrnnWeights:
    """Seeded uniform fan-in initialization; PReLU slopes start at 0.25,
    layer norms at identity."""
    rng = np.random.default_rng(seed)
    h = config.hidden
    window = config.frame.input_frame
    out = config.frame.output_frame
    m = config.channels

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    blocks = [
        BlockWeights(
            ln_g=np.ones(h),
            ln_b=np.zeros(h),
            lstm_wx=uniform((4 * h, h), h),
            lstm_wh=uniform((4 * h, h), h),
            lstm_b=np.zeros(4 * h),
        )
        for _ in range(config.blocks)
    ]
    return LlrnnWeights(
        in_proj_w=uniform((h, window), window),
        in_proj_b=np.zeros(h),
        in_ln_g=np.ones(h),
        in_ln_b=np.zeros(h),
        prelu_a=np.full(h, 0.25),
        spatial_w=uniform((h, m * h), m * h),
        spatial_b=np.zeros(h),
        blocks=blocks,
        out_proj_w=uniform((out, h), h),
        out_proj_b=np.zeros(out),
    )


def forward_frames(frames, weights: LlrnnWeights, state=None):
    """Run the enhancer over a frame tensor.

    frames: [channels, T, window]; state: per-block (h, c) pairs carried
    across calls, or None to start from zeros. Returns
    (output frames [T, out_frame], new state).
    """
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError("expected frames [channels, T, window]")
    m, t_count, window = x.shape
    hidden = weights.hidden
    if window != weights.in_proj_w.shape[1]:
        raise ValueError(
            f"frame width {window} does not match input projection "
            f"{weights.in_proj_w.shape[1]}"
        )
    if weights.spatial_w.shape[1] != m * hidden:
        raise ValueError(
            f"channel-count mismatch: weights reduce {weights.channels} "
            f"channels, got {m}"
        )
    latent = x @ weights.in_proj_w.T + weights.in_proj_b  # [M, T, H]
    latent = layer_norm(latent, weights.in_ln_g, weights.in_ln_b)
    latent = prelu(latent, weights.prelu_a)
    # concat per-channel latents, reference mic (index 0) first
    stacked = latent.transpose(1, 0, 2).reshape(t_count, m * hidden)
    seq = stacked @ weights.spatial_w.T + weights.spatial_b  # [T, H]

    if state is None:
        state = [
            (np.zeros(hidden), np.zeros(hidden)) for _ in weights.blocks
        ]
    if len(state) != len(weights.blocks):
        raise ValueError("state does not match block count")
    new_state = []
    for blk, (h0, c0) in zip(weights.blocks, state):
        normed = layer_norm(seq, blk.ln_g, blk.ln_b)
        zx = normed @ blk.lstm_wx.T + blk.lstm_b  # [T, 4H], input part
        outputs = np.empty((t_count, hidden))
        h, c = h0, c0
        for t in range(t_count):
            z = zx[t] + blk.lstm_wh @ h
            i = expit(z[:hidden])
            f = expit(z[hidden : 2 * hidden])
            g = np.tanh(z[2 * hidden : 3 * hidden])
            o = expit(z[3 * hidden :])
            c = f * c + i * g
            h = o * np.tanh(c)
            outputs[t] = h
        new_state.append((h, c))
        seq = outputs
    out = seq @ weights.out_proj_w.T + weights.out_proj_b
    return out, new_state


def forward(signal, weights: LlrnnWeights, config: LlrnnConfig) -> np.ndarray:
    """Signal in [channels, samples], enhanced signal out [1, samples]."""
    x = _as_2d(signal)
    if x.shape[0] != config.channels:
        raise ValueError(
            f"expected {config.channels} channels, got {x.shape[0]}"
        )
    frames = pad_and_frame(x, config.frame)
    out_frames, _ = forward_frames(frames.data, weights)
    return frames_to_signal(out_frames[None, :, :], config.frame, x.shape[1])


def count_params(config: LlrnnConfig) -> int:
    """Exact trainable parameter count."""
    h = config.hidden
    window = config.frame.input_frame
    out = config.frame.output_frame
    m = config.channels
    total = h * window + h  # shared input projection
    total += 2 * h  # input layer norm
    total += h  # prelu slopes
    total += h * (m * h) + h  # spatial reduction
    total += config.blocks * (2 * h + 4 * h * h + 4 * h * h + 4 * h)
    total += out * h + out  # output projection
    return total


def count_flops(config: LlrnnConfig, sample_rate: int = 16000) -> float:
    """Streaming compute in flops/second.

    2 flops per multiply-accumulate in the matrix products, plus one op
    per activation element (PReLU features and LSTM gate/state
    arithmetic), times the frame rate.
    """
    h = config.hidden
    window = config.frame.input_frame
    out = config.frame.output_frame
    m = config.channels
    macs = m * window * h + m * h * h + config.blocks * 8 * h * h + h * out
    activations = m * h + config.blocks * 9 * h
    per_frame = 2 * macs + activations
    return per_frame * (sample_rate / config.frame.hop)
