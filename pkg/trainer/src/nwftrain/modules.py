"""Differentiable twin of the streaming enhancement engine.

Replicates the engine's forward math in torch so it can be trained end
to end: causal framing (window prepended with window - hop zeros, one
frame per hop), learned analysis/synthesis matrices around a closed-form
per-bin Wiener solve, and the recurrent enhancer stages. Weights travel
to the engine through the tensor container with the shared naming
contract (dnn1.*, dnn2.*, nwf.B, nwf.D).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from nwftrain.container import load_container, save_container

CONCAT = "concat"
OVERLAP_ADD = "overlap_add"

DNN1 = "dnn1"
DNN1_NWF = "dnn1_nwf"
DNN1_DNN2 = "dnn1_dnn2"
FULL_STACK = "full"
MODES = (DNN1, DNN1_NWF, DNN1_DNN2, FULL_STACK)

# stage presence per mode: (dnn1, nwf, dnn2)
_STAGES = {
    DNN1: (True, False, False),
    DNN1_NWF: (True, True, False),
    DNN1_DNN2: (True, False, True),
    FULL_STACK: (True, True, True),
}


@dataclass(frozen=True)
class StageFrame:
    """Frame geometry of one stage: window, hop, emitted width, assembly."""

    window: int
    hop: int
    out: int
    mode: str = CONCAT

    def __post_init__(self):
        if not 1 <= self.hop <= self.out <= self.window:
            raise ValueError("need 1 <= hop <= out <= window")
        if self.mode not in (CONCAT, OVERLAP_ADD):
            raise ValueError(f"unknown assembly mode {self.mode!r}")
        if self.mode == CONCAT and self.out != self.hop:
            raise ValueError("concat assembly requires out == hop")


def frame_signal(x: torch.Tensor, window: int, hop: int) -> torch.Tensor:
    """Causal framing: [channels, samples] -> [channels, T, window].

    Prepends window - hop zeros and zero-pads the tail so every started
    hop yields a frame; frame t ends at input sample (t+1)*hop - 1.
    """
    channels, length = x.shape
    t_count = -(-length // hop)
    lead = window - hop
    padded = F.pad(x, (lead, t_count * hop - length))
    return padded.unfold(1, window, hop)


def assemble_signal(
    frames: torch.Tensor, stage: StageFrame, length: int
) -> torch.Tensor:
    """Output frames [T, out] -> signal [length] aligned with the input.

    Concat stages lay hops back to back; overlap-add stages sum frames at
    the stage hop, drop the out - hop leading samples (the frames cover
    the rightmost out samples of each window), and truncate.
    """
    if stage.mode == CONCAT:
        return frames.reshape(-1)[:length]
    t_count, width = frames.shape
    total = (t_count - 1) * stage.hop + width
    grid = torch.arange(t_count, device=frames.device) * stage.hop
    idx = (grid[:, None] + torch.arange(width, device=frames.device)).reshape(-1)
    out = frames.new_zeros(total)
    out = out.index_add(0, idx, frames.reshape(-1))
    return out[width - stage.hop :][:length]


def dft_matrices(window: int, out: int) -> tuple[np.ndarray, np.ndarray]:
    """Fourier pair: analysis [2F, window] (cos rows then -sin rows) and
    the pseudo-inverse synthesis restricted to the last out samples."""
    bins = window // 2 + 1
    n = np.arange(window)
    k = np.arange(bins)
    phase = 2 * np.pi * np.outer(k, n) / window
    analysis = np.vstack([np.cos(phase), -np.sin(phase)])
    gain = np.full(bins, 2.0)
    gain[0] = 1.0
    gain[-1] = 1.0
    cos_part = np.cos(phase).T * gain / window
    sin_part = -np.sin(phase).T * gain / window
    synthesis = np.hstack([cos_part, sin_part])[window - out :, :]
    return analysis, synthesis


def random_matrices(
    window: int, out: int, seed
) -> tuple[np.ndarray, np.ndarray]:
    """Zero-mean uniform init with entry variance 1/fan_in."""
    bins = window // 2 + 1
    rng = np.random.default_rng(seed)
    a_half = np.sqrt(3.0 / window)
    s_half = np.sqrt(3.0 / (2 * bins))
    analysis = rng.uniform(-a_half, a_half, size=(2 * bins, window))
    synthesis = rng.uniform(-s_half, s_half, size=(out, 2 * bins))
    return analysis, synthesis


def spectra(frames: torch.Tensor, analysis: torch.Tensor) -> torch.Tensor:
    """Frames [..., window] -> complex spectra [..., bins]; the analysis
    matrix packs Re parts in its first half of rows, Im in the second."""
    v = frames @ analysis.T
    bins = analysis.shape[0] // 2
    return torch.complex(v[..., :bins], v[..., bins:])


def frames_from_spectra(spec: torch.Tensor, synthesis: torch.Tensor) -> torch.Tensor:
    """Complex spectra [..., bins] -> output frames [..., out]."""
    packed = torch.cat([spec.real, spec.imag], dim=-1)
    return packed @ synthesis.T


def wiener_filter_spectra(
    noisy_spec: torch.Tensor, target_spec: torch.Tensor, loading: float = 1e-4
) -> torch.Tensor:
    """Per-bin multichannel Wiener filter, batch statistics.

    noisy_spec [M, T, bins] complex, target_spec [T, bins] complex.
    Solves (cov + loading * tr(cov)/M * I) w = cross per bin and applies
    w^H Y; bins with zero energy emit zeros.
    """
    m = noisy_spec.shape[0]
    cov = torch.einsum("mtf,ntf->fmn", noisy_spec, noisy_spec.conj())
    cross = torch.einsum("mtf,tf->fm", noisy_spec, target_spec.conj())
    trace = torch.einsum("fmm->f", cov).real
    weights = torch.zeros_like(cross)
    active = trace > 0
    if bool(active.any()):
        eye = torch.eye(m, dtype=cov.dtype, device=cov.device)
        ridge = (loading * trace[active] / m)[:, None, None] * eye
        solved = torch.linalg.solve(
            cov[active] + ridge, cross[active].unsqueeze(-1)
        ).squeeze(-1)
        weights[active] = solved
    return torch.einsum("fm,mtf->tf", weights.conj(), noisy_spec)


class RecurrentBlock(nn.Module):
    """Layer norm followed by a unidirectional LSTM.

    The engine's cell carries a single bias vector, so the LSTM's
    recurrent bias is pinned to zero and excluded from training; the
    exported bias is the sum of both torch biases.
    """

    def __init__(self, hidden: int, dtype=torch.float64):
        super().__init__()
        self.hidden = hidden
        self.ln_g = nn.Parameter(torch.ones(hidden, dtype=dtype))
        self.ln_b = nn.Parameter(torch.zeros(hidden, dtype=dtype))
        self.lstm = nn.LSTM(hidden, hidden).to(dtype)
        with torch.no_grad():
            self.lstm.bias_hh_l0.zero_()
        self.lstm.bias_hh_l0.requires_grad_(False)

    def forward(self, seq: torch.Tensor) -> torch.Tensor:
        normed = F.layer_norm(seq, (self.hidden,), self.ln_g, self.ln_b)
        out, _ = self.lstm(normed.unsqueeze(1))
        return out.squeeze(1)


class Enhancer(nn.Module):
    """Recurrent enhancer stage: shared per-channel input projection,
    layer norm, per-feature PReLU, spatial reduction (reference channel
    first), recurrent blocks, output projection."""

    def __init__(
        self,
        channels: int,
        window: int,
        out: int,
        hidden: int,
        blocks: int,
        dtype=torch.float64,
    ):
        super().__init__()
        self.channels = channels
        self.hidden = hidden
        self.in_w = nn.Parameter(torch.empty(hidden, window, dtype=dtype))
        self.in_b = nn.Parameter(torch.zeros(hidden, dtype=dtype))
        self.in_ln_g = nn.Parameter(torch.ones(hidden, dtype=dtype))
        self.in_ln_b = nn.Parameter(torch.zeros(hidden, dtype=dtype))
        self.prelu_a = nn.Parameter(torch.full((hidden,), 0.25, dtype=dtype))
        self.spatial_w = nn.Parameter(
            torch.empty(hidden, channels * hidden, dtype=dtype)
        )
        self.spatial_b = nn.Parameter(torch.zeros(hidden, dtype=dtype))
        self.blocks = nn.ModuleList(
            RecurrentBlock(hidden, dtype) for _ in range(blocks)
        )
        self.out_w = nn.Parameter(torch.empty(out, hidden, dtype=dtype))
        self.out_b = nn.Parameter(torch.zeros(out, dtype=dtype))

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """Frames [channels, T, window] -> output frames [T, out]."""
        m, t_count, _ = frames.shape
        if m != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {m}")
        latent = F.linear(frames, self.in_w, self.in_b)
        latent = F.layer_norm(latent, (self.hidden,), self.in_ln_g, self.in_ln_b)
        latent = torch.where(latent >= 0, latent, self.prelu_a * latent)
        stacked = latent.permute(1, 0, 2).reshape(t_count, m * self.hidden)
        seq = F.linear(stacked, self.spatial_w, self.spatial_b)
        for blk in self.blocks:
            seq = blk(seq)
        return F.linear(seq, self.out_w, self.out_b)

    def init_uniform(self, seed) -> None:
        """Seeded fan-in uniform init matching the engine's scheme."""
        rng = np.random.default_rng(seed)

        def uniform(param, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            values = rng.uniform(-bound, bound, size=tuple(param.shape))
            with torch.no_grad():
                param.copy_(torch.from_numpy(values))

        for blk in self.blocks:
            uniform(blk.lstm.weight_ih_l0, self.hidden)
            uniform(blk.lstm.weight_hh_l0, self.hidden)
            with torch.no_grad():
                blk.lstm.bias_ih_l0.zero_()
        window = self.in_w.shape[1]
        uniform(self.in_w, window)
        uniform(self.spatial_w, self.channels * self.hidden)
        uniform(self.out_w, self.hidden)


class PipelineModel(nn.Module):
    """Trainable pipeline: first enhancer -> Wiener filter with learned
    transforms -> second enhancer, per the configured mode. The second
    enhancer consumes [best single-channel estimate; all mics]."""

    def __init__(
        self,
        mode: str,
        channels: int,
        window: int = 64,
        hop: int = 8,
        out: int = 16,
        hidden: int = 16,
        blocks: int = 2,
        nwf_init: str = "dft",
        seed: int = 0,
        dtype=torch.float64,
    ):
        super().__init__()
        if mode not in MODES:
            raise ValueError(f"unknown pipeline mode {mode!r}")
        self.mode = mode
        self.channels = channels
        self.window = window
        self.hop = hop
        self.out = out
        self.hidden = hidden
        self.block_count = blocks
        has_dnn1, has_nwf, has_dnn2 = _STAGES[mode]
        inter = StageFrame(window, hop, hop, CONCAT)
        final = StageFrame(window, hop, out, OVERLAP_ADD)

        self.dnn1 = None
        if has_dnn1:
            stage = final if mode == DNN1 else inter
            self.dnn1 = Enhancer(channels, window, stage.out, hidden, blocks, dtype)
            self.dnn1.init_uniform([seed, 0])
            self.dnn1_frame = stage

        self.analysis = self.synthesis = None
        if has_nwf:
            stage = final if mode == DNN1_NWF else inter
            if nwf_init == "dft":
                b_mat, d_mat = dft_matrices(window, stage.out)
            elif nwf_init == "random":
                b_mat, d_mat = random_matrices(window, stage.out, [seed, 2])
            else:
                raise ValueError(f"unknown nwf init {nwf_init!r}")
            self.analysis = nn.Parameter(torch.tensor(b_mat, dtype=dtype))
            self.synthesis = nn.Parameter(torch.tensor(d_mat, dtype=dtype))
            self.nwf_frame = stage

        self.dnn2 = None
        if has_dnn2:
            self.dnn2 = Enhancer(channels + 1, window, out, hidden, blocks, dtype)
            self.dnn2.init_uniform([seed, 1])
            self.dnn2_frame = final

    @property
    def output_frame(self) -> int:
        """Emitted width of the final stage."""
        if self.mode == DNN1_NWF:
            return self.synthesis.shape[0]
        return self.out

    def stage_names(self) -> list[str]:
        names = []
        if self.dnn1 is not None:
            names.append("dnn1")
        if self.analysis is not None:
            names.append("nwf")
        if self.dnn2 is not None:
            names.append("dnn2")
        return names

    def forward(self, noisy: torch.Tensor, loading: float = 1e-4) -> dict:
        """noisy [channels, samples] -> per-stage signals [samples]."""
        m, length = noisy.shape
        if m != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {m}")
        frames = frame_signal(noisy, self.window, self.hop)
        outputs = {}
        s1 = assemble_signal(self.dnn1(frames), self.dnn1_frame, length)
        outputs["dnn1"] = s1
        head = s1
        if self.analysis is not None:
            target_frames = frame_signal(s1[None, :], self.window, self.hop)[0]
            noisy_spec = spectra(frames, self.analysis)
            target_spec = spectra(target_frames, self.analysis)
            out_spec = wiener_filter_spectra(noisy_spec, target_spec, loading)
            s_nwf = assemble_signal(
                frames_from_spectra(out_spec, self.synthesis),
                self.nwf_frame,
                length,
            )
            outputs["nwf"] = s_nwf
            head = s_nwf
        if self.dnn2 is not None:
            stacked = torch.cat([head[None, :], noisy], dim=0)
            frames2 = frame_signal(stacked, self.window, self.hop)
            outputs["dnn2"] = assemble_signal(
                self.dnn2(frames2), self.dnn2_frame, length
            )
        return outputs

    def final_output(self, noisy: torch.Tensor, loading: float = 1e-4) -> torch.Tensor:
        outputs = self.forward(noisy, loading)
        return outputs[self.stage_names()[-1]]


def _enhancer_tensors(prefix: str, enh: Enhancer) -> dict:
    out = {
        f"{prefix}.in_proj.w": enh.in_w,
        f"{prefix}.in_proj.b": enh.in_b,
        f"{prefix}.in_ln.g": enh.in_ln_g,
        f"{prefix}.in_ln.b": enh.in_ln_b,
        f"{prefix}.prelu.a": enh.prelu_a,
        f"{prefix}.spatial.w": enh.spatial_w,
        f"{prefix}.spatial.b": enh.spatial_b,
    }
    for k, blk in enumerate(enh.blocks):
        out[f"{prefix}.blk{k}.ln.g"] = blk.ln_g
        out[f"{prefix}.blk{k}.ln.b"] = blk.ln_b
        out[f"{prefix}.blk{k}.lstm.wx"] = blk.lstm.weight_ih_l0
        out[f"{prefix}.blk{k}.lstm.wh"] = blk.lstm.weight_hh_l0
        out[f"{prefix}.blk{k}.lstm.b"] = blk.lstm.bias_ih_l0 + blk.lstm.bias_hh_l0
    out[f"{prefix}.out_proj.w"] = enh.out_w
    out[f"{prefix}.out_proj.b"] = enh.out_b
    return out


def model_tensors(model: PipelineModel) -> dict:
    """Weights as numpy arrays under the shared naming contract."""
    tensors = {}
    if model.dnn1 is not None:
        tensors.update(_enhancer_tensors("dnn1", model.dnn1))
    if model.dnn2 is not None:
        tensors.update(_enhancer_tensors("dnn2", model.dnn2))
    if model.analysis is not None:
        tensors["nwf.B"] = model.analysis
        tensors["nwf.D"] = model.synthesis
    return {k: v.detach().cpu().numpy() for k, v in tensors.items()}


def model_metadata(model: PipelineModel) -> dict:
    return {
        "mode": model.mode,
        "channels": str(model.channels),
        "input_frame": str(model.window),
        "hop": str(model.hop),
        "output_frame": str(model.output_frame),
        "hidden": str(model.hidden),
        "blocks": str(model.block_count),
        "bins": str(model.window // 2 + 1),
    }


def export_weights(model: PipelineModel, path) -> None:
    """Write the model as a tensor container the engine can load."""
    save_container(path, model_tensors(model), model_metadata(model))


def _load_enhancer(prefix: str, tensors: dict, enh: Enhancer) -> None:
    def put(param, name):
        values = torch.from_numpy(np.asarray(tensors[f"{prefix}.{name}"]))
        with torch.no_grad():
            param.copy_(values)

    put(enh.in_w, "in_proj.w")
    put(enh.in_b, "in_proj.b")
    put(enh.in_ln_g, "in_ln.g")
    put(enh.in_ln_b, "in_ln.b")
    put(enh.prelu_a, "prelu.a")
    put(enh.spatial_w, "spatial.w")
    put(enh.spatial_b, "spatial.b")
    for k, blk in enumerate(enh.blocks):
        put(blk.ln_g, f"blk{k}.ln.g")
        put(blk.ln_b, f"blk{k}.ln.b")
        put(blk.lstm.weight_ih_l0, f"blk{k}.lstm.wx")
        put(blk.lstm.weight_hh_l0, f"blk{k}.lstm.wh")
        put(blk.lstm.bias_ih_l0, f"blk{k}.lstm.b")
        with torch.no_grad():
            blk.lstm.bias_hh_l0.zero_()
    put(enh.out_w, "out_proj.w")
    put(enh.out_b, "out_proj.b")


def load_model(path, dtype=torch.float64) -> PipelineModel:
    """Build a model from a container written by either component."""
    tensors, meta = load_container(path)
    mode = meta["mode"]
    if mode not in MODES:
        raise ValueError(f"container mode {mode!r} is not trainable here")
    model = PipelineModel(
        mode=mode,
        channels=int(meta["channels"]),
        window=int(meta["input_frame"]),
        hop=int(meta["hop"]),
        out=int(meta["output_frame"]),
        hidden=int(meta["hidden"]),
        blocks=int(meta["blocks"]),
        nwf_init="dft",
        dtype=dtype,
    )
    if model.dnn1 is not None:
        _load_enhancer("dnn1", tensors, model.dnn1)
    if model.dnn2 is not None:
        _load_enhancer("dnn2", tensors, model.dnn2)
    if model.analysis is not None:
        with torch.no_grad():
            model.analysis.copy_(torch.from_numpy(np.asarray(tensors["nwf.B"])))
            model.synthesis.copy_(torch.from_numpy(np.asarray(tensors["nwf.D"])))
    return model
