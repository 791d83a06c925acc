"""Sequential beamforming pipeline.

Composes the first-stage recurrent enhancer, the multichannel Wiener
filter with trainable transforms, and the second-stage enhancer, with
per-stage latency accounting. Intermediate stages emit hop-sized frames
that are concatenated, so stacking stages never increases end-to-end
algorithmic latency; only the final stage may overlap-add.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import llrnn
from .framing import CONCAT, OVERLAP_ADD, FrameSpec, _as_2d, algorithmic_latency
from .llrnn import LlrnnConfig, LlrnnWeights, init_weights
from .model_store import TensorContainer
from .transform import AnalysisTransform, SynthesisTransform, dft_init, random_init
from .wiener import BATCH, ONLINE, nwf_enhance

DNN1 = "dnn1"
DNN1_NWF = "dnn1_nwf"
DNN1_DNN2 = "dnn1_dnn2"
FULL_STACK = "full"
ORACLE_NWF = "oracle_nwf"
MODES = (DNN1, DNN1_NWF, DNN1_DNN2, FULL_STACK, ORACLE_NWF)

# stage presence per mode: (dnn1, nwf, dnn2)
_STAGES = {
    DNN1: (True, False, False),
    DNN1_NWF: (True, True, False),
    DNN1_DNN2: (True, False, True),
    FULL_STACK: (True, True, True),
    ORACLE_NWF: (False, True, False),
}

DEFAULT_INPUT_FRAME = 256
DEFAULT_HOP = 16
DEFAULT_OUTPUT_FRAME = 32
DEFAULT_HIDDEN = 128
DEFAULT_BLOCKS = 2

NWF_INITS = ("dft", "random")

_METADATA_KEYS = (
    "mode",
    "channels",
    "input_frame",
    "hop",
    "output_frame",
    "hidden",
    "blocks",
    "bins",
)


@dataclass(frozen=True)
class PipelineConfig:
    """Stage geometry and runtime knobs for one enhancement mode."""

    mode: str
    dnn1: FrameSpec | None = None
    nwf: FrameSpec | None = None
    dnn2: FrameSpec | None = None
    wiener: str = BATCH
    iterations: int = 1
    sample_rate: int = 16000
    loading: float = 1e-4
    forgetting: float = 0.998
    init_loading: float = 1e-2

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown pipeline mode {self.mode!r}")
        if self.wiener not in (BATCH, ONLINE):
            raise ValueError(f"unknown wiener mode {self.wiener!r}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.iterations != 1 and self.mode != FULL_STACK:
            raise ValueError("repeated refinement requires the full stack")
        wants = _STAGES[self.mode]
        have = tuple(s is not None for s in (self.dnn1, self.nwf, self.dnn2))
        if wants != have:
            raise ValueError(
                f"mode {self.mode!r} requires stages {wants}, got {have}"
            )
        present = self.stage_specs()
        for name, spec in present[:-1]:
            if spec.mode != CONCAT:
                raise ValueError(f"intermediate stage {name} must concatenate")
        grids = {(s.input_frame, s.hop) for _, s in present}
        if len(grids) != 1:
            raise ValueError("all stages must share one input frame and hop")

    def stage_specs(self) -> list[tuple[str, FrameSpec]]:
        """Present stages in processing order."""
        pairs = (("dnn1", self.dnn1), ("nwf", self.nwf), ("dnn2", self.dnn2))
        return [(name, spec) for name, spec in pairs if spec is not None]

    @property
    def final_spec(self) -> FrameSpec:
        return self.stage_specs()[-1][1]


def default_config(
    mode: str,
    wiener: str = BATCH,
    iterations: int = 1,
    sample_rate: int = 16000,
    input_frame: int = DEFAULT_INPUT_FRAME,
    hop: int = DEFAULT_HOP,
    output_frame: int = DEFAULT_OUTPUT_FRAME,
) -> PipelineConfig:
    """Standard per-mode geometry.

    Intermediate stages emit hop-sized concatenated frames; the final
    enhancer overlap-adds output_frame-sized frames. The oracle filter is
    evaluated on the concatenation grid.
    """
    if mode not in MODES:
        raise ValueError(f"unknown pipeline mode {mode!r}")
    inter = FrameSpec(input_frame, hop, hop, CONCAT)
    final = FrameSpec(input_frame, hop, output_frame, OVERLAP_ADD)
    specs = {
        DNN1: {"dnn1": final},
        DNN1_NWF: {"dnn1": inter, "nwf": final},
        DNN1_DNN2: {"dnn1": inter, "dnn2": final},
        FULL_STACK: {"dnn1": inter, "nwf": inter, "dnn2": final},
        ORACLE_NWF: {"nwf": inter},
    }[mode]
    return PipelineConfig(
        mode=mode,
        wiener=wiener,
        iterations=iterations,
        sample_rate=sample_rate,
        **specs,
    )


@dataclass
class StageOutputs:
    """Per-stage single-channel estimates, all input length, plus
    per-stage algorithmic latency in samples."""

    s_hat_dnn1: np.ndarray | None
    s_hat_nwf: np.ndarray | None
    s_hat_dnn2: np.ndarray | None
    latencies: dict

    @property
    def final(self) -> np.ndarray:
        for sig in (self.s_hat_dnn2, self.s_hat_nwf, self.s_hat_dnn1):
            if sig is not None:
                return sig
        raise ValueError("no stage produced output")

    @property
    def end_to_end_latency(self) -> int:
        for name in ("dnn2", "nwf", "dnn1"):
            if name in self.latencies:
                return self.latencies[name]
        raise ValueError("no stage latencies recorded")


@dataclass
class ModelBundle:
    """Weight set for one pipeline mode.

    hop is carried explicitly because it is not recoverable from tensor
    shapes; the remaining geometry is derived from the weights.
    """

    mode: str
    channels: int
    hop: int | None = None
    dnn1: LlrnnWeights | None = None
    dnn2: LlrnnWeights | None = None
    analysis: AnalysisTransform | None = None
    synthesis: SynthesisTransform | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown pipeline mode {self.mode!r}")
        wants = _STAGES[self.mode]
        have = (
            self.dnn1 is not None,
            self.analysis is not None and self.synthesis is not None,
            self.dnn2 is not None,
        )
        if wants != have:
            raise ValueError(
                f"mode {self.mode!r} requires weight groups {wants}, got {have}"
            )

    @property
    def input_frame(self) -> int:
        if self.dnn1 is not None:
            return self.dnn1.in_proj_w.shape[1]
        return self.analysis.input_frame

    @property
    def output_frame(self) -> int:
        """Output frame of the final stage."""
        if self.dnn2 is not None:
            return self.dnn2.out_proj_w.shape[0]
        if self.mode in (DNN1_NWF, ORACLE_NWF):
            return self.synthesis.output_frame
        return self.dnn1.out_proj_w.shape[0]

    @property
    def hidden(self) -> int:
        net = self.dnn1 or self.dnn2
        return net.hidden if net is not None else 0

    @property
    def blocks(self) -> int:
        net = self.dnn1 or self.dnn2
        return len(net.blocks) if net is not None else 0

    def to_container(self) -> TensorContainer:
        if self.hop is None:
            raise ValueError("bundle has no hop set; cannot serialize")
        tensors = {}
        if self.dnn1 is not None:
            tensors.update(self.dnn1.to_tensors("dnn1"))
        if self.dnn2 is not None:
            tensors.update(self.dnn2.to_tensors("dnn2"))
        if self.analysis is not None:
            tensors["nwf.B"] = self.analysis.matrix
            tensors["nwf.D"] = self.synthesis.matrix
        metadata = {
            "mode": self.mode,
            "channels": str(self.channels),
            "input_frame": str(self.input_frame),
            "hop": str(self.hop),
            "output_frame": str(self.output_frame),
            "hidden": str(self.hidden),
            "blocks": str(self.blocks),
            "bins": str(self.input_frame // 2 + 1),
        }
        return TensorContainer(tensors=tensors, metadata=metadata)

    @classmethod
    def from_container(cls, container: TensorContainer) -> "ModelBundle":
        meta = container.metadata
        missing = [k for k in _METADATA_KEYS if k not in meta]
        if missing:
            raise ValueError(f"container metadata missing keys {missing}")
        mode = meta["mode"]
        if mode not in MODES:
            raise ValueError(f"unknown pipeline mode {mode!r}")
        try:
            channels = int(meta["channels"])
            input_frame = int(meta["input_frame"])
            hop = int(meta["hop"])
            output_frame = int(meta["output_frame"])
            hidden = int(meta["hidden"])
            blocks = int(meta["blocks"])
            bins = int(meta["bins"])
        except ValueError as exc:
            raise ValueError(f"non-integer metadata value: {exc}") from exc

        has_dnn1, has_nwf, has_dnn2 = _STAGES[mode]
        tensors = container.tensors
        try:
            dnn1 = LlrnnWeights.from_tensors("dnn1", tensors) if has_dnn1 else None
            dnn2 = LlrnnWeights.from_tensors("dnn2", tensors) if has_dnn2 else None
        except KeyError as exc:
            raise ValueError(str(exc)) from exc
        analysis = synthesis = None
        if has_nwf:
            for name in ("nwf.B", "nwf.D"):
                if name not in tensors:
                    raise ValueError(f"missing tensor {name}")
            analysis = AnalysisTransform(tensors["nwf.B"])
            synthesis = SynthesisTransform(tensors["nwf.D"])
            if analysis.bins != bins or synthesis.bins != bins:
                raise ValueError("transform bins disagree with metadata")
            if analysis.input_frame != input_frame:
                raise ValueError("analysis frame disagrees with metadata")
        for net, want_m, name in ((dnn1, channels, "dnn1"), (dnn2, channels + 1, "dnn2")):
            if net is None:
                continue
            if net.hidden != hidden or len(net.blocks) != blocks:
                raise ValueError(f"{name} width disagrees with metadata")
            if net.channels != want_m:
                raise ValueError(f"{name} expects {net.channels} channels, not {want_m}")
            if net.in_proj_w.shape[1] != input_frame:
                raise ValueError(f"{name} input frame disagrees with metadata")
        bundle = cls(
            mode=mode,
            channels=channels,
            hop=hop,
            dnn1=dnn1,
            dnn2=dnn2,
            analysis=analysis,
            synthesis=synthesis,
        )
        if bundle.output_frame != output_frame:
            raise ValueError("final output frame disagrees with metadata")
        return bundle


def build_bundle(
    mode: str,
    channels: int,
    hidden: int = DEFAULT_HIDDEN,
    blocks: int = DEFAULT_BLOCKS,
    input_frame: int = DEFAULT_INPUT_FRAME,
    hop: int = DEFAULT_HOP,
    output_frame: int = DEFAULT_OUTPUT_FRAME,
    seed: int = 0,
    nwf_init: str = "random",
) -> ModelBundle:
    """Randomly initialized weights for one mode, deterministic per seed."""
    if nwf_init not in NWF_INITS:
        raise ValueError(f"unknown nwf init {nwf_init!r}")
    config = default_config(
        mode, input_frame=input_frame, hop=hop, output_frame=output_frame
    )
    dnn1 = dnn2 = analysis = synthesis = None
    if config.dnn1 is not None:
        dnn1 = init_weights(
            LlrnnConfig(channels, config.dnn1, hidden, blocks), [seed, 0]
        )
    if config.dnn2 is not None:
        dnn2 = init_weights(
            LlrnnConfig(channels + 1, config.dnn2, hidden, blocks), [seed, 1]
        )
    if config.nwf is not None:
        if nwf_init == "dft":
            analysis, synthesis = dft_init(
                input_frame, config.nwf.output_frame
            )
        else:
            analysis, synthesis = random_init(
                input_frame, config.nwf.output_frame, [seed, 2]
            )
    return ModelBundle(
        mode=mode,
        channels=channels,
        hop=hop,
        dnn1=dnn1,
        dnn2=dnn2,
        analysis=analysis,
        synthesis=synthesis,
    )


def _run_llrnn(x, weights: LlrnnWeights, spec: FrameSpec) -> np.ndarray:
    cfg = LlrnnConfig(weights.channels, spec, weights.hidden, len(weights.blocks))
    return llrnn.forward(x, weights, cfg)


def oracle_enhance(
    noisy,
    clean_target,
    analysis: AnalysisTransform,
    synthesis: SynthesisTransform,
    spec: FrameSpec,
    wiener_mode: str = BATCH,
    loading: float = 1e-4,
    forgetting: float = 0.998,
    init_loading: float = 1e-2,
) -> np.ndarray:
    """Wiener filter with a ground-truth target instead of a first-stage
    estimate; isolates filter quality from enhancer quality."""
    return nwf_enhance(
        noisy,
        clean_target,
        analysis,
        synthesis,
        spec,
        mode=wiener_mode,
        loading=loading,
        forgetting=forgetting,
        init_loading=init_loading,
    )


def enhance(
    noisy,
    config: PipelineConfig,
    bundle: ModelBundle,
    oracle_target=None,
) -> StageOutputs:
    """Run the configured stages over a multichannel signal.

    The first enhancer consumes the M-channel input; the Wiener filter
    targets its estimate; the filtered channel is stacked ahead of the
    original M channels for the second enhancer. All stage outputs share
    the input length.
    """
    x = _as_2d(noisy)
    if config.mode != bundle.mode:
        raise ValueError(
            f"config mode {config.mode!r} does not match bundle mode {bundle.mode!r}"
        )
    if x.shape[0] != bundle.channels:
        raise ValueError(
            f"expected {bundle.channels} input channels, got {x.shape[0]}"
        )
    if oracle_target is not None and config.mode != ORACLE_NWF:
        raise ValueError("oracle_target is only valid in oracle_nwf mode")

    latencies = {
        name: algorithmic_latency(spec) for name, spec in config.stage_specs()
    }

    if config.mode == ORACLE_NWF:
        if oracle_target is None:
            raise ValueError("oracle_nwf mode requires a clean target")
        s_nwf = oracle_enhance(
            x,
            oracle_target,
            bundle.analysis,
            bundle.synthesis,
            config.nwf,
            wiener_mode=config.wiener,
            loading=config.loading,
            forgetting=config.forgetting,
            init_loading=config.init_loading,
        )
        return StageOutputs(None, s_nwf, None, latencies)

    s1 = _run_llrnn(x, bundle.dnn1, config.dnn1)
    s_nwf = None
    s2 = None
    target = s1
    for _ in range(config.iterations):
        if config.nwf is not None:
            s_nwf = nwf_enhance(
                x,
                target,
                bundle.analysis,
                bundle.synthesis,
                config.nwf,
                mode=config.wiener,
                loading=config.loading,
                forgetting=config.forgetting,
                init_loading=config.init_loading,
            )
        if config.dnn2 is not None:
            head = s_nwf if s_nwf is not None else s1
            s2 = _run_llrnn(np.vstack([head, x]), bundle.dnn2, config.dnn2)
            target = s2
    return StageOutputs(s1, s_nwf, s2, latencies)


@dataclass(frozen=True)
class BudgetReport:
    params: int
    flops_per_second: float
    latency_ms: float
    stage_latencies_ms: list


def pipeline_budget(
    config: PipelineConfig, channels: int, hidden: int, blocks: int = 2
) -> BudgetReport:
    """Parameter count, streaming compute, and latency for a mode.

    Enhancer stages use the exact recurrent counts. The filter stage
    counts the analysis of M noisy channels plus the target channel, the
    per-bin streaming covariance/filter arithmetic (complex multiplies
    counted as four real multiply-accumulates), and the synthesis product,
    at two flops per multiply-accumulate.
    """
    params = 0
    flops = 0.0
    stage_latencies = []
    fs = config.sample_rate
    for name, spec in config.stage_specs():
        stage_latencies.append(algorithmic_latency(spec) / fs * 1000.0)
        if name == "nwf":
            window = spec.input_frame
            bins = window // 2 + 1
            two_f = 2 * bins
            out = spec.output_frame
            m = channels
            params += two_f * window + out * two_f
            macs = (m + 1) * two_f * window
            macs += bins * 4 * (3 * m * m + 3 * m)
            macs += out * two_f
            flops += 2 * macs * (fs / spec.hop)
        else:
            m = channels if name == "dnn1" else channels + 1
            lc = LlrnnConfig(m, spec, hidden, blocks)
            params += llrnn.count_params(lc)
            flops += llrnn.count_flops(lc, fs)
    latency_ms = algorithmic_latency(config.final_spec) / fs * 1000.0
    return BudgetReport(params, flops, latency_ms, stage_latencies)
