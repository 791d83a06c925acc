"""Trainable analysis and synthesis transforms.

The analysis transform is a real matrix of shape [2F, input_frame] with
F = input_frame/2 + 1; its output vector packs the real parts of the F
spectral bins in the first half and the imaginary parts in the second
half, spectrum[f] = v[f] + i v[F + f]. The synthesis transform maps the
stacked [Re; Im] of a (possibly filtered) spectrum back to the rightmost
output_frame time samples. Both are ordinary weight matrices so they can
be trained; dft_init makes the pair an exact pass-through.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class AnalysisTransform:
    """Real matrix [2*bins, input_frame]."""

    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] % 2 != 0:
            raise ValueError("analysis matrix must be [2*bins, input_frame]")

    @property
    def bins(self) -> int:
        return self.matrix.shape[0] // 2

    @property
    def input_frame(self) -> int:
        return self.matrix.shape[1]


@dataclass
class SynthesisTransform:
    """Real matrix [output_frame, 2*bins]."""

    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[1] % 2 != 0:
            raise ValueError("synthesis matrix must be [output_frame, 2*bins]")

    @property
    def bins(self) -> int:
        return self.matrix.shape[1] // 2

    @property
    def output_frame(self) -> int:
        return self.matrix.shape[0]


def dft_init(
    input_frame: int, output_frame: int | None = None
) -> tuple[AnalysisTransform, SynthesisTransform]:
    """Fourier initialization.

    Analysis rows are cos(2 pi k n / W) for k = 0..F-1 followed by
    -sin(2 pi k n / W), i.e. analyze() equals the one-sided DFT. Synthesis
    is the real inverse-DFT matrix restricted to the last output_frame
    samples, which is also the least-squares pseudo-inverse restricted to
    those rows, so analyze -> synthesize reproduces the frame tail exactly.
    """
    if input_frame % 2 != 0 or input_frame < 2:
        raise ValueError("input_frame must be a positive even number")
    out = input_frame if output_frame is None else output_frame
    if not 1 <= out <= input_frame:
        raise ValueError("output_frame must be in [1, input_frame]")
    bins = input_frame // 2 + 1
    n = np.arange(input_frame)
    k = np.arange(bins)
    phase = 2 * np.pi * np.outer(k, n) / input_frame
    analysis = np.vstack([np.cos(phase), -np.sin(phase)])
    # weighted inverse: bins 0 and Nyquist enter once, the rest twice; the
    # imaginary DC/Nyquist columns are identically zero, which makes this
    # matrix the pseudo-inverse of the analysis matrix
    gain = np.full(bins, 2.0)
    gain[0] = 1.0
    gain[-1] = 1.0
    cos_part = np.cos(phase).T * gain / input_frame
    sin_part = -np.sin(phase).T * gain / input_frame
    synthesis = np.hstack([cos_part, sin_part])[input_frame - out :, :]
    return AnalysisTransform(analysis), SynthesisTransform(synthesis)


def random_init(
    input_frame: int, output_frame: int, seed: int
) -> tuple[AnalysisTransform, SynthesisTransform]:
    """Seeded uniform initialization with fan-in scaling.

    Entries are uniform with variance 1/fan_in (fan_in = input_frame for
    analysis, 2*bins for synthesis), zero mean.
    """
    if input_frame % 2 != 0 or input_frame < 2:
        raise ValueError("input_frame must be a positive even number")
    bins = input_frame // 2 + 1
    rng = np.random.default_rng(seed)
    a_half = np.sqrt(3.0 / input_frame)
    s_half = np.sqrt(3.0 / (2 * bins))
    analysis = rng.uniform(-a_half, a_half, size=(2 * bins, input_frame))
    synthesis = rng.uniform(-s_half, s_half, size=(output_frame, 2 * bins))
    return AnalysisTransform(analysis), SynthesisTransform(synthesis)


def analyze(frames, transform: AnalysisTransform) -> np.ndarray:
    """Frames [..., W] -> complex spectra [..., bins]."""
    f = np.asarray(frames, dtype=np.float64)
    if f.shape[-1] != transform.input_frame:
        raise ValueError(
            f"frame width {f.shape[-1]} does not match transform "
            f"input_frame {transform.input_frame}"
        )
    v = f @ transform.matrix.T
    bins = transform.bins
    return v[..., :bins] + 1j * v[..., bins:]


def synthesize(spectra, transform: SynthesisTransform) -> np.ndarray:
    """Complex spectra [..., bins] -> output frames [..., output_frame]."""
    s = np.asarray(spectra)
    if s.shape[-1] != transform.bins:
        raise ValueError(
            f"spectrum has {s.shape[-1]} bins, transform expects {transform.bins}"
        )
    packed = np.concatenate([s.real, s.imag], axis=-1)
    return packed @ transform.matrix.T
