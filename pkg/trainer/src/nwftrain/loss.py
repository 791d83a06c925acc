"""Training loss and validation score.

The training objective compares the real and imaginary magnitudes of a
32 ms / 16 ms rectangular-window spectrogram (the same kernel the engine
scores with) and averages a speech term with a noise-residual term:

    L = 0.5 * (K(S, S_hat) + K(Y - S, Y - S_hat))
    K(A, B) = mean over t, f of | |Re A| - |Re B| | + | |Im A| - |Im B| |

where Y is the reference-channel mixture. Validation uses scale-invariant
SDR in dB.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

LOSS_FRAME = 512
LOSS_HOP = 256


def _loss_spectra(x: torch.Tensor) -> torch.Tensor:
    """[samples] -> complex [T, F]; one zero-padded frame when short."""
    if x.shape[0] < LOSS_FRAME:
        frames = F.pad(x, (0, LOSS_FRAME - x.shape[0])).unsqueeze(0)
    else:
        frames = x.unfold(0, LOSS_FRAME, LOSS_HOP)
    return torch.fft.rfft(frames, n=LOSS_FRAME, dim=-1)


def magnitude_asymmetry(reference: torch.Tensor, estimate: torch.Tensor) -> torch.Tensor:
    """Spectral kernel K over a pair of single-channel signals."""
    ref = _loss_spectra(reference)
    est = _loss_spectra(estimate)
    return torch.mean(
        torch.abs(ref.real.abs() - est.real.abs())
        + torch.abs(ref.imag.abs() - est.imag.abs())
    )


def pcm_loss(
    target: torch.Tensor, estimate: torch.Tensor, mixture: torch.Tensor
) -> torch.Tensor:
    """Phase-aware magnitude loss with speech and noise terms."""
    speech = magnitude_asymmetry(target, estimate)
    noise = magnitude_asymmetry(mixture - target, mixture - estimate)
    return 0.5 * (speech + noise)


def si_sdr(reference: np.ndarray, estimate: np.ndarray) -> float:
    """Scale-invariant SDR in dB, zero-mean convention."""
    ref = np.asarray(reference, dtype=np.float64).reshape(-1)
    est = np.asarray(estimate, dtype=np.float64).reshape(-1)
    ref = ref - ref.mean()
    est = est - est.mean()
    alpha = np.dot(est, ref) / np.dot(ref, ref)
    projection = alpha * ref
    residual = est - projection
    num = np.sum(projection**2)
    den = np.sum(residual**2)
    if den == 0:
        return 100.0
    if num == 0:
        return -100.0
    return float(10.0 * np.log10(num / den))
