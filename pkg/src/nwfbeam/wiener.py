"""Per-frequency multichannel Wiener filtering.

Given multichannel spectra Y(t, f) and a (possibly estimated) target
spectrum S(t, f) at a reference position, the filter per bin is

    w(f) = (Phi_yy(f) + loading * tr(Phi_yy(f)) / M * I)^-1  phi_ys(f)

with Phi_yy = sum_t Y Y^H and phi_ys = sum_t Y conj(S), applied as
w(f)^H Y(t, f). Batch mode accumulates over the whole utterance; online
mode tracks the inverse covariance with a forgetting-factor rank-1
update so each frame uses statistics from frames <= t only.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from nwfbeam.framing import FrameSpec, _as_2d, frames_to_signal, pad_and_frame
from nwfbeam.transform import AnalysisTransform, SynthesisTransform, analyze, synthesize

BATCH = "batch"
ONLINE = "online"


class CovarianceDegeneracyError(ValueError):
    """Covariance is singular and no diagonal loading was requested."""


@dataclass
class OnlineWienerState:
    """Frame-recursive filter statistics.

    inverse_cov: [bins, M, M] complex, inverse of the forgetting-weighted
                 covariance (initialized to I/loading)
    cross_cov:   [bins, M] complex
    """

    inverse_cov: np.ndarray
    cross_cov: np.ndarray
    forgetting: float
    loading: float
    updates: int = 0


def init_online_state(
    bins: int, channels: int, forgetting: float = 0.998, loading: float = 1e-2
) -> OnlineWienerState:
    if not 0 < forgetting <= 1:
        raise ValueError("forgetting factor must be in (0, 1]")
    if loading <= 0:
        raise ValueError("initial loading must be positive")
    eye = np.eye(channels, dtype=complex)
    return OnlineWienerState(
        inverse_cov=np.repeat(eye[None] / loading, bins, axis=0),
        cross_cov=np.zeros((bins, channels), dtype=complex),
        forgetting=forgetting,
        loading=loading,
    )


def accumulate_batch(noisy_spec, target_spec):
    """Sum spatial statistics over frames.

    noisy_spec:  [M, T, bins] complex
    target_spec: [T, bins] complex
    returns (cov [bins, M, M], cross [bins, M])
    """
    y = np.asarray(noisy_spec)
    s = np.asarray(target_spec)
    if y.ndim != 3 or s.ndim != 2 or y.shape[1:] != s.shape:
        raise ValueError("expected noisy [M, T, bins] and target [T, bins]")
    cov = np.einsum("mtf,ntf->fmn", y, y.conj(), optimize=True)
    cross = np.einsum("mtf,tf->fm", y, s.conj(), optimize=True)
    return cov, cross


def solve_batch(cov, cross, loading: float = 1e-4) -> np.ndarray:
    """Solve the per-bin normal equations with relative diagonal loading.

    Bins with zero energy get zero weights; bins with non-finite
    statistics get zero weights and a RuntimeWarning. A singular system
    with loading=0 raises CovarianceDegeneracyError so the caller can
    retry with loading.
    """
    cov = np.asarray(cov)
    cross = np.asarray(cross)
    if cov.ndim != 3 or cov.shape[1] != cov.shape[2] or cross.shape != cov.shape[:2]:
        raise ValueError("expected cov [bins, M, M] and cross [bins, M]")
    if loading < 0:
        raise ValueError("loading must be non-negative")
    bins, m, _ = cov.shape
    weights = np.zeros((bins, m), dtype=complex)
    finite = np.isfinite(cov).all(axis=(1, 2)) & np.isfinite(cross).all(axis=1)
    if not finite.all():
        warnings.warn(
            f"{int((~finite).sum())} bins with non-finite statistics zeroed",
            RuntimeWarning,
        )
    trace = np.einsum("fmm->f", cov).real
    active = finite & (trace > 0)
    if not active.any():
        return weights
    a = cov[active] + (loading * trace[active] / m)[:, None, None] * np.eye(m)
    try:
        weights[active] = np.linalg.solve(a, cross[active][..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise CovarianceDegeneracyError(
            "singular covariance; retry with diagonal loading > 0"
        ) from exc
    return weights


def update_online(
    state: OnlineWienerState, noisy_frame, target_frame
) -> OnlineWienerState:
    """One rank-1 recursion step.

    noisy_frame:  [bins, M] complex, the frame's multichannel spectrum
    target_frame: [bins] complex, the frame's target spectrum

    inverse_cov <- (1/lam) (P - P y y^H P / (lam + y^H P y)),
    cross_cov   <- lam * cross_cov + y conj(s).
    Hermitian symmetry of the inverse is re-enforced by averaging with
    its conjugate transpose to stop drift over long streams.
    """
    y = np.asarray(noisy_frame)
    s = np.asarray(target_frame)
    bins, m = state.cross_cov.shape
    if y.shape != (bins, m) or s.shape != (bins,):
        raise ValueError("frame shapes do not match state")
    lam = state.forgetting
    p = state.inverse_cov
    py = p @ y[..., None]  # [bins, M, 1]
    quad = (y.conj()[:, None, :] @ py).real  # y^H P y, real for Hermitian P
    denom = lam + quad[..., 0]  # [bins, 1]
    p_new = (p - (py @ py.conj().transpose(0, 2, 1)) / denom[:, :, None]) / lam
    p_new = 0.5 * (p_new + p_new.conj().transpose(0, 2, 1))
    phi_new = lam * state.cross_cov + y * np.conj(s)[:, None]
    return OnlineWienerState(
        inverse_cov=p_new,
        cross_cov=phi_new,
        forgetting=lam,
        loading=state.loading,
        updates=state.updates + 1,
    )


def weights_from_state(state: OnlineWienerState) -> np.ndarray:
    """Current weights P phi, [bins, M]."""
    return (state.inverse_cov @ state.cross_cov[..., None])[..., 0]


def apply_filter(weights, noisy_spec) -> np.ndarray:
    """Apply w(f)^H Y(t, f): weights [bins, M], noisy [M, T, bins] -> [T, bins]."""
    w = np.asarray(weights)
    y = np.asarray(noisy_spec)
    if y.ndim != 3 or w.shape != (y.shape[2], y.shape[0]):
        raise ValueError("expected weights [bins, M] and noisy [M, T, bins]")
    return np.einsum("fm,mtf->tf", w.conj(), y, optimize=True)


def nwf_enhance(
    noisy,
    target,
    analysis: AnalysisTransform,
    synthesis: SynthesisTransform,
    spec: FrameSpec,
    mode: str = BATCH,
    loading: float = 1e-4,
    forgetting: float = 0.998,
    init_loading: float = 1e-2,
) -> np.ndarray:
    """Filter a multichannel signal toward a single-channel target.

    noisy:  [M, samples], target: [1, samples]. Returns [1, samples],
    time-aligned with the input. Batch mode uses utterance statistics;
    online mode updates per frame with only frames <= t.
    """
    x = _as_2d(noisy)
    s = _as_2d(target)
    if s.shape[0] != 1:
        raise ValueError("target must be single channel")
    if s.shape[1] != x.shape[1]:
        raise ValueError("target and noisy lengths differ")
    if mode not in (BATCH, ONLINE):
        raise ValueError(f"unknown wiener mode {mode!r}")
    length = x.shape[1]
    noisy_spec = analyze(pad_and_frame(x, spec).data, analysis)  # [M, T, F]
    target_spec = analyze(pad_and_frame(s, spec).data, analysis)[0]  # [T, F]
    if mode == BATCH:
        cov, cross = accumulate_batch(noisy_spec, target_spec)
        weights = solve_batch(cov, cross, loading=loading)
        out_spec = apply_filter(weights, noisy_spec)
    else:
        t_count, bins = target_spec.shape
        state = init_online_state(
            bins, x.shape[0], forgetting=forgetting, loading=init_loading
        )
        out_spec = np.empty((t_count, bins), dtype=complex)
        for t in range(t_count):
            frame = noisy_spec[:, t, :].T  # [bins, M]
            state = update_online(state, frame, target_spec[t])
            w = weights_from_state(state)
            out_spec[t] = np.sum(w.conj() * frame, axis=1)
    out_frames = synthesize(out_spec, synthesis)
    return frames_to_signal(out_frames[None, :, :], spec, length)
