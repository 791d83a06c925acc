"""Dataset loading from simulation manifests.

The room simulator writes a line-delimited manifest whose records point
at per-utterance WAV pairs (multichannel noisy, single-channel target)
relative to the manifest's directory. Audio is 32-bit float or 16-bit
PCM; everything is promoted to float64 [channels, samples].
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy.io import wavfile


@dataclass
class Utterance:
    id: str
    noisy: np.ndarray  # [channels, samples]
    target: np.ndarray  # [samples]
    sample_rate: int


def _read_wav(path) -> tuple[np.ndarray, int]:
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        scaled = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        scaled = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample format {data.dtype}")
    if scaled.ndim == 1:
        scaled = scaled[:, None]
    return scaled.T, int(rate)


def load_manifest(manifest_path) -> list[Utterance]:
    """Read every utterance referenced by a manifest."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    utterances = []
    with open(manifest_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            noisy, rate = _read_wav(base / record["noisy_path"])
            target, target_rate = _read_wav(base / record["target_path"])
            if target_rate != rate:
                raise ValueError(f"{record['id']}: sample rates differ")
            if target.shape[0] != 1:
                raise ValueError(f"{record['id']}: target must be mono")
            if target.shape[1] != noisy.shape[1]:
                raise ValueError(f"{record['id']}: lengths differ")
            utterances.append(
                Utterance(
                    id=record["id"],
                    noisy=noisy,
                    target=target[0],
                    sample_rate=rate,
                )
            )
    if not utterances:
        raise ValueError(f"empty manifest {manifest_path}")
    return utterances


def to_tensors(
    utterance: Utterance, dtype=torch.float64
) -> tuple[torch.Tensor, torch.Tensor]:
    """One utterance as (noisy [M, L], target [L]) torch tensors."""
    return (
        torch.tensor(utterance.noisy, dtype=dtype),
        torch.tensor(utterance.target, dtype=dtype),
    )


def rms_normalized(
    noisy: torch.Tensor, target: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Scale a pair so the reference noisy channel has unit RMS.

    One gain for every channel and the target, so channel geometry and
    the speech-to-noise ratio are untouched. Simulated audio comes out
    at physical propagation scale, orders of magnitude too quiet for
    the spectral loss to produce useful gradients.
    """
    gain = 1.0 / max(float(noisy[0].pow(2).mean().sqrt()), 1e-12)
    return noisy * gain, target * gain
