"""Figure rendering for evaluation reports (headless backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import MetricsReport  # noqa: E402


def save_waveform_overlay(path, reference, estimate, sample_rate: int) -> None:
    ref = np.asarray(reference).reshape(-1)
    est = np.asarray(estimate).reshape(-1)
    t = np.arange(ref.size) / sample_rate
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(t, ref, label="reference", linewidth=0.6)
    ax.plot(t, est, label="estimate", linewidth=0.6, alpha=0.7)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("amplitude")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def save_spectrogram(path, signal, sample_rate: int, title: str) -> None:
    x = np.asarray(signal).reshape(-1)
    fig, ax = plt.subplots(figsize=(8, 3))
    nfft = min(512, x.size)
    ax.specgram(x, NFFT=nfft, Fs=sample_rate, noverlap=nfft // 2)
    ax.set_title(title)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("frequency [Hz]")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def save_metric_bars(path, report: MetricsReport) -> None:
    summary = report.summary()
    names = [k for k, v in summary.items() if isinstance(v, float)]
    fig, axes = plt.subplots(1, max(len(names), 1), figsize=(3 * max(len(names), 1), 3))
    if len(names) <= 1:
        axes = [axes]
    for ax, name in zip(axes, names):
        vals = [r[name] for r in report.records if r.get(name) is not None]
        ax.bar(range(len(vals)), vals)
        ax.axhline(summary[name], color="k", linestyle="--", linewidth=0.8)
        ax.set_title(f"{name} (mean {summary[name]:.3g})")
        ax.set_xlabel("utterance")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def render_report_figures(
    report: MetricsReport, reference, estimate, sample_rate: int, report_path
) -> list:
    """Render the standard figure set next to a report file."""
    base = Path(report_path)
    stem = base.parent / base.stem
    paths = [
        Path(f"{stem}_waveforms.png"),
        Path(f"{stem}_spectrogram_ref.png"),
        Path(f"{stem}_spectrogram_est.png"),
        Path(f"{stem}_metrics.png"),
    ]
    save_waveform_overlay(paths[0], reference, estimate, sample_rate)
    save_spectrogram(paths[1], reference, sample_rate, "reference")
    save_spectrogram(paths[2], estimate, sample_rate, "estimate")
    save_metric_bars(paths[3], report)
    return paths
