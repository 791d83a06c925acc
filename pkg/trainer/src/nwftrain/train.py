"""Joint training of the enhancement pipeline at desk scale.

Five toy setups mirror the training-strategy grid: a single enhancer
(1A'), enhancer + frozen-DFT filter (2A'), enhancer + trainable filter
(2C'), two enhancers without the filter (3B'), and the full stack with
loss on the last stage only (6C'). The total loss sums the spectral loss
over the selected stage outputs; gradients are L2-clipped; Adam with
amsgrad does the updates. Finished weights export as a tensor container
the engine loads directly.
"""

from __future__ import annotations

import argparse
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from nwftrain.data import load_manifest, rms_normalized, to_tensors
from nwftrain.loss import pcm_loss, si_sdr
from nwftrain.modules import (
    _STAGES,
    MODES,
    PipelineModel,
    export_weights,
    spectra,
)

SETUP_IDS = ("1A'", "2A'", "2C'", "3B'", "6C'")

# setup id -> (mode, loss placement, trainable stages, filter init)
_SETUPS = {
    "1A'": ("dnn1", ("dnn1",), ("dnn1",), None),
    "2A'": ("dnn1_nwf", ("dnn1",), ("dnn1",), "dft"),
    "2C'": ("dnn1_nwf", ("nwf",), ("dnn1", "nwf"), "dft"),
    "3B'": ("dnn1_dnn2", ("dnn2",), ("dnn1", "dnn2"), None),
    "6C'": ("full", ("dnn2",), ("dnn1", "nwf", "dnn2"), "random"),
}


class TrainingDivergedError(RuntimeError):
    """The loss went non-finite; the run was aborted."""


@dataclass(frozen=True)
class TrainConfig:
    """One training run: setup, tiny dims, and optimization knobs."""

    setup: str
    channels: int = 2
    window: int = 64
    hop: int = 8
    output_frame: int = 16
    hidden: int = 16
    blocks: int = 2
    loss_stages: tuple = ()
    trainable: tuple = ()
    nwf_init: str | None = None
    epochs: int = 30
    learning_rate: float = 2e-3
    seed: int = 0
    loading: float = 1e-4
    clip_norm: float = 0.03

    def __post_init__(self):
        if self.setup not in _SETUPS:
            raise ValueError(f"unknown setup {self.setup!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        stages = self.stage_names()
        if not self.loss_stages:
            raise ValueError("loss placement must be non-empty")
        for name in self.loss_stages:
            if name not in stages:
                raise ValueError(f"loss on absent stage {name!r}")
        for name in self.trainable:
            if name not in stages:
                raise ValueError(f"trainable flag for absent stage {name!r}")
        has_nwf = "nwf" in stages
        if has_nwf and self.nwf_init not in ("dft", "random"):
            raise ValueError("filter stage needs nwf_init dft or random")
        if not has_nwf and self.nwf_init is not None:
            raise ValueError("nwf_init given but the setup has no filter")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    @property
    def mode(self) -> str:
        return _SETUPS[self.setup][0]

    def stage_names(self) -> tuple:
        has_dnn1, has_nwf, has_dnn2 = _STAGES[self.mode]
        names = []
        if has_dnn1:
            names.append("dnn1")
        if has_nwf:
            names.append("nwf")
        if has_dnn2:
            names.append("dnn2")
        return tuple(names)


def config_for(setup: str, **overrides) -> TrainConfig:
    """Standard configuration for one setup id."""
    if setup not in _SETUPS:
        raise ValueError(f"unknown setup {setup!r}")
    _, loss_stages, trainable, nwf_init = _SETUPS[setup]
    fields = dict(
        setup=setup,
        loss_stages=loss_stages,
        trainable=trainable,
        nwf_init=nwf_init,
    )
    fields.update(overrides)
    return TrainConfig(**fields)


def build_model(config: TrainConfig) -> PipelineModel:
    """Seeded model with the configured stages frozen or trainable."""
    model = PipelineModel(
        mode=config.mode,
        channels=config.channels,
        window=config.window,
        hop=config.hop,
        out=config.output_frame,
        hidden=config.hidden,
        blocks=config.blocks,
        nwf_init=config.nwf_init or "dft",
        seed=config.seed,
    )
    for name, params in _stage_params(model).items():
        if name not in config.trainable:
            for p in params:
                p.requires_grad_(False)
    return model


def _stage_params(model: PipelineModel) -> dict:
    groups = {}
    if model.dnn1 is not None:
        groups["dnn1"] = list(model.dnn1.parameters())
    if model.analysis is not None:
        groups["nwf"] = [model.analysis, model.synthesis]
    if model.dnn2 is not None:
        groups["dnn2"] = list(model.dnn2.parameters())
    return groups


def _total_loss(config: TrainConfig, outputs: dict, target, mixture):
    return sum(
        pcm_loss(target, outputs[name], mixture) for name in config.loss_stages
    )


def evaluate(model: PipelineModel, utterances, loading: float = 1e-4) -> float:
    """Mean validation SI-SDR of the final stage output, in dB."""
    scores = []
    with torch.no_grad():
        for utt in utterances:
            noisy, target = rms_normalized(*to_tensors(utt))
            estimate = model.final_output(noisy, loading)
            scores.append(si_sdr(target.numpy(), estimate.numpy()))
    return float(np.mean(scores))


def train(
    config: TrainConfig,
    train_manifest,
    val_manifest=None,
    log_path=None,
):
    """Run one training job.

    Every utterance is RMS-normalized before training and scoring; see
    data.rms_normalized. Returns (model, log records). Each record is
    {epoch, loss, val_si_sdr}; epoch 0 holds the untrained validation
    score. Records
    are also written as JSON lines to log_path when given. A non-finite
    loss aborts with TrainingDivergedError after flushing the log.
    """
    train_utts = load_manifest(train_manifest)
    val_utts = load_manifest(val_manifest) if val_manifest else None
    pairs = [rms_normalized(*to_tensors(utt)) for utt in train_utts]
    model = build_model(config)
    params = [p for p in model.parameters() if p.requires_grad]
    if not params:
        raise ValueError("no trainable parameters for this configuration")
    optimizer = torch.optim.Adam(
        params, lr=config.learning_rate, amsgrad=True
    )
    rng = np.random.default_rng([config.seed, 7])

    records = []
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None

    def emit(record):
        records.append(record)
        if log_file:
            log_file.write(json.dumps(record) + "\n")
            log_file.flush()

    try:
        baseline = evaluate(model, val_utts, config.loading) if val_utts else None
        emit({"epoch": 0, "loss": None, "val_si_sdr": baseline})
        for epoch in range(1, config.epochs + 1):
            epoch_losses = []
            for index in rng.permutation(len(pairs)):
                noisy, target = pairs[index]
                optimizer.zero_grad()
                outputs = model(noisy, config.loading)
                loss = _total_loss(config, outputs, target, noisy[0])
                value = float(loss.detach())
                if not math.isfinite(value):
                    emit({"epoch": epoch, "loss": value, "val_si_sdr": None})
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}"
                    )
                loss.backward()
                torch.nn.utils.clip_grad_norm_(params, config.clip_norm)
                optimizer.step()
                epoch_losses.append(value)
            score = evaluate(model, val_utts, config.loading) if val_utts else None
            emit(
                {
                    "epoch": epoch,
                    "loss": float(np.mean(epoch_losses)),
                    "val_si_sdr": score,
                }
            )
    finally:
        if log_file:
            log_file.close()
    return model, records


def grad_check(
    seed: int = 0, loading: float = 1e-2, rank_deficient: bool = False
):
    """Compare analytic gradients against central finite differences.

    Tiny enhancer + filter instance; checks the analysis matrix, the
    synthesis matrix, and one LSTM input weight against (f(x+h) -
    f(x-h)) / 2h with h = 1e-4 in float64. Returns the max relative
    error, or None when loading is zero and the covariance is
    rank-deficient (the solve is unstable there, so the check is
    skipped with a warning).
    """
    rng = np.random.default_rng(seed)
    noisy = rng.standard_normal((2, 12))
    if rank_deficient:
        noisy[1] = noisy[0]
    target = rng.standard_normal(12)
    model = PipelineModel(
        mode="dnn1_nwf",
        channels=2,
        window=6,
        hop=2,
        out=2,
        hidden=2,
        blocks=1,
        nwf_init="random",
        seed=seed,
    )
    noisy_t = torch.tensor(noisy, dtype=torch.float64)
    target_t = torch.tensor(target, dtype=torch.float64)

    if loading == 0:
        from nwftrain.modules import frame_signal

        with torch.no_grad():
            frames = frame_signal(noisy_t, model.window, model.hop)
            spec = spectra(frames, model.analysis)
            cov = torch.einsum("mtf,ntf->fmn", spec, spec.conj())
            ranks = torch.linalg.matrix_rank(cov)
        if int(ranks.min()) < noisy_t.shape[0]:
            warnings.warn(
                "rank-deficient covariance with zero loading; "
                "gradient check skipped",
                RuntimeWarning,
            )
            return None

    def forward_loss():
        outputs = model(noisy_t, loading)
        return pcm_loss(target_t, outputs["nwf"], noisy_t[0])

    loss = forward_loss()
    model.zero_grad()
    loss.backward()

    h = 1e-4
    checks = {
        "analysis": model.analysis,
        "synthesis": model.synthesis,
        "lstm": model.dnn1.blocks[0].lstm.weight_ih_l0,
    }
    worst = 0.0
    for param in checks.values():
        analytic = param.grad.reshape(-1)
        flat = param.data.reshape(-1)
        for i in range(flat.shape[0]):
            original = float(flat[i])
            with torch.no_grad():
                flat[i] = original + h
                plus = float(forward_loss())
                flat[i] = original - h
                minus = float(forward_loss())
                flat[i] = original
            fd = (plus - minus) / (2 * h)
            an = float(analytic[i])
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
            worst = max(worst, rel)
    return worst


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nwftrain",
        description="Train a toy enhancement pipeline and export weights.",
    )
    parser.add_argument("--setup", required=True, choices=SETUP_IDS)
    parser.add_argument("--train-manifest", required=True)
    parser.add_argument("--val-manifest")
    parser.add_argument("--out", required=True, help="container output path")
    parser.add_argument("--log", help="JSON-lines training log path")
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--lr", type=float, default=2e-3)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--channels", type=int, default=2)
    parser.add_argument("--hidden", type=int, default=16)
    args = parser.parse_args(argv)

    config = config_for(
        args.setup,
        epochs=args.epochs,
        learning_rate=args.lr,
        seed=args.seed,
        channels=args.channels,
        hidden=args.hidden,
    )
    try:
        model, records = train(
            config, args.train_manifest, args.val_manifest, args.log
        )
    except TrainingDivergedError as exc:
        print(f"error: {exc}")
        return 1
    export_weights(model, args.out)
    last = records[-1]
    first = records[0]
    print(f"wrote {args.out}")
    if last["val_si_sdr"] is not None:
        print(
            f"val si_sdr {first['val_si_sdr']:.2f} -> {last['val_si_sdr']:.2f} dB "
            f"over {last['epoch']} epochs"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
