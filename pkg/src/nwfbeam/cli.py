"""Command line interface.

Subcommands: simulate (dataset generation), enhance (run a model over a
WAV), eval (score an estimate against a reference, optionally writing a
report plus figures), inspect (model summary), init (random weights).

Exit codes: 0 success, 2 configuration error, 3 unreadable or corrupt
file, 4 channel or length mismatch.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import model_store
from .framing import MultichannelSignal, algorithmic_latency
from .metrics import METRIC_NAMES, MetricsReport, evaluate_pair
from .model_store import ContainerError
from .pipeline import (
    MODES,
    ORACLE_NWF,
    ModelBundle,
    build_bundle,
    default_config,
    enhance,
    pipeline_budget,
)
from .simulate import SceneConfig, generate_dataset
from .wavio import read_wav, write_wav

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_SHAPE = 4

_MODE_FLAGS = [m.replace("_", "-") for m in MODES]


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _load_json(path):
    text = Path(path).read_text(encoding="utf-8")
    return json.loads(text)


def _format_ms(samples: int, fs: int) -> str:
    return f"{samples * 1000 / fs:g}"


def cmd_simulate(args) -> int:
    overrides = {}
    if args.config:
        try:
            overrides = _load_json(args.config)
        except OSError as exc:
            return _fail(EXIT_IO, f"cannot read config: {exc}")
        except json.JSONDecodeError as exc:
            return _fail(EXIT_CONFIG, f"bad config file: {exc}")
        if not isinstance(overrides, dict):
            return _fail(EXIT_CONFIG, "config file must hold an object")
    if args.count < 1:
        return _fail(EXIT_CONFIG, "--count must be at least 1")
    overrides = {
        k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()
    }
    try:
        config = SceneConfig(**overrides)
    except (TypeError, ValueError) as exc:
        return _fail(EXIT_CONFIG, f"bad scene config: {exc}")
    try:
        manifest = generate_dataset(config, args.count, args.seed, args.out_dir)
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot write dataset: {exc}")
    print(manifest)
    return EXIT_OK


def cmd_init(args) -> int:
    arch = {"mode": "full", "channels": 8}
    if args.arch:
        try:
            loaded = _load_json(args.arch)
        except OSError as exc:
            return _fail(EXIT_IO, f"cannot read arch config: {exc}")
        except json.JSONDecodeError as exc:
            return _fail(EXIT_CONFIG, f"bad arch config: {exc}")
        if not isinstance(loaded, dict):
            return _fail(EXIT_CONFIG, "arch config must hold an object")
        arch.update(loaded)
    if isinstance(arch.get("mode"), str):
        arch["mode"] = arch["mode"].replace("-", "_")
    try:
        bundle = build_bundle(seed=args.seed, nwf_init=args.init_nwf, **arch)
    except (TypeError, ValueError) as exc:
        return _fail(EXIT_CONFIG, f"bad architecture: {exc}")
    try:
        model_store.save(bundle.to_container(), args.out)
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot write model: {exc}")
    print(f"wrote {args.out} (mode {bundle.mode}, channels {bundle.channels})")
    return EXIT_OK


def cmd_enhance(args) -> int:
    try:
        container = model_store.load(args.model)
    except (ContainerError, OSError) as exc:
        return _fail(EXIT_IO, f"cannot load model: {exc}")
    try:
        bundle = ModelBundle.from_container(container)
    except ValueError as exc:
        return _fail(EXIT_CONFIG, f"bad model: {exc}")

    mode = args.mode.replace("-", "_") if args.mode else bundle.mode
    if mode != bundle.mode:
        return _fail(
            EXIT_CONFIG,
            f"model was built for mode {bundle.mode!r}, not {mode!r}",
        )
    if mode == ORACLE_NWF and not args.target:
        return _fail(EXIT_CONFIG, "oracle-nwf mode requires --target")
    if mode != ORACLE_NWF and args.target:
        return _fail(EXIT_CONFIG, "--target is only used in oracle-nwf mode")

    try:
        noisy = read_wav(args.input)
    except (OSError, ValueError) as exc:
        return _fail(EXIT_IO, f"cannot read input: {exc}")
    if noisy.channels != bundle.channels:
        return _fail(
            EXIT_SHAPE,
            f"model expects {bundle.channels} channels, input has {noisy.channels}",
        )
    target = None
    if args.target:
        try:
            clean = read_wav(args.target)
        except (OSError, ValueError) as exc:
            return _fail(EXIT_IO, f"cannot read target: {exc}")
        if clean.channels != 1:
            return _fail(EXIT_SHAPE, "target must be single channel")
        if clean.samples != noisy.samples:
            return _fail(EXIT_SHAPE, "target and input lengths differ")
        target = clean.data

    try:
        config = default_config(
            mode,
            wiener=args.wiener,
            sample_rate=noisy.sample_rate,
            input_frame=bundle.input_frame,
            hop=bundle.hop,
            output_frame=bundle.output_frame,
        )
        out = enhance(noisy, config, bundle, oracle_target=target)
    except ValueError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    try:
        write_wav(args.output, MultichannelSignal(out.final, noisy.sample_rate))
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot write output: {exc}")

    fs = noisy.sample_rate
    stages = "/".join(
        _format_ms(lat, fs) for _, lat in sorted(
            out.latencies.items(), key=lambda kv: ("dnn1", "nwf", "dnn2").index(kv[0])
        )
    )
    print(f"latency {stages} ms")
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_eval(args) -> int:
    metrics = tuple(name.strip() for name in args.metrics.split(",") if name.strip())
    unknown = [m for m in metrics if m not in METRIC_NAMES]
    if unknown or not metrics:
        return _fail(EXIT_CONFIG, f"unknown metrics {unknown or '(none)'}")
    try:
        ref = read_wav(args.ref)
        est = read_wav(args.est)
    except (OSError, ValueError) as exc:
        return _fail(EXIT_IO, f"cannot read wav: {exc}")
    if ref.channels != 1 or est.channels != 1:
        return _fail(EXIT_SHAPE, "eval expects single-channel signals")
    if ref.samples != est.samples:
        return _fail(
            EXIT_SHAPE,
            f"length mismatch: {ref.samples} vs {est.samples} samples",
        )
    if ref.sample_rate != est.sample_rate:
        return _fail(EXIT_SHAPE, "sample rates differ")
    try:
        rec = evaluate_pair(
            ref.data[0], est.data[0], fs=ref.sample_rate, metrics=metrics
        )
    except ValueError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    report = MetricsReport([{"id": Path(args.est).stem, **rec}])
    sys.stdout.write(report.to_jsonl())
    if args.report:
        from .figures import render_report_figures

        try:
            report.write(args.report)
            figures = render_report_figures(
                report, ref.data[0], est.data[0], ref.sample_rate, args.report
            )
        except OSError as exc:
            return _fail(EXIT_IO, f"cannot write report: {exc}")
        for fig in figures:
            print(f"figure: {fig}", file=sys.stderr)
    return EXIT_OK


def cmd_inspect(args) -> int:
    try:
        container = model_store.load(args.model)
    except (ContainerError, OSError) as exc:
        return _fail(EXIT_IO, f"cannot load model: {exc}")
    try:
        bundle = ModelBundle.from_container(container)
        config = default_config(
            bundle.mode,
            input_frame=bundle.input_frame,
            hop=bundle.hop,
            output_frame=bundle.output_frame,
        )
        budget = pipeline_budget(config, bundle.channels, bundle.hidden, bundle.blocks)
    except ValueError as exc:
        return _fail(EXIT_CONFIG, f"bad model: {exc}")
    print(f"mode {bundle.mode}")
    print(f"channels {bundle.channels}")
    print(
        f"frames in/hop/out {bundle.input_frame}/{bundle.hop}/{bundle.output_frame}"
    )
    if bundle.hidden:
        print(f"hidden {bundle.hidden}, blocks {bundle.blocks}")
    for name in sorted(container.tensors):
        shape = "x".join(str(d) for d in container.tensors[name].shape)
        print(f"tensor {name} [{shape}]")
    print(f"params {budget.params} ({budget.params / 1e6:.2f}M)")
    print(f"flops {budget.flops_per_second / 1e9:.2f} GFLOPs/s")
    stage_ms = "/".join(f"{ms:g}" for ms in budget.stage_latencies_ms)
    print(f"latency {stage_ms} ms (end-to-end {budget.latency_ms:g} ms)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nwfbeam",
        description="Low-latency multichannel speech enhancement toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a reverberant mixture dataset")
    p.add_argument("--config", help="JSON file of scene-config overrides")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("enhance", help="run an enhancement model over a WAV")
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=_MODE_FLAGS)
    p.add_argument("--wiener", choices=["batch", "online"], default="batch")
    p.add_argument("--input", required=True)
    p.add_argument("--target", help="clean target WAV (oracle-nwf mode)")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", help="score an estimate against a reference")
    p.add_argument("--ref", required=True)
    p.add_argument("--est", required=True)
    p.add_argument("--metrics", default=",".join(METRIC_NAMES))
    p.add_argument("--report", help="write JSONL records and figures here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="summarize a model container")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("init", help="write randomly initialized weights")
    p.add_argument("--arch", help="JSON architecture config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init-nwf", choices=["dft", "random"], default="random")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
