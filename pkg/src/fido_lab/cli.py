"""``fido-lab`` command line.

Exit codes: 0 success, 1 verification failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from . import costmodel as cm
from . import weights_io
from .bench import append_csv, report_json, run_bench
from .config import TOY, ModelConfig, load_json
from .decoding import beam_decode, greedy_decode
from .model import FiDInput, init_model
from .verify import run_all

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunManifest:
    subcommand: str
    config: Path | None
    seed: int = 0
    output: Path | None = None
    format: str = "json"

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunManifest":
        config = getattr(args, "config", None)
        if config is not None:
            config = Path(config)
            if not config.is_file():
                raise UsageError(f"config file not found: {config}")
        output = Path(args.output) if getattr(args, "output", None) else None
        if output is not None and not output.parent.exists():
            raise UsageError(f"output directory does not exist: {output.parent}")
        return cls(args.command, config, args.seed, output, getattr(args, "format", "json"))


def _emit(text: str, output: Path | None) -> None:
    if output is None:
        sys.stdout.write(text)
    else:
        output.write_text(text, encoding="utf-8")


def _device(path: str | None) -> cm.DeviceProfile:
    return cm.DeviceProfile() if path is None else cm.DeviceProfile.from_dict(load_json(path))


def _parse_values(raw: str) -> list[int]:
    try:
        values = [int(v) for v in raw.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"--values must be comma-separated integers, got {raw!r}") from exc
    if not values:
        raise UsageError("--values is empty")
    return values


def cmd_analyze(args, manifest: RunManifest) -> int:
    if manifest.config is None:
        raise UsageError("--config is required")
    base = cm.CostInput.from_dict(load_json(manifest.config))
    dev = _device(args.device)
    if args.axis:
        if not args.values:
            raise UsageError("--axis needs --values")
        reports = cm.sweep(base, dev, args.axis, _parse_values(args.values))
    else:
        reports = [cm.predict_split(base, dev)]

    for r in reports:
        prefix = f"{args.axis}={getattr(r.input, args.axis)}: " if args.axis else ""
        print(f"{prefix}encoder FLOPs share: {100 * r.encoder_flops_share:.1f}%")
        print(f"{prefix}decoder time share: {100 * r.decoder_time_share:.1f}%  "
              f"(encoder {1e3 * r.predicted_time_enc:.3f} ms, decoder {1e3 * r.predicted_time_dec:.3f} ms per sample)")
    if manifest.format == "csv":
        text = cm.reports_to_csv(reports)
    else:
        text = cm.reports_to_json(reports if args.axis else reports[0])
    _emit(text, manifest.output)
    return EXIT_OK


def cmd_verify(args, manifest: RunManifest) -> int:
    config = ModelConfig.from_dict(load_json(manifest.config)) if manifest.config else None
    results = run_all(manifest.seed, weights=args.weights, config=config)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"verification failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_FAIL
    print(f"all {len(results)} suites passed")
    return EXIT_OK


def _load_model(args, manifest: RunManifest):
    cfg = ModelConfig.from_dict(load_json(manifest.config)) if manifest.config else None
    if args.weights:
        try:
            model = weights_io.load(args.weights)
        except OSError as exc:
            raise UsageError(f"cannot read weights: {exc}") from exc
        if cfg is not None and cfg != model.config:
            raise UsageError(f"weight file config does not match --config: {model.config} vs {cfg}")
        return model
    return init_model(cfg or TOY, manifest.seed)


def cmd_run(args, manifest: RunManifest) -> int:
    model = _load_model(args, manifest)
    try:
        raw = load_json(args.input)
        inp = FiDInput.from_dict(raw)
    except (KeyError, TypeError) as exc:
        raise UsageError(f"input file needs 'question' and 'passages' token lists: {exc}") from exc
    max_len = model.config.n_t_max if args.max_len is None else args.max_len
    if args.beam is not None and not args.greedy:
        result = beam_decode(model, inp, args.beam, max_len, args.eos)
        decoder = {"kind": "beam", "beam_width": args.beam}
    else:
        result = greedy_decode(model, inp, max_len, args.eos)
        decoder = {"kind": "greedy"}
    payload = {"decoder": decoder, "max_len": max_len, "eos": args.eos, "seed": manifest.seed,
               "result": result.to_dict(timing=not args.no_timing)}
    _emit(json.dumps(payload, indent=2, sort_keys=True) + "\n", manifest.output)
    return EXIT_OK


def cmd_bench(args, manifest: RunManifest) -> int:
    cfg = ModelConfig.from_dict(load_json(manifest.config)) if manifest.config else TOY
    report = run_bench(cfg, args.batch, args.repeats, manifest.seed, args.max_len)
    print(f"median wall: total {report.median_total:.4f}s, encoder {report.median_encoder:.4f}s, "
          f"decoder {report.median_decoder:.4f}s; {report.samples_per_sec:.2f} samples/s", file=sys.stderr)
    if args.csv:
        append_csv(report, args.csv)
    _emit(report_json(report), manifest.output)
    return EXIT_OK


def cmd_init(args, manifest: RunManifest) -> int:
    cfg = ModelConfig.from_dict(load_json(manifest.config)) if manifest.config else TOY
    if manifest.output is None:
        raise UsageError("--output is required")
    weights_io.save(init_model(cfg, manifest.seed), manifest.output)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fido-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=False):
        p.add_argument("--config", required=config_required, help="JSON config (ModelConfig/CostInput keys)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--output", help="output file (default: stdout)")
        return p

    for name, help_ in (("analyze", "cost-model split and roofline prediction"),
                        ("sweep", "cost model over one axis (analyze --axis)")):
        p = common(sub.add_parser(name, help=help_), config_required=True)
        p.add_argument("--device", help="JSON device profile {peak_flops, bandwidth}")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--axis", choices=cm.SWEEP_AXES, required=name == "sweep")
        p.add_argument("--values", help="comma-separated axis values")

    p = common(sub.add_parser("verify", help="run the oracle suites"))
    p.add_argument("--weights", help="verify this weight file instead of a freshly seeded toy model")

    p = common(sub.add_parser("run", help="decode one input"))
    p.add_argument("--weights")
    p.add_argument("--input", required=True, help="JSON {question: [ids], passages: [[ids], ...]}")
    p.add_argument("--beam", type=int)
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--max-len", type=int)
    p.add_argument("--eos", type=int)
    p.add_argument("--no-timing", action="store_true", help="omit wall-clock fields for reproducible output")

    p = common(sub.add_parser("bench", help="instrumented toy inference"))
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--max-len", type=int)
    p.add_argument("--csv", help="append one summary row to this CSV file")

    common(sub.add_parser("init", help="write a seeded weight file"))
    return parser


COMMANDS = {"analyze": cmd_analyze, "sweep": cmd_analyze, "verify": cmd_verify, "run": cmd_run,
            "bench": cmd_bench, "init": cmd_init}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        manifest = RunManifest.from_args(args)
        return COMMANDS[args.command](args, manifest)
    # ConfigError, BenchGuardError, WeightFileError and TokenError are ValueErrors.
    except (UsageError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
