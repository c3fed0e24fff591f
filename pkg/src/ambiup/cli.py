"""Command-line entry point: ``ambiup <subcommand> ...``.

Every subcommand writes a ``<output>.manifest.json`` run manifest next to
its output recording the arguments, seed and package versions.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("ambiup")


def _parse_grid(spec):
    from .evaluation import resolve_grid

    return resolve_grid(spec)


def _manifest_path(out):
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


def write_manifest(out, args, extra=None):
    manifest = {
        "command": args.command,
        "argv": sys.argv[1:],
        "args": {k: v for k, v in vars(args).items() if k != "func"},
        "seed": args.seed,
        "threads": args.threads,
        "versions": {"ambiup": __version__, "numpy": np.__version__,
                     "python": sys.version.split()[0]},
    }
    if extra:
        manifest.update(extra)
    path = _manifest_path(out)
    path.write_text(json.dumps(manifest, indent=2, default=str), encoding="utf-8")
    return path


def cmd_encode(args):
    from .ambi import encode_point_source
    from .audio_io import read_wav, write_ambisonic
    from .grids import Direction

    spec, data = read_wav(args.input)
    if not 0 <= args.channel < spec.channels:
        raise ValueError(f"{args.input} has no channel {args.channel}")
    direction = Direction.from_degrees(args.az, args.el)
    gain = 10 ** (args.gain_db / 20)
    sig = encode_point_source(data[args.channel], direction, args.order, gain, spec.sample_rate)
    write_ambisonic(args.out, sig)
    write_manifest(args.out, args)


def cmd_decode(args):
    from .ambi import decode, pseudoinverse_decoder, sampling_decoder
    from .audio_io import read_ambisonic, write_wav

    sig = read_ambisonic(args.input)
    grid = _parse_grid(args.grid)
    build = sampling_decoder if args.decoder == "sampling" else pseudoinverse_decoder
    feeds = decode(sig, build(grid, sig.order))
    write_wav(args.out, sig.sample_rate, feeds)
    write_manifest(args.out, args, {"grid_points": len(grid), "grid_meta": grid.meta})


def cmd_upscale(args):
    from .audio_io import load_checkpoint, read_ambisonic, write_ambisonic

    model, _ = load_checkpoint(args.model)
    foa = read_ambisonic(args.input, order=1)
    if foa.sample_rate != model.config.sample_rate:
        raise ValueError(f"input is {foa.sample_rate} Hz, model expects "
                         f"{model.config.sample_rate} Hz")
    write_ambisonic(args.out, model.upscale(foa))
    write_manifest(args.out, args)


def cmd_augment(args):
    from .scene import Catalog, SceneConstraints, generate_corpus

    if args.catalog == "builtin":
        catalog = Catalog.builtin(args.sample_rate, duration=max(10.0, 2 * args.duration))
    else:
        catalog = Catalog.from_manifest(args.catalog)
    constraints = SceneConstraints(min_sources=args.min_sources, max_sources=args.max_sources,
                                   duration=args.duration, sample_rate=args.sample_rate,
                                   room_probability=args.room_probability)
    ids = generate_corpus(catalog, args.count, args.out, seed=args.seed,
                          constraints=constraints, threads=args.threads)
    write_manifest(Path(args.out) / "corpus", args, {"scenes": len(ids)})


def _parse_overrides(items):
    from dataclasses import fields

    from .model import ModelConfig

    types = {f.name: f.type for f in fields(ModelConfig)}
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in types:
            raise ValueError(f"bad model override {item!r}; expected FIELD=VALUE")
        out[key] = value if types[key] in (str, "str") else int(value)
    return out


def cmd_train(args):
    from .audio_io import load_config, save_checkpoint
    from .model import ModelConfig, build_model, parameter_report
    from .scene import load_corpus
    from .training import TrainConfig, train

    pairs = load_corpus(args.corpus)
    rate = pairs[0].input.sample_rate
    # defaults < config file < --set flags
    config = ModelConfig.for_sample_rate(rate)
    if args.config:
        config = load_config(args.config, defaults=config)
    if args.set:
        config = ModelConfig.from_dict(_parse_overrides(args.set), defaults=config)
    if config.sample_rate != rate:
        raise ValueError(f"corpus is {rate} Hz, config says {config.sample_rate} Hz")
    n_val = int(round(len(pairs) * args.val_fraction))
    train_pairs, val_pairs = pairs[:len(pairs) - n_val], pairs[len(pairs) - n_val:]
    tcfg = TrainConfig(steps=args.steps, lr=args.lr, batch_size=args.batch_size,
                       segment_seconds=args.segment_seconds, seed=args.seed,
                       checkpoint_every=args.checkpoint_every,
                       validate_every=args.validate_every if val_pairs else 0,
                       patience=args.patience)
    model = build_model(config, init_seed=args.seed)
    result = train(model, train_pairs, tcfg, validation=val_pairs or None,
                   checkpoint_path=args.out)
    meta = {"step": result.steps_run, "seed": args.seed, "loss_digest": result.digest(),
            "final_loss": result.losses[-1] if result.losses else None}
    save_checkpoint(args.out, model, meta)
    write_manifest(args.out, args, {"train_config": tcfg.to_dict(),
                                    "parameters": parameter_report(config),
                                    "losses": result.losses,
                                    "val_losses": result.val_losses,
                                    "stopped_early": result.stopped_early})


def cmd_evaluate(args):
    from .evaluation import export_csv, export_summary, parse_renderer, run_evaluation

    renderers = [parse_renderer(r) for r in args.renderers.split(",") if r.strip()]
    grid = _parse_grid(args.grid)
    maps, summary = run_evaluation(renderers, grid, duration=args.duration,
                                   sample_rate=args.sample_rate, seed=args.seed,
                                   threads=args.threads, offset_db=args.offset_db)
    export_csv(maps, args.out)
    summary_path = args.summary or str(Path(args.out).with_suffix(".summary.json"))
    export_summary(summary, summary_path, {"metadata": maps[0].metadata})
    write_manifest(args.out, args, {"grid_meta": grid.meta, "summary": summary.to_dict()})
    print(json.dumps(summary.to_dict(), indent=2))


def cmd_grid_check(args):
    from .ambi import quadrature_error

    grid = _parse_grid(args.grid)
    report = {"grid": args.grid, "points": len(grid), "order": args.order,
              "quadrature_error": quadrature_error(grid, args.order),
              "min_separation_rad": grid.min_separation(), "meta": grid.meta}
    report["exact"] = report["quadrature_error"] < 1e-10
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        write_manifest(args.out, args)
    print(text)


def build_parser():
    parser = argparse.ArgumentParser(prog="ambiup", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    parser.add_argument("--config", help="model config JSON (train)")
    parser.add_argument("-v", "--verbose", action="store_true")
    # the global flags are also accepted after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    common.add_argument("--config", default=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="encode a mono WAV as a point source",
                       parents=[common])
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--az", type=float, required=True, help="azimuth in degrees")
    p.add_argument("--el", type=float, required=True, help="elevation in degrees")
    p.add_argument("--order", type=int, default=1)
    p.add_argument("--gain-db", type=float, default=0.0)
    p.add_argument("--channel", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode an ambisonic WAV to grid feeds",
                       parents=[common])
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--grid", required=True, help="grid file, fib:N or reference[:file]")
    p.add_argument("--decoder", choices=("sampling", "pseudoinverse"), default="sampling")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("upscale", help="upscale FOA to HOA3 with a checkpoint",
                       parents=[common])
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_upscale)

    p = sub.add_parser("augment", help="generate a synthetic FOA/HOA3 corpus",
                       parents=[common])
    p.add_argument("--catalog", default="builtin", help="manifest JSON or 'builtin'")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--duration", type=float, default=4.0)
    p.add_argument("--sample-rate", type=int, default=48000)
    p.add_argument("--min-sources", type=int, default=1)
    p.add_argument("--max-sources", type=int, default=12)
    p.add_argument("--room-probability", type=float, default=0.5)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train the upscaler on a corpus",
                       parents=[common])
    p.add_argument("--corpus", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--segment-seconds", type=float, default=4.0)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--validate-every", type=int, default=100)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--patience", type=int, default=0)
    p.add_argument("--set", action="append", metavar="FIELD=VALUE",
                   help="override one model config field (repeatable)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="positional error sweep over a grid",
                       parents=[common])
    p.add_argument("--renderers", default="foa,hoa3",
                   help="comma list of foa, hoa3, upscaled:<checkpoint>")
    p.add_argument("--grid", default="fib:484")
    p.add_argument("--duration", type=float, default=0.25)
    p.add_argument("--sample-rate", type=int, default=48000)
    p.add_argument("--offset-db", type=float, default=0.0)
    p.add_argument("--summary")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("grid-check", help="quadrature report for a grid",
                       parents=[common])
    p.add_argument("--grid", required=True)
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--out")
    p.set_defaults(func=cmd_grid_check)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except FileNotFoundError as exc:
        if exc.filename:
            print(f"error: file not found: {exc.filename}", file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, RuntimeError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
