"""Command-line entry point.

Subcommands: estimate (flow between two frames), render (synthetic rain
pairs with ground truth), eval (benchmark manifest), decompose (layer
separation of one image), residue (chroma diagnostics).

Exit codes: 0 success, 1 usage or configuration error, 2 file I/O error,
3 numerical failure (dimension mismatch, non-finite data, solver trouble).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .bench import format_report_table, run_suite
from .config import Config, ConfigError, apply_settings, config_keys, parse_config
from .decompose import detail_layer, gradient_support_count, l0_smooth
from .flowio import FlowIOError, flow_to_color, read_image, write_flo, write_image
from .imagecore import Image
from .pipeline import estimate
from .rainsim import make_static_pair, make_translation_pair
from .residue import residue_channel, weight_map

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on usage errors; we reserve 2 for
    I/O failures, so usage errors exit 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _config_epilog() -> str:
    lines = ["configuration keys (key = default):"]
    for key, default, desc in config_keys():
        lines.append(f"  {key} = {default}".ljust(44) + f" {desc}")
    lines.append("")
    lines.append("pass a key=value file via --config; individual --set KEY=VALUE override it")
    return "\n".join(lines)


def _add_config_args(sub):
    sub.add_argument("--config", metavar="FILE", help="key=value parameter file")
    sub.add_argument(
        "--set", metavar="KEY=VALUE", action="append", default=[],
        help="override one configuration key (repeatable, wins over --config)",
    )


def _load_config(args) -> Config:
    cfg = Config()
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        cfg = parse_config(text)
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set needs KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    if overrides:
        cfg = apply_settings(cfg, overrides)
    return cfg


def _offset_layer(layer: Image) -> Image:
    """Detail layers are signed; shift by +0.5 and clip for 8-bit dumps."""
    return Image(np.clip(layer.data + 0.5, 0.0, 1.0))


def _cmd_estimate(args) -> int:
    cfg = _load_config(args)
    solver = cfg.solver
    if args.no_residue:
        solver = dataclasses.replace(solver, use_residue=False)
    if args.no_decomposition:
        solver = dataclasses.replace(solver, use_decomposition=False)

    frame1 = read_image(args.frame1)
    frame2 = read_image(args.frame2)
    result = estimate(frame1, frame2, solver)

    write_flo(result.flow, args.out_flo)
    if args.viz:
        write_image(flow_to_color(result.flow), args.viz)
    if args.dump_layers:
        prefix = args.dump_layers
        write_image(result.J1, f"{prefix}_J1.png")
        write_image(result.J2, f"{prefix}_J2.png")
        write_image(_offset_layer(result.L1), f"{prefix}_L1.png")
        write_image(_offset_layer(result.L2), f"{prefix}_L2.png")
    trace_path = args.trace or str(Path(args.out_flo).with_suffix(".trace.json"))
    trace = {
        "iterations_run": result.iterations_run,
        "energy_trace": [dataclasses.asdict(r) for r in result.energy_trace],
    }
    Path(trace_path).write_text(json.dumps(trace, indent=2) + "\n", encoding="utf-8")

    mag = result.flow.magnitude()
    print(f"Average flow: {mag.mean():.6g} px")
    print(f"Maximum flow: {mag.max():.6g} px")
    return 0


def _cmd_render(args) -> int:
    cfg = _load_config(args)
    rain = cfg.rain
    if args.seed is not None:
        rain = dataclasses.replace(rain, seed=args.seed)
    background = read_image(args.background)

    if args.shift is not None:
        pair = make_translation_pair(background, tuple(args.shift), rain)
    else:
        pair = make_static_pair(background, rain)
    frame1, frame2, gt = pair

    prefix = args.out_prefix
    write_image(frame1, f"{prefix}_1.png")
    write_image(frame2, f"{prefix}_2.png")
    write_flo(gt, f"{prefix}_gt.flo")
    sidecar = dataclasses.asdict(rain)
    sidecar["shift"] = list(args.shift) if args.shift is not None else [0.0, 0.0]
    Path(f"{prefix}_params.json").write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {prefix}_1.png {prefix}_2.png {prefix}_gt.flo {prefix}_params.json")
    return 0


def _cmd_eval(args) -> int:
    cfg = _load_config(args)
    report = run_suite(args.manifest, cfg.solver, border=args.border, threads=args.threads)
    print(format_report_table(report))
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return 0


def _cmd_decompose(args) -> int:
    img = read_image(args.image)
    smooth = l0_smooth(img, args.beta)
    detail = detail_layer(img, smooth)
    write_image(smooth, f"{args.out_prefix}_J.png")
    write_image(_offset_layer(detail), f"{args.out_prefix}_L.png")
    print(f"Nonzero-gradient pixels: {gradient_support_count(smooth)}")
    return 0


def _cmd_residue(args) -> int:
    img = read_image(args.image)
    res = residue_channel(img)
    w = weight_map(img, args.gamma)
    peak = float(res.data.max())
    vis = Image(res.data / peak) if peak > 0 else res
    write_image(vis, f"{args.out_prefix}_residue.png")
    write_image(w, f"{args.out_prefix}_weight.png")
    print(f"Residue peak: {peak:.6g}")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="rainflow",
        description="Rain-robust optical flow: residue channels plus "
        "piecewise-smooth layer decomposition.",
        epilog=_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    subs = parser.add_subparsers(dest="command", required=True)

    est = subs.add_parser(
        "estimate", help="estimate flow between two frames",
        epilog=_config_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    est.add_argument("frame1")
    est.add_argument("frame2")
    est.add_argument("out_flo", help="output flow file (.flo)")
    est.add_argument("--viz", metavar="PNG", help="write a color-wheel rendering of the flow")
    est.add_argument("--dump-layers", metavar="PREFIX", help="write J/L layer PNGs")
    est.add_argument("--trace", metavar="JSON", help="energy trace path (default: <out_flo>.trace.json)")
    est.add_argument("--no-residue", action="store_true", help="disable the residue data term")
    est.add_argument("--no-decomposition", action="store_true", help="disable layer separation")
    _add_config_args(est)
    est.set_defaults(func=_cmd_estimate)

    ren = subs.add_parser(
        "render", help="render a synthetic rain pair with ground-truth flow",
        epilog=_config_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    ren.add_argument("background", help="clean background image")
    ren.add_argument("out_prefix")
    ren.add_argument("--shift", nargs=2, type=float, metavar=("DX", "DY"),
                     help="translate the background between frames (default: static pair)")
    ren.add_argument("--seed", type=int, help="override rain.seed")
    _add_config_args(ren)
    ren.set_defaults(func=_cmd_render)

    ev = subs.add_parser(
        "eval", help="run the benchmark over a manifest",
        epilog=_config_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    ev.add_argument("manifest", help="lines of: frame1 frame2 gt_flo label")
    ev.add_argument("--out", metavar="JSON", help="write the full report as JSON")
    ev.add_argument("--border", type=int, default=10, help="pixels excluded from metrics at each edge")
    ev.add_argument("--threads", type=int, default=1, help="worker cap for concurrent pairs")
    _add_config_args(ev)
    ev.set_defaults(func=_cmd_eval)

    dec = subs.add_parser("decompose", help="split one image into layers")
    dec.add_argument("image")
    dec.add_argument("beta", type=float, help="gradient-count weight")
    dec.add_argument("out_prefix")
    dec.set_defaults(func=_cmd_decompose)

    res = subs.add_parser("residue", help="dump residue channel and chroma weight map")
    res.add_argument("image")
    res.add_argument("out_prefix")
    res.add_argument("--gamma", type=float, default=2.0, help="weight-map scale")
    res.set_defaults(func=_cmd_residue)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"rainflow: configuration error: {exc}", file=sys.stderr)
        return 1
    except FlowIOError as exc:
        print(f"rainflow: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"rainflow: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"rainflow: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
