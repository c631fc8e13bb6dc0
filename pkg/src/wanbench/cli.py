"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure
(training divergence).  Commands that write a directory also write the
resolved ``run.json`` there.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .aow import aow_max, aow_min, read_residual, write_residual
from .attacks import AttackSpec, apply_attack
from .bench import (RunConfig, list_images, plot_report, read_gray, read_report, render_table,
                    run_bench, write_report)
from .codecs import CODECS, AuxData, default_aux, embed_message, extract_message, tile, untile
from .image_core import ImageFormatError, as_message, load_image, resize, save_image
from .neural import PAPER_WAN, WanConfig, load_checkpoint, save_checkpoint
from .wan import (TrainConfig, TrainingDivergedError, attack_blocks, read_manifest, train,
                  wan_attack, write_dataset, write_history)

log = logging.getLogger("wanbench")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _aux(args) -> AuxData:
    if getattr(args, "aux", None):
        return AuxData.from_text(Path(args.aux).read_text())
    if not getattr(args, "method", None):
        raise UsageError("give --method or --aux")
    return default_aux(args.method, args.prn_seed)


def _add_aux_args(p):
    p.add_argument("--method", choices=sorted(CODECS), help="codec with default parameters")
    p.add_argument("--aux", help="aux-data file (overrides --method)")
    p.add_argument("--prn-seed", type=int, default=20220101)


# ---------------------------------------------------------------------------
# commands

def cmd_dataset(args) -> int:
    aux = _aux(args)
    out = Path(args.out)
    if args.builtin:
        from .corpus import natural_blocks

        originals = natural_blocks(args.builtin, args.seed)
        ids = [f"b{i:05d}" for i in range(len(originals))]
    else:
        paths = list_images(args.src)
        originals, ids, skipped = [], [], 0
        for p in paths:
            try:
                originals.append(np.rint(resize(read_gray(p), 64, 64)))
                ids.append(p.stem)
            except (OSError, ImageFormatError) as exc:
                log.warning("skipping %s: %s", p, exc)
                skipped += 1
        if skipped:
            log.warning("%d unreadable input(s) skipped", skipped)
        if not originals:
            raise ValueError(f"no readable images in {args.src}")
        originals = np.stack(originals)
    manifest = write_dataset(originals, out, aux, seed=args.seed, ids=ids)
    (out / "aux.txt").write_text(aux.to_text())
    _write_run(out, args, aux=asdict(aux))
    print(manifest)
    return EXIT_OK


def cmd_embed(args) -> int:
    aux = _aux(args)
    img = load_image(args.input)
    msg = as_message(args.message)
    if img.ndim == 3:
        from .codecs import embed_color

        marked = embed_color(aux, img, msg)
    else:
        marked = embed_message(aux, img, msg).watermarked
    save_image(args.output, marked)
    if args.aux_out:
        Path(args.aux_out).write_text(aux.to_text())
    return EXIT_OK


def cmd_extract(args) -> int:
    aux = _aux(args)
    img = load_image(args.input)
    if img.ndim == 3:
        from .codecs import extract_color

        bits = extract_color(aux, img)
    else:
        bits = extract_message(aux, img)
    print("".join(str(int(b)) for b in bits))
    return EXIT_OK


def cmd_attack(args) -> int:
    spec = AttackSpec.parse(args.spec)
    save_image(args.output, apply_attack(read_gray(args.input), spec))
    return EXIT_OK


def cmd_train(args) -> int:
    aux = _aux(args)
    splits = read_manifest(args.manifest)
    if "train" not in splits or "val" not in splits:
        raise ValueError("manifest needs train and val records")
    cfg = TrainConfig(lambda_wa=args.lambda_wa, lambda_c=args.lambda_c, batch_size=args.batch_size,
                      epochs=args.epochs, lr=args.lr, seed=args.seed)
    wan_cfg = PAPER_WAN if args.paper_scale else WanConfig(*args.wan)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_run(out, args, aux=asdict(aux), train=asdict(cfg), wan=asdict(wan_cfg))
    result = train(splits["train"], splits["val"], aux, cfg, wan_cfg,
                   progress=lambda row: print("epoch {} l_wa {:.5f} l_c {:.5f} val_ber {:.4f} "
                                              "val_psnr {:.2f}".format(*row), flush=True))
    meta = {"method": aux.method, "aux": asdict(aux), "train": asdict(cfg), **result.meta}
    save_checkpoint(out / "wan.ckpt", result.net, meta)
    write_history(out / "history.csv", result.history)
    print(f"best epoch {result.best_epoch}, val BER {result.best_val_ber:.4f}")
    return EXIT_OK


def cmd_wan_attack(args) -> int:
    img = read_gray(args.input)
    save_image(args.output, np.rint(wan_attack(args.checkpoint, img)))
    return EXIT_OK


def cmd_aow(args) -> int:
    """Write both residual rasters, then compose AoW-min/max from the files."""
    aux = _aux(args)
    net, _ = load_checkpoint(args.checkpoint)
    original = read_gray(args.input)
    msg = as_message(args.message)
    h, w = original.shape
    marked = embed_message(aux, original, msg).watermarked
    opposite = embed_message(aux, original, 1 - msg).watermarked
    attacked = untile(attack_blocks(net, tile(opposite)), h, w)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ck = Path(args.checkpoint).name
    bits = "".join(str(int(b)) for b in msg)
    write_residual(out / "residual_codec.raw", original - marked, codec=aux.method, bits=msg,
                   checkpoint=ck)
    write_residual(out / "residual_wan.raw", original - attacked, codec=aux.method, bits=msg,
                   checkpoint=ck)
    r, _ = read_residual(out / "residual_codec.raw")
    rt, _ = read_residual(out / "residual_wan.raw")
    save_image(out / "aow_min.pgm", np.rint(aow_min(original, r, rt)))
    save_image(out / "aow_max.pgm", np.rint(aow_max(original, r, rt)))
    save_image(out / "watermarked.pgm", np.rint(marked))
    _write_run(out, args, aux=asdict(aux), message=bits)
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.out:
        cfg.output_dir = args.out
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "run.json")
    rows = run_bench(cfg)
    csv_path, _ = write_report(rows, out)
    print(csv_path)
    return EXIT_OK


def cmd_report(args) -> int:
    rows = read_report(args.report)
    table = render_table(rows)
    print(table, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "table.txt").write_text(table)
        write_report(rows, out)
        if not args.no_plots:
            for p in plot_report(rows, out):
                log.info("wrote %s", p)
    return EXIT_OK


def _write_run(out: Path, args, **extra) -> None:
    record = {"format": "wanbench-command 1", "version": __version__, "command": args.command,
              "args": {k: v for k, v in vars(args).items() if k not in ("func",)}, **extra}
    (out / "run.json").write_text(json.dumps(record, indent=2, sort_keys=True, default=str) + "\n")


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="wanbench", description="Multi-bit watermarking attack benchmark.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("dataset", help="build a 64x64 triple-set dataset with a 14:1:5 split")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--src", help="directory of PGM/PPM/PNG images")
    src.add_argument("--builtin", type=int, help="number of crops drawn from the bundled photographs")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_aux_args(p)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("embed", help="embed one bit per 64x64 tile")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--message", required=True, help="bit string, e.g. 0110")
    p.add_argument("--aux-out", help="write the aux data used")
    _add_aux_args(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("extract", help="blindly extract the message bits")
    p.add_argument("input")
    _add_aux_args(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("attack", help="apply a simulated attack, e.g. jpeg:70 or na:2:seed=7")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--spec", required=True)
    p.set_defaults(func=cmd_attack)

    d = TrainConfig()
    p = sub.add_parser("train", help="train the attack network on a dataset manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--lambda-wa", type=float, default=d.lambda_wa)
    p.add_argument("--lambda-c", type=float, default=d.lambda_c)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--wan", type=int, nargs=4, default=[3, 3, 16, 8], metavar=("D", "C", "G0", "G"),
                   help="network size (default: desk scale)")
    p.add_argument("--paper-scale", action="store_true", help="use D=12, C=6, G0=32, G=16")
    _add_aux_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("wan-attack", help="attack an image tile by tile with a trained network")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_wan_attack)

    p = sub.add_parser("aow", help="add-on watermarking: write residuals and AoW-min/max images")
    p.add_argument("input")
    p.add_argument("--message", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    _add_aux_args(p)
    p.set_defaults(func=cmd_aow)

    p = sub.add_parser("bench", help="run the method x capacity x scenario grid")
    p.add_argument("--config", help="run config JSON (defaults are used without it)")
    p.add_argument("--out", help="override the config's output directory")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="print a report as a table and render figures")
    p.add_argument("report", help="report.csv or report.json")
    p.add_argument("--out", help="directory for table.txt, CSV/JSON copies and PNG figures")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"wanbench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergedError as exc:
        print(f"wanbench: training diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError) as exc:
        print(f"wanbench: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
