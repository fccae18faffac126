"""Command-line entry point: ``flowseg {infer,train,eval,sweep,gen-synth,gradcheck}``.

Exit codes: 0 success, 1 usage error, 2 runtime or validation failure.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .capnet import REGIONS, NetParams, handcrafted_caps, standardize
from .config import ConfigError, dump_config, load_config
from .levelset import extract_contour, sweep, threshold
from .solver import CapacityMaps, solve

log = logging.getLogger("flowseg")

COLORS = {"WT": (255, 255, 0), "TC": (255, 0, 0), "EC": (0, 128, 255)}
LEVEL_COLORS = [(255, 0, 0), (0, 255, 0), (0, 128, 255), (255, 255, 0), (255, 0, 255)]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser():
    parser = _Parser(prog="flowseg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("infer", help="run ADMM inference and threshold the result")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--caps", help="CMF file with (C_s, C_t, C_g) as a 3xHxW tensor or named maps")
    src.add_argument("--image", help="PGM image, CMF image/sample, or a directory of CMF samples")
    p.add_argument("--checkpoint", help="network checkpoint (required for CMF images)")
    p.add_argument("--config")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the capacity network on a CMF sample directory")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("eval", help="score predicted masks against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--config")
    p.add_argument("--out", help="report file (JSON); defaults to <pred>/metrics.json")

    p = sub.add_parser("sweep", help="overlays for several iteration counts and levels")
    p.add_argument("--caps", required=True)
    p.add_argument("--iters", type=_ints, default=[1, 5, 10, 15])
    p.add_argument("--levels", type=_floats, default=[0.3, 0.5])
    p.add_argument("--config")
    p.add_argument("--out", required=True)

    p = sub.add_parser("gen-synth", help="write a synthetic dataset as CMF samples")
    p.add_argument("--config")
    p.add_argument("--out", required=True)

    p = sub.add_parser("gradcheck", help="run every finite-difference suite")
    p.add_argument("--config")
    p.add_argument("--draws", type=int, default=20)
    return parser


# -- helpers -----------------------------------------------------------------


def read_caps(path):
    data = io.read_tensor(path)
    if isinstance(data, dict):
        try:
            maps = [data[k] for k in ("c_source", "c_sink", "c_edge")]
        except KeyError as exc:
            raise ValueError(f"{path}: missing capacity map {exc}") from None
    else:
        if data.ndim != 3 or data.shape[0] != 3:
            raise ValueError(f"{path}: expected a 3xHxW capacity tensor, got {data.shape}")
        maps = list(data)
    return CapacityMaps(*(m.astype(np.float64) for m in maps))


def write_sample(path, sample):
    wt, tc, ec = sample.labels
    io.write_tensor(path, {"image": sample.image, "wt": wt, "tc": tc, "ec": ec})


def read_sample(path):
    from .synthdata import Sample

    data = io.read_tensor(path)
    if not isinstance(data, dict) or not {"image", "wt", "tc", "ec"} <= set(data):
        raise ValueError(f"{path} is not a sample file (needs image, wt, tc, ec)")
    labels = tuple(data[k].astype(np.uint8) for k in ("wt", "tc", "ec"))
    return Sample(data["image"].astype(np.float64), labels)


def read_masks(path):
    data = io.read_tensor(path)
    if not isinstance(data, dict) or not {"wt", "tc", "ec"} <= set(data):
        raise ValueError(f"{path} does not hold wt/tc/ec masks")
    return tuple(data[k].astype(np.uint8) for k in ("wt", "tc", "ec"))


def _sample_files(directory):
    files = sorted(Path(directory).glob("*.cmf"))
    if not files:
        raise ValueError(f"no .cmf files in {directory}")
    return files


# -- subcommands -------------------------------------------------------------


def cmd_infer(args, cfg):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    source = Path(args.caps or args.image)
    if args.caps or source.suffix.lower() == ".pgm":
        if args.caps:
            caps = read_caps(source)
            base = io.to_unit_range(caps.c_sink - caps.c_source)
        else:
            base = io.read_pgm(source)
            caps = handcrafted_caps(base, cfg.handcrafted)
        result = solve(caps, cfg.solver)
        mask = threshold(result.lam, cfg.level)
        io.write_tensor(out / "lambda.cmf", result.lam)
        io.write_tensor(out / "mask.cmf", mask)
        io.write_ppm_overlay(out / "overlay.ppm", base, [(extract_contour(mask), (255, 0, 0))])
        log.info(
            "infer: %d iterations, level %.3g, final residual %.3e, %d foreground pixels",
            len(result.residual_norms), cfg.level, result.residual_norms[-1], int(mask.sum()),
        )
        return 0

    from .trainer import infer_full

    if not args.checkpoint:
        raise UsageError("--checkpoint is required to run the network on a CMF image")
    params, net_cfg = io.load_checkpoint(args.checkpoint)
    files = _sample_files(source) if source.is_dir() else [source]
    for f in files:
        data = io.read_tensor(f)
        image = data["image"] if isinstance(data, dict) else data
        image = standardize(image.astype(np.float64))
        res = infer_full(params, net_cfg, image, cfg.solver, cfg.level)
        wt, tc, ec = res.masks
        io.write_tensor(
            out / f"{f.stem}.cmf",
            {"wt": wt, "tc": tc, "ec": ec, **{f"lambda_{r.lower()}": l for r, l in zip(REGIONS, res.lams)}},
        )
        contours = [(extract_contour(m), COLORS[r]) for r, m in zip(REGIONS, res.masks)]
        io.write_ppm_overlay(out / f"{f.stem}.ppm", io.to_unit_range(image[0]), contours)
    log.info("infer: wrote %d prediction(s) to %s", len(files), out)
    return 0


def cmd_train(args, cfg):
    from .synthdata import split
    from .trainer import train

    files = _sample_files(args.data)
    dataset = [read_sample(f) for f in files]
    train_set, val_set = split(dataset, cfg.train.train_fraction, cfg.train.split_seed)
    net_cfg = replace(cfg.net, in_channels=dataset[0].image.shape[0])
    params = NetParams.init(net_cfg)
    ckpt = Path(args.checkpoint)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    log_path = ckpt.with_suffix(ckpt.suffix + ".log")
    log_file = log_path.open("w")

    def on_epoch(epoch, stats):
        log_file.write(stats.log_line(epoch) + "\n")
        log_file.flush()
        if (epoch + 1) % cfg.train.checkpoint_every == 0:
            io.save_checkpoint(ckpt, params, net_cfg)

    try:
        stats = train(params, net_cfg, train_set, cfg.train_config(), val_set, on_epoch)
    finally:
        log_file.close()
    io.save_checkpoint(ckpt, params, net_cfg)
    print(stats.log_line(len(stats.total_loss) - 1))
    return 0


def cmd_eval(args, cfg):
    from .evalmetrics import evaluate_dataset

    truth_files = _sample_files(args.truth)
    preds, truths = [], []
    for f in truth_files:
        pf = Path(args.pred) / f.name
        if not pf.exists():
            raise ValueError(f"no prediction for {f.name} in {args.pred}")
        preds.append(read_masks(pf))
        truths.append(read_masks(f))
    report = evaluate_dataset(preds, truths, cfg.hausdorff_variant)
    for line in report.lines():
        print(line)
    out = Path(args.out) if args.out else Path(args.pred) / "metrics.json"
    out.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return 0


def cmd_sweep(args, cfg):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    caps = read_caps(args.caps)
    iters = sorted(args.iters)
    for level in args.levels:
        if not 0.0 <= level <= 1.0:
            raise UsageError(f"level {level} outside [0, 1]")
    base = io.to_unit_range(caps.c_sink - caps.c_source)
    # checkpoints beyond the configured iteration budget are rejected by sweep
    grid = sweep(caps, cfg.solver, iters, args.levels)
    for k, level, mask in grid:
        color = LEVEL_COLORS[args.levels.index(level) % len(LEVEL_COLORS)]
        name = out / f"sweep_it{k:03d}_l{level:.2f}.ppm"
        io.write_ppm_overlay(name, base, [(extract_contour(mask), color)])
    log.info("sweep: wrote %d overlays to %s", len(grid), out)
    return 0


def cmd_gen_synth(args, cfg):
    from .synthdata import generate

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, sample in enumerate(generate(cfg.synth)):
        write_sample(out / f"sample_{i:04d}.cmf", sample)
    dump_config(cfg, out / "config.json")
    log.info("gen-synth: wrote %d samples to %s", cfg.synth.count, out)
    return 0


def cmd_gradcheck(args, cfg):
    from .gradcheck import run_all

    results = run_all(n_loss_draws=args.draws)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 2


COMMANDS = {
    "infer": cmd_infer,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "gen-synth": cmd_gen_synth,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage() + "flowseg: error: a subcommand is required")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
    )
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"flowseg: error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, ValueError, OSError, RuntimeError) as exc:
        print(f"flowseg: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
