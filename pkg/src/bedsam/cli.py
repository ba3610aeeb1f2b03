"""Command-line entry point.

Exit codes::

    0  success
    1  evaluation finished but some prediction/GT pairs were missing
    2  I/O error (unreadable or unwritable path)
    3  image/checkpoint format error
    4  expand-embed: tensor missing or not a 3-channel kernel
    5  training diverged (non-finite loss)
    6  shape mismatch between input and checkpoint
    7  invalid configuration or command-line usage

Reports go to stdout (or ``--report``); diagnostics and the resolved
configuration go to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

import numpy as np

from . import dataio, metrics, net, structmap, synth, train

log = logging.getLogger("bedsam")

EXIT_OK, EXIT_MISSING, EXIT_IO, EXIT_FORMAT, EXIT_TENSOR, EXIT_NAN, EXIT_SHAPE, EXIT_CONFIG = range(8)

TRAIN_KEYS = ("data", "out", "trace")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------- config files


def _parse_value(raw: str, current):
    if isinstance(current, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        items = [s.strip() for s in raw.split(",") if s.strip()]
        return tuple(int(s) for s in items) if current and isinstance(current[0], int) else tuple(items)
    return raw


def parse_config(text: str) -> tuple[net.NetConfig, dict[str, str]]:
    """Parse ``key = value`` lines ('#' starts a comment) over the defaults."""
    defaults = net.NetConfig()
    known = {f.name: getattr(defaults, f.name) for f in dataclasses.fields(net.NetConfig)}
    values: dict = {}
    extra: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in TRAIN_KEYS:
            extra[key] = raw
        elif key in known:
            try:
                values[key] = _parse_value(raw, known[key])
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {key}: {exc}") from None
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
    return net.NetConfig(**values), extra


def format_config(cfg: net.NetConfig, extra: dict[str, str] | None = None) -> str:
    lines = []
    for key, val in cfg.as_dict().items():
        if isinstance(val, bool):
            val = "true" if val else "false"
        elif isinstance(val, tuple):
            val = ",".join(str(v) for v in val)
        elif isinstance(val, float):
            val = repr(val)
        lines.append(f"{key}={val}")
    for key in TRAIN_KEYS:
        if extra and key in extra:
            lines.append(f"{key}={extra[key]}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- helpers


def _read_image(path) -> dataio.Image:
    try:
        return dataio.read_image(path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc}") from exc
    except dataio.DataIOError as exc:
        raise CliError(EXIT_FORMAT, f"{path}: {exc}") from exc


def _write_image(img: dataio.Image, path) -> None:
    try:
        dataio.write_image(img, path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {path}: {exc}") from exc


def _load_ckpt(path) -> dataio.Checkpoint:
    try:
        return dataio.load_checkpoint(path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc}") from exc
    except (dataio.DataIOError, ValueError) as exc:
        raise CliError(EXIT_FORMAT, f"{path}: {exc}") from exc


def _save_ckpt(ckpt, path) -> None:
    try:
        dataio.save_checkpoint(ckpt, path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {path}: {exc}") from exc


def _gray(img: dataio.Image, path) -> np.ndarray:
    if img.channels != 1:
        raise CliError(EXIT_FORMAT, f"{path}: expected a grayscale PGM")
    return img.data


# ---------------------------------------------------------------- commands


def cmd_structmap(args) -> int:
    depth = _gray(_read_image(args.depth), args.depth)
    try:
        smap = structmap.cumulative_structure_map(depth, args.components, args.epsilon)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    _write_image(dataio.Image(smap), args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    for d in (args.pred, args.gt):
        if not os.path.isdir(d):
            raise CliError(EXIT_IO, f"not a directory: {d}")
    try:
        report = metrics.evaluate_directory(args.pred, args.gt)
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc
    except (dataio.DataIOError, ValueError) as exc:
        raise CliError(EXIT_FORMAT, str(exc)) from exc
    text = report.format(args.format)
    if args.report:
        try:
            with open(args.report, "w") as f:
                f.write(text)
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot write {args.report}: {exc}") from exc
    else:
        sys.stdout.write(text)
    if report.missing:
        log.error("%d file(s) without a counterpart", len(report.missing))
        return EXIT_MISSING
    return EXIT_OK


def cmd_expand_embed(args) -> int:
    ckpt = _load_ckpt(args.inp)
    if args.tensor not in ckpt:
        raise CliError(EXIT_TENSOR, f"no tensor named {args.tensor!r}")
    w = ckpt[args.tensor]
    if w.ndim != 4 or w.shape[1] != 3:
        raise CliError(EXIT_TENSOR, f"{args.tensor} has shape {w.shape}; expected [C_out, 3, k, k]")
    tensors = dict(ckpt.tensors)
    tensors[args.tensor] = net.expand_patch_embed(w).astype(w.dtype)
    _save_ckpt(dataio.Checkpoint(tensors, version=ckpt.version), args.out)
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        synth.write_dataset(args.out, args.n, args.size, args.seed)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write dataset to {args.out}: {exc}") from exc
    return EXIT_OK


def cmd_train(args) -> int:
    try:
        with open(args.config) as f:
            text = f.read()
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {args.config}: {exc}") from exc
    try:
        cfg, extra = parse_config(text)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    for key in ("data", "out"):
        if key not in extra:
            raise CliError(EXIT_CONFIG, f"config is missing required key {key!r}")
    extra.setdefault("trace", extra["out"] + ".trace")
    resolved = format_config(cfg, extra)
    sys.stderr.write(resolved)

    try:
        samples = synth.load_samples(extra["data"])
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read dataset {extra['data']}: {exc}") from exc
    except dataio.DataIOError as exc:
        raise CliError(EXIT_FORMAT, str(exc)) from exc
    if not samples:
        raise CliError(EXIT_IO, f"no samples found in {extra['data']}")
    if any(s.mask.shape != (cfg.input_size, cfg.input_size) for s in samples):
        raise CliError(EXIT_SHAPE, f"samples must be {cfg.input_size}x{cfg.input_size}")

    try:
        result = train.train(cfg, train.make_dataset(samples, cfg), log_every=args.log_every)
    except train.TrainingDiverged as exc:
        raise CliError(EXIT_NAN, str(exc)) from exc

    _save_ckpt(result.checkpoint, extra["out"])
    try:
        with open(extra["trace"], "w") as f:
            f.writelines(f"{i}\t{v!r}\n" for i, v in enumerate(result.losses))
        with open(extra["out"] + ".cfg", "w") as f:
            f.write(resolved)
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc
    log.info("initial loss %.5f, final loss %.5f", result.losses[0], result.losses[-1])
    return EXIT_OK


def cmd_predict(args) -> int:
    ckpt = _load_ckpt(args.ckpt)
    try:
        model = net.from_checkpoint(ckpt)
    except net.ShapeMismatchError as exc:
        raise CliError(EXIT_SHAPE, str(exc)) from exc
    rgb = _read_image(args.rgb)
    if rgb.channels != 3:
        raise CliError(EXIT_FORMAT, f"{args.rgb}: expected an RGB PPM")
    cfg = model.cfg
    depth = None
    if cfg.depth_input != "none":
        if not args.depth:
            raise CliError(EXIT_CONFIG, "this checkpoint needs --depth")
        depth = _gray(_read_image(args.depth), args.depth)
        if depth.shape != rgb.data.shape[:2]:
            raise CliError(EXIT_SHAPE, "depth and RGB sizes differ")
    if rgb.data.shape[:2] != (cfg.input_size, cfg.input_size):
        raise CliError(EXIT_SHAPE, f"input is {rgb.width}x{rgb.height}, "
                                   f"checkpoint expects {cfg.input_size}x{cfg.input_size}")
    x = train.build_input(rgb.data, depth, cfg)
    prob = net.predict(model, x)
    _write_image(dataio.Image(prob), args.out)
    return EXIT_OK


# ---------------------------------------------------------------- wiring


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bedsam", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("structmap", help="depth PGM -> cumulative structure map PGM")
    s.add_argument("--depth", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--components", default=",".join(structmap.COMPONENTS),
                   help="comma list of depth,inverse,centered")
    s.add_argument("--epsilon", type=float, default=structmap.DEFAULT_EPSILON)
    s.set_defaults(func=cmd_structmap)

    s = sub.add_parser("eval", help="evaluate a prediction directory against ground truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--report")
    s.add_argument("--format", choices=("text", "kv"), default="text")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("expand-embed", help="widen a 3-channel patch embed to 4 channels")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--tensor", default="encoder.stage0.embed.weight")
    s.set_defaults(func=cmd_expand_embed)

    s = sub.add_parser("synth", help="write a seeded synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train the toy model from a key=value config")
    s.add_argument("--config", required=True)
    s.add_argument("--log-every", type=int, default=20)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="predict a mask PGM for one RGB (+ depth) input")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--rgb", required=True)
    s.add_argument("--depth")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors, which would read as an I/O failure
        return EXIT_CONFIG if exc.code == 2 else exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command == "train":
        logging.getLogger("bedsam").setLevel(logging.INFO)
    try:
        return args.func(args)
    except CliError as exc:
        log.error("%s", exc)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
