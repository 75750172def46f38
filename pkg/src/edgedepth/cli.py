"""Command-line entry points: train, eval, predict, gradcheck and synth.

Exit codes: 0 ok, 1 check failure (gradcheck row failed, training diverged,
unreadable file), 2 configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .checks import format_table, run_suite
from .config import PRESETS, RunConfig, apply_overrides, config_items, load_config
from .data import load_dataset, load_raster, save_raster, synthetic_dataset, write_dataset
from .errors import ConfigError, FormatError, NumericError
from .losses import MetricsReport
from .train import evaluate, load_checkpoint, predict, train

EXIT_OK, EXIT_CHECK_FAILURE, EXIT_CONFIG_ERROR = 0, 1, 2


def _parse_cap(text: str) -> tuple[float, float]:
    try:
        lo, hi = text.split("-", 1)
        return float(lo), float(hi)
    except ValueError:
        raise ConfigError(f"--cap expects lo-hi (for example 0-80), got {text!r}") from None


def _parse_sets(pairs: list[str]) -> dict[str, str]:
    out = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"--set expects section.field=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def resolve_config(args: argparse.Namespace, base: RunConfig | None = None) -> RunConfig:
    """Preset, then config file, then --set, then the dedicated flags."""
    overrides = _parse_sets(getattr(args, "set", None) or [])
    if getattr(args, "seed", None) is not None:
        overrides["train.seed"] = str(args.seed)
    if getattr(args, "cap", None) is not None:
        lo, hi = _parse_cap(args.cap)
        overrides["eval.cap_min"], overrides["eval.cap_max"] = str(lo), str(hi)
    if getattr(args, "out", None) is not None:
        overrides["paths.out"] = args.out
    if getattr(args, "data", None) is not None:
        overrides["paths.data"] = args.data
    if base is not None:
        return apply_overrides(base, overrides).validate()
    return load_config(args.config, args.preset, overrides)


def header(cfg: RunConfig, command: str) -> str:
    lines = [f"# edgedepth {command}"]
    lines += [f"# {k}={v}" for k, v in config_items(cfg)]
    return "\n".join(lines)


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    print(header(cfg, "train"), flush=True)
    _, samples = load_dataset(cfg.paths.data, cfg.paths.train_split)

    def on_step(step, lr, loss):
        if step % max(1, args.log_every) == 0:
            print(f"step={step} lr={lr:.6e} loss={loss:.6f}", flush=True)

    result = train(cfg, samples, out_dir=cfg.paths.out, on_step=on_step)
    print(f"final_loss={result.step_losses[-1]!r} best_epoch_loss={result.best_loss!r}")
    print(f"wrote {Path(cfg.paths.out) / 'final.ecdw'} and {Path(cfg.paths.out) / 'best.ecdw'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, cfg = load_checkpoint(args.checkpoint)
    cfg = resolve_config(args, base=cfg)
    print(header(cfg, "eval"), flush=True)
    ids, samples = load_dataset(cfg.paths.data, cfg.paths.eval_split)
    for s in samples:
        if s.shape != (cfg.model.input_h, cfg.model.input_w):
            raise ConfigError(
                f"dataset image {s.shape} does not match checkpoint input {cfg.model.input_h}×{cfg.model.input_w}"
            )
    mean, per_image = evaluate(model, samples, (cfg.eval.cap_min, cfg.eval.cap_max), cfg.eval.crop)
    out = Path(cfg.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(MetricsReport.csv_header() + "\n" + mean.to_csv_row() + "\n")
    with open(out / "per_image.csv", "w") as fh:
        fh.write("id," + MetricsReport.csv_header() + "\n")
        for i, rep in zip(ids, per_image):
            fh.write(f"{i},{rep.to_csv_row()}\n")
    print(mean.to_kv())
    return EXIT_OK


def cmd_predict(args) -> int:
    model, cfg = load_checkpoint(args.checkpoint)
    print(header(cfg, "predict"), flush=True)
    rgb = load_raster(args.image).astype(np.float64)
    depth = predict(model, rgb)
    save_raster(args.output, depth[..., None])
    print(f"wrote {args.output} ({depth.shape[0]}×{depth.shape[1]}, {depth.min():.4f}..{depth.max():.4f} m)")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    print(f"# edgedepth gradcheck scope={args.scope} eps={args.eps} tol={args.tol}", flush=True)
    try:
        rows = run_suite(args.scope, eps=args.eps, tol=args.tol)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    print(format_table(rows))
    failed = [r.name for r in rows if not r.passed]
    print(f"{len(rows) - len(failed)}/{len(rows)} passed in {sum(r.seconds for r in rows):.2f}s")
    return EXIT_CHECK_FAILURE if failed else EXIT_OK


def cmd_synth(args) -> int:
    cfg = resolve_config(args)
    print(header(cfg, "synth"), flush=True)
    h, w, md = cfg.model.input_h, cfg.model.input_w, cfg.model.max_depth
    for split, n, offset in ((cfg.paths.train_split, args.n_train, 0), (cfg.paths.eval_split, args.n_eval, 1)):
        if n > 0:
            write_dataset(cfg.paths.data, split, synthetic_dataset(n, cfg.train.seed + offset * 7919, h, w, md))
            print(f"wrote {n} scenes to {Path(cfg.paths.data) / split}")
    return EXIT_OK


def _add_config_flags(p: argparse.ArgumentParser, with_preset: bool = True) -> None:
    if with_preset:
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--data", help="dataset root holding split directories")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edgedepth", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoints and loss curves")
    _add_config_flags(p)
    p.add_argument("--log-every", type=int, default=10)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    p.add_argument("checkpoint")
    _add_config_flags(p, with_preset=False)
    p.add_argument("--cap", help="depth cap lo-hi in metres, e.g. 0-80")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict a depth raster for one image raster")
    p.add_argument("checkpoint")
    p.add_argument("image")
    p.add_argument("output")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference checks of every registered op")
    p.add_argument("scope", nargs="?", default="all")
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="render a synthetic dataset of random scenes")
    _add_config_flags(p)
    p.add_argument("--n-train", type=int, default=8)
    p.add_argument("--n-eval", type=int, default=4)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except (NumericError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILURE


if __name__ == "__main__":
    sys.exit(main())
