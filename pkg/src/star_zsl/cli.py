"""``star`` command line: gen-data, train, eval, sweep, dump.

Exit codes: 0 success, 2 argument or config error, 3 I/O or data error,
4 numeric abort, 5 checkpoint/config mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as C
from .errors import (
    CompatibilityError,
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    LayoutError,
    NonFiniteError,
    ValidationError,
)

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC, EXIT_COMPAT = 0, 2, 3, 4, 5

log = logging.getLogger("star_zsl")


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON config file")
    g = p.add_argument_group("config overrides (any config key)")
    for key in C.all_keys():
        g.add_argument(_flag(key), dest=key, default=None, metavar="V")


def _overrides(args: argparse.Namespace) -> dict:
    return {k: getattr(args, k) for k in C.all_keys() if getattr(args, k, None) is not None}


def _seed_default() -> int:
    env = os.environ.get(C.SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{C.SEED_ENV}={env!r} is not an integer") from None
    return 0


def format_gzsl(gamma: float, s: float, u: float, h: float) -> str:
    return f"mode=gzsl gamma={gamma!r} S={s!r} U={u!r} H={h!r}"


# ---------------------------------------------------------------- commands


def cmd_gen_data(args: argparse.Namespace) -> int:
    from .synthetic import SynthConfig, generate_synthetic

    cfg = SynthConfig(
        num_categories=args.categories, num_known=args.known, train_per_category=args.train_per_category,
        test_per_category=args.test_per_category, layout=args.layout, frames=args.frames, persons=args.persons,
        noise=args.noise, d_sem=args.d_sem,
    )
    seed = args.seed if args.seed is not None else _seed_default()
    manifest = generate_synthetic(cfg, seed, args.out)
    roles = [s.role for s in manifest.samples]
    print(f"wrote {args.out}: categories={len(manifest.categories)} known={cfg.num_known} "
          f"unknown={cfg.num_categories - cfg.num_known} train={roles.count('train')} "
          f"test={roles.count('test')} seed={seed}")
    return EXIT_OK


def _load_data(dataset: str, split: str | None, frames: int):
    from .skeleton import load_dataset

    return load_dataset(dataset, split, frames=frames)


def cmd_train(args: argparse.Namespace) -> int:
    from .plotting import plot_losses
    from .semantics import build_embeddings
    from .skeleton import make_strategy
    from .train import fit

    file_doc = C.load_config_file(args.config) if args.config else {}
    cfg = C.resolve(file_doc, _overrides(args))
    cfg.require("dataset", "out")
    tc = cfg.train
    ds = _load_data(cfg.dataset, cfg.split, tc.frames)
    emb = build_embeddings(ds, make_strategy(ds.layout, tc.strategy), tc.provider, cfg.side_info, tc.d_sem)
    out = Path(cfg.out)
    C.write_resolved(cfg, out)
    result = fit(ds, tc, out, resume=args.resume, emb=emb)
    records = [json.loads(line) for line in (out / "losses.jsonl").read_text().splitlines() if line.strip()]
    if records:
        plot_losses(records, out / "losses.png")
    last = result.losses[-1]["l_total"] if result.losses else float("nan")
    print(f"epochs={tc.epochs} final_loss={last:.6f} checkpoint={result.final_checkpoint}")
    return EXIT_OK


def _eval_context(args: argparse.Namespace):
    """Checkpoint, restored model, dataset and embeddings for eval/sweep/dump."""
    from .semantics import build_embeddings
    from .train import load_checkpoint, restore_model

    ckpt = load_checkpoint(args.checkpoint)
    run_doc: dict = {}
    if args.config:
        run_doc = C.load_config_file(args.config)
    else:
        run_dir = C.run_dir_of(args.checkpoint)
        if run_dir is not None:
            run_doc = C.load_config_file(run_dir / C.RESOLVED_NAME)
    unknown = sorted(set(run_doc) - set(C.all_keys()))
    if unknown:
        raise ConfigError(f"unknown keys in run config: {unknown}")
    dataset = args.dataset or run_doc.get("dataset")
    if not dataset:
        raise ConfigError("missing required config key 'dataset' (pass --dataset)")
    split = args.split or run_doc.get("split")
    side_info = args.side_info or run_doc.get("side_info")
    model = restore_model(ckpt)
    ds = _load_data(dataset, split, ckpt.config.frames)
    if list(ds.categories) != ckpt.categories or list(ds.split.known) != ckpt.known:
        raise CompatibilityError("dataset categories or known split differ from the checkpoint's")
    emb = build_embeddings(ds, model.strategy, ckpt.config.provider, side_info, ckpt.config.d_sem)
    if emb.d_sem != ckpt.d_sem:
        raise CompatibilityError(f"embedding width {emb.d_sem} != checkpoint's {ckpt.d_sem}")
    return ckpt, model, ds, emb


def _default_out(checkpoint: str, name: str) -> Path:
    ckpt = Path(checkpoint)
    base = ckpt.parent.parent if ckpt.parent.name == "checkpoints" else ckpt
    return base / name


def cmd_eval(args: argparse.Namespace) -> int:
    from .evaluate import evaluate, write_confusion_csv, write_report
    from .plotting import plot_confusion

    if args.mode == "zsl" and args.gamma is not None:
        print("warning: --gamma is ignored in zsl mode", file=sys.stderr)
    _, model, ds, emb = _eval_context(args)
    gamma = args.gamma if (args.mode == "gzsl" and args.gamma is not None) else 0.0
    report = evaluate(model, ds, emb, args.mode, gamma)
    out = Path(args.out) if args.out else _default_out(args.checkpoint, f"eval_{args.mode}")
    write_report(out / "report.json", report)
    write_confusion_csv(out / "confusion.csv", report)
    plot_confusion(report.confusion, report.confusion_labels, out / "confusion.png")
    print(report.summary())
    return EXIT_OK


def _parse_gammas(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise ConfigError(f"--gamma-list must be comma-separated numbers, got {text!r}") from None


def cmd_sweep(args: argparse.Namespace) -> int:
    from .evaluate import compute_latents, default_gamma_grid, scores_of, sweep_from_scores, test_indices
    from .evaluate import write_sweep_csv
    from .plotting import plot_sweep

    _, model, ds, emb = _eval_context(args)
    lat = compute_latents(model, ds, emb, test_indices(ds, "gzsl"))
    scores = scores_of(lat, model)
    gammas = _parse_gammas(args.gamma_list) if args.gamma_list else default_gamma_grid(scores, args.gamma_steps)
    result = sweep_from_scores(scores, lat.labels, ds.split.is_known(), gammas)
    out = Path(args.out) if args.out else _default_out(args.checkpoint, "sweep")
    out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(out / "sweep.csv", result)
    with open(out / "sweep.json", "w", encoding="utf-8") as fh:
        json.dump({"rows": [list(r) for r in result.rows], "predicted_unseen": result.predicted_unseen,
                   "best_gamma": result.best_gamma, "best_H": result.best_H}, fh, indent=2)
        fh.write("\n")
    plot_sweep(result.rows, out / "sweep.png", result.best_gamma)
    best = next(r for r in result.rows if r[0] == result.best_gamma)
    print(f"points={len(result.rows)} H@0={result.rows[0][3]!r} best: {format_gzsl(*best)}")
    return EXIT_OK


def cmd_dump(args: argparse.Namespace) -> int:
    from .evaluate import dump_embeddings

    _, model, ds, emb = _eval_context(args)
    out = Path(args.out) if args.out else _default_out(args.checkpoint, "embeddings")
    index = dump_embeddings(model, ds, emb, out, args.mode)
    print(f"dumped {len(index['samples'])} samples, {len(index['parts'])} parts, "
          f"{len(index['categories'])} categories to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="star", description="Zero-shot skeleton action recognition with dual prompts.")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=None, help=f"default: ${C.SEED_ENV} or 0")
    g.add_argument("--categories", type=int, default=12)
    g.add_argument("--known", type=int, default=9)
    g.add_argument("--train-per-category", type=int, default=40)
    g.add_argument("--test-per-category", type=int, default=20)
    g.add_argument("--layout", default="ntu25")
    g.add_argument("--frames", type=int, default=32)
    g.add_argument("--persons", type=int, default=1)
    g.add_argument("--noise", type=float, default=0.05)
    g.add_argument("--d-sem", type=int, default=64)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="fit a model; writes checkpoints, losses.jsonl and losses.png")
    _add_run_flags(t)
    t.add_argument("--resume", help="checkpoint directory to continue from")
    t.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "ZSL or GZSL metrics for a checkpoint"),
                                 ("sweep", cmd_sweep, "S/U/H over a list of calibration offsets"),
                                 ("dump", cmd_dump, "write latent embeddings as STNSR1 files")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--config", help="run config (default: the one echoed next to the checkpoints)")
        p.add_argument("--dataset")
        p.add_argument("--split")
        p.add_argument("--side-info", dest="side_info")
        p.add_argument("--out")
        p.set_defaults(func=func)
        if name in ("eval", "dump"):
            p.add_argument("--mode", choices=["zsl", "gzsl"], default="gzsl")
        if name == "eval":
            p.add_argument("--gamma", type=float, default=None)
        if name == "sweep":
            p.add_argument("--gamma-list", help="comma-separated ascending offsets")
            p.add_argument("--gamma-steps", type=int, default=41, help="grid size when no list is given")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    np.seterr(over="ignore", invalid="ignore")  # non-finite values are detected and reported explicitly
    try:
        return args.func(args)
    except CompatibilityError as exc:
        code, msg = EXIT_COMPAT, exc
    except NonFiniteError as exc:
        code, msg = EXIT_NUMERIC, exc
    except (ConfigError, ValidationError, LayoutError, ContractError, DimensionError) as exc:
        code, msg = EXIT_USAGE, exc
    except (DataError, OSError) as exc:
        code, msg = EXIT_IO, exc
    print(f"error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
