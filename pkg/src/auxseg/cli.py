"""Command line: ``auxseg gen-data | train | compare``.

Exit codes: 0 success, 1 runtime or IO failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .data import CLASS_NAMES, make_splits, read_dataset, write_dataset
from .models import build, depth_decoder_param_count, param_count
from .trainer import VARIANTS, TrainConfig, train

TRAIN_FILE = "train.auxd"
VAL_FILE = "val.auxd"
AUX_VARIANTS = ("aux400", "aux1000", "auxtwb", "auxftwb")
COMPARE_VARIANTS = ("segnet",) + AUX_VARIANTS


class UsageError(Exception):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, config: dict, datasets: dict[str, Path],
                   artifacts: list[Path]) -> Path:
    manifest = {
        "tool": "auxseg",
        "version": __version__,
        "config": config,
        "datasets": {k: {"path": str(p), "sha256": sha256_file(p)} for k, p in sorted(datasets.items())},
        "artifacts": {p.name: sha256_file(p) for p in sorted(artifacts)},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def verify_manifest(path) -> list[str]:
    """Names of listed files whose checksum no longer matches (empty if all good)."""
    path = Path(path)
    m = json.loads(path.read_text())
    bad = [k for k, v in m["datasets"].items() if sha256_file(v["path"]) != v["sha256"]]
    bad += [name for name, digest in m["artifacts"].items()
            if sha256_file(path.parent / name) != digest]
    return bad


def _check_extents(height: int, width: int) -> None:
    for name, v in (("height", height), ("width", width)):
        if v <= 0 or v % 8:
            raise UsageError(f"{name} must be divisible by 8 (got {v})")
        if v < 16:
            raise UsageError(f"{name} must be at least 16 (got {v})")


def _parse_ema(text: str) -> float | None:
    if text == "off":
        return None
    try:
        beta = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--ema-beta expects a number in (0,1) or 'off', got {text!r}")
    if not 0 < beta < 1:
        raise argparse.ArgumentTypeError(f"--ema-beta must lie in (0, 1), got {beta}")
    return beta


def _load_splits(data_dir: Path):
    paths = {"train": data_dir / TRAIN_FILE, "val": data_dir / VAL_FILE}
    for p in paths.values():
        if not p.exists():
            raise FileNotFoundError(f"dataset not found: {p}")
    return paths, read_dataset(paths["train"]), read_dataset(paths["val"])


def cmd_gen_data(args) -> int:
    _check_extents(args.height, args.width)
    if args.train < 1 or args.val < 1:
        raise UsageError("--train and --val must be >= 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_set, val_set = make_splits(args.seed, args.train, args.val, args.height, args.width)
    paths = {"train": out / TRAIN_FILE, "val": out / VAL_FILE}
    write_dataset(train_set, paths["train"])
    write_dataset(val_set, paths["val"])
    config = {"command": "gen-data", "seed": args.seed, "train": args.train, "val": args.val,
              "height": args.height, "width": args.width}
    print(write_manifest(out, config, paths, []))
    return 0


def _config_from(args, variant: str, seed: int, height: int, width: int) -> TrainConfig:
    return TrainConfig(variant=variant, epochs=args.epochs, batch_size=args.batch, lr=args.lr,
                       seed=seed, height=height, width=width, ema_beta=args.ema_beta,
                       detached=args.detach == "on")


def cmd_train(args) -> int:
    paths, train_set, val_set = _load_splits(Path(args.data))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = _config_from(args, args.variant, args.seed, train_set.height, train_set.width)
    ckpt = out / "checkpoint.auxc"
    _, report = train(cfg, train_set, val_set, checkpoint_path=ckpt)
    (out / "report.csv").write_text(report.to_csv())
    (out / "batches.csv").write_text(report.batches_csv())
    config = {"command": "train", **{k: getattr(cfg, k) for k in (
        "variant", "epochs", "batch_size", "lr", "beta1", "beta2", "eps", "seed",
        "height", "width", "num_classes", "ema_beta", "detached")}}
    artifacts = [ckpt, out / "report.csv", out / "batches.csv"]
    print(write_manifest(out, config, paths, artifacts))
    best = report.rows[report.best_epoch - 1]
    print(f"best_epoch={report.best_epoch} val_L_seg={best.val_loss_seg:.9g} val_miou={best.val_miou:.9g}")
    return 0


def _run_one(job):
    cfg, data_dir = job
    _, train_set, val_set = _load_splits(Path(data_dir))
    _, report = train(cfg, train_set, val_set)
    best = report.rows[report.best_epoch - 1]
    return (cfg.variant, cfg.seed), best.val_miou, best.val_iou, report.best_epoch


def _fmt(v) -> str:
    return "nan" if v is None or (isinstance(v, float) and np.isnan(v)) else f"{v:.9g}"


def _pretty(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows)


def cmd_compare(args) -> int:
    data_dir = Path(args.data)
    paths, train_set, _ = _load_splits(data_dir)
    h, w = train_set.height, train_set.width
    variants = args.variants.split(",") if args.variants else list(COMPARE_VARIANTS)
    for v in variants:
        if v not in VARIANTS:
            raise UsageError(f"unknown variant {v!r}")
    if "segnet" not in variants:
        raise UsageError("compare needs the segnet baseline among --variants")
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    seeds = list(range(1, args.seeds + 1))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    jobs = [(_config_from(args, v, s, h, w), str(data_dir)) for v in variants for s in seeds]
    workers = max(1, int(os.environ.get("AUXSEG_THREADS", "1")))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    by_key = {key: (miou, ious, ep) for key, miou, ious, ep in sorted(results)}

    k = train_set.num_classes
    names = [CLASS_NAMES[c] if c < len(CLASS_NAMES) else f"class{c}" for c in range(k)]
    iou_rows = [["variant", "seed"] + names + ["mean_iou", "best_epoch"]]
    for v in variants:
        for s in seeds:
            miou, ious, ep = by_key[(v, s)]
            iou_rows.append([v, str(s)] + [_fmt(x) for x in ious] + [_fmt(miou), str(ep)])
        per = np.array([[np.nan if x is None else x for x in by_key[(v, s)][1]] for s in seeds])
        means = [float(np.nanmean(per[:, c])) if not np.all(np.isnan(per[:, c])) else None
                 for c in range(k)]
        iou_rows.append([v, "mean"] + [_fmt(x) for x in means]
                        + [_fmt(float(np.mean([by_key[(v, s)][0] for s in seeds]))), ""])

    param_rows = [["model", "params_training", "params_inference", "depth_decoder"]]
    for kind in ("segnet", "fusenet", "auxnet"):
        m = build(kind, 3, k, h, w, seed=0)
        param_rows.append([kind, str(param_count(m, "training")), str(param_count(m, "inference")),
                           str(depth_decoder_param_count(m))])

    win_rows = [["variant", "seed", "aux_miou", "segnet_miou", "win"]]
    summary = []
    for v in variants:
        if v == "segnet":
            continue
        wins = 0
        for s in seeds:
            a, b = by_key[(v, s)][0], by_key[("segnet", s)][0]
            wins += a > b
            win_rows.append([v, str(s), _fmt(a), _fmt(b), str(int(a > b))])
        summary.append(f"{v}: aux_wins={wins}/{len(seeds)}")

    tables = {"iou.csv": iou_rows, "params.csv": param_rows, "wins.csv": win_rows}
    for name, rows in tables.items():
        (out / name).write_text("\n".join(",".join(r) for r in rows) + "\n")
        if args.pretty:
            print(_pretty(rows) + "\n")
    config = {"command": "compare", "variants": variants, "seeds": seeds, "epochs": args.epochs,
              "batch_size": args.batch, "lr": args.lr, "ema_beta": args.ema_beta,
              "detached": args.detach == "on"}
    manifest = write_manifest(out, config, paths, [out / n for n in tables])
    for line in summary:
        print(line)
    print(manifest)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="auxseg", description="Auxiliary depth learning for segmentation")
    p.add_argument("--version", action="version", version=f"auxseg {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate train/val scene datasets")
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--train", type=int, default=512)
    g.add_argument("--val", type=int, default=128)
    g.add_argument("--height", type=int, default=32)
    g.add_argument("--width", type=int, default=48)
    g.add_argument("--out", default="data")
    g.set_defaults(func=cmd_gen_data)

    def training_flags(sp):
        sp.add_argument("--data", default="data", help="directory holding train.auxd / val.auxd")
        sp.add_argument("--epochs", type=int, default=30)
        sp.add_argument("--batch", type=int, default=16)
        sp.add_argument("--lr", type=float, default=1e-3)
        sp.add_argument("--ema-beta", type=_parse_ema, default=None, metavar="BETA|off")
        sp.add_argument("--detach", choices=("on", "off"), default="on")

    t = sub.add_parser("train", help="train one variant")
    t.add_argument("--variant", choices=sorted(VARIANTS), required=True)
    t.add_argument("--seed", type=int, default=1)
    t.add_argument("--out", default="runs/train")
    training_flags(t)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("compare", help="train all variants over several seeds")
    c.add_argument("--seeds", type=int, default=5)
    c.add_argument("--variants", default=None, help="comma list (default: segnet + all aux)")
    c.add_argument("--out", default="runs/compare")
    c.add_argument("--pretty", action="store_true")
    training_flags(c)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"auxseg: error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, FloatingPointError) as e:
        print(f"auxseg: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
