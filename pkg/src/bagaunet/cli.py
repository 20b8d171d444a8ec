"""Command-line entry point: phantom, train, predict, evaluate, ablate.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

from .config import echo_config, load_run_config
from .dataset import DatasetSplit, read_manifest, load_cases, split_dataset
from .errors import ConfigError, DataError, TrainingAborted
from .metrics import MetricReport, evaluate
from .model import VARIANTS, load_checkpoint
from .overlay import write_overlays
from .phantom import generate_dataset
from .training import BEST_CHECKPOINT, overfit_probe, predict, train
from .volume import load_case, save_volume

SPLIT_NAME = "split.json"


def _write_split(split: DatasetSplit, out_dir: Path) -> Path:
    path = Path(out_dir) / SPLIT_NAME
    payload = {"train": split.train, "val": split.val, "test": split.test, "seed": split.seed}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def _read_split(path) -> DatasetSplit:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"split file not found: {path}")
    d = json.loads(path.read_text())
    return DatasetSplit(train=d["train"], val=d["val"], test=d["test"], seed=d.get("seed", 0))


def _split_hash(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cmd_phantom(args) -> int:
    overrides = list(args.set or [])
    if args.n_cases is not None:
        overrides.append(f"phantom.n_cases={args.n_cases}")
    if args.seed is not None:
        overrides.append(f"phantom.seed={args.seed}")
    if args.shape is not None:
        overrides.append(f"phantom.shape={list(args.shape)}")
    cfg = load_run_config(args.config, overrides)
    out_dir = Path(args.out)
    manifest = generate_dataset(cfg.phantom, out_dir)
    echo_config(cfg, out_dir)
    print(f"wrote {cfg.phantom.n_cases} cases; manifest: {manifest}")
    return 0


def _train_overrides(args) -> list[str]:
    overrides = list(args.set or [])
    if args.variant:
        overrides += [f"model.variant={args.variant}", f"train.variant={args.variant}"]
    if args.epochs is not None:
        overrides.append(f"train.epochs={args.epochs}")
    if args.batch_size is not None:
        overrides.append(f"train.batch_size={args.batch_size}")
    if args.lr is not None:
        overrides.append(f"train.lr={args.lr}")
    if args.seed is not None:
        overrides += [f"train.seed={args.seed}", f"model.init_seed={args.seed}"]
    if args.canvas is not None:
        overrides.append(f"model.canvas=[{args.canvas}, {args.canvas}]")
    if args.channels:
        overrides.append(f"model.channels=[{args.channels}]")
    if args.no_augment:
        overrides.append("train.augment=false")
    return overrides


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, _train_overrides(args))
    dataset = args.dataset or cfg.dataset
    if dataset is None:
        raise ConfigError("no dataset given (use --dataset or the config file)")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out_dir)

    if args.overfit:
        records = overfit_probe(cfg.train, dataset, steps=args.overfit_steps,
                                model_spec=cfg.model)
        with open(out_dir / "overfit.jsonl", "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        final = records[-1]["train_loss"]
        print(f"overfit probe: final loss {final:.4f} after {len(records)} steps")
        return 0

    _, ids = read_manifest(dataset)
    split = split_dataset(ids, seed=cfg.train.seed)
    _write_split(split, out_dir)
    state = train(cfg.train, dataset, out_dir, model_spec=cfg.model,
                  split=split, augment_config=cfg.augment, resume=args.resume)
    print(f"best val DSC {state.best_val_dsc:.2f} after {state.epoch} epochs; "
          f"checkpoints in {out_dir}")
    return 0


def cmd_predict(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    case = load_case(args.case, require_mask=False)
    pred = predict(model, case, threshold=args.threshold)
    case_dir = Path(args.out) / case.case_id
    case_dir.mkdir(parents=True, exist_ok=True)
    save_volume(pred.probability, case_dir / "prob.nii.gz")
    save_volume(pred.mask, case_dir / "mask.nii.gz")
    if args.overlay:
        paths = write_overlays(case.flair, pred.mask, case_dir / "overlay")
        print(f"wrote {len(paths)} overlay images")
    n_fg = int(pred.mask.data.sum())
    print(f"{case.case_id}: {n_fg} voxels above threshold {pred.threshold}; output in {case_dir}")
    return 0


def cmd_evaluate(args) -> int:
    case_ids = None
    if args.cases:
        case_ids = [c.strip() for c in args.cases.split(",") if c.strip()]
    elif args.split:
        split = _read_split(args.split)
        case_ids = getattr(split, args.subset)
        if not case_ids:
            raise DataError(f"split subset {args.subset!r} is empty")
    report = evaluate(args.pred, args.gt, case_ids=case_ids)
    report.save(args.out)
    print(report.to_text(), end="")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_run_config(args.config, _train_overrides(args))
    dataset = args.dataset or cfg.dataset
    if dataset is None:
        raise ConfigError("no dataset given (use --dataset or the config file)")
    variants = [v.strip() for v in args.variants.split(",")] if args.variants else list(VARIANTS)
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise ConfigError(f"unknown variants {bad}; choose from {VARIANTS}")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out_dir)
    dataset_dir, ids = read_manifest(dataset)
    split = split_dataset(ids, seed=cfg.train.seed)
    if not split.test:
        raise ConfigError("ablation needs a nonempty test split")

    rows = []
    hashes = set()
    for variant in variants:
        vdir = out_dir / variant
        vdir.mkdir(parents=True, exist_ok=True)
        hashes.add(_split_hash(_write_split(split, vdir)))
        train_cfg = dataclasses.replace(cfg.train, variant=variant)
        model_spec = dataclasses.replace(cfg.model, variant=variant)
        print(f"[{variant}] training for {train_cfg.epochs} epochs")
        train(train_cfg, dataset, vdir, model_spec=model_spec,
              split=split, augment_config=cfg.augment)
        model, _ = load_checkpoint(vdir / BEST_CHECKPOINT)
        pred_dir = vdir / "pred"
        for case in load_cases(dataset_dir, split.test):
            pred = predict(model, case, threshold=cfg.train.threshold)
            case_dir = pred_dir / case.case_id
            case_dir.mkdir(parents=True, exist_ok=True)
            save_volume(pred.mask, case_dir / "mask.nii.gz")
        report = evaluate(pred_dir, dataset, case_ids=split.test)
        report.save(vdir)
        rows.append({"variant": variant, **report.aggregate})

    if len(hashes) != 1:
        raise DataError(f"split hash differs across variant runs: {sorted(hashes)}")

    table = _ablation_table(rows)
    (out_dir / "ablation.txt").write_text(table)
    with open(out_dir / "ablation.json", "w") as fh:
        json.dump({"rows": rows, "split_hash": hashes.pop(), "test_cases": split.test},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(table, end="")

    by_variant = {r["variant"]: r for r in rows}
    if "bagau" in by_variant and "bagau_plain" in by_variant:
        d_full = by_variant["bagau"]["dsc"]
        d_plain = by_variant["bagau_plain"]["dsc"]
        verdict = "holds" if d_full >= d_plain else "does NOT hold"
        print(f"soft expectation bagau >= bagau_plain on DSC: {d_full:.2f} vs {d_plain:.2f} ({verdict})")
    return 0


def _ablation_table(rows: list[dict]) -> str:
    header = f"{'Variant':<26}{'DSC (%)':>10}{'AVD (%)':>10}{'Recall (%)':>12}{'F1 (%)':>10}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r['variant']:<26}{r['dsc']:>10.2f}{r['avd']:>10.2f}"
            f"{r['recall']:>12.2f}{r['f1']:>10.2f}"
        )
    return "\n".join(lines) + "\n"


def _add_common(parser):
    parser.add_argument("--config", help="JSON run configuration file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="dotted config override, e.g. train.lr=0.001 (repeatable)")


def _add_train_flags(parser):
    parser.add_argument("--variant", choices=VARIANTS, help="model variant (sets model+train sections)")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", type=int, dest="batch_size")
    parser.add_argument("--lr", type=float)
    parser.add_argument("--seed", type=int, help="sets train.seed and model.init_seed")
    parser.add_argument("--canvas", type=int, help="square slice canvas, divisible by 16")
    parser.add_argument("--channels", help="comma-separated 5 channel widths")
    parser.add_argument("--no-augment", action="store_true", dest="no_augment")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bagaunet",
        description="Dual-path attention segmentation of WMH from FLAIR + WM atlas",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--out", required=True, help="dataset output directory")
    p.add_argument("--n-cases", type=int, dest="n_cases")
    p.add_argument("--seed", type=int)
    p.add_argument("--shape", type=int, nargs=3, metavar=("D", "H", "W"))
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("train", help="train a variant on a dataset")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--dataset", help="dataset directory or manifest path")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--overfit", action="store_true",
                   help="run the one-batch overfit probe instead of full training")
    p.add_argument("--overfit-steps", type=int, default=200, dest="overfit_steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="segment one case with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--case", required=True, help="case directory with flair/atlas volumes")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--overlay", action="store_true", help="write per-slice PNG composites")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--pred", required=True, help="directory of per-case predicted masks")
    p.add_argument("--gt", required=True, help="dataset directory or manifest path")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--cases", help="comma-separated case ids (default: whole manifest)")
    p.add_argument("--split", help="split.json written by train")
    p.add_argument("--subset", choices=("train", "val", "test"), default="test")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train and compare variants on one shared split")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--dataset", help="dataset directory or manifest path")
    p.add_argument("--out", required=True)
    p.add_argument("--variants", help="comma-separated subset (default: all six)")
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
