"""Command line entry point tying the pipeline together.

Subcommands: gen-data, train, sweep-lambda, ablate-pairs, eval, predict,
serve, export-labels. Every command is a thin adapter over the module
APIs; outputs land in a per-run directory named by timestamp and seed
under ``--run-root`` (or ``$FLOODLEVEL_RUN_ROOT``, default ``./runs``).

Exit codes: 0 success, 2 configuration/validation error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

log = logging.getLogger(__name__)


def _run_dir(args) -> Path:
    root = Path(args.run_root or os.environ.get("FLOODLEVEL_RUN_ROOT", "runs"))
    seed = getattr(args, "seed", 0) or 0
    path = root / f"{time.strftime('%Y%m%d-%H%M%S')}-seed{seed}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _build_train_config(args):
    from .trainer import TrainConfig, load_train_config

    cfg = load_train_config(args.config) if args.config else TrainConfig()
    overrides = {}
    for flag, field in [
        ("regime", "regime"), ("epochs", "epochs"), ("lr", "lr"),
        ("batch_size", "batch_size"), ("lambda_", "lambda_"), ("seed", "seed"),
        ("pair_budget", "pair_budget"), ("margin", "margin"),
    ]:
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field] = value
    if getattr(args, "lr_decay_epochs", None) is not None:
        overrides["lr_decay_epochs"] = tuple(args.lr_decay_epochs)
    cfg = dataclasses.replace(cfg, **overrides)
    model_overrides = {}
    if getattr(args, "backbone", None):
        model_overrides["backbone"] = args.backbone
    if getattr(args, "input_size", None):
        h, w = args.input_size
        model_overrides["input_size"] = (h, w, 3)
    if model_overrides:
        cfg = dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, **model_overrides))
    return cfg


def _load_training_data(args, cfg):
    """Resolve manifests into (strong_train, strong_val, weak | None)."""
    from .manifest import load_manifest, merge_manifests, with_absolute_labels
    from .splits import holdout_split

    strong = load_manifest(args.strong)
    weak = load_manifest(args.weak) if args.weak else None

    if cfg.regime == "regression_pp":
        if weak is None:
            raise ValueError("regression_pp needs --weak to grant absolute labels")
        strong = merge_manifests(strong, with_absolute_labels(weak), name="strong-pp")
        weak = None
    if cfg.regime == "reg_rank" and weak is None:
        raise ValueError("reg_rank needs --weak")

    if args.val:
        val = load_manifest(args.val)
        train = strong
    else:
        train, val = holdout_split(strong, ratio=0.8, seed=cfg.seed)
    return train, val, weak


def cmd_gen_data(args) -> int:
    from .synthetic import generate_synthetic

    out = Path(args.out) if args.out else _run_dir(args)
    manifest, path = generate_synthetic(
        args.count, out, image_size=args.image_size, seed=args.seed,
        label_kind=args.label_kind, depth_mode=args.depth_mode,
        id_prefix=args.id_prefix,
    )
    print(f"wrote {len(manifest)} images and manifest {path}")
    return 0


def cmd_train(args) -> int:
    from .trainer import run_training

    cfg = _build_train_config(args)
    train, val, weak = _load_training_data(args, cfg)
    out_dir = Path(args.out) if args.out else _run_dir(args)
    result = run_training(cfg, train, val, weak,
                          data_root=args.data_root, out_dir=out_dir)
    print(f"best val RMSE {result.best_val_rmse:.3f} cm "
          f"(epoch {result.state.best_epoch}); artifacts in {out_dir}")
    return 0


def cmd_sweep_lambda(args) -> int:
    from .trainer import lambda_sweep, load_arrays

    cfg = _build_train_config(args)
    train, val, weak = _load_training_data(args, cfg)
    if weak is None:
        raise ValueError("sweep-lambda needs --weak")
    out_dir = Path(args.out) if args.out else _run_dir(args)
    size = cfg.model.input_size
    sweep = lambda_sweep(
        cfg, args.grid,
        load_arrays(train, args.data_root, size),
        load_arrays(val, args.data_root, size),
        load_arrays(weak, args.data_root, size),
        out_dir=out_dir,
    )
    for lam in sorted(sweep.table):
        marker = " <- selected" if lam == sweep.selected else ""
        print(f"lambda={lam:g}: val RMSE {sweep.table[lam]:.3f} cm{marker}")
    return 0


def cmd_ablate_pairs(args) -> int:
    from .manifest import load_manifest
    from .trainer import load_arrays, pair_ablation

    cfg = _build_train_config(args)
    train, val, weak = _load_training_data(args, cfg)
    if weak is None:
        raise ValueError("ablate-pairs needs --weak")
    test = load_manifest(args.test)
    out_dir = Path(args.out) if args.out else _run_dir(args)
    size = cfg.model.input_size
    table = pair_ablation(
        cfg, args.budgets,
        load_arrays(train, args.data_root, size),
        load_arrays(val, args.data_root, size),
        load_arrays(weak, args.data_root, size),
        load_arrays(test, args.data_root, size),
        seeds=args.seeds,
        out_dir=out_dir,
    )
    for budget, row in table.items():
        print(f"budget={budget}: avgRMSE {row['avg_rmse_cm']:.3f} "
              f"+- {row['std_cm']:.3f} cm")
    return 0


def cmd_eval(args) -> int:
    from .evaluation import export_prediction_distribution, make_fold_report
    from .manifest import load_manifest
    from .model import load_checkpoint
    from .trainer import evaluate_rmse, load_arrays

    model, cfg, meta = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    arrays = load_arrays(manifest, args.data_root, cfg.input_size)
    rmse_cm, rmse_lv, preds = evaluate_rmse(model, arrays)
    report = make_fold_report(args.fold_id, preds, arrays.depths)
    out_dir = Path(args.out) if args.out else _run_dir(args)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "eval.json").write_text(json.dumps({
        "checkpoint": str(args.checkpoint),
        "manifest": str(args.manifest),
        "rmse_cm": rmse_cm,
        "rmse_level": rmse_lv,
        "n": len(arrays),
        "checkpoint_meta": meta,
    }, indent=2))
    export_prediction_distribution(report, out_dir)
    print(f"RMSE {rmse_cm:.3f} cm / {rmse_lv:.3f} levels over {len(arrays)} images")
    return 0


def cmd_predict(args) -> int:
    import numpy as np

    from .levels import cm_to_level
    from .model import load_checkpoint, predict
    from .synthetic import load_image_array

    model, cfg, _ = load_checkpoint(args.checkpoint)
    from PIL import Image

    for uri in args.images:
        t0 = time.perf_counter()
        arr = load_image_array(uri, ".")
        h, w, _ = cfg.input_size
        if arr.shape[:2] != (h, w):
            with Image.open(uri) as im:
                arr = np.asarray(
                    im.convert("RGB").resize((w, h), Image.BILINEAR), dtype=np.float32
                ) / 255.0
        depth = float(predict(model, arr)[0])
        # wall clock is informational only; no bound is enforced
        log.info("predicted %s in %.3f s", uri, time.perf_counter() - t0)
        print(f"{uri} {depth:.2f} {cm_to_level(depth):.2f}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .annotation import VoteStore, create_app, sample_task_pairs
    from .manifest import load_manifest

    manifest = load_manifest(args.manifest)
    store = VoteStore(args.data_dir, votes_per_task=args.votes_per_task)
    if not store.tasks and args.tasks > 0:
        store.create_tasks(sample_task_pairs(manifest, args.tasks, seed=args.seed,
                                             strategy=args.sampling))
        print(f"created {args.tasks} annotation tasks")
    images_root = args.images_root or Path(args.manifest).parent
    app = create_app(store, manifest, images_root=images_root, ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def cmd_export_labels(args) -> int:
    from .annotation import VoteStore
    from .manifest import save_pair_labels

    store = VoteStore(args.data_dir)
    labels = store.export_labels(min_votes=args.min_votes,
                                 min_agreement=args.min_agreement)
    out = Path(args.out) if args.out else _run_dir(args) / "pair_labels.jsonl"
    save_pair_labels(labels, out)
    print(f"exported {len(labels)} pair labels to {out}")
    return 0


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v != ""]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v != ""]


def _size(text: str) -> tuple[int, int]:
    if "x" in text:
        h, w = text.split("x")
        return int(h), int(w)
    return int(text), int(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="floodlevel",
                                     description="water level estimation toolkit")
    parser.add_argument("--run-root", default=None,
                        help="root for run directories (env FLOODLEVEL_RUN_ROOT)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--label-kind", choices=["strong", "weak"], default="strong")
    p.add_argument("--depth-mode", choices=["anchors", "continuous"], default="anchors")
    p.add_argument("--id-prefix", default="synth")
    p.set_defaults(func=cmd_gen_data)

    def add_train_args(p, need_strong=True):
        p.add_argument("--config", default=None, help="YAML training config")
        p.add_argument("--strong", required=need_strong, help="strong manifest path")
        p.add_argument("--weak", default=None, help="weak manifest path")
        p.add_argument("--val", default=None, help="validation manifest path")
        p.add_argument("--data-root", default=".", help="root for image uris")
        p.add_argument("--out", default=None)
        p.add_argument("--regime", choices=["regression", "regression_pp", "reg_rank"],
                       default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--lr-decay-epochs", type=_int_list, default=None)
        p.add_argument("--batch-size", type=int, default=None)
        p.add_argument("--lambda", dest="lambda_", type=float, default=None)
        p.add_argument("--margin", type=float, default=None)
        p.add_argument("--pair-budget", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--backbone", default=None,
                       choices=["pretrained_conv", "tiny_conv", "mlp_on_features"])
        p.add_argument("--input-size", type=_size, default=None, help="HxW")

    p = sub.add_parser("train", help="train one model")
    add_train_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep-lambda", help="train across a lambda grid")
    add_train_args(p)
    p.add_argument("--grid", type=_float_list, default=[0, 1, 5, 15, 30])
    p.set_defaults(func=cmd_sweep_lambda)

    p = sub.add_parser("ablate-pairs", help="pair budget ablation")
    add_train_args(p)
    p.add_argument("--budgets", type=_int_list, required=True)
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2])
    p.add_argument("--test", required=True, help="test manifest path")
    p.set_defaults(func=cmd_ablate_pairs)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--data-root", default=".")
    p.add_argument("--fold-id", type=int, default=1)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict depth for images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("images", nargs="+")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("serve", help="run the annotation service")
    p.add_argument("--manifest", required=True)
    p.add_argument("--data-dir", required=True, help="vote store directory")
    p.add_argument("--images-root", default=None)
    p.add_argument("--tasks", type=int, default=200,
                   help="tasks to create if the store is empty")
    p.add_argument("--sampling", choices=["uniform", "level_balanced"], default="uniform")
    p.add_argument("--votes-per-task", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--ui-dir", default=None, help="serve a built front-end from /")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("export-labels", help="export majority-filtered pair labels")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--min-votes", type=int, default=3)
    p.add_argument("--min-agreement", type=float, default=0.66)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_export_labels)

    return parser


def dispatch(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        log.exception("command failed: %s", exc)
        return 1


def main(argv=None) -> None:
    raise SystemExit(dispatch(argv))


if __name__ == "__main__":
    main()
