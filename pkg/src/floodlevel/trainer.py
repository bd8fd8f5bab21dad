"""Training loop for the three experiment regimes, plus sweep harnesses.

Regimes:
  * ``regression``: MSE on the strong set only (the lower bound).
  * ``regression_pp``: MSE on strong + weak sets with absolute labels
    granted everywhere (the upper bound).
  * ``reg_rank``: each iteration draws one strong mini-batch for the MSE
    term and one weak mini-batch whose in-batch pairs feed the hinge term,
    combined as ``mse + lambda * hinge`` into a single optimizer step
    (a flag switches to two consecutive steps instead).

An epoch is one pass over the ranking set when ranking is active (the
strong set cycles as needed), else one pass over the strong set. With
``lambda == 0`` ranking is disabled entirely, so a ``reg_rank`` run
degenerates bit-for-bit into the ``regression`` baseline.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import yaml
from PIL import Image

from .evaluation import rmse as rmse_metric
from .evaluation import rmse_level as rmse_level_metric
from .losses import DEFAULT_LAMBDA
from .manifest import DatasetManifest
from .model import ModelConfig, build_model, predict, save_checkpoint, to_batch
from .pairing import PairBudget, PairBudgetTracker, derive_rank_targets, transitive_reduction

log = logging.getLogger(__name__)

REGIMES = ("regression", "regression_pp", "reg_rank")


class TrainingDiverged(RuntimeError):
    """Raised when a loss turns non-finite; carries a diagnostic payload."""

    def __init__(self, message, diagnostic=None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}


@dataclass
class TrainConfig:
    regime: str = "reg_rank"
    epochs: int = 200
    lr: float = 1e-3
    lr_decay_epochs: tuple[int, ...] = (150, 180)
    lr_decay_factor: float = 0.1
    batch_size: int = 5
    lambda_: float = DEFAULT_LAMBDA
    margin: float = 0.0
    pair_budget: Optional[int] = None
    budget_distinct: bool = False
    combined_step: bool = True
    use_transitive_reduction: bool = False
    seed: int = 0
    torch_threads: int = 1
    model: ModelConfig = field(default_factory=lambda: ModelConfig())

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}; choose from {REGIMES}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if any(d >= self.epochs for d in self.lr_decay_epochs) and self.epochs > 1:
            log.warning("some lr decay epochs %s never trigger within %d epochs",
                        self.lr_decay_epochs, self.epochs)
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lambda_ < 0:
            raise ValueError("lambda must be non-negative")
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for a 1-based epoch: decayed once per passed milestone."""
    n_decays = sum(1 for d in cfg.lr_decay_epochs if d <= epoch)
    return cfg.lr * cfg.lr_decay_factor ** n_decays


def save_train_config(cfg: TrainConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(dataclasses.asdict(cfg), sort_keys=False))
    return path


def load_train_config(path: str | Path) -> TrainConfig:
    raw = yaml.safe_load(Path(path).read_text())
    if "model" in raw and isinstance(raw["model"], dict):
        for key in ("input_size", "tiny_channels", "mlp_hidden"):
            if key in raw["model"] and raw["model"][key] is not None:
                raw["model"][key] = tuple(raw["model"][key])
    if "lr_decay_epochs" in raw and raw["lr_decay_epochs"] is not None:
        raw["lr_decay_epochs"] = tuple(raw["lr_decay_epochs"])
    return TrainConfig(**raw)


@dataclass
class TrainState:
    epoch: int = 0
    step: int = 0
    pairs_consumed: int = 0
    best_val_rmse: float = math.inf
    best_epoch: int = 0
    checkpoint_path: Optional[str] = None


@dataclass
class Arrays:
    """Preloaded strong data: images in [0,1] and absolute depths in cm."""

    images: np.ndarray  # (N, H, W, C) float32
    depths: np.ndarray  # (N,) float32
    ids: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.images)


@dataclass
class WeakArrays:
    """Preloaded weak data: images plus discrete levels, no depths.

    Levels leave this container only through pair derivation, so the
    ranking path never sees absolute values.
    """

    images: np.ndarray
    levels: np.ndarray  # (N,) int
    ids: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.images)


def load_arrays(manifest: DatasetManifest, root: str | Path, input_size=None):
    """Load a manifest's images (resized to the model input) into memory."""
    root = Path(root)
    imgs = []
    for rec in manifest.records:
        path = Path(rec.image_uri)
        if not path.is_absolute():
            path = root / path
        with Image.open(path) as im:
            im = im.convert("RGB")
            if input_size is not None and im.size != (input_size[1], input_size[0]):
                im = im.resize((input_size[1], input_size[0]), Image.BILINEAR)
            imgs.append(np.asarray(im, dtype=np.float32) / 255.0)
    images = np.stack(imgs)
    ids = [rec.id for rec in manifest.records]
    if manifest.label_kind == "weak":
        missing = [rec.id for rec in manifest.records if rec.level is None]
        if missing:
            raise ValueError(f"weak manifest records without a level: {missing[:5]}")
        levels = np.array([rec.level for rec in manifest.records], dtype=np.int64)
        return WeakArrays(images=images, levels=levels, ids=ids)
    missing = [rec.id for rec in manifest.records if rec.depth_cm is None]
    if missing:
        raise ValueError(f"strong manifest records without depth_cm: {missing[:5]}")
    depths = np.array([rec.depth_cm for rec in manifest.records], dtype=np.float32)
    return Arrays(images=images, depths=depths, ids=ids)


def _mse(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return ((pred - target) ** 2).mean()


def _hinge(pred: torch.Tensor, pairs, margin: float) -> torch.Tensor:
    idx_a = torch.tensor([p.index_a for p in pairs])
    idx_b = torch.tensor([p.index_b for p in pairs])
    signs = torch.tensor([float(p.sign) for p in pairs])
    return torch.clamp(margin - signs * (pred[idx_a] - pred[idx_b]), min=0.0).mean()


def _rank_pairs_for_batch(levels, cfg, tracker, ids=None):
    """Derive signed pairs for one weak batch, honoring the pair budget."""
    if len(levels) < 2:
        return [], 0
    pairs = derive_rank_targets(levels)
    if cfg.use_transitive_reduction:
        pairs = transitive_reduction(pairs)
    if not pairs:
        return [], 0
    if tracker is None:
        return pairs, len(pairs)
    key = None
    if tracker.distinct:
        key = [(ids[p.index_a], ids[p.index_b]) for p in pairs]
    granted = tracker.request(len(pairs), ids=key)
    return pairs[:granted], granted


def train_step_regression(model, optimizer, images_t, depths_t) -> float:
    """One optimizer step on the MSE term; returns the batch loss."""
    optimizer.zero_grad()
    loss = _mse(model(images_t), depths_t)
    if not torch.isfinite(loss):
        raise TrainingDiverged("regression loss is not finite")
    loss.backward()
    optimizer.step()
    return loss.item()


def train_step_ranking(model, optimizer, images_t, levels, cfg, tracker=None, ids=None):
    """One optimizer step on the weighted hinge term over in-batch pairs.

    The batch is pushed through the backbone once; pairs are formed from the
    resulting predictions. Batches with no usable pairs (all-equal levels,
    or an exhausted budget) are skipped without touching parameters.
    Returns (loss, pairs_used).
    """
    pairs, used = _rank_pairs_for_batch(levels, cfg, tracker, ids)
    if not pairs:
        log.debug("ranking step skipped: no usable pairs")
        return 0.0, 0
    optimizer.zero_grad()
    pred = model(images_t)
    loss = cfg.lambda_ * _hinge(pred, pairs, cfg.margin)
    if not torch.isfinite(loss):
        raise TrainingDiverged("ranking loss is not finite")
    loss.backward()
    optimizer.step()
    return loss.item(), used


@dataclass
class TrainResult:
    config: TrainConfig
    model: torch.nn.Module
    state: TrainState
    history: list[dict]
    out_dir: Optional[Path] = None

    @property
    def best_val_rmse(self) -> float:
        return self.state.best_val_rmse


def evaluate_rmse(model, arrays: Arrays, batch_size: int = 64):
    """Clamped test-time predictions scored in cm and level units."""
    preds = []
    for i in range(0, len(arrays), batch_size):
        preds.append(predict(model, arrays.images[i:i + batch_size]))
    preds = np.concatenate(preds) if preds else np.zeros(0)
    return (
        rmse_metric(preds, arrays.depths),
        rmse_level_metric(preds, arrays.depths),
        preds,
    )


def _cycling_batches(n, batch_size, rng):
    """Endless stream of index batches, reshuffling after each full pass."""
    while True:
        order = rng.permutation(n)
        for i in range(0, n, batch_size):
            yield order[i:i + batch_size]


def fit(
    cfg: TrainConfig,
    strong_train: Arrays,
    strong_val: Arrays,
    weak: WeakArrays | None = None,
    out_dir: str | Path | None = None,
) -> TrainResult:
    """Train one model per the config; returns the best-validation model.

    History records one line per epoch: epoch, lr, mean train losses,
    validation RMSE in cm, and cumulative pairs consumed.
    """
    torch.set_num_threads(cfg.torch_threads)
    ranking_active = cfg.regime == "reg_rank" and cfg.lambda_ > 0 and weak is not None
    if cfg.regime == "reg_rank" and cfg.lambda_ > 0 and weak is None:
        raise ValueError("reg_rank regime with lambda > 0 needs a weak dataset")
    if ranking_active and cfg.batch_size < 2:
        raise ValueError("ranking needs batch_size >= 2 to form pairs")
    if len(strong_train) == 0 or len(strong_val) == 0:
        raise ValueError("empty training or validation set")

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        save_train_config(cfg, out_dir / "config.yaml")

    torch.manual_seed(cfg.seed)
    model = build_model(cfg.model)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)

    rng_strong = np.random.default_rng(np.random.SeedSequence(entropy=(cfg.seed, 1)))
    rng_weak = np.random.default_rng(np.random.SeedSequence(entropy=(cfg.seed, 2)))
    strong_stream = _cycling_batches(len(strong_train), cfg.batch_size, rng_strong)

    tracker = None
    if ranking_active and cfg.pair_budget is not None:
        tracker = PairBudgetTracker(PairBudget(cfg.pair_budget), distinct=cfg.budget_distinct)

    if ranking_active:
        steps_per_epoch = math.ceil(len(weak) / cfg.batch_size)
    else:
        steps_per_epoch = math.ceil(len(strong_train) / cfg.batch_size)

    state = TrainState()
    history: list[dict] = []
    history_fh = (out_dir / "history.jsonl").open("w") if out_dir else None
    best_state_dict = None

    def _diagnostic(**extra):
        diag = {"epoch": state.epoch, "step": state.step, **extra}
        if out_dir:
            (out_dir / "diagnostic.json").write_text(json.dumps(diag, indent=2))
        return diag

    try:
        for epoch in range(1, cfg.epochs + 1):
            state.epoch = epoch
            lr = lr_at_epoch(cfg, epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr

            weak_order = rng_weak.permutation(len(weak)) if ranking_active else None
            strong_order = None if ranking_active else rng_strong.permutation(len(strong_train))
            reg_losses, rank_losses = [], []

            for it in range(steps_per_epoch):
                if ranking_active:
                    strong_idx = next(strong_stream)
                else:
                    strong_idx = strong_order[it * cfg.batch_size:(it + 1) * cfg.batch_size]
                imgs = to_batch(strong_train.images[strong_idx])
                depths = torch.from_numpy(strong_train.depths[strong_idx])

                weak_imgs, weak_levels, weak_ids = None, None, None
                if ranking_active:
                    w_idx = weak_order[it * cfg.batch_size:(it + 1) * cfg.batch_size]
                    weak_imgs = to_batch(weak.images[w_idx])
                    weak_levels = weak.levels[w_idx]
                    weak_ids = [weak.ids[i] for i in w_idx] if weak.ids else list(map(str, w_idx))

                try:
                    if not ranking_active:
                        reg_losses.append(train_step_regression(model, optimizer, imgs, depths))
                    elif cfg.combined_step:
                        optimizer.zero_grad()
                        l_reg = _mse(model(imgs), depths)
                        pairs, used = _rank_pairs_for_batch(weak_levels, cfg, tracker, weak_ids)
                        if pairs:
                            l_rank = _hinge(model(weak_imgs), pairs, cfg.margin)
                            total = l_reg + cfg.lambda_ * l_rank
                            rank_losses.append(l_rank.item())
                            state.pairs_consumed += used
                        else:
                            total = l_reg
                        if not torch.isfinite(total):
                            raise TrainingDiverged("training loss is not finite")
                        total.backward()
                        optimizer.step()
                        reg_losses.append(l_reg.item())
                    else:
                        reg_losses.append(train_step_regression(model, optimizer, imgs, depths))
                        l_rank, used = train_step_ranking(
                            model, optimizer, weak_imgs, weak_levels, cfg, tracker, weak_ids
                        )
                        if used:
                            rank_losses.append(l_rank / cfg.lambda_)
                            state.pairs_consumed += used
                except TrainingDiverged as exc:
                    raise TrainingDiverged(
                        str(exc), _diagnostic(lr=lr, pairs_consumed=state.pairs_consumed)
                    ) from exc
                state.step += 1

            val_rmse_cm, _, _ = evaluate_rmse(model, strong_val)
            row = {
                "epoch": epoch,
                "lr": lr,
                "train_reg_loss": float(np.mean(reg_losses)) if reg_losses else None,
                "train_rank_loss": float(np.mean(rank_losses)) if rank_losses else None,
                "val_rmse_cm": val_rmse_cm,
                "pairs_consumed": state.pairs_consumed,
            }
            history.append(row)
            if history_fh:
                history_fh.write(json.dumps(row) + "\n")
                history_fh.flush()

            if val_rmse_cm < state.best_val_rmse:
                state.best_val_rmse = val_rmse_cm
                state.best_epoch = epoch
                best_state_dict = {k: v.detach().clone() for k, v in model.state_dict().items()}
                if out_dir:
                    meta = {
                        "epoch": epoch,
                        "seed": cfg.seed,
                        "lambda": cfg.lambda_,
                        "regime": cfg.regime,
                        "val_rmse_cm": val_rmse_cm,
                    }
                    state.checkpoint_path = str(
                        save_checkpoint(out_dir / "checkpoint.pt", model, cfg.model, meta)
                    )
    finally:
        if history_fh:
            history_fh.close()

    if best_state_dict is not None:
        model.load_state_dict(best_state_dict)
    return TrainResult(config=cfg, model=model, state=state, history=history, out_dir=out_dir)


def run_training(
    cfg: TrainConfig,
    strong_train: DatasetManifest,
    strong_val: DatasetManifest,
    weak: DatasetManifest | None = None,
    data_root: str | Path = ".",
    out_dir: str | Path | None = None,
) -> TrainResult:
    """Manifest-level wrapper around :func:`fit`."""
    size = cfg.model.input_size
    strong_train_a = load_arrays(strong_train, data_root, size)
    strong_val_a = load_arrays(strong_val, data_root, size)
    weak_a = None
    if weak is not None and cfg.regime == "reg_rank":
        weak_a = load_arrays(weak, data_root, size)
        if not isinstance(weak_a, WeakArrays):
            raise ValueError("the ranking dataset must be a weak manifest")
    return fit(cfg, strong_train_a, strong_val_a, weak_a, out_dir=out_dir)


def run_cross_validation(
    cfg: TrainConfig,
    strong: DatasetManifest,
    weak: DatasetManifest | None = None,
    k: int = 6,
    split_seed: int = 0,
    data_root: str | Path = ".",
    out_dir: str | Path | None = None,
):
    """Stratified k-fold evaluation of one training regime.

    Trains one model per fold (4 parts train, 1 val, 1 test for the default
    k=6) and aggregates test RMSEs into an experiment report. For the
    fully supervised upper-bound regime the weak set joins each fold's
    training part with absolute labels.
    """
    from .evaluation import aggregate_folds, make_fold_report
    from .manifest import with_absolute_labels
    from .splits import stratified_folds

    size = cfg.model.input_size
    strong_arrays = load_arrays(strong, data_root, size)
    index_of = {sid: i for i, sid in enumerate(strong_arrays.ids)}

    weak_arrays = None
    weak_abs_arrays = None
    if weak is not None and cfg.regime == "reg_rank":
        weak_arrays = load_arrays(weak, data_root, size)
    if weak is not None and cfg.regime == "regression_pp":
        weak_abs_arrays = load_arrays(with_absolute_labels(weak), data_root, size)

    def subset(ids):
        idx = [index_of[sid] for sid in ids]
        return Arrays(images=strong_arrays.images[idx],
                      depths=strong_arrays.depths[idx],
                      ids=[strong_arrays.ids[i] for i in idx])

    reports = []
    for fold in stratified_folds(strong, k=k, seed=split_seed):
        train = subset(fold.train_ids)
        if weak_abs_arrays is not None:
            train = Arrays(
                images=np.concatenate([train.images, weak_abs_arrays.images]),
                depths=np.concatenate([train.depths, weak_abs_arrays.depths]),
                ids=train.ids + weak_abs_arrays.ids,
            )
        fold_dir = Path(out_dir) / f"fold{fold.fold_id}" if out_dir else None
        result = fit(cfg, train, subset(fold.val_ids), weak_arrays, out_dir=fold_dir)
        test = subset(fold.test_ids)
        _, _, preds = evaluate_rmse(result.model, test)
        reports.append(make_fold_report(fold.fold_id, preds, test.depths))
        log.info("fold %d: test RMSE %.3f cm", fold.fold_id, reports[-1].rmse_cm)

    report = aggregate_folds(reports, regime=cfg.regime)
    if out_dir:
        report.save(Path(out_dir) / "cv_report.json")
    return report


@dataclass
class SweepResult:
    table: dict[float, float]  # lambda -> best validation RMSE (cm)
    selected: float

    def to_json(self):
        return {"table": {str(k): v for k, v in self.table.items()}, "selected": self.selected}


def lambda_sweep(
    cfg: TrainConfig,
    grid,
    strong_train: Arrays,
    strong_val: Arrays,
    weak: WeakArrays,
    out_dir: str | Path | None = None,
) -> SweepResult:
    """Train one model per lambda (shared seed) and pick the best-val one."""
    grid = list(grid)
    if not grid:
        raise ValueError("lambda grid must not be empty")
    table = {}
    for lam in grid:
        run_cfg = replace(cfg, lambda_=float(lam), regime="reg_rank")
        sub_dir = Path(out_dir) / f"lambda_{lam:g}" if out_dir else None
        result = fit(run_cfg, strong_train, strong_val, weak, out_dir=sub_dir)
        table[float(lam)] = result.best_val_rmse
        log.info("lambda sweep: lambda=%g -> val RMSE %.3f cm", lam, result.best_val_rmse)
    selected = min(table, key=lambda k: (table[k], k))
    sweep = SweepResult(table=table, selected=selected)
    if out_dir:
        Path(out_dir, "lambda_sweep.json").write_text(json.dumps(sweep.to_json(), indent=2))
    return sweep


def pair_ablation(
    cfg: TrainConfig,
    budgets,
    strong_train: Arrays,
    strong_val: Arrays,
    weak: WeakArrays,
    test: Arrays,
    seeds,
    out_dir: str | Path | None = None,
) -> dict:
    """Test RMSE per pair budget, averaged over paired seeds.

    ``budgets`` must be sorted ascending; a budget of 0 disables ranking and
    reduces to the plain regression regime.
    """
    budgets = list(budgets)
    if budgets != sorted(budgets):
        raise ValueError("budgets must be sorted ascending")
    table = {}
    for budget in budgets:
        per_seed = []
        for seed in seeds:
            if budget == 0:
                run_cfg = replace(cfg, regime="regression", pair_budget=None, seed=seed)
                result = fit(run_cfg, strong_train, strong_val, None)
            else:
                run_cfg = replace(cfg, regime="reg_rank", pair_budget=int(budget), seed=seed)
                result = fit(run_cfg, strong_train, strong_val, weak)
            test_rmse, _, _ = evaluate_rmse(result.model, test)
            per_seed.append(test_rmse)
            log.info("pair ablation: budget=%s seed=%d -> test RMSE %.3f cm",
                     budget, seed, test_rmse)
        arr = np.asarray(per_seed)
        table[int(budget)] = {
            "avg_rmse_cm": float(arr.mean()),
            "std_cm": float(arr.std(ddof=1)) if len(arr) > 1 else 0.0,
            "per_seed": [float(v) for v in arr],
        }
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        Path(out_dir, "pair_ablation.json").write_text(json.dumps(table, indent=2))
    return table
