import json
import math

import numpy as np
import pytest
import torch

from floodlevel.model import ModelConfig, build_model, to_batch
from floodlevel.trainer import (
    Arrays,
    TrainConfig,
    TrainingDiverged,
    WeakArrays,
    evaluate_rmse,
    fit,
    load_arrays,
    load_train_config,
    lr_at_epoch,
    run_training,
    save_train_config,
    train_step_ranking,
    train_step_regression,
)

TINY_MODEL = ModelConfig(backbone="tiny_conv", input_size=(12, 12, 3), tiny_channels=(4, 8))
LINEAR_MODEL = ModelConfig(backbone="mlp_on_features", input_size=(4, 4, 3))


def random_arrays(rng, n, size=12, depth_scale=170.0):
    images = rng.random((n, size, size, 3)).astype(np.float32)
    depths = (rng.random(n) * depth_scale).astype(np.float32)
    return Arrays(images=images, depths=depths, ids=[f"s{i}" for i in range(n)])


def random_weak(rng, n, size=12):
    images = rng.random((n, size, size, 3)).astype(np.float32)
    levels = rng.integers(0, 11, n)
    return WeakArrays(images=images, levels=levels, ids=[f"w{i}" for i in range(n)])


def small_cfg(**kw):
    base = dict(
        regime="regression",
        epochs=2,
        lr=1e-3,
        lr_decay_epochs=(),
        batch_size=5,
        lambda_=0.0,
        seed=0,
        model=TINY_MODEL,
    )
    base.update(kw)
    return TrainConfig(**base)


def test_lr_schedule_formula():
    cfg = TrainConfig(epochs=200, lr=1e-3, lr_decay_epochs=(150, 180), model=TINY_MODEL)
    for epoch in range(1, 201):
        n = sum(1 for d in (150, 180) if d <= epoch)
        assert lr_at_epoch(cfg, epoch) == pytest.approx(1e-3 * 0.1 ** n, rel=1e-12)
    assert lr_at_epoch(cfg, 149) == pytest.approx(1e-3)
    assert lr_at_epoch(cfg, 150) == pytest.approx(1e-4)
    assert lr_at_epoch(cfg, 180) == pytest.approx(1e-5)


def test_history_records_lr_sequence():
    rng = np.random.default_rng(0)
    cfg = small_cfg(epochs=4, lr_decay_epochs=(2, 3))
    result = fit(cfg, random_arrays(rng, 10), random_arrays(rng, 5))
    assert [row["lr"] for row in result.history] == pytest.approx(
        [1e-3, 1e-4, 1e-5, 1e-5]
    )


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(regime="nope", model=TINY_MODEL)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0, model=TINY_MODEL)
    with pytest.raises(ValueError):
        TrainConfig(lambda_=-1.0, model=TINY_MODEL)


def test_config_yaml_roundtrip(tmp_path):
    cfg = small_cfg(regime="reg_rank", lambda_=5.0, pair_budget=1000)
    path = save_train_config(cfg, tmp_path / "cfg.yaml")
    assert load_train_config(path) == cfg


def test_perfect_model_step_leaves_parameters_alone():
    torch.manual_seed(0)
    model = build_model(TINY_MODEL)
    with torch.no_grad():
        model.head.weight.zero_()
        model.head.bias.fill_(7.0)
    optimizer = torch.optim.Adam(model.parameters(), lr=1e-3)
    imgs = to_batch(np.random.default_rng(1).random((5, 12, 12, 3)).astype(np.float32))
    depths = torch.full((5,), 7.0)
    before = [p.detach().clone() for p in model.parameters()]
    loss = train_step_regression(model, optimizer, imgs, depths)
    assert loss == 0.0
    for prev, now in zip(before, model.parameters()):
        assert torch.equal(prev, now)


def test_regression_step_descends_on_convex_case():
    # descent oracle: re-evaluate the same batch after one step
    torch.manual_seed(1)
    model = build_model(LINEAR_MODEL)
    optimizer = torch.optim.Adam(model.parameters(), lr=1e-2)
    rng = np.random.default_rng(2)
    imgs = to_batch(rng.random((8, 4, 4, 3)).astype(np.float32))
    depths = torch.from_numpy(rng.random(8).astype(np.float32) * 10)
    before = ((model(imgs) - depths) ** 2).mean().item()
    train_step_regression(model, optimizer, imgs, depths)
    after = ((model(imgs) - depths) ** 2).mean().item()
    assert after < before


def test_ranking_step_counts_pairs_and_is_noop_when_ordered():
    # constant-brightness images through a positive linear head give
    # predictions ordered exactly like the levels
    cfg = small_cfg(regime="reg_rank", lambda_=5.0, model=LINEAR_MODEL)
    torch.manual_seed(0)
    model = build_model(LINEAR_MODEL)
    with torch.no_grad():
        model.head.weight.fill_(1.0)
        model.head.bias.zero_()
    optimizer = torch.optim.Adam(model.parameters(), lr=1e-3)
    levels = np.array([1, 3, 5, 7, 9])
    images = np.stack([np.full((4, 4, 3), lv / 10, dtype=np.float32) for lv in levels])
    before = [p.detach().clone() for p in model.parameters()]
    loss, used = train_step_ranking(model, optimizer, to_batch(images), levels, cfg)
    assert used == 10  # 5 distinct levels -> all n(n-1)/2 pairs
    assert loss == 0.0
    for prev, now in zip(before, model.parameters()):
        assert torch.equal(prev, now)


def test_ranking_step_skips_all_equal_batch():
    cfg = small_cfg(regime="reg_rank", lambda_=5.0, model=LINEAR_MODEL)
    torch.manual_seed(0)
    model = build_model(LINEAR_MODEL)
    optimizer = torch.optim.Adam(model.parameters(), lr=1e-3)
    levels = np.array([4, 4, 4, 4, 4])
    images = np.random.default_rng(3).random((5, 4, 4, 3)).astype(np.float32)
    before = [p.detach().clone() for p in model.parameters()]
    loss, used = train_step_ranking(model, optimizer, to_batch(images), levels, cfg)
    assert (loss, used) == (0.0, 0)
    for prev, now in zip(before, model.parameters()):
        assert torch.equal(prev, now)


def test_one_misordered_pair_costs_violation_over_ten():
    # predictions tied to levels except one flipped pair; mean reduction
    cfg = small_cfg(regime="reg_rank", lambda_=1.0, model=LINEAR_MODEL)
    levels = np.array([1, 2, 3, 4, 5])
    values = np.array([0.1, 0.2, 0.3, 0.5, 0.4])  # last two flipped
    images = np.stack([np.full((4, 4, 3), v, dtype=np.float32) for v in values])
    torch.manual_seed(0)
    model = build_model(LINEAR_MODEL)
    with torch.no_grad():
        model.head.weight.fill_(1.0 / 48)
        model.head.bias.zero_()
    preds = model(to_batch(images)).detach().numpy()
    violation = preds[3] - preds[4]  # pair (3,4) predicted backwards
    optimizer = torch.optim.Adam(model.parameters(), lr=0.0)
    loss, used = train_step_ranking(model, optimizer, to_batch(images), levels, cfg)
    assert used == 10
    assert loss == pytest.approx(violation / 10, rel=1e-5)


def test_lambda_zero_reg_rank_identical_to_regression():
    rng = np.random.default_rng(4)
    strong_train = random_arrays(rng, 12)
    strong_val = random_arrays(rng, 6)
    weak = random_weak(rng, 20)
    base = dict(epochs=3, batch_size=4, seed=11, model=TINY_MODEL, lr=1e-3)
    res_reg = fit(TrainConfig(regime="regression", lambda_=0.0, **base),
                  strong_train, strong_val)
    res_rr = fit(TrainConfig(regime="reg_rank", lambda_=0.0, **base),
                 strong_train, strong_val, weak)
    assert res_reg.history == res_rr.history
    for a, b in zip(res_reg.model.parameters(), res_rr.model.parameters()):
        assert torch.equal(a, b)


def test_reproducible_histories():
    rng = np.random.default_rng(5)
    strong_train = random_arrays(rng, 12)
    strong_val = random_arrays(rng, 6)
    weak = random_weak(rng, 15)
    cfg = small_cfg(regime="reg_rank", lambda_=2.0, epochs=3, batch_size=4)
    h1 = fit(cfg, strong_train, strong_val, weak).history
    h2 = fit(cfg, strong_train, strong_val, weak).history
    assert h1 == h2


def test_budget_exhaustion_stops_pair_consumption():
    rng = np.random.default_rng(6)
    strong_train = random_arrays(rng, 10)
    strong_val = random_arrays(rng, 5)
    weak = random_weak(rng, 20)
    cfg = small_cfg(regime="reg_rank", lambda_=2.0, epochs=3, batch_size=5, pair_budget=12)
    result = fit(cfg, strong_train, strong_val, weak)
    assert result.state.pairs_consumed <= 12
    consumed = [row["pairs_consumed"] for row in result.history]
    assert consumed == sorted(consumed)
    assert consumed[-1] <= 12


def test_reg_rank_needs_weak_data():
    rng = np.random.default_rng(7)
    with pytest.raises(ValueError):
        fit(small_cfg(regime="reg_rank", lambda_=5.0),
            random_arrays(rng, 8), random_arrays(rng, 4), None)


def test_nan_inputs_abort_with_diagnostic(tmp_path):
    rng = np.random.default_rng(8)
    strong_train = random_arrays(rng, 8)
    strong_train.images[0, 0, 0, 0] = np.nan
    with pytest.raises(TrainingDiverged):
        fit(small_cfg(epochs=1, batch_size=8), strong_train, random_arrays(rng, 4),
            out_dir=tmp_path)
    assert (tmp_path / "diagnostic.json").exists()


def test_convex_surrogate_reaches_least_squares():
    # linear model on standardized synthetic features: training must approach
    # the closed-form least-squares optimum
    rng = np.random.default_rng(9)
    n, d = 240, 2 * 2 * 3
    images = rng.normal(0, 1, (n, 2, 2, 3)).astype(np.float32)
    x = images.reshape(n, d).astype(np.float64)
    w_true = rng.uniform(0.5, 2, d)
    y = (x @ w_true + 20.0 + rng.normal(0, 0.02, n)).astype(np.float32)

    design = np.concatenate([x, np.ones((n, 1))], axis=1)
    coef, *_ = np.linalg.lstsq(design, y.astype(np.float64), rcond=None)
    lstsq_mse = float(np.mean((design @ coef - y) ** 2))

    arrays = Arrays(images=images, depths=np.clip(y, 0, 170))
    cfg = TrainConfig(
        regime="regression",
        epochs=400,
        lr=0.3,
        lr_decay_epochs=(150, 250, 320, 380),
        batch_size=60,
        lambda_=0.0,
        seed=3,
        model=ModelConfig(backbone="mlp_on_features", input_size=(2, 2, 3)),
    )
    result = fit(cfg, arrays, arrays)
    model_mse = float(np.mean((result.model(to_batch(images)).detach().numpy() - y) ** 2))
    assert abs(model_mse - lstsq_mse) < 1e-3


def test_alternating_step_mode_trains():
    # two consecutive optimizer steps per iteration instead of one combined
    rng = np.random.default_rng(14)
    strong_train = random_arrays(rng, 12)
    strong_val = random_arrays(rng, 6)
    weak = random_weak(rng, 15)
    combined = fit(small_cfg(regime="reg_rank", lambda_=2.0, epochs=2, batch_size=5),
                   strong_train, strong_val, weak)
    alternating = fit(
        small_cfg(regime="reg_rank", lambda_=2.0, epochs=2, batch_size=5,
                  combined_step=False),
        strong_train, strong_val, weak,
    )
    assert all(np.isfinite(row["val_rmse_cm"]) for row in alternating.history)
    assert alternating.state.pairs_consumed == combined.state.pairs_consumed
    # the parameter trajectories genuinely differ between the two modes
    assert alternating.history != combined.history


def test_torch_losses_match_reference_definitions():
    # the autograd expressions used in training must equal the reference
    # numpy losses on random batches
    from floodlevel.losses import ranking_loss, regression_loss
    from floodlevel.pairing import RankPair
    from floodlevel.trainer import _hinge, _mse

    rng = np.random.default_rng(12)
    for _ in range(50):
        n = int(rng.integers(1, 9))
        pred = rng.uniform(-100, 100, n)
        target = rng.uniform(0, 170, n)
        torch_mse = _mse(torch.from_numpy(pred), torch.from_numpy(target)).item()
        assert torch_mse == pytest.approx(regression_loss(pred, target), rel=1e-9)

        m = int(rng.integers(1, 9))
        vals = rng.uniform(-50, 50, max(2 * m, 2))
        pairs = []
        signs = []
        for j in range(m):
            sign = int(rng.choice([-1, 1]))
            pairs.append(RankPair(2 * j % len(vals), (2 * j + 1) % len(vals), sign))
            signs.append(sign)
        torch_hinge = _hinge(torch.from_numpy(vals), pairs, margin=0.0).item()
        ref = ranking_loss(
            [vals[p.index_a] for p in pairs],
            [vals[p.index_b] for p in pairs],
            signs,
        )
        assert torch_hinge == pytest.approx(ref, rel=1e-9, abs=1e-12)


def test_pair_ablation_budget_zero_is_regression(tmp_path):
    from floodlevel.trainer import pair_ablation

    rng = np.random.default_rng(13)
    strong_train = random_arrays(rng, 10)
    strong_val = random_arrays(rng, 5)
    weak = random_weak(rng, 12)
    test = random_arrays(rng, 6)
    cfg = small_cfg(regime="reg_rank", lambda_=2.0, epochs=2, batch_size=5)
    table = pair_ablation(cfg, [0, 50], strong_train, strong_val, weak, test,
                          seeds=[0, 1], out_dir=tmp_path)
    assert set(table) == {0, 50}
    assert (tmp_path / "pair_ablation.json").exists()
    # budget 0 falls back to the regression regime: identical to an explicit
    # regression run under the same seed
    reg = fit(small_cfg(regime="regression", epochs=2, batch_size=5, seed=0),
              strong_train, strong_val)
    reg_rmse, _, _ = evaluate_rmse(reg.model, test)
    assert table[0]["per_seed"][0] == pytest.approx(reg_rmse, abs=1e-9)
    with pytest.raises(ValueError):
        pair_ablation(cfg, [50, 0], strong_train, strong_val, weak, test, seeds=[0])


def test_load_arrays_rejects_unlabeled_records(tmp_path):
    from PIL import Image as PilImage

    from floodlevel.manifest import DatasetManifest, SampleRecord

    PilImage.new("RGB", (8, 8)).save(tmp_path / "x.png")
    man = DatasetManifest(
        name="m",
        records=[SampleRecord(id="a", image_uri="x.png", level=3)],
        label_kind="strong",
    )
    with pytest.raises(ValueError, match="depth_cm"):
        load_arrays(man, tmp_path, (8, 8, 3))


def test_run_cross_validation(tmp_path):
    from floodlevel.synthetic import generate_synthetic
    from floodlevel.trainer import run_cross_validation

    strong, _ = generate_synthetic(36, tmp_path, image_size=24, seed=0, id_prefix="s")
    weak, _ = generate_synthetic(20, tmp_path, image_size=24, seed=1, id_prefix="w",
                                 label_kind="weak")
    cfg = small_cfg(
        regime="reg_rank", lambda_=2.0, epochs=2, batch_size=5,
        model=ModelConfig(backbone="tiny_conv", input_size=(24, 24, 3), tiny_channels=(4, 8)),
    )
    report = run_cross_validation(cfg, strong, weak, k=6, split_seed=1,
                                  data_root=tmp_path, out_dir=tmp_path / "cv")
    assert len(report.folds) == 6
    assert report.avg_rmse_cm == pytest.approx(
        np.mean([f.rmse_cm for f in report.folds]), abs=1e-9
    )
    assert (tmp_path / "cv" / "cv_report.json").exists()
    assert (tmp_path / "cv" / "fold3" / "history.jsonl").exists()
    # every fold tests a disjoint sixth of the data
    tested = [pred for f in report.folds for preds in f.per_level_predictions.values()
              for pred in preds]
    assert len(tested) == 36


def test_run_training_from_manifests(tmp_path):
    from floodlevel.synthetic import generate_synthetic

    strong, _ = generate_synthetic(20, tmp_path, image_size=24, seed=0, id_prefix="s")
    weak, _ = generate_synthetic(25, tmp_path, image_size=24, seed=1, id_prefix="w",
                                 label_kind="weak")
    val, _ = generate_synthetic(8, tmp_path, image_size=24, seed=2, id_prefix="v")
    cfg = small_cfg(
        regime="reg_rank",
        lambda_=5.0,
        epochs=2,
        model=ModelConfig(backbone="tiny_conv", input_size=(24, 24, 3), tiny_channels=(4, 8)),
    )
    result = run_training(cfg, strong, val, weak, data_root=tmp_path,
                          out_dir=tmp_path / "run")
    assert (tmp_path / "run" / "history.jsonl").exists()
    assert (tmp_path / "run" / "checkpoint.pt").exists()
    assert (tmp_path / "run" / "config.yaml").exists()
    lines = [json.loads(l) for l in (tmp_path / "run" / "history.jsonl").read_text().splitlines()]
    assert len(lines) == 2
    assert set(lines[0]) == {
        "epoch", "lr", "train_reg_loss", "train_rank_loss", "val_rmse_cm", "pairs_consumed"
    }
    val_arrays = load_arrays(val, tmp_path, (24, 24, 3))
    rmse_cm, rmse_lv, preds = evaluate_rmse(result.model, val_arrays)
    assert math.isfinite(rmse_cm) and math.isfinite(rmse_lv)
    assert len(preds) == 8
