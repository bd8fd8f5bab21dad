"""Metrics and cross-validation reporting.

RMSE is reported both in centimeters and in (fractional) level units; fold
results aggregate to an average and a spread. The spread uses the *sample*
standard deviation (ddof=1), and every report echoes that convention.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .levels import cm_to_level

STD_CONVENTION = "sample (ddof=1)"


def rmse(predictions, truths) -> float:
    """Root mean square error over paired predictions and ground truths."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("rmse of an empty set is undefined")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def rmse_level(predictions_cm, truths_cm, discretize: bool = False) -> float:
    """RMSE in level units: convert both sides from cm, then apply rmse.

    The continuous inverse mapping is the default; ``discretize`` rounds to
    integer levels first for the coarser variant.
    """
    conv = lambda xs: [cm_to_level(x) for x in np.asarray(xs, dtype=np.float64)]
    p, t = conv(predictions_cm), conv(truths_cm)
    if discretize:
        p, t = [round(v) for v in p], [round(v) for v in t]
    return rmse(p, t)


@dataclass
class FoldReport:
    fold_id: int
    rmse_cm: float
    rmse_level: float
    per_level_predictions: dict[int, list[float]] = field(default_factory=dict)

    def __post_init__(self):
        for v in (self.rmse_cm, self.rmse_level):
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"fold {self.fold_id}: invalid rmse {v}")

    def to_json(self) -> dict:
        return {
            "fold_id": self.fold_id,
            "rmse_cm": self.rmse_cm,
            "rmse_level": self.rmse_level,
            "per_level_predictions": {str(k): v for k, v in self.per_level_predictions.items()},
        }


@dataclass
class ExperimentReport:
    regime: str
    avg_rmse_cm: float
    std_cm: float
    avg_rmse_level: float
    std_level: float
    folds: list[FoldReport]
    std_convention: str = STD_CONVENTION

    def to_json(self) -> dict:
        return {
            "regime": self.regime,
            "avg_rmse_cm": self.avg_rmse_cm,
            "std_cm": self.std_cm,
            "avg_rmse_level": self.avg_rmse_level,
            "std_level": self.std_level,
            "std_convention": self.std_convention,
            "folds": [f.to_json() for f in self.folds],
        }

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=2))
        return path


def aggregate_folds(reports: list[FoldReport], regime: str = "") -> ExperimentReport:
    """Mean and sample standard deviation across folds, in both units."""
    if len(reports) < 2:
        raise ValueError("need at least 2 folds for a standard deviation")
    cm = np.array([r.rmse_cm for r in reports])
    lv = np.array([r.rmse_level for r in reports])
    return ExperimentReport(
        regime=regime,
        avg_rmse_cm=float(cm.mean()),
        std_cm=float(cm.std(ddof=1)),
        avg_rmse_level=float(lv.mean()),
        std_level=float(lv.std(ddof=1)),
        folds=list(reports),
    )


def make_fold_report(fold_id, predictions_cm, truths_cm, levels=None) -> FoldReport:
    """Bundle one fold's test predictions into a report.

    ``levels`` gives each sample's true discrete level for the per-level
    prediction distribution; derived from truths when omitted.
    """
    preds = np.asarray(predictions_cm, dtype=np.float64)
    truths = np.asarray(truths_cm, dtype=np.float64)
    if levels is None:
        levels = [round(cm_to_level(t)) for t in truths]
    per_level: dict[int, list[float]] = {}
    for lv, p in zip(levels, preds):
        per_level.setdefault(int(lv), []).append(float(p))
    return FoldReport(
        fold_id=fold_id,
        rmse_cm=rmse(preds, truths),
        rmse_level=rmse_level(preds, truths),
        per_level_predictions=per_level,
    )


def _box_stats(values: list[float]) -> dict:
    v = np.sort(np.asarray(values, dtype=np.float64))
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    lo = float(v[v >= q1 - 1.5 * iqr][0])
    hi = float(v[v <= q3 + 1.5 * iqr][-1])
    return {
        "count": int(v.size),
        "median": float(med),
        "q1": float(q1),
        "q3": float(q3),
        "whisker_low": lo,
        "whisker_high": hi,
        "single_point": v.size == 1,
    }


def export_prediction_distribution(report: FoldReport, out_dir: str | Path) -> dict:
    """Per-level prediction spread as JSON plus a rendered box plot.

    Also runs a bias diagnostic matching the known failure mode: low levels
    tending high and high levels tending low. The flags are informational,
    not a failure.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .levels import level_to_cm

    if not report.per_level_predictions:
        raise ValueError("fold report has no per-level predictions")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    levels = sorted(report.per_level_predictions)
    stats = {lv: _box_stats(report.per_level_predictions[lv]) for lv in levels}

    low = [lv for lv in levels if lv <= 3]
    high = [lv for lv in levels if lv >= 7]
    med_resid = {lv: stats[lv]["median"] - level_to_cm(lv) for lv in levels}
    bias = {
        "low_levels_overestimated": bool(low) and all(med_resid[lv] >= 0 for lv in low),
        "high_levels_underestimated": bool(high) and all(med_resid[lv] <= 0 for lv in high),
    }

    payload = {
        "fold_id": report.fold_id,
        "total_predictions": sum(s["count"] for s in stats.values()),
        "per_level": {str(lv): stats[lv] for lv in levels},
        "bias_diagnostic": bias,
    }
    json_path = out_dir / f"fold{report.fold_id}_distribution.json"
    json_path.write_text(json.dumps(payload, indent=2))

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.boxplot(
        [report.per_level_predictions[lv] for lv in levels],
        positions=levels,
        widths=0.6,
    )
    ax.plot(levels, [level_to_cm(lv) for lv in levels], "r--", lw=1, label="true anchor")
    ax.set_xlabel("true water level")
    ax.set_ylabel("predicted depth [cm]")
    ax.set_title(f"fold {report.fold_id} prediction distribution")
    ax.legend()
    fig.tight_layout()
    plot_path = out_dir / f"fold{report.fold_id}_distribution.png"
    fig.savefig(plot_path, dpi=110)
    plt.close(fig)

    payload["json_path"] = str(json_path)
    payload["plot_path"] = str(plot_path)
    return payload
