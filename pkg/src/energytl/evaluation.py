"""Metrics, seed aggregation, improvement percentages and result tables.

Metrics are computed on the standardized scale. Reports round
half-away-from-zero: three decimals for MAE/MSE, one decimal for
improvement percentages. ``improvement_pct(base, new)`` is
``100 * (base - new) / base`` so positive values mean the new model is
better.
"""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


def mae(pred, actual):
    """Mean absolute error over two equal-length sequences."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    actual = np.asarray(actual, dtype=np.float64).reshape(-1)
    if pred.size == 0:
        raise ContractError("mae of empty sequences")
    if pred.shape != actual.shape:
        raise ContractError(f"mae length mismatch: {pred.shape} vs {actual.shape}")
    return float(np.abs(pred - actual).mean())


def mse(pred, actual):
    """Mean squared error over two equal-length sequences."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    actual = np.asarray(actual, dtype=np.float64).reshape(-1)
    if pred.size == 0:
        raise ContractError("mse of empty sequences")
    if pred.shape != actual.shape:
        raise ContractError(f"mse length mismatch: {pred.shape} vs {actual.shape}")
    diff = pred - actual
    return float((diff * diff).mean())


def improvement_pct(base, new):
    """Percentage improvement of ``new`` over ``base`` (positive = better)."""
    if base <= 0:
        raise ContractError(f"improvement baseline must be positive, got {base}")
    return 100.0 * (base - new) / base


def round_half_away(x, decimals):
    """Round half away from zero (0.5 -> 1, -0.5 -> -1)."""
    scale = 10.0 ** decimals
    return math.copysign(math.floor(abs(x) * scale + 0.5), x) / scale


@dataclass(frozen=True)
class MetricSet:
    """MAE/MSE of one evaluation; Jensen: mae^2 <= mse always holds."""

    mae: float
    mse: float
    horizon: int
    n_predictions: int

    def __post_init__(self):
        if self.mae < 0 or self.mse < 0:
            raise ContractError(f"metrics must be nonnegative: mae={self.mae}, mse={self.mse}")
        if self.mae ** 2 > self.mse * (1.0 + 1e-9) + 1e-12:
            raise ContractError(f"mae^2 = {self.mae ** 2} exceeds mse = {self.mse}")


def seed_mean(metric_sets):
    """Arithmetic mean of per-seed metrics (same horizon required)."""
    sets = list(metric_sets)
    if not sets:
        raise ContractError("cannot average zero metric sets")
    horizons = {m.horizon for m in sets}
    if len(horizons) != 1:
        raise ContractError(f"cannot average across horizons {sorted(horizons)}")
    return MetricSet(
        mae=float(np.mean([m.mae for m in sets])),
        mse=float(np.mean([m.mse for m in sets])),
        horizon=sets[0].horizon,
        n_predictions=int(sum(m.n_predictions for m in sets)),
    )


@dataclass
class EvaluationReport:
    """Per-seed and seed-averaged results of one experiment plan."""

    plan_id: str
    strategy: str
    target: str
    horizon: int
    per_seed: dict  # seed -> MetricSet
    mean: MetricSet = None
    baseline_id: str = None
    improvement: dict = None  # {"mae": pct, "mse": pct} vs the baseline
    non_paper: bool = False
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mean is None:
            self.mean = seed_mean(self.per_seed.values())

    def with_baseline(self, baseline):
        """Attach improvement percentages relative to a baseline report."""
        self.baseline_id = baseline.plan_id
        self.improvement = {
            "mae": improvement_pct(baseline.mean.mae, self.mean.mae),
            "mse": improvement_pct(baseline.mean.mse, self.mean.mse),
        }
        return self

    def to_dict(self):
        payload = {
            "plan": self.plan_id,
            "strategy": self.strategy,
            "target": self.target,
            "horizon": self.horizon,
            "per_seed": {
                str(seed): {"mae": m.mae, "mse": m.mse, "n_predictions": m.n_predictions}
                for seed, m in self.per_seed.items()
            },
            "mean": {"mae": self.mean.mae, "mse": self.mean.mse},
            "non_paper": self.non_paper,
        }
        if self.baseline_id is not None:
            payload["baseline"] = self.baseline_id
            payload["improvement"] = self.improvement
        if self.extra:
            payload["extra"] = self.extra
        return payload


def _fmt_metric(x):
    return f"{round_half_away(x, 3):.3f}"


def _fmt_pct(x):
    return f"{round_half_away(x, 1):+.1f}%"


def render_zero_shot_matrix(cells, models, targets, baseline_pairs=()):
    """Plain-text matrix of MAE values: rows = trained models, columns =
    test datasets.

    ``cells`` maps (model, target) -> mae. Missing cells render as an em
    dash and are reported in the returned warnings list. Baseline cells
    (train == test) are marked with ``*``.
    """
    baseline_pairs = set(baseline_pairs) | {(m, m) for m in models if m in targets}
    warnings = []
    header = ["model \\ target"] + list(targets)
    rows = [header]
    for model in models:
        row = [model]
        for target in targets:
            value = cells.get((model, target))
            if value is None:
                row.append("—")
                warnings.append(f"missing cell ({model}, {target})")
            else:
                mark = "*" if (model, target) in baseline_pairs else ""
                row.append(_fmt_metric(value) + mark)
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = []
    for r in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(r)).rstrip())
    lines.append("")
    lines.append("* baseline cell: train and test share the dataset")
    return "\n".join(lines) + "\n", warnings


def render_strategy_summary(rows):
    """Base/strategy/improvement table as aligned plain text.

    Each row: {target, horizon, base_mae, mae, base_mse, mse, strategy,
    non_paper}. Improvement percentages are recomputed from the
    unrounded values.
    """
    header = ["Target", "Hor", "Base MAE", "MAE", "Imp (%)", "Base MSE", "MSE", "Imp (%)", "Strategy"]
    table = [header]
    for row in rows:
        imp_mae = improvement_pct(row["base_mae"], row["mae"])
        imp_mse = improvement_pct(row["base_mse"], row["mse"])
        tag = row["strategy"] + (" (non-paper)" if row.get("non_paper") else "")
        table.append(
            [
                row["target"],
                f"{row['horizon']}h",
                _fmt_metric(row["base_mae"]),
                _fmt_metric(row["mae"]),
                _fmt_pct(imp_mae),
                _fmt_metric(row["base_mse"]),
                _fmt_metric(row["mse"]),
                _fmt_pct(imp_mse),
                tag,
            ]
        )
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    lines = []
    for r in table:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(r)).rstrip())
    return "\n".join(lines) + "\n"


def matrix_csv(cells, models, targets):
    """CSV twin of the zero-shot matrix; empty string for missing cells."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["model"] + list(targets))
    for model in models:
        row = [model]
        for target in targets:
            value = cells.get((model, target))
            row.append("" if value is None else repr(float(value)))
        writer.writerow(row)
    return buf.getvalue()


def summary_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        ["target", "horizon", "base_mae", "mae", "imp_mae_pct", "base_mse", "mse", "imp_mse_pct", "strategy", "non_paper"]
    )
    for row in rows:
        writer.writerow(
            [
                row["target"],
                row["horizon"],
                repr(float(row["base_mae"])),
                repr(float(row["mae"])),
                repr(improvement_pct(row["base_mae"], row["mae"])),
                repr(float(row["base_mse"])),
                repr(float(row["mse"])),
                repr(improvement_pct(row["base_mse"], row["mse"])),
                row["strategy"],
                int(bool(row.get("non_paper"))),
            ]
        )
    return buf.getvalue()
