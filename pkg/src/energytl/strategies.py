"""The eight data-centric transfer-learning strategies, end to end.

Strategy semantics (S = source datasets, T = target dataset):

=====  ==================  =========  ====================
id     pretraining corpus  fine-tune  notes
=====  ==================  =========  ====================
S1     one source          no         zero-shot
S2     multiple sources    no         zero-shot
S3     one source          target     composition, non-paper
S4     multiple sources    target     composition, non-paper
S5     source + target     no
S6     sources + target    no
S7     source + target     target
S8     sources + target    target
=====  ==================  =========  ====================

Evaluation is always on the target's test split. An S1 plan whose single
source *is* the target is the baseline experiment; it is exempt from the
zero-shot purity check (train and test legitimately share the dataset)
but never from test-split hygiene.

Every consumed window is recorded in a :class:`ConsumptionTrace`
(dataset id, split, first target timestamp) so isolation can be audited
after the fact. Runs are deterministic: a (plan, seed) pair maps to
bitwise-identical metrics on the same machine.
"""

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import save_checkpoint
from .combine import CombinationSpec, combine
from .data import FeatureLayout, make_windows
from .errors import ConfigError, NumericError, PlanError, TrainingError
from .evaluation import EvaluationReport, MetricSet, mae, mse
from .models import ModelConfig, build_model
from .optim import Adam
from .rng import RunRng
from .tensor import mse_loss

STRATEGIES = ("S1", "S2", "S3", "S4", "S5", "S6", "S7", "S8")
ZERO_SHOT = frozenset({"S1", "S2"})
FINE_TUNED = frozenset({"S3", "S4", "S7", "S8"})
TARGET_IN_PRETRAIN = frozenset({"S5", "S6", "S7", "S8"})
SINGLE_SOURCE = frozenset({"S1", "S3", "S5", "S7"})
NON_PAPER = frozenset({"S3", "S4"})

DEFAULT_SEEDS = (1, 50, 100)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; losses are mean squared error throughout."""

    pretrain_lr: float = 1e-4
    finetune_lr: float = 1e-5
    batch_size: int = 32
    max_epochs: int = 10
    early_stop_patience: int = 10
    loss: str = "mse"

    def __post_init__(self):
        if self.loss != "mse":
            raise ConfigError(f"only the 'mse' loss is supported, got {self.loss!r}")
        if self.pretrain_lr <= 0 or self.finetune_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.finetune_lr >= self.pretrain_lr:
            raise ConfigError(
                f"finetune_lr {self.finetune_lr} must be below pretrain_lr {self.pretrain_lr}"
            )
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")


@dataclass(frozen=True)
class ExperimentPlan:
    """One row of the study: strategy, data roles, horizon, seeds, configs."""

    plan_id: str
    strategy: str
    sources: tuple
    target: str
    horizon: int
    model: ModelConfig
    train: TrainConfig = TrainConfig()
    seeds: tuple = DEFAULT_SEEDS

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise PlanError(f"unknown strategy {self.strategy!r}")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise PlanError(f"plan {self.plan_id!r}: seeds must be a nonempty unique list")
        if not self.sources:
            raise PlanError(f"plan {self.plan_id!r}: no sources")

    @property
    def is_baseline(self):
        return self.strategy == "S1" and tuple(self.sources) == (self.target,)

    def to_dict(self):
        return {
            "plan_id": self.plan_id,
            "strategy": self.strategy,
            "sources": list(self.sources),
            "target": self.target,
            "horizon": self.horizon,
            "seeds": list(self.seeds),
            "model": dataclasses.asdict(self.model),
            "train": dataclasses.asdict(self.train),
        }


def plan_hash(plan):
    """Stable 16-hex-character key for the plan's run directory."""
    canonical = json.dumps(plan.to_dict(), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def _member_sources(ds):
    return set(ds.sources())


def validate_plan(plan, registry):
    """Check every plan invariant before any training happens."""
    if plan.target not in registry:
        raise PlanError(f"plan {plan.plan_id!r}: unknown target {plan.target!r}")
    for source in plan.sources:
        if source not in registry:
            raise PlanError(f"plan {plan.plan_id!r}: unknown source {source!r}")

    if plan.strategy in SINGLE_SOURCE:
        if len(plan.sources) != 1:
            raise PlanError(f"plan {plan.plan_id!r}: {plan.strategy} takes exactly one source")
    else:
        if len(plan.sources) == 1:
            only = registry[plan.sources[0]]
            if not only.is_combined or len(only.sources()) < 2:
                raise PlanError(
                    f"plan {plan.plan_id!r}: {plan.strategy} needs >= 2 sources "
                    "(or one pre-combined multi-member dataset)"
                )

    # The target may appear among the sources only for the S1 baseline;
    # for S5-S8 the target joins the pretraining corpus implicitly.
    if not plan.is_baseline:
        for source in plan.sources:
            if source == plan.target or plan.target in _member_sources(registry[source]):
                raise PlanError(
                    f"plan {plan.plan_id!r}: target {plan.target!r} may not appear in sources"
                )
    # Surface bad horizon/model combinations now rather than mid-campaign.
    _model_config_for(plan, n_features=1)
    return True


def _model_config_for(plan, n_features):
    allow = plan.model.allow_any_horizon or plan.horizon in (24, 96)
    if not allow:
        raise PlanError(f"plan {plan.plan_id!r}: horizon {plan.horizon} needs allow_any_horizon")
    return dataclasses.replace(
        plan.model, n_features=n_features, horizon=plan.horizon, allow_any_horizon=True
    )


class ConsumptionTrace:
    """Record of every window consumed while training (incl. validation)."""

    def __init__(self):
        self.rows = []

    def record(self, windows, indices):
        sources = windows.sources
        split = windows.split
        starts = windows.target_start
        for i in indices:
            self.rows.append((sources[i], split, starts[i]))

    def datasets_touched(self):
        return {row[0] for row in self.rows}


def verify_isolation(plan, trace):
    """Audit a consumption trace against the plan's isolation contract.

    Returns ``(passed, violations)``. Zero-shot plans must never touch the
    target dataset; no plan may ever consume target test-split windows.
    """
    violations = []
    for dataset, split, start in trace.rows:
        if plan.strategy in ZERO_SHOT and not plan.is_baseline and dataset == plan.target:
            violations.append(f"zero-shot plan consumed {dataset}/{split} window at {start}")
        elif dataset == plan.target and split == "test":
            violations.append(f"plan consumed target test window at {start}")
    return (not violations), violations


@dataclass
class TrainedModel:
    """A forecaster plus its training history and best validation loss."""

    model: object
    history: list
    best_val: float
    best_epoch: int
    trained: bool


def _eval_predictions(model, windows, batch_size):
    preds = np.empty_like(windows.y)
    for start in range(0, len(windows), batch_size):
        idx = slice(start, start + batch_size)
        preds[idx] = model.forward(windows.x[idx], train_mode=False).data
    return preds


def _eval_loss(model, windows, batch_size):
    preds = _eval_predictions(model, windows, batch_size)
    return mse(preds, windows.y)


def _train_loop(model, train_windows, val_windows, cfg, lr, shuffle_stream, trace, phase):
    if len(train_windows) == 0:
        raise TrainingError(f"{phase}: training corpus is empty")
    if cfg.max_epochs == 0:
        return TrainedModel(model, [], float("inf"), 0, trained=False)

    opt = Adam(model.params, lr=lr)
    history = []
    best_val = _eval_loss(model, val_windows, cfg.batch_size)
    best_epoch = 0
    best_params = model.state_arrays()
    stale = 0
    n = len(train_windows)
    for epoch in range(1, cfg.max_epochs + 1):
        order = model.rng.stream(shuffle_stream).permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            try:
                pred = model.forward(train_windows.x[idx], train_mode=True)
                loss = mse_loss(pred, train_windows.y[idx])
            except NumericError as exc:
                raise TrainingError(
                    f"{phase}: divergence at epoch {epoch}, batch {start // cfg.batch_size}: {exc}"
                ) from exc
            model.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            trace.record(train_windows, idx)
        trace.record(val_windows, range(len(val_windows)))
        val = _eval_loss(model, val_windows, cfg.batch_size)
        history.append({"phase": phase, "epoch": epoch, "train_loss": total / n, "val_loss": val})
        if val < best_val:
            best_val = val
            best_epoch = epoch
            best_params = model.state_arrays()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break
    model.load_state_arrays(best_params)
    return TrainedModel(model, history, best_val, best_epoch, trained=True)


def pretrain(model, train_windows, val_windows, cfg, trace=None):
    """Train from scratch on the pretraining corpus; returns the
    best-validation checkpointed model."""
    return _train_loop(
        model, train_windows, val_windows, cfg, cfg.pretrain_lr,
        "shuffle", trace if trace is not None else ConsumptionTrace(), "pretrain",
    )


def fine_tune(trained, train_windows, val_windows, cfg, trace=None):
    """Continue training every parameter at the reduced fine-tune rate.

    Accepts the TrainedModel from :func:`pretrain` (or a bare forecaster).
    Early stopping anchors on the incoming model's validation loss, so a
    fine-tune that never improves returns the incoming weights.
    """
    model = trained.model if isinstance(trained, TrainedModel) else trained
    result = _train_loop(
        model, train_windows, val_windows, cfg, cfg.finetune_lr,
        "finetune.shuffle", trace if trace is not None else ConsumptionTrace(), "finetune",
    )
    if not result.trained and isinstance(trained, TrainedModel):
        return TrainedModel(model, trained.history, trained.best_val, trained.best_epoch, trained.trained)
    return result


def _corpus_dataset(plan, registry):
    """Assemble the pretraining corpus per the strategy definition."""
    member_ids = list(plan.sources)
    if plan.strategy in TARGET_IN_PRETRAIN:
        member_ids.append(plan.target)
    if len(member_ids) == 1:
        return registry[member_ids[0]]
    spec = CombinationSpec(
        combo_id="+".join(member_ids),
        members=tuple((m, None) for m in member_ids),
        category="unmodified-combined",
    )
    return combine(spec, registry)


@dataclass
class SeedRun:
    seed: int
    metrics: MetricSet
    trace: ConsumptionTrace
    trained: TrainedModel
    history: list = field(default_factory=list)


@dataclass
class RunResult:
    plan: ExperimentPlan
    report: EvaluationReport
    seed_runs: dict


def run_strategy(plan, registry, out_root=None):
    """Execute a plan across its seeds; returns the EvaluationReport.

    Artifacts (when ``out_root`` is given) land under
    ``<out_root>/runs/<plan-hash>/<seed>/`` as ``checkpoint.bin``,
    ``train_log.csv`` and ``metrics.json``.
    """
    return run_strategy_detailed(plan, registry, out_root).report


def run_strategy_detailed(plan, registry, out_root=None):
    validate_plan(plan, registry)
    corpus = _corpus_dataset(plan, registry)
    layout = FeatureLayout(corpus.schema.features)
    target_ds = registry[plan.target]
    cfg = plan.train
    L = plan.model.lookback
    H = plan.horizon

    pre_train_w = make_windows(corpus, "train", L, H, layout=layout)
    pre_val_w = make_windows(corpus, "val", L, H, layout=layout)
    test_w = make_windows(target_ds, "test", L, H, layout=layout)
    ft_train_w = ft_val_w = None
    if plan.strategy in FINE_TUNED:
        ft_train_w = make_windows(target_ds, "train", L, H, layout=layout)
        ft_val_w = make_windows(target_ds, "val", L, H, layout=layout)

    run_dir = None
    if out_root is not None:
        run_dir = os.path.join(out_root, "runs", plan_hash(plan))
        os.makedirs(run_dir, exist_ok=True)

    seed_runs = {}
    per_seed_metrics = {}
    for seed in plan.seeds:
        rng = RunRng(seed)
        model_cfg = _model_config_for(plan, n_features=layout.width)
        model = build_model(model_cfg, rng)
        trace = ConsumptionTrace()
        trained = pretrain(model, pre_train_w, pre_val_w, cfg, trace)
        if plan.strategy in FINE_TUNED:
            trained = fine_tune(trained, ft_train_w, ft_val_w, cfg, trace)

        passed, violations = verify_isolation(plan, trace)
        if not passed:
            raise PlanError(
                f"plan {plan.plan_id!r} seed {seed}: isolation violated: {violations[:3]}"
            )

        preds = _eval_predictions(trained.model, test_w, cfg.batch_size)
        metrics = MetricSet(
            mae=mae(preds, test_w.y),
            mse=mse(preds, test_w.y),
            horizon=H,
            n_predictions=int(test_w.y.size),
        )
        per_seed_metrics[seed] = metrics
        seed_runs[seed] = SeedRun(seed, metrics, trace, trained, trained.history)

        if run_dir is not None:
            seed_dir = os.path.join(run_dir, str(seed))
            os.makedirs(seed_dir, exist_ok=True)
            save_checkpoint(trained.model, os.path.join(seed_dir, "checkpoint.bin"))
            _write_train_log(os.path.join(seed_dir, "train_log.csv"), trained.history)
            _write_metrics(
                os.path.join(seed_dir, "metrics.json"),
                {"plan": plan.plan_id, "seed": seed, "horizon": H, "mae": metrics.mae, "mse": metrics.mse},
            )

    report = EvaluationReport(
        plan_id=plan.plan_id,
        strategy=plan.strategy,
        target=plan.target,
        horizon=H,
        per_seed=per_seed_metrics,
        non_paper=plan.strategy in NON_PAPER,
        extra={"sources": list(plan.sources), "baseline": plan.is_baseline, "seeds": list(plan.seeds)},
    )
    if run_dir is not None:
        _write_metrics(os.path.join(run_dir, "report.json"), report.to_dict())
    return RunResult(plan, report, seed_runs)


def _write_train_log(path, history):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("phase,epoch,train_loss,val_loss\n")
        for row in history:
            fh.write(f"{row['phase']},{row['epoch']},{row['train_loss']!r},{row['val_loss']!r}\n")


def _write_metrics(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
