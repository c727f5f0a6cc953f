"""Strategy orchestration: plan validation, training, isolation, determinism."""

import json

import numpy as np
import pytest

from conftest import synth_clean
from energytl.data import FeatureLayout, make_windows
from energytl.errors import ConfigError, PlanError, TrainingError
from energytl.evaluation import mae as mae_fn
from energytl.models import ModelConfig
from energytl.rng import RunRng
from energytl.strategies import (
    ConsumptionTrace,
    ExperimentPlan,
    TrainConfig,
    _eval_predictions,
    fine_tune,
    plan_hash,
    pretrain,
    run_strategy,
    run_strategy_detailed,
    validate_plan,
    verify_isolation,
)
from energytl.models import build_model

TOY_MODEL = ModelConfig(
    arch="vanilla",
    d_model=8,
    n_heads=2,
    n_encoder_layers=1,
    n_decoder_layers=1,
    ff_dim=16,
    dropout_rate=0.1,
    lookback=16,
    horizon=4,
    allow_any_horizon=True,
)

FAST_TRAIN = TrainConfig(pretrain_lr=1e-3, finetune_lr=1e-4, batch_size=32, max_epochs=3)


def toy_plan(plan_id, strategy, sources, target, seeds=(1,), train=FAST_TRAIN, horizon=4):
    return ExperimentPlan(plan_id, strategy, tuple(sources), target, horizon, TOY_MODEL, train, seeds)


# --- config validation ------------------------------------------------------------


def test_train_config_requires_lower_finetune_lr():
    with pytest.raises(ConfigError):
        TrainConfig(pretrain_lr=1e-4, finetune_lr=1e-4)
    cfg = TrainConfig()
    assert cfg.pretrain_lr == 1e-4 and cfg.finetune_lr == 1e-5


def test_single_source_strategies_take_one_source(toy_registry):
    plan = toy_plan("p", "S1", ("SiteA", "SiteB"), "SiteC")
    with pytest.raises(PlanError):
        validate_plan(plan, toy_registry)


def test_multi_source_strategies_need_two_sources(toy_registry):
    plan = toy_plan("p", "S2", ("SiteA",), "SiteC")
    with pytest.raises(PlanError):
        validate_plan(plan, toy_registry)


def test_target_in_sources_rejected(toy_registry):
    for strategy in ("S2", "S5"):
        sources = ("SiteA", "SiteC") if strategy == "S2" else ("SiteC",)
        plan = toy_plan("p", strategy, sources, "SiteC")
        with pytest.raises(PlanError):
            validate_plan(plan, toy_registry)


def test_baseline_self_plan_is_allowed(toy_registry):
    plan = toy_plan("base", "S1", ("SiteA",), "SiteA")
    assert plan.is_baseline
    assert validate_plan(plan, toy_registry)


def test_unknown_dataset_rejected(toy_registry):
    plan = toy_plan("p", "S1", ("Nowhere",), "SiteA")
    with pytest.raises(PlanError):
        validate_plan(plan, toy_registry)


def test_plan_error_raised_before_any_training(toy_registry, tmp_path):
    plan = toy_plan("p", "S1", ("SiteA", "SiteB"), "SiteC")
    with pytest.raises(PlanError):
        run_strategy(plan, toy_registry, str(tmp_path))
    assert not (tmp_path / "runs").exists()


# --- pretrain / fine_tune -----------------------------------------------------------


def _windows(ds, layout=None):
    L, H = 16, 4
    return (
        make_windows(ds, "train", L, H, layout=layout),
        make_windows(ds, "val", L, H, layout=layout),
    )


def test_pretrain_overfits_clean_sine_corpus(toy_registry):
    # ~200 optimizer steps on a near-noiseless sine corpus
    ds = synth_clean("pure", 260, 1, seed=77, noise=0.01)
    train_w, val_w = _windows(ds)
    cfg = TrainConfig(pretrain_lr=1e-2, finetune_lr=1e-4, batch_size=16, max_epochs=18, early_stop_patience=20)
    model = build_model(
        ModelConfig(**{**TOY_MODEL.__dict__, "n_features": train_w.layout.width, "dropout_rate": 0.0}),
        RunRng(1),
    )
    trained = pretrain(model, train_w, val_w, cfg)
    final_train_mse = trained.history[-1]["train_loss"]
    assert final_train_mse < 0.01
    assert trained.trained


def test_pretrain_zero_epochs_returns_untrained_model(toy_registry):
    ds = toy_registry["SiteA"]
    train_w, val_w = _windows(ds)
    cfg = TrainConfig(pretrain_lr=1e-3, finetune_lr=1e-4, max_epochs=0)
    model = build_model(
        ModelConfig(**{**TOY_MODEL.__dict__, "n_features": train_w.layout.width}), RunRng(1)
    )
    before = model.state_arrays()
    trained = pretrain(model, train_w, val_w, cfg)
    assert not trained.trained
    for name, arr in before.items():
        np.testing.assert_array_equal(trained.model.params[name].data, arr)


def test_pretrain_empty_corpus_is_training_error(toy_registry):
    ds = toy_registry["SiteA"]
    train_w, val_w = _windows(ds)
    empty = type(train_w)(
        x=train_w.x[:0], y=train_w.y[:0], series=[], sources=[], split="train",
        target_start=train_w.target_start[:0], layout=train_w.layout,
    )
    model = build_model(
        ModelConfig(**{**TOY_MODEL.__dict__, "n_features": train_w.layout.width}), RunRng(1)
    )
    with pytest.raises(TrainingError):
        pretrain(model, empty, val_w, FAST_TRAIN)


def test_same_seed_gives_identical_checkpoint_bytes(toy_registry, tmp_path):
    from energytl.checkpoint import checkpoint_bytes

    plan = toy_plan("p", "S1", ("SiteA",), "SiteB", seeds=(5,))
    first = run_strategy_detailed(plan, toy_registry)
    second = run_strategy_detailed(plan, toy_registry)
    a = checkpoint_bytes(first.seed_runs[5].trained.model)
    b = checkpoint_bytes(second.seed_runs[5].trained.model)
    assert a == b


def test_fine_tune_zero_epochs_keeps_pretrained_metrics(toy_registry):
    ds = toy_registry["SiteA"]
    train_w, val_w = _windows(ds)
    model = build_model(
        ModelConfig(**{**TOY_MODEL.__dict__, "n_features": train_w.layout.width}), RunRng(2)
    )
    trained = pretrain(model, train_w, val_w, FAST_TRAIN)
    before = {n: a.copy() for n, a in trained.model.state_arrays().items()}
    frozen_cfg = TrainConfig(pretrain_lr=1e-3, finetune_lr=1e-4, max_epochs=0)
    tuned = fine_tune(trained, train_w, val_w, frozen_cfg)
    for name, arr in before.items():
        np.testing.assert_array_equal(tuned.model.params[name].data, arr)
    assert tuned.best_val == trained.best_val


def test_fine_tune_never_raises_validation_loss(toy_registry):
    # early stopping anchors on the incoming model: best val can only improve
    ds = synth_clean("tgt", 240, 1, seed=88, noise=0.05)
    train_w, val_w = _windows(ds)
    model = build_model(
        ModelConfig(**{**TOY_MODEL.__dict__, "n_features": train_w.layout.width}), RunRng(3)
    )
    trained = pretrain(model, train_w, val_w, FAST_TRAIN)
    from energytl.strategies import _eval_loss

    val_before = _eval_loss(trained.model, val_w, 64)
    tuned = fine_tune(trained, train_w, val_w, FAST_TRAIN)
    val_after = _eval_loss(tuned.model, val_w, 64)
    assert val_after <= val_before + 1e-12


# --- run_strategy ---------------------------------------------------------------------


def test_three_seed_mean_is_arithmetic_average(toy_registry):
    plan = toy_plan("p", "S1", ("SiteA",), "SiteB", seeds=(1, 2, 3))
    report = run_strategy(plan, toy_registry)
    maes = [report.per_seed[s].mae for s in (1, 2, 3)]
    mses = [report.per_seed[s].mse for s in (1, 2, 3)]
    assert report.mean.mae == pytest.approx(sum(maes) / 3.0, abs=0)
    assert report.mean.mse == pytest.approx(sum(mses) / 3.0, abs=0)


def test_run_artifacts_layout_and_metrics_schema(toy_registry, tmp_path):
    plan = toy_plan("artifacts", "S5", ("SiteA",), "SiteB", seeds=(1, 2))
    run_strategy(plan, toy_registry, str(tmp_path))
    run_dir = tmp_path / "runs" / plan_hash(plan)
    assert (run_dir / "report.json").exists()
    for seed in (1, 2):
        seed_dir = run_dir / str(seed)
        assert (seed_dir / "checkpoint.bin").exists()
        assert (seed_dir / "train_log.csv").exists()
        metrics = json.loads((seed_dir / "metrics.json").read_text())
        assert set(metrics) == {"plan", "seed", "horizon", "mae", "mse"}
        assert metrics["plan"] == "artifacts" and metrics["seed"] == seed


def test_identical_runs_produce_bitwise_identical_metrics(toy_registry, tmp_path):
    plan = toy_plan("det", "S5", ("SiteA",), "SiteB", seeds=(1,))
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    run_strategy(plan, toy_registry, str(out_a))
    run_strategy(plan, toy_registry, str(out_b))
    rel = ("runs", plan_hash(plan), "1", "metrics.json")
    assert out_a.joinpath(*rel).read_bytes() == out_b.joinpath(*rel).read_bytes()


def test_s7_equals_s5_followed_by_fine_tune(toy_registry):
    seeds = (1,)
    plan5 = toy_plan("s5", "S5", ("SiteA",), "SiteB", seeds=seeds)
    plan7 = toy_plan("s7", "S7", ("SiteA",), "SiteB", seeds=seeds)
    r5 = run_strategy_detailed(plan5, toy_registry)
    r7 = run_strategy_detailed(plan7, toy_registry)

    # continue the S5 model: same seeds and RNG stream positions
    corpus_schema = toy_registry["SiteA"].schema.union(toy_registry["SiteB"].schema)
    layout = FeatureLayout(corpus_schema.features)
    target = toy_registry["SiteB"]
    ft_train = make_windows(target, "train", 16, 4, layout=layout)
    ft_val = make_windows(target, "val", 16, 4, layout=layout)
    tuned = fine_tune(r5.seed_runs[1].trained, ft_train, ft_val, FAST_TRAIN)

    test_w = make_windows(target, "test", 16, 4, layout=layout)
    preds = _eval_predictions(tuned.model, test_w, FAST_TRAIN.batch_size)
    assert mae_fn(preds, test_w.y) == r7.report.per_seed[1].mae


def test_s8_equals_s6_followed_by_fine_tune(toy_registry):
    plan6 = toy_plan("s6", "S6", ("SiteA", "SiteC"), "SiteB", seeds=(4,))
    plan8 = toy_plan("s8", "S8", ("SiteA", "SiteC"), "SiteB", seeds=(4,))
    r6 = run_strategy_detailed(plan6, toy_registry)
    r8 = run_strategy_detailed(plan8, toy_registry)

    schema = (
        toy_registry["SiteA"].schema
        .union(toy_registry["SiteC"].schema)
        .union(toy_registry["SiteB"].schema)
    )
    layout = FeatureLayout(schema.features)
    target = toy_registry["SiteB"]
    ft_train = make_windows(target, "train", 16, 4, layout=layout)
    ft_val = make_windows(target, "val", 16, 4, layout=layout)
    tuned = fine_tune(r6.seed_runs[4].trained, ft_train, ft_val, FAST_TRAIN)
    test_w = make_windows(target, "test", 16, 4, layout=layout)
    preds = _eval_predictions(tuned.model, test_w, FAST_TRAIN.batch_size)
    assert mae_fn(preds, test_w.y) == r8.report.per_seed[4].mae


# --- isolation -------------------------------------------------------------------------


def test_s2_trace_excludes_target(toy_registry):
    plan = toy_plan("iso2", "S2", ("SiteA", "SiteC"), "SiteB")
    result = run_strategy_detailed(plan, toy_registry)
    trace = result.seed_runs[1].trace
    passed, violations = verify_isolation(plan, trace)
    assert passed and not violations
    assert trace.datasets_touched() == {"SiteA", "SiteC"}


def test_corrupted_trace_fails_isolation(toy_registry):
    plan = toy_plan("iso-neg", "S2", ("SiteA", "SiteC"), "SiteB")
    trace = ConsumptionTrace()
    trace.rows.append(("SiteA", "train", np.datetime64("2016-01-02T00:00:00")))
    trace.rows.append(("SiteB", "train", np.datetime64("2016-01-02T00:00:00")))
    passed, violations = verify_isolation(plan, trace)
    assert not passed and len(violations) == 1


def test_test_split_consumption_fails_any_strategy(toy_registry):
    plan = toy_plan("iso-test", "S5", ("SiteA",), "SiteB")
    trace = ConsumptionTrace()
    trace.rows.append(("SiteB", "train", np.datetime64("2016-01-02T00:00:00")))
    trace.rows.append(("SiteB", "test", np.datetime64("2016-01-05T00:00:00")))
    passed, violations = verify_isolation(plan, trace)
    assert not passed and "test" in violations[0]


def test_strategy_corpora_match_definitions(toy_registry):
    cases = {
        "S1": ({"SiteA"}, ("SiteA",)),
        "S2": ({"SiteA", "SiteC"}, ("SiteA", "SiteC")),
        "S5": ({"SiteA", "SiteB"}, ("SiteA",)),
        "S6": ({"SiteA", "SiteC", "SiteB"}, ("SiteA", "SiteC")),
    }
    for strategy, (expected, sources) in cases.items():
        plan = toy_plan(f"c-{strategy}", strategy, sources, "SiteB")
        result = run_strategy_detailed(plan, toy_registry)
        assert result.seed_runs[1].trace.datasets_touched() == expected, strategy


def test_early_stopping_restores_best_checkpoint(toy_registry):
    ds = toy_registry["SiteA"]
    train_w, val_w = _windows(ds)
    cfg = TrainConfig(pretrain_lr=5e-3, finetune_lr=1e-4, batch_size=32, max_epochs=8, early_stop_patience=2)
    model = build_model(
        ModelConfig(**{**TOY_MODEL.__dict__, "n_features": train_w.layout.width}), RunRng(9)
    )
    trained = pretrain(model, train_w, val_w, cfg)
    observed = [row["val_loss"] for row in trained.history]
    from energytl.strategies import _eval_loss

    final_val = _eval_loss(trained.model, val_w, cfg.batch_size)
    assert final_val <= min(observed) + 1e-12
    assert trained.best_val == final_val


def test_s3_s4_reports_flagged_non_paper(toy_registry):
    plan3 = toy_plan("s3", "S3", ("SiteA",), "SiteB")
    report3 = run_strategy(plan3, toy_registry)
    assert report3.non_paper
    plan5 = toy_plan("s5b", "S5", ("SiteA",), "SiteB")
    assert not run_strategy(plan5, toy_registry).non_paper
