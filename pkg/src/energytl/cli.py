"""Config-driven command line: clean data, run campaigns, report, gradcheck.

Subcommands
-----------
clean      run the full data pipeline on one CSV, write CSV + JSON sidecar
run        execute the experiment plans of a campaign config (JSON)
report     aggregate run artifacts into text/CSV tables
gradcheck  finite-difference gradient suites per architecture

Exit codes: 0 success, 1 validation failure, 2 runtime failure. The
``ENERGYTL_OUT_ROOT`` environment variable overrides the output root from
the config or command line.

Campaign config format (JSON; see README for a worked example)::

    {
      "output_root": "out",
      "datasets": {"SiteA": "data/site_a.csv", ...},
      "combinations": [
        {"id": "SiteA+SiteB", "category": "unmodified-combined",
         "members": [{"dataset": "SiteA"},
                     {"dataset": "SiteB",
                      "truncate": {"kind": "feature", "drop": ["windSpeed"]}}]}
      ],
      "defaults": {"seeds": [1, 50, 100], "model": {...}, "train": {...}},
      "plans": [
        {"id": "base-a-24", "strategy": "S1", "sources": ["SiteA"],
         "target": "SiteA", "horizon": 24}
      ]
    }

Truncation directives: ``{"kind": "feature", "drop": [names]}``,
``{"kind": "building", "keep_count": n}`` and
``{"kind": "temporal", "layout": [["train", 0.35], ["pad", 0.35],
["val", 0.10], ["test", 0.20]]}``.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from .combine import BuildingTruncate, CombinationSpec, FeatureTruncate, TemporalTruncate, combine
from .data import load_clean, prepare_dataset, save_clean
from .errors import ConfigError, DataError, EnergyTLError, FormatError, PlanError
from .evaluation import (
    matrix_csv,
    render_strategy_summary,
    render_zero_shot_matrix,
    summary_csv,
)
from .gradcheck import check_architecture
from .models import ARCHITECTURES, ModelConfig
from .strategies import ExperimentPlan, TrainConfig, plan_hash, run_strategy_detailed, validate_plan

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

GRADCHECK_TOLERANCE = 1e-4


def _fail(code, message):
    print(f"error: {message}", file=sys.stderr)
    return code


def cmd_clean(args):
    try:
        ds = prepare_dataset(args.input_csv, dataset_id=args.dataset_id)
    except (FormatError, DataError, ConfigError) as exc:
        return _fail(EXIT_VALIDATION, f"{args.input_csv}: {exc}")
    csv_path, json_path = save_clean(ds, args.out_dir)
    removed = len(ds.removed_buildings) + len(ds.removed_columns)
    if removed == 0:
        print(f"{ds.dataset_id}: already clean, no removals")
    else:
        for entry in ds.removed_buildings:
            print(f"{ds.dataset_id}: removed building {entry['building']}: {entry['reason']}")
        for entry in ds.removed_columns:
            print(f"{ds.dataset_id}: removed column {entry['column']}: {entry['reason']}")
    print(f"wrote {csv_path}")
    print(f"wrote {json_path}")
    return EXIT_OK


def _parse_directive(payload, where):
    if payload is None:
        return None
    kind = payload.get("kind")
    if kind == "feature":
        return FeatureTruncate(tuple(payload["drop"]))
    if kind == "building":
        return BuildingTruncate(int(payload["keep_count"]))
    if kind == "temporal":
        return TemporalTruncate(tuple((role, float(frac)) for role, frac in payload["layout"]))
    raise ConfigError(f"{where}: unknown truncation kind {kind!r}")


def load_campaign(config_path):
    """Parse and fully validate a campaign config; no side effects."""
    with open(config_path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)

    dataset_paths = raw.get("datasets", {})
    if not dataset_paths:
        raise ConfigError("datasets: at least one dataset is required")
    declared = set(dataset_paths)

    combo_specs = []
    for i, combo in enumerate(raw.get("combinations", [])):
        where = f"combinations[{i}]"
        members = []
        for j, member in enumerate(combo.get("members", [])):
            name = member.get("dataset")
            if name not in declared:
                raise ConfigError(f"{where}.members[{j}]: unknown dataset {name!r}")
            members.append((name, _parse_directive(member.get("truncate"), f"{where}.members[{j}]")))
        combo_id = combo.get("id")
        if not combo_id:
            raise ConfigError(f"{where}: missing id")
        if combo_id in declared:
            raise ConfigError(f"{where}: id {combo_id!r} already declared")
        combo_specs.append(
            CombinationSpec(combo_id, tuple(members), combo.get("category", "unmodified-combined"))
        )
        declared.add(combo_id)

    defaults = raw.get("defaults", {})
    default_model = defaults.get("model", {})
    default_train = defaults.get("train", {})
    default_seeds = tuple(defaults.get("seeds", (1, 50, 100)))

    plans = []
    seen_ids = set()
    for i, entry in enumerate(raw.get("plans", [])):
        where = f"plans[{i}]"
        plan_id = entry.get("id")
        if not plan_id or plan_id in seen_ids:
            raise ConfigError(f"{where}: missing or duplicate plan id {plan_id!r}")
        seen_ids.add(plan_id)
        for key in ("strategy", "sources", "target", "horizon"):
            if key not in entry:
                raise ConfigError(f"{where}: missing {key!r}")
        for name in list(entry["sources"]) + [entry["target"]]:
            if name not in declared:
                raise ConfigError(f"{where}: references undeclared dataset {name!r}")
        try:
            model = ModelConfig(**{**default_model, **entry.get("model", {})})
            train = TrainConfig(**{**default_train, **entry.get("train", {})})
            plan = ExperimentPlan(
                plan_id=plan_id,
                strategy=entry["strategy"],
                sources=tuple(entry["sources"]),
                target=entry["target"],
                horizon=int(entry["horizon"]),
                model=model,
                train=train,
                seeds=tuple(entry.get("seeds", default_seeds)),
            )
        except (TypeError, ConfigError, PlanError) as exc:
            raise ConfigError(f"{where}: {exc}") from exc
        plans.append(plan)
    if not plans:
        raise ConfigError("plans: campaign declares no experiment plans")

    output_root = os.environ.get("ENERGYTL_OUT_ROOT") or raw.get("output_root", "out")
    base_dir = os.path.dirname(os.path.abspath(config_path))
    dataset_paths = {
        name: path if os.path.isabs(path) else os.path.join(base_dir, path)
        for name, path in dataset_paths.items()
    }
    if not os.path.isabs(output_root):
        output_root = os.path.join(base_dir, output_root)
    return {
        "dataset_paths": dataset_paths,
        "combinations": combo_specs,
        "plans": plans,
        "output_root": output_root,
    }


def build_registry(campaign):
    """Load/clean every dataset and materialize declared combinations."""
    registry = {}
    for name, path in campaign["dataset_paths"].items():
        if os.path.isdir(path):
            registry[name] = load_clean(path, name)
        else:
            registry[name] = prepare_dataset(path, dataset_id=name)
    for spec in campaign["combinations"]:
        registry[spec.combo_id] = combine(spec, registry)
    return registry


def _manifest_path(output_root):
    return os.path.join(output_root, "manifest.json")


def _load_manifest(output_root):
    path = _manifest_path(output_root)
    if os.path.exists(path):
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    return {"plans": {}}


def _save_manifest(output_root, manifest):
    os.makedirs(output_root, exist_ok=True)
    with open(_manifest_path(output_root), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _run_one_plan(config_path, plan_id):
    """Worker entry: rebuild the registry and run a single plan."""
    campaign = load_campaign(config_path)
    registry = build_registry(campaign)
    plan = next(p for p in campaign["plans"] if p.plan_id == plan_id)
    run_strategy_detailed(plan, registry, campaign["output_root"])
    return plan_id


def cmd_run(args):
    try:
        campaign = load_campaign(args.config)
    except (OSError, json.JSONDecodeError, ConfigError, PlanError) as exc:
        return _fail(EXIT_VALIDATION, f"{args.config}: {exc}")

    try:
        registry = build_registry(campaign)
        for plan in campaign["plans"]:
            validate_plan(plan, registry)
    except (EnergyTLError, OSError) as exc:
        return _fail(EXIT_VALIDATION, f"{args.config}: {exc}")

    selected = [p for p in campaign["plans"] if args.filter in p.plan_id]
    if not selected:
        return _fail(EXIT_VALIDATION, f"filter {args.filter!r} matches no plans")

    output_root = campaign["output_root"]
    manifest = _load_manifest(output_root)
    pending = []
    for plan in selected:
        entry = manifest["plans"].get(plan.plan_id)
        if entry and entry.get("status") == "done" and entry.get("hash") == plan_hash(plan):
            print(f"skip {plan.plan_id}: already complete")
            continue
        manifest["plans"][plan.plan_id] = {"hash": plan_hash(plan), "status": "pending", "seeds": list(plan.seeds)}
        pending.append(plan)
    _save_manifest(output_root, manifest)

    failed = False
    if args.parallel > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            futures = {pool.submit(_run_one_plan, args.config, p.plan_id): p for p in pending}
            for future, plan in futures.items():
                try:
                    future.result()
                    manifest["plans"][plan.plan_id]["status"] = "done"
                    print(f"done {plan.plan_id}")
                except EnergyTLError as exc:
                    manifest["plans"][plan.plan_id]["status"] = f"failed: {exc}"
                    failed = True
                    print(f"failed {plan.plan_id}: {exc}", file=sys.stderr)
                _save_manifest(output_root, manifest)
    else:
        for plan in pending:
            try:
                run_strategy_detailed(plan, registry, output_root)
                manifest["plans"][plan.plan_id]["status"] = "done"
                print(f"done {plan.plan_id}")
            except EnergyTLError as exc:
                manifest["plans"][plan.plan_id]["status"] = f"failed: {exc}"
                failed = True
                print(f"failed {plan.plan_id}: {exc}", file=sys.stderr)
            _save_manifest(output_root, manifest)
    return EXIT_RUNTIME if failed else EXIT_OK


def _collect_reports(out_root):
    runs_dir = os.path.join(out_root, "runs")
    reports = []
    if not os.path.isdir(runs_dir):
        return reports
    for name in sorted(os.listdir(runs_dir)):
        path = os.path.join(runs_dir, name, "report.json")
        if os.path.exists(path):
            with open(path, "r", encoding="utf-8") as fh:
                reports.append(json.load(fh))
    return reports


def cmd_report(args):
    out_root = os.environ.get("ENERGYTL_OUT_ROOT") or args.out_root
    reports = _collect_reports(out_root)
    if not reports:
        return _fail(EXIT_VALIDATION, f"no run reports found under {out_root}")

    tables_dir = os.path.join(out_root, "results", "tables")
    os.makedirs(tables_dir, exist_ok=True)
    warnings = []

    for report in reports:
        expected = set(map(str, report.get("extra", {}).get("seeds", []))) or None
        got = set(report["per_seed"])
        if expected and got != expected:
            warnings.append(f"{report['plan']}: partial seed mean over {sorted(got)}")

    horizons = sorted({r["horizon"] for r in reports})
    written = []
    for horizon in horizons:
        sub = [r for r in reports if r["horizon"] == horizon]
        cells, models, targets = {}, [], []
        for r in sub:
            if r["strategy"] not in ("S1", "S2"):
                continue
            model_key = "+".join(r["extra"]["sources"])
            cells[(model_key, r["target"])] = r["mean"]["mae"]
            if model_key not in models:
                models.append(model_key)
            if r["target"] not in targets:
                targets.append(r["target"])
        if cells:
            text, warn = render_zero_shot_matrix(cells, models, targets)
            warnings.extend(warn)
            base = os.path.join(tables_dir, f"zero_shot_matrix_{horizon}h")
            with open(base + ".txt", "w", encoding="utf-8") as fh:
                fh.write(text)
            with open(base + ".csv", "w", encoding="utf-8") as fh:
                fh.write(matrix_csv(cells, models, targets))
            written.extend([base + ".txt", base + ".csv"])

    baselines = {
        (r["target"], r["horizon"]): r
        for r in reports
        if r.get("extra", {}).get("baseline")
    }
    rows = []
    for r in reports:
        if r.get("extra", {}).get("baseline"):
            continue
        base = baselines.get((r["target"], r["horizon"]))
        if base is None:
            warnings.append(f"{r['plan']}: no baseline for ({r['target']}, {r['horizon']}h)")
            continue
        rows.append(
            {
                "target": r["target"],
                "horizon": r["horizon"],
                "base_mae": base["mean"]["mae"],
                "mae": r["mean"]["mae"],
                "base_mse": base["mean"]["mse"],
                "mse": r["mean"]["mse"],
                "strategy": r["strategy"],
                "non_paper": r.get("non_paper", False),
            }
        )
    if rows:
        base = os.path.join(tables_dir, "strategy_summary")
        with open(base + ".txt", "w", encoding="utf-8") as fh:
            fh.write(render_strategy_summary(rows))
        with open(base + ".csv", "w", encoding="utf-8") as fh:
            fh.write(summary_csv(rows))
        written.extend([base + ".txt", base + ".csv"])

    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)
    for path in written:
        print(f"wrote {path}")
    if not written:
        return _fail(EXIT_VALIDATION, "reports found but no tables could be built")
    return EXIT_OK


def cmd_gradcheck(args):
    archs = ARCHITECTURES if args.arch == "all" else (args.arch,)
    worst = 0.0
    for arch in archs:
        result = check_architecture(arch)
        status = "ok" if result["max_rel_error"] < GRADCHECK_TOLERANCE else "FAIL"
        print(f"{arch}: max relative error {result['max_rel_error']:.3e} [{status}]")
        worst = max(worst, result["max_rel_error"])
    if worst >= GRADCHECK_TOLERANCE:
        return _fail(EXIT_RUNTIME, f"gradient check failed: {worst:.3e} >= {GRADCHECK_TOLERANCE}")
    return EXIT_OK


def main(argv=None):
    parser = argparse.ArgumentParser(prog="energytl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_clean = sub.add_parser("clean", help="clean one raw CSV into CSV + JSON sidecar")
    p_clean.add_argument("input_csv")
    p_clean.add_argument("out_dir")
    p_clean.add_argument("--dataset-id", default=None)

    p_run = sub.add_parser("run", help="run the experiment plans of a campaign config")
    p_run.add_argument("config")
    p_run.add_argument("--filter", default="", help="run only plans whose id contains this substring")
    p_run.add_argument("--parallel", type=int, default=1, help="max concurrent plan runs")

    p_report = sub.add_parser("report", help="aggregate run artifacts into tables")
    p_report.add_argument("out_root")

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    p_grad.add_argument("--arch", default="all", choices=("all",) + ARCHITECTURES)

    args = parser.parse_args(argv)
    handler = {"clean": cmd_clean, "run": cmd_run, "report": cmd_report, "gradcheck": cmd_gradcheck}[
        args.command
    ]
    try:
        return handler(args)
    except EnergyTLError as exc:
        return _fail(EXIT_RUNTIME, str(exc))


if __name__ == "__main__":
    sys.exit(main())
