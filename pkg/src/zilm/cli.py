"""Command-line entry point: reproducible simulate / fit / eval / reproduce runs.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.  Every command writes a ``run_manifest.json`` (atomically, at the
end of the run) recording the command, config digest, seed, artifact paths,
tool version and wall-clock duration.  Without ``--force``, commands refuse
to overwrite existing outputs.
"""

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .domain import (
    ConfigError,
    DataError,
    NdcProfile,
    NumericError,
    load_dataset,
    load_manifest,
    save_dataset,
    validate_dataset,
)
from .evaluate import (
    CONTRAST_PARTITIONS,
    POLICIES,
    classification_metrics,
    contrast_analysis,
    forced_delivery_experiment,
    ndc_hypothesis_test,
    policy_experiment,
    recovery_report,
)
from .fit import FitConfig, ModelKind, fit, load_model, save_model, save_trace
from .models import build_design
from .simulate import MATHS_CONTENT_NOTE, SimConfig, generate_dataset

OUT_ROOT_ENV = "ZILM_OUT_ROOT"


# ---------------------------------------------------------------------------
# small helpers

def _resolve_out(arg_out, command):
    if arg_out:
        return Path(arg_out)
    root = os.environ.get(OUT_ROOT_ENV)
    if root:
        return Path(root) / command
    raise ConfigError(f"no --out given and {OUT_ROOT_ENV} is not set")


def _refuse_overwrite(paths, force):
    existing = [str(p) for p in paths if Path(p).exists()]
    if existing and not force:
        raise DataError("refusing to overwrite existing output (pass --force): "
                        + ", ".join(existing))


def _file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        h.update(f.read())
    return h.hexdigest()


def _write_csv(path, fields, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(fields))
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")
    tmp.replace(path)


def _write_report(report, out_dir, name):
    _write_json(Path(out_dir) / f"{name}.json", report.to_dict())
    fields, rows = report.csv_rows()
    _write_csv(Path(out_dir) / f"{name}.csv", fields, rows)
    return [Path(out_dir) / f"{name}.json", Path(out_dir) / f"{name}.csv"]


def _write_combined(reports, out_dir, name, extra_field=None):
    """Merge several reports of one type into a single json/csv pair."""
    _write_json(Path(out_dir) / f"{name}.json", [r.to_dict() for r in reports])
    all_rows = []
    fields = None
    for r in reports:
        f, rows = r.csv_rows()
        if extra_field:
            f = (extra_field,) + tuple(x for x in f if x != extra_field)
            for row in rows:
                row.setdefault(extra_field, getattr(r, extra_field))
        fields = fields or f
        all_rows.extend(rows)
    _write_csv(Path(out_dir) / f"{name}.csv", fields, all_rows)
    return [Path(out_dir) / f"{name}.json", Path(out_dir) / f"{name}.csv"]


def _run_manifest(out_dir, command, *, seed, config_digest, artifacts, started):
    manifest = {
        "command": command,
        "seed": seed,
        "config_digest": config_digest,
        "artifacts": sorted(str(Path(a).relative_to(out_dir)) for a in artifacts),
        "tool_version": __version__,
        "duration_seconds": round(time.monotonic() - started, 3),
    }
    _write_json(Path(out_dir) / "run_manifest.json", manifest)


def _load_sim_config(args):
    if getattr(args, "config", None):
        cfg = SimConfig.from_json_file(args.config)
        digest_src = _file_digest(args.config)
    else:
        cfg = SimConfig()
        digest_src = cfg.digest()
    if getattr(args, "seed", None) is not None:
        cfg = SimConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    return cfg, digest_src


def _load_fit_config(args):
    if getattr(args, "config", None):
        cfg = FitConfig.from_json_file(args.config)
        digest_src = _file_digest(args.config)
    else:
        cfg = FitConfig()
        digest_src = cfg.digest()
    if getattr(args, "seed", None) is not None:
        cfg = FitConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    return cfg, digest_src


def _load_valid_dataset(path):
    dataset = load_dataset(path)
    problems = validate_dataset(dataset)
    if problems:
        head = "\n  ".join(problems[:10])
        more = f"\n  ... and {len(problems) - 10} more" if len(problems) > 10 else ""
        raise DataError(f"dataset {path} is invalid:\n  {head}{more}")
    return dataset


def _dataset_sim_config(dataset_dir):
    manifest = load_manifest(dataset_dir)
    cfg_dict = manifest.get("config")
    if not cfg_dict:
        raise DataError(f"dataset manifest in {dataset_dir} does not embed its simulation config")
    return SimConfig.from_dict(cfg_dict)


def _parse_alt_ndc(spec):
    if spec is None:
        raise ConfigError("hypothesis report requires --alt-ndc (e.g. 'dyslexia' or 'none')")
    spec = spec.strip().lower()
    if spec in ("none", "nt", ""):
        return NdcProfile()
    return NdcProfile.from_names([tok.strip() for tok in spec.split(",") if tok.strip()])


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(args) -> int:
    started = time.monotonic()
    cfg, digest_src = _load_sim_config(args)
    out = _resolve_out(args.out, "simulate")
    _refuse_overwrite([out / n for n in ("students.csv", "items.csv", "attempts.csv", "manifest.json")],
                      args.force)
    dataset = generate_dataset(cfg)
    save_dataset(dataset, out, seed=cfg.seed, config=cfg.to_dict(),
                 notes=[MATHS_CONTENT_NOTE], force=args.force)
    artifacts = [out / n for n in ("students.csv", "items.csv", "attempts.csv", "manifest.json")]
    _run_manifest(out, "simulate", seed=cfg.seed, config_digest=digest_src,
                  artifacts=artifacts, started=started)
    print(f"wrote dataset ({cfg.n_students} students, {cfg.n_items} items, "
          f"{len(dataset.attempts)} attempts) to {out}")
    return 0


def cmd_fit(args) -> int:
    started = time.monotonic()
    cfg, digest_src = _load_fit_config(args)
    try:
        kind = ModelKind(args.kind)
    except ValueError:
        raise ConfigError(f"unknown model kind {args.kind!r} "
                          f"(choose from {[k.value for k in ModelKind]})")
    dataset = _load_valid_dataset(args.dataset)
    out = _resolve_out(args.out, "fit")
    paths = [out / "model.json", out / "trace.csv"]
    _refuse_overwrite(paths, args.force)
    model = fit(dataset, kind, cfg)
    save_model(model, out / "model.json")
    save_trace(model.trace, out / "trace.csv")
    _run_manifest(out, "fit", seed=cfg.seed, config_digest=digest_src,
                  artifacts=paths, started=started)
    print(f"fit {kind.value}: {model.trace.iterations} iterations, "
          f"converged={model.trace.converged}, final NLL {model.trace.nll[-1]:.6f}")
    return 0


def _eval_metrics(args, dataset, out):
    models = [load_model(p) for p in args.model]
    design = build_design(dataset)
    reports = [classification_metrics(m, dataset, split=args.split, design=design) for m in models]
    return _write_combined(reports, out, "metrics")


def _eval_recovery(args, dataset, out):
    models = [load_model(p) for p in args.model]
    reports = [recovery_report(m, dataset) for m in models]
    return _write_combined(reports, out, "recovery", extra_field="model_kind")


def _eval_contrast(args, dataset, out):
    if not args.partition:
        raise ConfigError(f"contrast report requires --partition (one of {CONTRAST_PARTITIONS})")
    report = contrast_analysis(dataset, args.partition)
    return _write_report(report, out, "contrast")


def _eval_delivery(args, dataset, out):
    cfg = _dataset_sim_config(args.dataset)
    report = forced_delivery_experiment(cfg)
    return _write_report(report, out, "delivery")


def _eval_policy(args, dataset, out):
    if not args.policy:
        raise ConfigError(f"policy report requires --policy (one of {POLICIES})")
    cfg = _dataset_sim_config(args.dataset)
    model = load_model(args.model[0]) if args.model else None
    report = policy_experiment(cfg, args.policy, model=model)
    return _write_report(report, out, "policy")


def _eval_hypothesis(args, dataset, out):
    if args.student is None:
        raise ConfigError("hypothesis report requires --student")
    alt = _parse_alt_ndc(args.alt_ndc)
    null_model = load_model(args.model[0]) if args.model else None
    if null_model is not None and null_model.kind is not ModelKind.IRT_ZILM:
        raise DataError("hypothesis null model must be the zero-inflated kind")
    result = ndc_hypothesis_test(dataset, args.student, alt, FitConfig(), null_model=null_model)
    return _write_report(result, out, "hypothesis")


_EVAL_DISPATCH = {
    "metrics": _eval_metrics,
    "recovery": _eval_recovery,
    "contrast": _eval_contrast,
    "delivery": _eval_delivery,
    "policy": _eval_policy,
    "hypothesis": _eval_hypothesis,
}


def cmd_eval(args) -> int:
    started = time.monotonic()
    if args.report in ("metrics", "recovery") and not args.model:
        raise ConfigError(f"{args.report} report requires at least one --model")
    dataset = _load_valid_dataset(args.dataset)
    out = _resolve_out(args.out, "eval")
    out.mkdir(parents=True, exist_ok=True)
    _refuse_overwrite([out / f"{args.report}.json", out / f"{args.report}.csv"], args.force)
    artifacts = _EVAL_DISPATCH[args.report](args, dataset, out)
    _run_manifest(out, f"eval:{args.report}", seed=None,
                  config_digest=load_manifest(args.dataset).get("config_digest"),
                  artifacts=artifacts, started=started)
    print(f"wrote {args.report} report to {out}")
    return 0


SUMMARY_FIELDS = (
    "model", "accuracy", "f1", "nll", "brier",
    "ability_pearson", "ability_spearman",
    "difficulty_pearson", "difficulty_spearman",
    "discrimination_pearson", "discrimination_spearman",
)


def cmd_reproduce(args) -> int:
    """Full pipeline: simulate, fit all kinds, emit every report and a summary."""
    started = time.monotonic()
    cfg, digest_src = _load_sim_config(args)
    if args.quick:
        cfg = SimConfig.from_dict({**cfg.to_dict(), "n_students": 500})
    out = _resolve_out(args.out, "reproduce")
    _refuse_overwrite([out / "summary.csv"], args.force)

    stage = "simulate"
    try:
        dataset = generate_dataset(cfg)
        save_dataset(dataset, out / "dataset", seed=cfg.seed, config=cfg.to_dict(),
                     notes=[MATHS_CONTENT_NOTE], force=args.force)
        artifacts = [out / "dataset" / n
                     for n in ("students.csv", "items.csv", "attempts.csv", "manifest.json")]

        stage = "fit"
        design = build_design(dataset)
        fit_cfg = FitConfig()
        models = {}
        for kind in (ModelKind.IRT, ModelKind.KTM1, ModelKind.IRT_ZILM):
            model = fit(dataset, kind, fit_cfg, design=design)
            models[kind] = model
            save_model(model, out / "models" / kind.value / "model.json")
            save_trace(model.trace, out / "models" / kind.value / "trace.csv")
            artifacts += [out / "models" / kind.value / "model.json",
                          out / "models" / kind.value / "trace.csv"]

        stage = "reports"
        reports_dir = out / "reports"
        metrics = {k: classification_metrics(m, dataset, "test", design=design)
                   for k, m in models.items()}
        recovery = {k: recovery_report(m, dataset) for k, m in models.items()}
        artifacts += _write_combined(list(metrics.values()), reports_dir, "metrics")
        artifacts += _write_combined(list(recovery.values()), reports_dir, "recovery",
                                     extra_field="model_kind")
        artifacts += _write_report(forced_delivery_experiment(cfg), reports_dir, "delivery")
        for partition in CONTRAST_PARTITIONS:
            artifacts += _write_report(contrast_analysis(dataset, partition),
                                       reports_dir, f"contrast_{partition.replace('-', '_')}")
        for policy in ("oracle-active", "oracle-adversarial"):
            artifacts += _write_report(policy_experiment(cfg, policy),
                                       reports_dir, f"policy_{policy.replace('-', '_')}")
        artifacts += _write_report(
            policy_experiment(cfg, "model-active", model=models[ModelKind.IRT_ZILM]),
            reports_dir, "policy_model_active")

        stage = "summary"
        rows = []
        for kind in (ModelKind.IRT, ModelKind.KTM1, ModelKind.IRT_ZILM):
            met, rec = metrics[kind], recovery[kind]
            rows.append({
                "model": kind.value,
                "accuracy": met.accuracy, "f1": met.f1, "nll": met.nll, "brier": met.brier,
                "ability_pearson": rec.ability_pearson,
                "ability_spearman": rec.ability_spearman,
                "difficulty_pearson": rec.difficulty_pearson,
                "difficulty_spearman": rec.difficulty_spearman,
                "discrimination_pearson": rec.discrimination_pearson,
                "discrimination_spearman": rec.discrimination_spearman,
            })
        _write_csv(out / "summary.csv", SUMMARY_FIELDS, rows)
        artifacts.append(out / "summary.csv")
    except (ConfigError, DataError, NumericError) as e:
        raise type(e)(f"[stage: {stage}] {e}") from e

    _run_manifest(out, "reproduce", seed=cfg.seed, config_digest=digest_src,
                  artifacts=artifacts, started=started)
    print(f"reproduce complete: {out / 'summary.csv'}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zilm",
        description="Simulate neurodiverse learner data, fit zero-inflated learner models, "
                    "and run the equity evaluation suite.",
    )
    parser.add_argument("--version", action="version", version=f"zilm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a synthetic dataset directory")
    p_sim.add_argument("--config", help="simulation config JSON (defaults applied per key)")
    p_sim.add_argument("--seed", type=int, help="override the config seed")
    p_sim.add_argument("--out", help=f"output directory (default ${OUT_ROOT_ENV}/simulate)")
    p_sim.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p_sim.set_defaults(func=cmd_simulate)

    p_fit = sub.add_parser("fit", help="fit one model kind on a dataset directory")
    p_fit.add_argument("--dataset", required=True, help="dataset directory")
    p_fit.add_argument("--kind", required=True, help="irt | irt_zilm | ktm1")
    p_fit.add_argument("--config", help="fit config JSON")
    p_fit.add_argument("--seed", type=int, help="override the fit config seed")
    p_fit.add_argument("--out", help=f"output directory (default ${OUT_ROOT_ENV}/fit)")
    p_fit.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p_fit.set_defaults(func=cmd_fit)

    p_eval = sub.add_parser("eval", help="run one report against a dataset (and models)")
    p_eval.add_argument("--report", required=True, choices=sorted(_EVAL_DISPATCH),
                        help="which report to produce")
    p_eval.add_argument("--dataset", required=True, help="dataset directory")
    p_eval.add_argument("--model", nargs="*", default=[], help="model.json path(s)")
    p_eval.add_argument("--split", default="test", choices=("train", "test", "all"),
                        help="split for metrics (default test)")
    p_eval.add_argument("--partition", choices=CONTRAST_PARTITIONS,
                        help="contrast partition")
    p_eval.add_argument("--policy", choices=POLICIES, help="selection policy")
    p_eval.add_argument("--student", type=int, help="student id for the hypothesis report")
    p_eval.add_argument("--alt-ndc", dest="alt_ndc",
                        help="alternative condition flags, e.g. 'dyslexia,spd' or 'none'")
    p_eval.add_argument("--out", help=f"output directory (default ${OUT_ROOT_ENV}/eval)")
    p_eval.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p_eval.set_defaults(func=cmd_eval)

    p_rep = sub.add_parser("reproduce", help="simulate, fit all kinds, and emit all reports")
    p_rep.add_argument("--config", help="simulation config JSON")
    p_rep.add_argument("--seed", type=int, help="override the config seed")
    p_rep.add_argument("--quick", action="store_true", help="small run (500 students)")
    p_rep.add_argument("--out", help=f"output directory (default ${OUT_ROOT_ENV}/reproduce)")
    p_rep.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p_rep.set_defaults(func=cmd_reproduce)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
