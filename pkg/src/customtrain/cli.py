"""Command-line entry point: ``ct cv-fit | predict | simulate | baseline``.

Exit codes: 0 on success, 2 for bad input or usage, 1 for internal errors.
Every command writes its outputs plus a ``manifest.json`` into
``--out-dir``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .customize import (
    DEFAULT_R,
    CtModel,
    FitSettings,
    build_grouped_partition,
    build_joint_partition,
    fit_ct,
    fit_standard,
    predict_ct,
    predict_standard,
    resolve_rejections,
)
from .data import InputError, load_dataset, write_predictions_csv
from .glm import BINOMIAL, GAUSSIAN, MULTINOMIAL, GlmFamily, default_fractions
from .losses import MISCLASSIFICATION, SQUARED_ERROR, LossSpec
from .selection import (
    DEFAULT_FOLDS,
    DEFAULT_G_GRID,
    DEFAULT_K_GRID,
    cv_select,
    cv_select_grouped,
    knn_baseline,
    knn_cv_select,
    make_folds,
)
from .simulation import (
    RESULT_COLUMNS,
    SUMMARY_COLUMNS,
    run_study,
    summarize,
    write_rows_csv,
)


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _weights(text):
    out = {}
    for part in text.split(","):
        if not part.strip():
            continue
        label, sep, value = part.partition("=")
        try:
            out[label.strip()] = float(value)
        except ValueError:
            sep = ""
        if not sep:
            raise argparse.ArgumentTypeError(f"expected label=weight pairs, got {text!r}")
    return out


def _add_data_flags(p, test_required=True):
    p.add_argument("--train", required=True, type=Path, help="training CSV")
    p.add_argument("--test", required=test_required, type=Path, help="test CSV")
    p.add_argument("--response", required=True, help="response column name")
    p.add_argument("--family", choices=(GAUSSIAN, BINOMIAL, MULTINOMIAL),
                   help="GLM family (default: inferred from the response)")


def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out-dir", type=Path, default=Path("."))


def _add_path_flags(p):
    p.add_argument("--lambda-count", type=int, default=100)
    p.add_argument("--lambda-min-ratio", type=float, default=None)
    p.add_argument("--folds", type=int, default=DEFAULT_FOLDS)


def build_parser():
    parser = argparse.ArgumentParser(prog="ct", description="Customized training")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cv-fit", help="cross-validate and fit a customized model")
    _add_data_flags(p)
    p.add_argument("--group", help="group column; switches to grouped mode")
    p.add_argument("--r-neighbors", type=int, default=DEFAULT_R)
    p.add_argument("--g-grid", type=_int_list, default=list(DEFAULT_G_GRID))
    p.add_argument("--loss-weights", type=_weights, default=None,
                   help="misclassification weights by true label, e.g. cancer=2,normal=1")
    p.add_argument("--stratify", action="store_true")
    p.add_argument("--standardize-distances", action="store_true")
    _add_path_flags(p)
    _add_common(p)

    p = sub.add_parser("predict", help="predict test rows with a fitted model")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--test", required=True, type=Path)
    p.add_argument("--train", type=Path, help="training CSV (needed to resolve rejections)")
    p.add_argument("--resolve-rejections", action="store_true")
    p.add_argument("--min-train", type=int, default=1)
    p.add_argument("--loss-weights", type=_weights, default=None)
    _add_common(p)

    p = sub.add_parser("simulate", help="run the synthetic clustered-regression study")
    p.add_argument("--setting", required=True)
    p.add_argument("--sigma-c", type=_float_list, default=[0.0, 5.0, 10.0])
    p.add_argument("--seeds", type=int, default=10, help="number of instances per sigma_c")
    p.add_argument("--methods", default="CT,ST,KNN")
    p.add_argument("--g-grid", type=_int_list, default=list(DEFAULT_G_GRID))
    p.add_argument("--k-grid", type=_int_list, default=list(DEFAULT_K_GRID))
    _add_path_flags(p)
    _add_common(p)

    p = sub.add_parser("baseline", help="standard lasso (st) or k-nearest neighbors (knn)")
    p.add_argument("method", choices=("st", "knn"))
    _add_data_flags(p)
    p.add_argument("--k-grid", type=_int_list, default=list(DEFAULT_K_GRID))
    p.add_argument("--loss-weights", type=_weights, default=None)
    _add_path_flags(p)
    _add_common(p)
    return parser


# -- helpers --

def _load_train(args, group=None):
    classification = None
    if args.family is not None:
        classification = args.family != GAUSSIAN
    ds = load_dataset(args.train, args.response, group, classification=classification)
    if args.family is None:
        family = GAUSSIAN if not ds.is_classification else (
            BINOMIAL if ds.n_classes == 2 else MULTINOMIAL)
    else:
        family = args.family
        if family == BINOMIAL and ds.n_classes != 2:
            raise InputError(f"--family binomial needs 2 classes, found {ds.n_classes}")
    fam = GlmFamily(family, ds.n_classes) if family == MULTINOMIAL else GlmFamily(family)
    return ds, fam


def _load_test(path, train, group=None):
    ds = load_dataset(path, train.response_name, group,
                      classes=train.classes or None,
                      classification=train.is_classification,
                      require_response=False)
    if ds.feature_names != train.feature_names:
        raise InputError(f"{path}: feature columns {list(ds.feature_names)} do not match "
                         f"training columns {list(train.feature_names)}")
    return ds


def _loss_spec(family, classes, weights):
    if not family.is_classification:
        if weights:
            raise InputError("--loss-weights needs a classification response")
        return LossSpec(SQUARED_ERROR)
    if not weights:
        return LossSpec(MISCLASSIFICATION)
    unknown = sorted(set(weights) - set(classes))
    if unknown:
        raise InputError(f"--loss-weights names unknown labels {unknown}")
    return LossSpec(MISCLASSIFICATION, tuple(weights.get(c, 1.0) for c in classes))


def _settings(args):
    if args.lambda_count < 1:
        raise InputError("--lambda-count must be at least 1")
    if args.lambda_min_ratio is not None and not 0 < args.lambda_min_ratio < 1:
        raise InputError("--lambda-min-ratio must lie in (0, 1)")
    return FitSettings(default_fractions(args.lambda_count), args.lambda_min_ratio)


def _fingerprint(X):
    return hashlib.sha256(np.ascontiguousarray(X, dtype=float).tobytes()).hexdigest()


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _manifest(args, outputs, started):
    flags = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())}
    flags.pop("func", None)
    inputs = {k: flags[k] for k in ("train", "test", "model") if flags.get(k)}
    _write_json(args.out_dir / "manifest.json", {
        "command": args.command,
        "inputs": inputs,
        "flags": flags,
        "seed": args.seed,
        "version": __version__,
        "outputs": sorted(outputs),
        "duration_seconds": round(time.perf_counter() - started, 3),
    })


def _decode(values, classes):
    if not classes:
        return [float(v) for v in values]
    return [classes[int(v)] for v in values]


# -- commands --

def cmd_cv_fit(args):
    started = time.perf_counter()
    train, family = _load_train(args, args.group)
    test = _load_test(args.test, train, args.group)
    loss = _loss_spec(family, train.classes, args.loss_weights)
    settings = _settings(args)
    X, y = train.features, train.response

    if args.group:
        report = cv_select_grouped(X, y, train.group_ids, family, settings, args.folds,
                                   args.seed, loss, args.r_neighbors, args.threads)
        part = build_grouped_partition(X, test.features, test.group_ids, args.r_neighbors)
    else:
        if any(g < 1 for g in args.g_grid) or not args.g_grid:
            raise InputError("--g-grid needs positive integers")
        if not 2 <= args.folds <= train.n:
            raise InputError(f"--folds must lie in 2..{train.n}")
        report = cv_select(X, y, family, args.g_grid, settings, args.folds, args.seed, loss,
                           stratify=args.stratify,
                           standardize_distances=args.standardize_distances,
                           threads=args.threads)
        part = build_joint_partition(X, test.features, report.selected_G,
                                     args.standardize_distances)
    model = fit_ct(part, X, y, family, lambda_index=report.selected_index,
                   settings=settings, threads=args.threads)

    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    doc = model.to_dict()
    doc["meta"] = {
        "feature_names": list(train.feature_names),
        "response": train.response_name,
        "classes": list(train.classes),
        "group_column": args.group,
        "test_group_labels": list(test.group_labels),
        "loss_weights": None if loss.class_weights is None else list(loss.class_weights),
        "test_fingerprint": _fingerprint(test.features),
        "standardize_distances": bool(args.standardize_distances),
    }
    _write_json(out / "model.json", doc)
    _write_json(out / "cv_report.json", report.to_dict())
    report.write_csv(out / "cv_report.csv")
    _manifest(args, ["model.json", "cv_report.json", "cv_report.csv"], started)
    rejected = sorted(part.rejected_clusters)
    print(f"selected G={report.selected_G} lambda_fraction={report.selected_fraction:.4g}; "
          f"{len(rejected)} rejected cluster(s)")
    return 0


def cmd_predict(args):
    started = time.perf_counter()
    try:
        doc = json.loads(Path(args.model).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read model {args.model}: {exc}") from None
    meta = doc["meta"]
    model = CtModel.from_dict(doc)
    classes = tuple(meta["classes"])
    names = tuple(meta["feature_names"])

    test = load_dataset(args.test, meta["response"], meta["group_column"],
                        classes=classes or None, classification=bool(classes),
                        require_response=False)
    if test.p != len(names):
        raise InputError(f"model expects {len(names)} features, {args.test} has {test.p}")
    if test.feature_names != names:
        raise InputError(f"{args.test}: feature columns do not match the model")
    if _fingerprint(test.features) != meta["test_fingerprint"]:
        raise InputError(f"{args.test}: test rows differ from those the model was fit with")

    if args.resolve_rejections and model.partition.rejected_clusters:
        if args.train is None:
            raise InputError("--resolve-rejections needs --train")
        train = load_dataset(args.train, meta["response"], meta["group_column"],
                             classes=classes or None, classification=bool(classes))
        if train.feature_names != names:
            raise InputError(f"{args.train}: feature columns do not match the model")
        model = resolve_rejections(model, train.features, train.response,
                                   args.min_train, args.threads)

    weights = meta.get("loss_weights")
    if args.loss_weights:
        weights = _loss_spec(model.family, classes, args.loss_weights).class_weights
    pred = predict_ct(model, test.features, weights)

    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    values = _decode(pred.values.filled(0), classes)
    extra = None
    if args.resolve_rejections:
        extra = {"d_prime": [None if np.isnan(h) else float(h) for h in pred.resolved_height]}
    write_predictions_csv(out / "predictions.csv", values, pred.cluster_ids, pred.rejected,
                          extra)

    part = model.partition
    with (out / "rejections.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_index", "cluster_id", "d_G", "d_prime", "resolved"])
        for k in sorted(part.rejected_clusters):
            res = model.resolutions.get(k)
            for i in part.clusters[k].test_indices:
                w.writerow([int(i), k, repr(float(part.cut_height)),
                            "" if res is None else repr(float(res.resolved_height)),
                            "false" if res is None else "true"])
    _manifest(args, ["predictions.csv", "rejections.csv"], started)
    return 0


def cmd_simulate(args):
    started = time.perf_counter()
    methods = tuple(m.strip().upper() for m in args.methods.split(",") if m.strip())
    if args.seeds < 1:
        raise InputError("--seeds must be at least 1")
    seeds = [args.seed + i for i in range(args.seeds)]
    rows = run_study(args.setting, args.sigma_c, seeds, methods, args.g_grid, _settings(args),
                     args.folds, args.k_grid, args.threads,
                     progress=lambda msg: print(msg, file=sys.stderr))
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    write_rows_csv(out / "results.csv", rows, RESULT_COLUMNS)
    write_rows_csv(out / "summary.csv", summarize(rows), SUMMARY_COLUMNS)
    _manifest(args, ["results.csv", "summary.csv"], started)
    return 0


def cmd_baseline(args):
    started = time.perf_counter()
    train, family = _load_train(args)
    test = _load_test(args.test, train)
    loss = _loss_spec(family, train.classes, args.loss_weights)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    outputs = ["predictions.csv"]
    if not 2 <= args.folds <= train.n:
        raise InputError(f"--folds must lie in 2..{train.n}")
    if args.method == "st":
        settings = _settings(args)
        report = cv_select(train.features, train.response, family, (1,), settings,
                           args.folds, args.seed, loss, threads=args.threads)
        fit, idx = fit_standard(train.features, train.response, family,
                                lambda_index=report.selected_index, settings=settings)
        values = predict_standard(fit, idx, test.features, loss.class_weights)
        _write_json(out / "cv_report.json", report.to_dict())
        outputs.append("cv_report.json")
    else:
        folds = make_folds(train.n, args.folds, args.seed)
        k, _ = knn_cv_select(train.features, train.response, args.k_grid, folds=folds,
                             classification=train.is_classification,
                             n_classes=train.n_classes or None, loss=loss)
        values = knn_baseline(train.features, train.response, test.features, k,
                              train.is_classification, train.n_classes or None, loss)
    m = test.n
    write_predictions_csv(out / "predictions.csv", _decode(values, train.classes),
                          np.zeros(m, dtype=int), np.zeros(m, dtype=bool))
    _manifest(args, outputs, started)
    return 0


COMMANDS = {"cv-fit": cmd_cv_fit, "predict": cmd_predict, "simulate": cmd_simulate,
            "baseline": cmd_baseline}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    if getattr(args, "threads", 1) < 1:
        print("ct: error: --threads must be at least 1", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"ct: error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
