"""
Command line experiment runner.

Subcommands
-----------
simulate     write a 1D or 3D synthetic dataset with its grid and true weights
fit          evaluate one method (cuts or voxel-level baselines) and export weights
searchlight  score map of small spheres around every voxel
compare      summary table and paired t-tests over run reports

Every subcommand accepts ``--config FILE`` holding a JSON object whose keys
are flag names; flags given on the command line take precedence. Exit codes
are 0 on success, 2 on invalid input and 1 on runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .cut import (cut_weight_map, expected_fit_count, fit_with_cut, supervised_cut,
                  unsupervised_cut_select)
from .errors import AgdError, IncomparableRunsError, InvalidInputError
from .estimators import make_estimator
from .evaluation import FoldScheme, comparison_table, fold_assignment, get_score, summarize
from .grid import VoxelGrid, WeightMap, build_connectivity, load_dataset, save_dataset
from .parcellation import parcel_averages
from .searchlight import SearchlightSpec, searchlight_map
from .simulation import Sim1dSpec, Sim3dSpec, simulate_1d, simulate_3d, true_weights_1d
from .ward import ward_build

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2
REPORT_FORMAT = 1
CUT_METHODS = ("sc", "uc")
VOXEL_METHODS = ("enet", "svc", "brr")


# Output helpers

def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _n_jobs(args):
    if getattr(args, "jobs", None):
        return max(1, int(args.jobs))
    env = os.environ.get("AGD_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InvalidInputError(f"AGD_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise InvalidInputError(f"missing required option(s): {flags}")


def _out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_report_schema():
    return json.loads(resources.files("agd").joinpath("schemas/report.schema.json").read_text())


def validate_report(report):
    """Raise ``InvalidInputError`` unless ``report`` matches the shipped schema."""
    import jsonschema

    try:
        jsonschema.validate(report, load_report_schema())
    except jsonschema.ValidationError as exc:
        raise InvalidInputError(f"report does not match schema: {exc.message}") from None


# simulate

def cmd_simulate(args):
    _require(args, "kind", "seed", "out")
    out = _out_dir(args.out)
    ext = "csv" if args.format == "csv" else "raw"
    if args.kind == "1d":
        kw = {k: v for k, v in (("n", args.n), ("p", args.p), ("noise_std", args.noise_std)) if v is not None}
        spec = Sim1dSpec(seed=args.seed, **kw)
        ds = simulate_1d(spec)
        grid = VoxelGrid.line(spec.p)
        save_dataset(ds, out / f"dataset.{ext}", args.format)
        WeightMap(true_weights_1d(spec), grid).to_csv(out / "true_weights.csv")
        files = [f"dataset.{ext}"]
    else:
        kw = {k: v for k, v in (("n", args.n), ("snr_db", args.snr_db), ("sigma", args.sigma)) if v is not None}
        if args.dims is not None:
            kw["dims"] = tuple(args.dims)
        spec = Sim3dSpec(seed=args.seed, **kw)
        sim = simulate_3d(spec)
        grid = spec.grid
        save_dataset(sim.train, out / f"train.{ext}", args.format)
        save_dataset(sim.test, out / f"test.{ext}", args.format)
        sim.true_weights.to_csv(out / "true_weights.csv")
        files = [f"train.{ext}", f"test.{ext}"]
    grid.save(out / "grid.json")
    _write_json(out / "spec.json", {**spec.to_json(), "format": args.format, "version": __version__,
                                    "files": files + ["grid.json", "true_weights.csv"]})
    print(f"wrote {', '.join(files)} to {out}")
    return EXIT_OK


# fit

def _load_grid(args, p):
    grid = VoxelGrid.load(args.grid) if args.grid else VoxelGrid.line(p)
    if grid.n_features != p:
        raise InvalidInputError(f"grid has {grid.n_features} features, dataset has {p}")
    return grid


def _check_method(method):
    if method in CUT_METHODS or method in VOXEL_METHODS:
        return
    if method.startswith("anova+"):
        make_estimator(method)
        return
    raise InvalidInputError(f"unknown method {method!r}; expected sc, uc, enet, svc, brr or anova+<estimator>")


def _voxel_estimator(method):
    if method == "svc":
        return make_estimator("svc-cv")
    return make_estimator(method)


def _check_task(estimator, dataset, what):
    clf = bool(getattr(estimator, "is_classifier", False))
    if clf != dataset.is_classification:
        kind = "integer labels" if dataset.is_classification else "a real-valued target"
        raise InvalidInputError(f"{what} does not fit a dataset with {kind}")


def _weights_of(model):
    w = np.asarray(model.w, dtype=np.float64)
    return w[:-1] if w.ndim == 1 else np.linalg.norm(w[:, :-1], axis=0)


def _run_once(args, train, test, grid, graph, score, n_jobs):
    """Fit ``args.method`` on ``train`` and score it on ``test``."""
    info = {}
    trace = None
    if args.method in CUT_METHODS:
        est = make_estimator(args.estimator)
        cv_e, cv_s = FoldScheme.parse(args.cv_e), FoldScheme.parse(args.cv_s)
        tree = ward_build(train, graph)
        if args.method == "sc":
            trace = supervised_cut(train, tree, args.delta, est, cv_e, cv_s, score, n_jobs)
            info["closed_form_n_fits"] = expected_fit_count(trace.max_delta, cv_e.n_splits(train.n_samples, train.groups),
                                                         cv_s.n_splits(train.n_samples, train.groups))
        else:
            trace = unsupervised_cut_select(train, tree, args.delta, est, cv_s, score, n_jobs)
        model = fit_with_cut(trace, train, est)
        pred = model.predict(parcel_averages(test.X, trace.chosen_parcellation))
        weights = cut_weight_map(trace, model, grid)
        info.update(chosen_delta=trace.chosen_delta, n_parcels=trace.chosen_parcellation.n_parcels,
                    n_fits=trace.n_fits, forced_merges=int(np.sum(tree.forced)))
    else:
        model = _voxel_estimator(args.method).fit(train.X, train.y)
        pred = model.predict(test.X)
        weights = WeightMap(_weights_of(model), grid)
    info["params"] = _jsonable(getattr(model, "params", {}) or {})
    return get_score(score)(test.y, pred), weights, trace, info


def _splits(args, data, data_path):
    """Outer (train, test) pairs, the evaluation record and the fold signature."""
    n = data.n_samples
    sig = {"data": _sha256(data_path)}
    if args.test:
        test = load_dataset(args.test)
        if test.n_features != data.n_features:
            raise InvalidInputError(f"test set has {test.n_features} features, training set {data.n_features}")
        sig["test"] = _sha256(args.test)
        pairs = [(data, test)]
        evaluation = {"kind": "test", "scheme": None, "n_folds": 1}
    elif args.holdout is not None:
        if not 0 < args.holdout < 1:
            raise InvalidInputError("--holdout must lie in (0, 1)")
        n_test = math.ceil(args.holdout * n)
        if not 2 <= n_test <= n - 2:
            raise InvalidInputError(f"holdout of {n_test} samples out of {n} is too small or too large")
        rows = np.arange(n)
        pairs = [(data.subset(rows[:n - n_test]), data.subset(rows[n - n_test:]))]
        sig["holdout"] = n_test
        evaluation = {"kind": "holdout", "scheme": f"last {n_test} of {n}", "n_folds": 1}
    else:
        scheme = FoldScheme.parse(args.cv)
        folds = scheme.split(n, data.groups)
        sig["folds"] = fold_assignment(folds, n).tolist()
        pairs = [(data.subset(tr), data.subset(te)) for tr, te in folds]
        evaluation = {"kind": "cv", "scheme": str(scheme), "n_folds": len(folds)}
    evaluation["fold_signature"] = hashlib.sha256(json.dumps(sig, sort_keys=True).encode()).hexdigest()
    return pairs, evaluation


def cmd_fit(args):
    _require(args, "data", "method", "out")
    _check_method(args.method)
    t0 = time.perf_counter()
    data = load_dataset(args.data)
    grid = _load_grid(args, data.n_features)
    graph = build_connectivity(grid, args.connectivity)
    score = args.score or ("kappa" if data.is_classification else "zeta")
    get_score(score)
    if args.method in CUT_METHODS:
        if args.estimator is None:
            args.estimator = "svc" if data.is_classification else "brr"
        _check_task(make_estimator(args.estimator), data, f"estimator {args.estimator!r}")
        if args.delta < 1:
            raise InvalidInputError("--delta must be >= 1")
        FoldScheme.parse(args.cv_e)
        FoldScheme.parse(args.cv_s)
    else:
        _check_task(_voxel_estimator(args.method), data, f"method {args.method!r}")
    n_jobs = _n_jobs(args)
    out = _out_dir(args.out)

    pairs, evaluation = _splits(args, data, args.data)
    folds = []
    timings = []
    for f, (train, test) in enumerate(pairs):
        tf = time.perf_counter()
        s, weights, trace, info = _run_once(args, train, test, grid, graph, score, n_jobs)
        timings.append(time.perf_counter() - tf)
        final = dict(info)
        info.pop("params")
        folds.append({"fold": f, "score": s, "n_train": train.n_samples, "n_test": test.n_samples, **info})
    scores = [fd["score"] for fd in folds]

    final_train = pairs[0][0]
    if evaluation["kind"] == "cv":
        # weights and trace come from one more fit on all the data
        final_train = data
        tf = time.perf_counter()
        _, weights, trace, final = _run_once(args, data, data, grid, graph, score, n_jobs)
        timings.append(time.perf_counter() - tf)

    outputs = ["report.json", "weights.csv"]
    weights.to_csv(out / "weights.csv")
    if trace is not None:
        trace.save(out / "trace.json")
        trace.chosen_parcellation.to_csv(out / "parcellation.csv")
        outputs += ["trace.json", "parcellation.csv"]
    report = {
        "format_version": REPORT_FORMAT,
        "command": "fit",
        "version": __version__,
        "label": args.label or args.method,
        "method": args.method,
        "score": score,
        "estimator": args.estimator if args.method in CUT_METHODS else None,
        "delta": args.delta if args.method in CUT_METHODS else None,
        "cv_e": args.cv_e if args.method == "sc" else None,
        "cv_s": args.cv_s if args.method in CUT_METHODS else None,
        "evaluation": evaluation,
        "per_fold_scores": scores,
        "summary": summarize(scores),
        "folds": folds,
        "final_fit": {"n_train": final_train.n_samples, **final},
        "inputs": {"data": str(args.data), "test": args.test, "grid": args.grid,
                   "connectivity": args.connectivity, "n_samples": data.n_samples,
                   "n_features": data.n_features},
        "outputs": sorted(outputs),
    }
    report = _jsonable(report)
    validate_report(report)
    _write_json(out / "report.json", report)
    elapsed = time.perf_counter() - t0
    if args.telemetry:
        _write_json(args.telemetry, {"wall_clock_s": elapsed, "fit_wall_clock_s": timings, "n_jobs": n_jobs,
                                     "n_fits": [fd.get("n_fits") for fd in folds]})
    print(f"{report['label']}: mean {score} {report['summary']['mean']:.4f} over "
          f"{len(scores)} fold(s), {elapsed:.1f} s")
    return EXIT_OK


# searchlight

def cmd_searchlight(args):
    _require(args, "data", "out")
    data = load_dataset(args.data)
    grid = _load_grid(args, data.n_features)
    score = args.score or ("kappa" if data.is_classification else "zeta")
    estimator = args.estimator or ("svc" if data.is_classification else "brr")
    _check_task(make_estimator(estimator), data, f"estimator {estimator!r}")
    spec = SearchlightSpec(args.radius, estimator, FoldScheme.parse(args.cv), score)
    out = _out_dir(args.out)
    t0 = time.perf_counter()
    sl = searchlight_map(data, grid, spec, _n_jobs(args))
    sl.to_csv(out / "searchlight.csv")
    valid = sl.values[~sl.missing] if sl.missing is not None else sl.values
    report = _jsonable({
        "format_version": REPORT_FORMAT,
        "command": "searchlight",
        "version": __version__,
        "label": args.label or "searchlight",
        "method": "searchlight",
        "score": score,
        "estimator": estimator,
        "radius": float(args.radius),
        "cv": str(spec.cv),
        "n_voxels": grid.n_features,
        "n_missing": int(sl.missing.sum()) if sl.missing is not None else 0,
        "summary": summarize(valid) if len(valid) else None,
        "inputs": {"data": str(args.data), "grid": args.grid, "n_samples": data.n_samples,
                   "n_features": data.n_features},
        "outputs": ["report.json", "searchlight.csv"],
    })
    validate_report(report)
    _write_json(out / "report.json", report)
    if args.telemetry:
        _write_json(args.telemetry, {"wall_clock_s": time.perf_counter() - t0})
    print(f"searchlight map over {grid.n_features} voxels written to {out}")
    return EXIT_OK


# compare

def _load_reports(paths):
    reports = []
    for path in paths:
        with open(path) as fh:
            try:
                rep = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InvalidInputError(f"{path}: not valid JSON ({exc})") from None
        validate_report(rep)
        if rep["command"] != "fit":
            raise InvalidInputError(f"{path}: only fit reports can be compared")
        reports.append(rep)
    return reports


def cmd_compare(args):
    if not args.reports or len(args.reports) < 2:
        raise InvalidInputError("compare needs at least two run reports")
    _require(args, "out")
    reports = _load_reports(args.reports)
    labels = [r["label"] for r in reports]
    if len(set(labels)) != len(labels):
        raise InvalidInputError(f"duplicate run labels {labels}; set --label when fitting")
    sigs = {r["evaluation"]["fold_signature"] for r in reports}
    if len(sigs) != 1:
        raise IncomparableRunsError("runs were evaluated on different data or folds")
    if len({r["score"] for r in reports}) != 1:
        raise IncomparableRunsError("runs use different scores")
    reference = args.reference or labels[0]
    if reference not in labels:
        raise InvalidInputError(f"reference {reference!r} is not among {labels}")
    rows, errors = comparison_table({lab: r["per_fold_scores"] for lab, r in zip(labels, reports)}, reference)
    out = _out_dir(args.out)
    columns = ["method", "mean", "std", "max", "min", "p_vs_reference"]
    with open(out / "comparison.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow(["" if row[c] is None else (repr(row[c]) if isinstance(row[c], float) else row[c])
                             for c in columns])
    _write_json(out / "comparison.json", _jsonable({
        "reference": reference, "score": reports[0]["score"], "columns": columns, "rows": rows,
        "errors": errors, "fold_signature": sigs.pop()}))
    for name, msg in sorted(errors.items()):
        print(f"warning: no p-value for {name}: {msg}", file=sys.stderr)
    print(f"compared {len(rows)} runs against {reference}; table in {out / 'comparison.csv'}")
    return EXIT_OK


# Parser

def _common(p, jobs=True):
    p.add_argument("--config", help="JSON file of option values; command line flags take precedence")
    if jobs:
        p.add_argument("--jobs", type=int, help="worker threads (default: $AGD_THREADS or all cores)")
        p.add_argument("--telemetry", help="write wall-clock timings to this JSON file")


def build_parser():
    parser = argparse.ArgumentParser(prog="agd", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic dataset")
    _common(p, jobs=False)
    p.add_argument("--kind", choices=["1d", "3d"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--n", type=int, help="samples (per set for 3d)")
    p.add_argument("--p", type=int, help="features (1d)")
    p.add_argument("--noise-std", type=float, help="noise standard deviation (1d)")
    p.add_argument("--snr-db", type=float, help="signal to noise ratio in dB (3d)")
    p.add_argument("--sigma", type=float, help="smoothing kernel width in voxels (3d)")
    p.add_argument("--dims", type=int, nargs=3, help="volume shape (3d)")
    p.add_argument("--format", choices=["csv", "raw_f64"], default="csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="evaluate a method and export its weights")
    _common(p)
    p.add_argument("--data", help="training (or full) dataset")
    p.add_argument("--test", help="independent test dataset")
    p.add_argument("--holdout", type=float, help="hold out this fraction of trailing samples")
    p.add_argument("--cv", default="kfold:4", help="outer folds when no test set is given (default kfold:4)")
    p.add_argument("--grid", help="grid JSON (default: a line of features)")
    p.add_argument("--connectivity", choices=["face_6", "chain_1d"], default="face_6")
    p.add_argument("--method", help="sc, uc, enet, svc, brr or anova+<estimator>")
    p.add_argument("--estimator", help="estimator for sc/uc: brr, svc, svc-cv or enet")
    p.add_argument("--delta", type=int, default=50, help="maximal number of cut steps (default 50)")
    p.add_argument("--cv-e", default="kfold:4", help="exploration folds (default kfold:4)")
    p.add_argument("--cv-s", default="kfold:4", help="selection folds (default kfold:4)")
    p.add_argument("--score", choices=["zeta", "kappa"])
    p.add_argument("--label", help="name of the run in comparison tables (default: the method)")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("searchlight", help="sphere score map")
    _common(p)
    p.add_argument("--data")
    p.add_argument("--grid")
    p.add_argument("--radius", type=float, default=2.0)
    p.add_argument("--estimator")
    p.add_argument("--cv", default="kfold:4")
    p.add_argument("--score", choices=["zeta", "kappa"])
    p.add_argument("--label")
    p.add_argument("--out")
    p.set_defaults(func=cmd_searchlight)

    p = sub.add_parser("compare", help="table of run reports with paired t-tests")
    _common(p, jobs=False)
    p.add_argument("reports", nargs="*", help="report.json files written by fit")
    p.add_argument("--reference", help="label of the reference run (default: the first)")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_compare)
    return parser, sub


def _apply_config(parser, sub, args, argv):
    with open(args.config) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{args.config}: not valid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise InvalidInputError(f"{args.config}: expected a JSON object")
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    known = set(vars(args)) - {"func", "command", "config"}
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise InvalidInputError(f"{args.config}: unknown option(s) {unknown} for {args.command}")
    sub.choices[args.command].set_defaults(**cfg)
    return parser.parse_args(argv)


def main(argv=None):
    parser, sub = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(argv)
    try:
        if args.config:
            args = _apply_config(parser, sub, args, argv)
        return args.func(args)
    except (InvalidInputError, IncomparableRunsError, FileNotFoundError) as exc:
        print(f"agd {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (AgdError, OSError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"agd {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
