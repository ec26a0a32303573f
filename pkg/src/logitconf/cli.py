"""``logitconf`` command line.

Exit codes: 0 success, 2 usage error, 3 I/O error, 4 shape or validation
error, 5 numerical non-convergence or a failed internal bound check.
"""

import argparse
import csv
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench, io, metrics, toy
from .core import (METHODS, QUAD_MAX_NODES, EstimatorConfig, GaussianField, ValidationError,
                   field_confidence, flat_confidence, winners_of)
from .ensemble import EnsembleField, ensemble_confidence

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3, 4, 5
BOUND_SLACK = 1e-7


class NumericalError(RuntimeError):
    pass


def _read_field(means_path, stds_path):
    means, stds = io.read_array(means_path), io.read_array(stds_path)
    if means.shape != stds.shape:
        raise ValidationError(f"means {means.shape} and stds {stds.shape} differ in shape")
    if means.ndim != 3:
        raise ValidationError(f"field tensors must be (H, W, C), got {means.shape}")
    return GaussianField(means.astype(np.float64), stds.astype(np.float64))


def _write_maps(args, out):
    io.write_array(args.out_pred, out.prediction.astype(np.uint32), "u32")
    io.write_array(args.out_conf, out.confidence, "f32")
    io.write_array(args.out_unc, out.uncertainty, "f32")


def _cfg(args, method=None):
    return EstimatorConfig(method=method or args.method, sample_count=args.samples, seed=args.seed,
                           quadrature_points=args.quad_points, quadrature_max_nodes=args.quad_max_nodes,
                           shared_pool=args.shared_pool, threads=args.threads)


def _check_converged(out):
    if out.nonconverged:
        raise NumericalError(f"quadrature hit the node cap at {out.nonconverged} pixel(s)")


def cmd_confidence(args):
    out = field_confidence(_read_field(args.means, args.stds), _cfg(args))
    _write_maps(args, out)
    _check_converged(out)


def _report(conf, pred, labels, args, method, sample_count, seed, wall):
    conf, pred, labels = (np.asarray(a) for a in (conf, pred, labels))
    if not conf.shape == pred.shape == labels.shape:
        raise ValidationError(f"shape mismatch: conf {conf.shape}, pred {pred.shape}, labels {labels.shape}")
    keep = metrics.scored_mask(labels, args.ignore)
    if not keep.any():
        raise ValidationError("no pixels left after removing the ignore label")
    rep = metrics.calibration_report(conf[keep], pred[keep] == labels[keep], args.bins, args.scheme)
    extra = {}
    if args.classes:
        cm = metrics.accumulate_confusion(pred, labels, args.classes, args.ignore)
        iou, mean = metrics.miou(cm)
        extra = {"miou": mean, "per_class_iou": iou.tolist()}
    doc = io.report_dict(rep, method=method, sample_count=sample_count, seed=seed,
                         wall_time_seconds=wall, **extra)
    return rep, doc


def _emit_report(rep, doc, json_path, csv_path=None, svg_path=None, title="Reliability diagram"):
    io.write_report(json_path, doc)
    rows = metrics.reliability_rows(rep.bins)
    if csv_path:
        io.write_csv(csv_path, rows)
    if svg_path:
        metrics.render_reliability_svg(rows, svg_path, title)


def cmd_calibrate(args):
    t0 = time.perf_counter()
    conf = io.read_array(args.conf)
    pred = io.read_array(args.pred)
    labels = io.read_array(args.labels)
    rep, doc = _report(conf, pred, labels, args, args.method, args.sample_count, args.seed,
                       time.perf_counter() - t0)
    _emit_report(rep, doc, args.out_json, args.out_csv, args.out_svg)
    print(f"ACE {rep.ace:.6f}  ECE {rep.ece:.6f}  bins {len(rep.bins)}/{rep.requested_bins}")


COMPARE_FIELDS = ("row", "col", "winner", "exact", "lower_bound", "mc", "joint", "softmax_avg")


def compare_table(field, mc_samples, softmax_samples, seed, threads=1):
    """Per-pixel confidence of the largest-mean class under every estimator."""
    means, stds = field.flat()
    winners = winners_of(means)
    cols = {}
    for key, method, n in (("exact", "quadrature", 1), ("lower_bound", "lower-bound", 1),
                           ("mc", "mc-integration", mc_samples), ("joint", "joint-sampling", mc_samples),
                           ("softmax_avg", "softmax-avg", softmax_samples)):
        cfg = EstimatorConfig(method=method, sample_count=n, seed=seed, threads=threads)
        cols[key], ok = flat_confidence(means, stds, winners, cfg)
        if key == "exact" and not ok.all():
            raise NumericalError(f"quadrature hit the node cap at {int((~ok).sum())} pixel(s)")
    rows, cols_idx = np.divmod(np.arange(means.shape[0]), field.width)
    return rows, cols_idx, winners, cols


def cmd_compare(args):
    field = _read_field(args.means, args.stds)
    rows, cols_idx, winners, cols = compare_table(field, args.mc_samples, args.samples, args.seed, args.threads)
    gap = cols["exact"] - cols["lower_bound"]
    with open(args.out_csv, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARE_FIELDS)
        for i in range(winners.shape[0]):
            w.writerow([rows[i], cols_idx[i], winners[i]] + [repr(float(cols[k][i])) for k in COMPARE_FIELDS[3:]])
        w.writerow(["mean", "", ""] + [repr(float(cols[k].mean())) for k in COMPARE_FIELDS[3:]])
        w.writerow(["mean_exact_minus_lower_bound", "", "", repr(float(gap.mean())), "", "", "", ""])
    print(f"pixels {winners.shape[0]}  mean(exact - lower_bound) {gap.mean():.6g}  max {gap.max():.6g}")
    if (gap < -BOUND_SLACK).any():
        raise NumericalError(f"lower bound exceeds exact value at {int((gap < -BOUND_SLACK).sum())} pixel(s)")


def cmd_ensemble(args):
    members = []
    for spec in args.member:
        parts = spec.split(",")
        if len(parts) != 2:
            raise ValidationError(f"--member expects MEANS,STDS, got {spec!r}")
        members.append(_read_field(*parts))
    out = ensemble_confidence(EnsembleField(tuple(members)), _cfg(args))
    _write_maps(args, out)
    if args.labels and args.out_json:
        rep, doc = _report(out.confidence, out.prediction, io.read_array(args.labels), args, args.method,
                           args.samples, args.seed, None)
        doc["members"] = len(members)
        _emit_report(rep, doc, args.out_json)
    _check_converged(out)


def cmd_bench(args):
    results = bench.run_bench(args.classes, args.pixels, args.methods.split(","), args.samples,
                              args.repeats, args.warmup, args.seed,
                              args.backends.split(",") if args.backends else None, args.threads,
                              shared_pool=not args.no_shared_pool)
    print(bench.format_table(results))
    if args.out_json:
        Path(args.out_json).write_text(json.dumps(bench.bench_document(results), indent=2) + "\n",
                                       encoding="utf-8")


# -- toy pipeline -------------------------------------------------------------

TOY_FILES = {
    "setup": "setup.json",
    "gaussian": "gaussian_model.json",
    "point": "point_model.json",
    "means": "test_means.glf",
    "stds": "test_stds.glf",
    "point_probs": "test_point_probs.glf",
    "labels": "test_labels.glf",
}


def _toy_setup(args):
    setup = toy.ToySetup()
    over = {k: v for k, v in (("epochs", args.epochs), ("lr", args.lr), ("samples", args.train_samples))
            if v is not None}
    setup = replace(setup, train=replace(setup.train, seed=args.seed, **over))
    if args.n_train is not None:
        setup = replace(setup, n_train=args.n_train)
    if args.n_test is not None:
        setup = replace(setup, n_test=args.n_test)
    return setup


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise io.ReportFormatError(f"invalid JSON in {path}: {exc}") from exc


def cmd_toy_train(args):
    setup = _toy_setup(args)
    train_set, test_set = toy.make_splits(setup, args.seed)
    gm, g_curve = toy.fit_gaussian_head(train_set, setup.train)
    pm, p_curve = toy.fit_point_estimate(train_set, setup.train)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / TOY_FILES["setup"], {"setup": setup.to_dict(), "data_seed": args.seed})
    _write_json(out / TOY_FILES["gaussian"], {**gm.to_dict(), "loss_curve": g_curve})
    _write_json(out / TOY_FILES["point"], {**pm.to_dict(), "loss_curve": p_curve})
    f = toy.predict_field(gm, test_set.inputs)
    io.write_array(out / TOY_FILES["means"], f.means, "f32")
    io.write_array(out / TOY_FILES["stds"], f.stds, "f32")
    io.write_array(out / TOY_FILES["point_probs"], pm.probs(test_set.inputs)[None], "f32")
    io.write_array(out / TOY_FILES["labels"], test_set.labels[None].astype(np.uint32), "u32")
    print(f"final loss: gaussian head {g_curve[-1]:.4f}  point estimate {p_curve[-1]:.4f}")


def toy_method_maps(field, point_probs, samples, seed):
    """Prediction/confidence maps for the three compared methods."""
    maps = {}
    for method in ("lower-bound", "softmax-avg"):
        out = field_confidence(field, EstimatorConfig(method=method, sample_count=samples, seed=seed))
        maps[method] = (out.prediction, out.confidence)
    maps["point-estimate"] = (np.argmax(point_probs, axis=-1), np.max(point_probs, axis=-1))
    return maps


def cmd_toy_eval(args):
    src = Path(args.model_dir)
    field = _read_field(src / TOY_FILES["means"], src / TOY_FILES["stds"])
    labels = io.read_array(src / TOY_FILES["labels"]).astype(np.int64)
    point_probs = io.read_array(src / TOY_FILES["point_probs"]).astype(np.float64)
    out = Path(args.out_dir or src)
    out.mkdir(parents=True, exist_ok=True)
    args.classes = args.classes or field.classes
    rows = []
    for method, (pred, conf) in toy_method_maps(field, point_probs, args.samples, args.seed).items():
        t0 = time.perf_counter()
        n = args.samples if method == "softmax-avg" else None
        rep, doc = _report(conf, pred, labels, args, method, n, args.seed, time.perf_counter() - t0)
        stem = out / f"report_{method}"
        _emit_report(rep, doc, f"{stem}.json", f"{stem}.csv", f"{stem}.svg", f"Reliability: {method}")
        rows.append({"method": method, "ace": rep.ace, "ece": rep.ece,
                     "accuracy": float((pred == labels).mean()), "miou": doc["miou"]})
    _write_json(out / "eval.json", {"rows": rows})
    print(f"{'method':<16}{'ACE':>10}{'ECE':>10}{'acc':>8}{'mIoU':>8}")
    for r in rows:
        print(f"{r['method']:<16}{r['ace']:>10.4f}{r['ece']:>10.4f}{r['accuracy']:>8.4f}{r['miou']:>8.4f}")


def cmd_toy_ensemble(args):
    setup = _toy_setup(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    train_set, test_set = toy.make_splits(setup, args.seed)
    _, ens = toy.train_ensemble(train_set, test_set.inputs, setup.train, seeds)
    out = ensemble_confidence(ens, _cfg(args))
    dest = Path(args.out_dir)
    dest.mkdir(parents=True, exist_ok=True)
    args.out_pred, args.out_conf, args.out_unc = (dest / n for n in ("pred.glf", "conf.glf", "unc.glf"))
    _write_maps(args, out)
    args.classes = args.classes or ens.classes
    rep, doc = _report(out.confidence, out.prediction, test_set.labels[None], args, args.method,
                       args.samples, args.seed, None)
    doc["members"] = len(seeds)
    _emit_report(rep, doc, dest / "report.json", dest / "report.csv", dest / "report.svg")
    print(f"ensemble of {len(seeds)}: ACE {rep.ace:.4f}  mIoU {doc['miou']:.4f}")
    _check_converged(out)


# -- argument parsing -----------------------------------------------------------

def _estimator_flags(p, default_method="lower-bound"):
    p.add_argument("--method", choices=METHODS, default=default_method)
    p.add_argument("--samples", type=int, default=50, help="sample count for sampling methods")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quad-points", type=int, default=51)
    p.add_argument("--quad-max-nodes", type=int, default=QUAD_MAX_NODES)
    p.add_argument("--shared-pool", action="store_true", help="one normal pool per field (mc-integration)")
    p.add_argument("--threads", type=int, default=1)


def _map_outputs(p, required=True):
    p.add_argument("--out-pred", required=required)
    p.add_argument("--out-conf", required=required)
    p.add_argument("--out-unc", required=required)


def _calib_flags(p):
    p.add_argument("--ignore", type=int, default=None, help="label value excluded from scoring")
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--scheme", choices=metrics.SCHEMES, default="equal-width")
    p.add_argument("--classes", type=int, default=None, help="class count; enables mIoU")


def _toy_flags(p):
    p.add_argument("--seed", type=int, default=0, help="data and training seed")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--train-samples", type=int, default=None, help="logit samples per input in the loss")
    p.add_argument("--n-train", type=int, default=None)
    p.add_argument("--n-test", type=int, default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="logitconf", description="Confidence for Gaussian logits.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("confidence", help="prediction, confidence and uncertainty maps")
    p.add_argument("--means", required=True)
    p.add_argument("--stds", required=True)
    _estimator_flags(p)
    _map_outputs(p)
    p.set_defaults(func=cmd_confidence)

    p = sub.add_parser("calibrate", help="ACE/ECE report and reliability diagram")
    p.add_argument("--conf", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--labels", required=True)
    _calib_flags(p)
    p.add_argument("--method", default=None, help="estimator name recorded in the report")
    p.add_argument("--sample-count", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-json", required=True)
    p.add_argument("--out-csv")
    p.add_argument("--out-svg")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("compare", help="per-pixel table of every estimator")
    p.add_argument("--means", required=True)
    p.add_argument("--stds", required=True)
    p.add_argument("--mc-samples", type=int, default=10000)
    p.add_argument("--samples", type=int, default=50, help="softmax-avg sample count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out-csv", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("ensemble", help="aggregate member fields")
    p.add_argument("--member", action="append", required=True, metavar="MEANS,STDS")
    _estimator_flags(p)
    _map_outputs(p)
    p.add_argument("--labels")
    _calib_flags(p)
    p.add_argument("--out-json")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("bench", help="confidence-stage timing")
    p.add_argument("--classes", type=int, default=20)
    p.add_argument("--pixels", type=int, default=65536)
    p.add_argument("--methods", default=",".join(bench.DEFAULT_METHODS))
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--backends", default=None, help="comma list, e.g. cython,python")
    p.add_argument("--no-shared-pool", action="store_true", help="fresh per-pixel draws for mc-integration")
    p.add_argument("--out-json")
    p.set_defaults(func=cmd_bench)

    toy_p = sub.add_parser("toy", help="synthetic end-to-end pipeline")
    toy_sub = toy_p.add_subparsers(dest="toy_command", required=True)
    p = toy_sub.add_parser("train")
    _toy_flags(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_toy_train)
    p = toy_sub.add_parser("eval")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--samples", type=int, default=50, help="softmax-avg sample count")
    p.add_argument("--seed", type=int, default=0)
    _calib_flags(p)
    p.set_defaults(func=cmd_toy_eval)
    p = toy_sub.add_parser("ensemble")
    _toy_flags(p)
    p.add_argument("--seeds", default="0,1,2", help="training seeds of the members")
    p.add_argument("--method", choices=METHODS, default="lower-bound")
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--quad-points", type=int, default=51)
    p.add_argument("--quad-max-nodes", type=int, default=QUAD_MAX_NODES)
    p.add_argument("--shared-pool", action="store_true")
    p.add_argument("--threads", type=int, default=1)
    _calib_flags(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_toy_ensemble)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (OSError, io.TensorFormatError, io.ReportFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
