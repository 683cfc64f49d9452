"""Command-line pipeline driver.

Subcommands: phantom-gen, score, measure, grade, eval. Every run writes
a resolved_config.json next to its outputs so results can be reproduced
from the record alone. Exit codes: 0 success, 2 input/validation error,
3 empty-pipeline condition, 1 internal error.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import EmptyResultError, PipelineError, ValidationError
from .grading import (
    TIERS,
    GradingModel,
    build_feature_matrix,
    cross_validate,
    fit_model,
    predict,
)
from .imaging import EYEBALL, SHEATH, dice
from .ingest import apply_exclusions, load_case, load_clinical_table, write_case
from .keyframe import (
    ScoringModel,
    compute_rule_scores,
    fit_lda,
    rank_frames,
    topk_accuracy,
)
from .onsd import aggregate_video_onsd, measure_keyframes, pearson
from .phantom import PhantomSpec, generate_video
from . import report

log = logging.getLogger("onsdkit")


def _resolve_out(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(args, out_dir):
    config = {
        key: (str(value) if isinstance(value, Path) else value)
        for key, value in sorted(vars(args).items())
        if key != "handler"
    }
    config["version"] = __version__
    report.write_json(out_dir / "resolved_config.json", config)


def _load_scoring_model(args, out_dir):
    if getattr(args, "fit_from", None):
        positives, negatives = [], []
        for directory in args.fit_from:
            bundle = load_case(directory)
            if bundle.annotations is None:
                raise ValidationError(f"bundle {directory} has no annotations.json")
            for idx in bundle.annotations.keyframes:
                rules = compute_rule_scores(bundle.frames[idx], bundle.masks[idx])
                if rules is not None:
                    positives.append(rules)
            for idx in bundle.annotations.suboptimal:
                rules = compute_rule_scores(bundle.frames[idx], bundle.masks[idx])
                if rules is not None:
                    negatives.append(rules)
        model = fit_lda(positives, negatives)
        model.to_json(out_dir / "scoring_model.json")
        log.info("fitted scoring model from %d bundles", len(args.fit_from))
        return model
    if getattr(args, "model", None):
        return ScoringModel.from_json(args.model)
    return ScoringModel.paper_default()


def cmd_phantom_gen(args):
    out_dir = _resolve_out(args)
    _echo_config(args, out_dir)
    try:
        spec = PhantomSpec.from_json(args.spec)
    except json.JSONDecodeError as err:
        raise ValidationError(
            f"invalid spec JSON: line {err.lineno} column {err.colno}: {err.msg}"
        ) from None
    n_videos = args.video if args.video else 1
    name = Path(args.spec).stem
    for v in range(n_videos):
        video_spec = replace(spec, seed=spec.seed + 100003 * args.seed + v)
        bundle, truth = generate_video(
            video_spec,
            n_frames=args.frames,
            case_id=f"{name}_{v:03d}",
            eye="left",
        )
        target = out_dir / f"video_{v:03d}" if args.video else out_dir / "bundle"
        write_case(bundle, target)
        report.write_json(target / "truth.json", truth.to_dict())
    print(f"wrote {n_videos} bundle(s) under {out_dir}")
    return 0


def cmd_score(args):
    out_dir = _resolve_out(args)
    _echo_config(args, out_dir)
    model = _load_scoring_model(args, out_dir)
    bundle = load_case(args.bundle)
    ranked = rank_frames(bundle, model, jobs=args.jobs)
    report.write_score_trace(out_dir / "score_trace.csv", ranked, model.source)
    report.write_keyframes(out_dir / "keyframes.json", ranked)
    if args.plot:
        report.fig_score_trace(out_dir / "score_trace.png", ranked)
    print(
        f"{bundle.case_id}/{bundle.eye}: keyframes {list(ranked.keyframe_set)}"
        f" ({len(ranked.unscorable)} unscorable)"
    )
    return 0


def cmd_measure(args):
    out_dir = _resolve_out(args)
    _echo_config(args, out_dir)
    bundle = load_case(args.bundle)
    keyframes = json.loads(Path(args.keyframes).read_text())["keyframes"]
    measurements, failures = measure_keyframes(bundle, keyframes, jobs=args.jobs)
    if not measurements:
        raise EmptyResultError("no measurable frames")
    video = aggregate_video_onsd(
        [m.onsd_mm for m in measurements], measurements=measurements
    )
    report.write_measurement_report(
        out_dir / "measurement.json", bundle.case_id, bundle.eye, video, failures
    )
    if args.plot:
        report.fig_measurement(out_dir / "measurement.png", video)
    print(f"{bundle.case_id}/{bundle.eye}: ONSD {video.onsd_mm:.3f} mm "
          f"({len(video.kept)}/{len(measurements)} kept)")
    return 0


def _collect_measurements(measurements_dir):
    """Map patient id -> bilateral mean ONSD from measurement JSONs."""
    by_patient = {}
    for path in sorted(Path(measurements_dir).glob("**/measurement*.json")):
        data = json.loads(path.read_text())
        by_patient.setdefault(data["case_id"], {})[data["eye"]] = data["onsd_mm"]
    means = {}
    for patient, eyes in sorted(by_patient.items()):
        if "left" in eyes and "right" in eyes:
            means[patient] = 0.5 * (eyes["left"] + eyes["right"])
        else:
            log.warning("patient %s lacks a %s-eye measurement; skipped",
                        patient, "right" if "left" in eyes else "left")
    return means


def cmd_grade(args):
    out_dir = _resolve_out(args)
    _echo_config(args, out_dir)
    records = apply_exclusions(load_clinical_table(args.clinical, args.schema))
    if not records:
        raise EmptyResultError("no patients left after exclusions")
    onsd_means = _collect_measurements(args.measurements)
    matrix, icp = build_feature_matrix(records, onsd_means)
    onsd_col = matrix.values[:, matrix.onsd_col]
    report.write_correlation_csv(
        out_dir / "correlation.csv",
        list(zip(matrix.patient_ids, onsd_col, icp)),
    )

    if args.mode == "cv":
        cv = cross_validate(
            args.classifier,
            matrix,
            icp,
            folds=args.folds,
            seed=args.seed,
            params=json.loads(args.params) if args.params else None,
            groups=matrix.patient_ids,
        )
        report.write_cv_report(out_dir / "cv_report.csv", cv)
        if args.plot:
            report.fig_cv(out_dir / "cv_report.png", cv)
        summary = cv.summary()
        print(f"{args.classifier}: accuracy {summary['accuracy'][0]:.3f}"
              f" +- {summary['accuracy'][1]:.3f} over {args.folds} folds")
        return 0

    if args.mode == "train":
        model = fit_model(
            matrix,
            icp,
            args.classifier,
            params=json.loads(args.params) if args.params else None,
            seed=args.seed,
        )
        model.to_json(out_dir / "grading_model.json")
        print(f"wrote grading_model.json (kind={args.classifier}, "
              f"{int(model.feature_mask.sum())} features)")
        return 0

    # predict mode
    if not args.model:
        raise ValidationError("--mode predict requires --model")
    model = GradingModel.from_json(args.model)
    by_id = {r.patient_id: r for r in records}
    rows = []
    for patient, onsd in sorted(onsd_means.items()):
        if patient not in by_id:
            log.warning("patient %s has measurements but no clinical row; skipped", patient)
            continue
        grade, scores = predict(model, by_id[patient], onsd)
        rows.append([patient, grade.tier] + [scores[t] for t in TIERS])
    if not rows:
        raise EmptyResultError("no patients to predict")
    report.write_predictions(out_dir / "predictions.csv", rows)
    print(f"wrote predictions for {len(rows)} patients")
    return 0


def _eval_keyframe(args, out_dir):
    model = _load_scoring_model(args, out_dir)
    predictions, truths = [], []
    for directory in args.inputs:
        bundle = load_case(directory)
        if bundle.annotations is None or not bundle.annotations.keyframes:
            raise ValidationError(f"bundle {directory} has no keyframe annotations")
        ranked = rank_frames(bundle, model, jobs=args.jobs)
        predictions.append([fs.frame_index for fs in ranked.scores])
        truths.append(list(bundle.annotations.keyframes))
    metrics = [topk_accuracy(predictions, truths, k) for k in (1, 3, 5)]
    report.write_topk_csv(out_dir / "keyframe_metrics.csv", len(predictions), *metrics)
    if args.plot:
        report.fig_topk(out_dir / "keyframe_metrics.png", *metrics)
    print(f"top1 {metrics[0]:.3f}  top3 {metrics[1]:.3f}  top5 {metrics[2]:.3f}"
          f"  over {len(predictions)} videos")
    return 0


def _mask_files(path):
    path = Path(path)
    if path.is_dir():
        return sorted(path.glob("*.png"))
    return [path]


def _eval_segmentation(args, out_dir):
    from PIL import Image

    files_a = _mask_files(args.inputs[0])
    files_b = _mask_files(args.inputs[1])
    if len(files_a) != len(files_b) or not files_a:
        raise ValidationError("segmentation eval needs equal, non-empty mask sets")
    rows = []
    pooled = {EYEBALL: [0, 0, 0], SHEATH: [0, 0, 0]}  # inter, |a|, |b|
    for fa, fb in zip(files_a, files_b):
        a = np.asarray(Image.open(fa))
        b = np.asarray(Image.open(fb))
        for label, name in ((EYEBALL, "eyeball"), (SHEATH, "sheath")):
            mask_a, mask_b = a == label, b == label
            rows.append([fa.name, name, dice(mask_a, mask_b)])
            pooled[label][0] += int((mask_a & mask_b).sum())
            pooled[label][1] += int(mask_a.sum())
            pooled[label][2] += int(mask_b.sum())
    for label, name in ((EYEBALL, "eyeball"), (SHEATH, "sheath")):
        inter, na, nb = pooled[label]
        pooled_dice = 1.0 if na + nb == 0 else 2.0 * inter / (na + nb)
        rows.append(["(pooled)", name, pooled_dice])
    report.write_dice_csv(out_dir / "segmentation_metrics.csv", rows)
    print(f"wrote Dice for {len(files_a)} mask pair(s)")
    return 0


def _eval_correlation(args, out_dir):
    import csv as _csv

    with open(args.inputs[0], newline="") as handle:
        reader = _csv.DictReader(handle)
        onsd, icp = [], []
        for row in reader:
            onsd.append(float(row["mean_onsd_mm"]))
            icp.append(float(row["icp_mmH2O"]))
    r, p = pearson(onsd, icp)
    report.write_pearson_csv(out_dir / "correlation_metrics.csv", r, p, len(onsd))
    if args.plot:
        report.fig_correlation(out_dir / "correlation_metrics.png", onsd, icp, r, p)
    print(f"r = {r:.4f}, p = {p:.3g}, n = {len(onsd)}")
    return 0


def cmd_eval(args):
    out_dir = _resolve_out(args)
    _echo_config(args, out_dir)
    if args.task == "keyframe":
        return _eval_keyframe(args, out_dir)
    if args.task == "segmentation":
        if len(args.inputs) != 2:
            raise ValidationError("segmentation eval takes exactly two inputs")
        return _eval_segmentation(args, out_dir)
    if len(args.inputs) != 1:
        raise ValidationError("correlation eval takes exactly one CSV input")
    return _eval_correlation(args, out_dir)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master random seed")
    common.add_argument("--jobs", type=int, default=1, help="frame-level parallelism")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--plot", action="store_true",
                        help="also render PNG figures next to the CSV/JSON outputs")

    parser = argparse.ArgumentParser(
        prog="onsdkit",
        description="keyframe scoring, ONSD measurement and ICP grading",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom-gen", parents=[common],
                       help="generate synthetic case bundles with ground truth")
    p.add_argument("spec", help="phantom spec JSON")
    p.add_argument("--video", type=int, default=0, metavar="N",
                   help="generate N video bundles (default: one bundle)")
    p.add_argument("--frames", type=int, default=30, help="frames per video")
    p.set_defaults(handler=cmd_phantom_gen)

    p = sub.add_parser("score", parents=[common],
                       help="score and rank the frames of one bundle")
    p.add_argument("bundle", help="case bundle directory")
    p.add_argument("--model", help="scoring_model.json (default: paper weights)")
    p.add_argument("--fit-from", nargs="+", metavar="DIR",
                   help="fit LDA weights from annotated bundles first")
    p.set_defaults(handler=cmd_score)

    p = sub.add_parser("measure", parents=[common],
                       help="measure ONSD on the keyframes of one bundle")
    p.add_argument("bundle", help="case bundle directory")
    p.add_argument("--keyframes", required=True, help="keyframes.json from score")
    p.set_defaults(handler=cmd_measure)

    p = sub.add_parser("grade", parents=[common],
                       help="train/evaluate ICP grading from clinical data + measurements")
    p.add_argument("--clinical", required=True, help="clinical CSV")
    p.add_argument("--schema", required=True, help="clinical schema JSON")
    p.add_argument("--measurements", required=True,
                   help="directory of measurement JSONs")
    p.add_argument("--mode", choices=["train", "cv", "predict"], default="cv")
    p.add_argument("--classifier", default="random_forest",
                   choices=["logistic", "decision_tree", "random_forest", "knn",
                            "naive_bayes", "threshold_baseline"])
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--params", help="classifier params as JSON")
    p.add_argument("--model", help="grading_model.json (predict mode)")
    p.set_defaults(handler=cmd_grade)

    p = sub.add_parser("eval", parents=[common], help="evaluation metrics")
    p.add_argument("--task", required=True,
                   choices=["keyframe", "segmentation", "correlation"])
    p.add_argument("inputs", nargs="+",
                   help="bundles (keyframe), two mask sets (segmentation), "
                        "or a correlation CSV")
    p.add_argument("--model", help="scoring_model.json for the keyframe task")
    p.add_argument("--fit-from", nargs="+", metavar="DIR",
                   help="fit LDA weights from annotated bundles first")
    p.set_defaults(handler=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level))
    try:
        return args.handler(args)
    except EmptyResultError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except (ValidationError, PipelineError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # pragma: no cover - internal errors
        log.exception("internal error")
        print(f"internal error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
