"""Machine-readable report files and optional figure rendering.

CSV/JSON files are the pipeline's contract; the fig_* helpers render a
PNG next to each delimited output when plotting is requested. Everything
written here is byte-deterministic for identical inputs (no timestamps).
"""

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .grading import TIERS


def _write_rows(path, header, rows, preamble=()):
    with open(path, "w", newline="") as handle:
        for line in preamble:
            handle.write(f"# {line}\n")
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)
    return Path(path)


def write_json(path, payload):
    with open(path, "w") as handle:
        json.dump(payload, handle, sort_keys=True, indent=2)
        handle.write("\n")
    return Path(path)


def write_score_trace(path, ranked, model_source):
    """Per-frame trace: rule scores, z-scores, total and rank."""
    header = ["frame_index", "s1", "s2", "s3", "s4",
              "z1", "z2", "z3", "z4", "total", "rank"]
    rows = []
    for rank, fs in enumerate(ranked.scores, start=1):
        rows.append(
            [fs.frame_index, fs.rules.s1, fs.rules.s2, fs.rules.s3, fs.rules.s4]
            + list(fs.zscores)
            + [fs.total, rank]
        )
    return _write_rows(path, header, rows, preamble=[f"scoring_model: {model_source}"])


def write_keyframes(path, ranked):
    return write_json(
        path,
        {
            "keyframes": list(ranked.keyframe_set),
            "unscorable": list(ranked.unscorable),
            "n_ranked": len(ranked.scores),
        },
    )


def write_measurement_report(path, case_id, eye, video, failures=()):
    payload = {
        "case_id": case_id,
        "eye": eye,
        "per_frame": [
            {
                "frame": m.frame_index,
                "onsd_mm": m.onsd_mm,
                "p1": list(m.p1),
                "p2": list(m.p2),
                "target": list(m.target),
                "globe_exit": list(m.globe_exit),
            }
            for m in video.per_frame
        ],
        "q1": video.q1,
        "q3": video.q3,
        "iqr": video.iqr,
        "kept": list(video.kept),
        "onsd_mm": video.onsd_mm,
        "failures": dict(sorted(failures.items())) if failures else {},
    }
    return write_json(path, payload)


def write_cv_report(path, report):
    """Fold rows plus a mean/std pair, Table-style; thresholds when present."""
    with_thresholds = any(f.thresholds for f in report.folds)
    header = ["fold", "accuracy", "precision", "recall", "f1", "selected_features"]
    if with_thresholds:
        header += ["t1", "t2"]
    rows = []
    for f in report.folds:
        selected = "" if f.selected_count is None else f.selected_count
        row = [f.fold, f.accuracy, f.precision, f.recall, f.f1, selected]
        if with_thresholds:
            row += [f.thresholds[0], f.thresholds[1]] if f.thresholds else ["", ""]
        rows.append(row)
    summary = report.summary()
    mean_row = ["mean"] + [summary[m][0] for m in ("accuracy", "precision", "recall", "f1")] + [""]
    std_row = ["std"] + [summary[m][1] for m in ("accuracy", "precision", "recall", "f1")] + [""]
    if with_thresholds:
        mean_row += ["", ""]
        std_row += ["", ""]
    rows += [mean_row, std_row]
    return _write_rows(path, header, rows, preamble=[f"classifier: {report.kind}"])


def write_predictions(path, rows):
    """rows: (patient_id, tier, score_normal, score_mild, score_severe)."""
    header = ["patient_id", "tier"] + [f"score_{t}" for t in TIERS]
    return _write_rows(path, header, rows)


def write_correlation_csv(path, rows):
    return _write_rows(path, ["patient_id", "mean_onsd_mm", "icp_mmH2O"], rows)


def write_topk_csv(path, n_videos, top1, top3, top5):
    return _write_rows(
        path,
        ["n_videos", "top1", "top3", "top5"],
        [[n_videos, top1, top3, top5]],
    )


def write_dice_csv(path, rows):
    """rows: (name, label, dice)."""
    return _write_rows(path, ["name", "label", "dice"], rows)


def write_pearson_csv(path, r, p, n):
    return _write_rows(path, ["r", "p", "n"], [[r, p, n]])


def fig_score_trace(path, ranked):
    fig, ax = plt.subplots(figsize=(7, 3.5))
    frames = [fs.frame_index for fs in sorted(ranked.scores, key=lambda s: s.frame_index)]
    totals = [fs.total for fs in sorted(ranked.scores, key=lambda s: s.frame_index)]
    ax.plot(frames, totals, marker="o", ms=3, lw=1, color="tab:blue")
    top = set(ranked.keyframe_set)
    ax.plot(
        [f for f in frames if f in top],
        [t for f, t in zip(frames, totals) if f in top],
        "r*", ms=10, label="keyframe set",
    )
    ax.set_xlabel("frame index")
    ax.set_ylabel("total score")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def fig_measurement(path, video):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    frames = [m.frame_index for m in video.per_frame]
    values = [m.onsd_mm for m in video.per_frame]
    ax.plot(frames, values, "o", color="tab:blue", label="per-frame ONSD")
    lo = video.q1 - 1.5 * video.iqr
    hi = video.q3 + 1.5 * video.iqr
    ax.axhspan(lo, hi, color="tab:green", alpha=0.15, label="fence")
    ax.axhline(video.onsd_mm, color="tab:red", lw=1, label=f"video ONSD {video.onsd_mm:.2f}")
    ax.set_xlabel("frame index")
    ax.set_ylabel("ONSD (mm)")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def fig_topk(path, top1, top3, top5):
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.bar(["top1", "top3", "top5"], [top1, top3, top5], color="tab:blue")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("accuracy")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def fig_correlation(path, onsd, icp, r, p):
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.scatter(onsd, icp, s=14, color="tab:blue")
    ax.set_xlabel("mean ONSD (mm)")
    ax.set_ylabel("ICP (mm H2O)")
    ax.set_title(f"r = {r:.4f}, p = {p:.3g}", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def fig_cv(path, report):
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    metrics = ("accuracy", "precision", "recall", "f1")
    folds = [f.fold for f in report.folds]
    width = 0.2
    for i, metric in enumerate(metrics):
        xs = [f + (i - 1.5) * width for f in folds]
        ax.bar(xs, [getattr(f, metric) for f in report.folds], width=width, label=metric)
    ax.set_xticks(folds)
    ax.set_xlabel("fold")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8, ncol=2)
    ax.set_title(report.kind, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
