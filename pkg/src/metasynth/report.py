"""Report output: JSON, a delimited CSV row per corpus, and figures.

The measure path renders a word-count histogram and a per-metric
point-estimate chart with confidence whiskers next to the delimited output.
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .diversity import HISTOGRAM_BIN_WIDTH, DiversityReport, LOWER_BETTER

CSV_METRIC_ORDER = [
    "compression_ratio",
    "task2vec_coefficient",
    "remote_clique",
    "chamfer",
    "ngram_diversity_1",
    "ngram_diversity_2",
    "ngram_diversity_3",
    "ngram_diversity_4",
    "mean_inverse_frequency",
]


def write_report_json(report: DiversityReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(report.to_json_dict(), handle, ensure_ascii=False, indent=2)
        handle.write("\n")


def append_report_csv(report: DiversityReport, path: str) -> None:
    """Append one row per corpus; the header is written when the file is new."""
    fieldnames = ["corpus_id", "n_documents"]
    for name in CSV_METRIC_ORDER:
        fieldnames.extend([name, f"{name}_ci_low", f"{name}_ci_high"])
    row: dict[str, object] = {
        "corpus_id": report.corpus_id,
        "n_documents": report.n_documents,
    }
    for name in CSV_METRIC_ORDER:
        estimate = report.metrics.get(name)
        if estimate is None:
            continue
        row[name] = f"{estimate.point_estimate:.6f}"
        row[f"{name}_ci_low"] = f"{estimate.ci_low:.6f}"
        row[f"{name}_ci_high"] = f"{estimate.ci_high:.6f}"
    new_file = not os.path.exists(path)
    with open(path, "a", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=fieldnames)
        if new_file:
            writer.writeheader()
        writer.writerow(row)


def render_length_histogram(report: DiversityReport, path: str) -> str:
    bins = sorted(report.length_histogram.items())
    lefts = [bin_lo for bin_lo, _count in bins]
    counts = [count for _bin_lo, count in bins]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(lefts, counts, width=HISTOGRAM_BIN_WIDTH * 0.92, align="edge", color="#4878a8")
    ax.set_xlabel("Document length (word count)")
    ax.set_ylabel("Documents")
    ax.set_title(f"Length distribution: {report.corpus_id}")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_metric_estimates(report: DiversityReport, path: str) -> str:
    """One panel per metric: the point estimate with its CI whisker. Metric
    scales differ by orders of magnitude, so panels do not share axes."""
    names = [name for name in CSV_METRIC_ORDER if name in report.metrics]
    if not names:
        raise ValueError("report carries no metrics to plot")
    cols = min(4, len(names))
    rows = (len(names) + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(3.2 * cols, 2.8 * rows), squeeze=False)
    for index, name in enumerate(names):
        ax = axes[index // cols][index % cols]
        est = report.metrics[name]
        err = [[est.point_estimate - est.ci_low], [est.ci_high - est.point_estimate]]
        color = "#b5543c" if est.direction == LOWER_BETTER else "#3c7d57"
        ax.errorbar([0], [est.point_estimate], yerr=err, fmt="o", capsize=5, color=color)
        arrow = "↓" if est.direction == LOWER_BETTER else "↑"
        ax.set_title(f"{name} {arrow}", fontsize=9)
        ax.set_xticks([])
        ax.margins(y=0.4)
    for index in range(len(names), rows * cols):
        axes[index // cols][index % cols].axis("off")
    fig.suptitle(f"Diversity metrics: {report.corpus_id}", fontsize=11)
    fig.tight_layout(rect=(0, 0, 1, 0.95))
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_report_figures(report: DiversityReport, out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    stem = report.corpus_id.replace(os.sep, "_") or "corpus"
    paths = [
        render_length_histogram(report, os.path.join(out_dir, f"{stem}_lengths.png")),
        render_metric_estimates(report, os.path.join(out_dir, f"{stem}_metrics.png")),
    ]
    return paths
