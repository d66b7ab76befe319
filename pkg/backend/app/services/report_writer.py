"""
Writes experiment reports to an output directory.

``report.csv`` and ``curves.csv`` hold only seeded quantities, so repeated
invocations produce byte-identical files; wall-clock timings go to
``summary.txt``.
"""
import logging
from pathlib import Path
from typing import Optional

import pandas as pd

from app.models.experiment import ExperimentConfig, ExperimentReport
from app.models.run_config import MetricsRow
from app.services.config_file import render_resolved_config

logger = logging.getLogger(__name__)

REPORT_FILE = "report.csv"
CURVES_FILE = "curves.csv"
SUMMARY_FILE = "summary.txt"
RESOLVED_CONFIG_FILE = "resolved_config.txt"

CSV_OPTIONS = {"index": False, "float_format": "%.17g", "lineterminator": "\n"}
CURVE_COLUMNS = ["label", "seed", *(name for name in MetricsRow.model_fields if name != "eval")]


def report_frame(report: ExperimentReport) -> pd.DataFrame:
    """One row per (cell, seed)."""
    num_classes = max((len(r.per_class_w1) for r in report.results), default=0)
    extra_keys = sorted({key for r in report.results for key in r.extras})
    rows = []
    for result in report.results:
        row = {"label": result.label, "seed": result.seed, "marginal_w1": result.marginal_w1}
        for k in range(num_classes):
            row[f"w1_class_{k}"] = result.per_class_w1[k] if k < len(result.per_class_w1) else None
        row.update({
            "diverged": result.diverged,
            "diverged_at": result.diverged_at,
            "divergence_reason": result.divergence_reason,
        })
        row.update({key: result.extras.get(key) for key in extra_keys})
        rows.append(row)
    columns = ["label", "seed", "marginal_w1", *(f"w1_class_{k}" for k in range(num_classes)),
               "diverged", "diverged_at", "divergence_reason", *extra_keys]
    frame = pd.DataFrame(rows, columns=columns)
    # nullable ints keep diverged_at from turning into floats
    return frame.astype({"seed": "int64", "diverged_at": "Int64"})


def curves_frame(report: ExperimentReport) -> pd.DataFrame:
    eval_columns = sorted({key for row in report.curves for key in row if key.startswith("eval_")})
    return pd.DataFrame(report.curves, columns=CURVE_COLUMNS + eval_columns)


def summary_text(report: ExperimentReport) -> str:
    lines = [f"experiment: {report.experiment.value}",
             f"seeds: {', '.join(str(s) for s in report.seeds)}"]
    lines += [f"{key}: {value}" for key, value in report.summary.items()]
    diverged = [r for r in report.results if r.diverged]
    for result in diverged:
        lines.append(f"diverged: {result.label} seed {result.seed} at iteration "
                     f"{result.diverged_at} ({result.divergence_reason})")
    lines += [f"note: {note}" for note in report.notes]
    lines.append(f"wall_clock_s: {report.wall_clock_s:.3f}")
    return "\n".join(lines) + "\n"


def write_report(report: ExperimentReport, out_dir: Path,
                 config: Optional[ExperimentConfig] = None) -> list[Path]:
    """Write the report files into ``out_dir`` (created if needed) and return their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    report_path = out_dir / REPORT_FILE
    curves_path = out_dir / CURVES_FILE
    summary_path = out_dir / SUMMARY_FILE
    report_frame(report).to_csv(report_path, **CSV_OPTIONS)
    curves_frame(report).to_csv(curves_path, **CSV_OPTIONS)
    summary_path.write_text(summary_text(report), encoding="utf-8")
    written = [report_path, curves_path, summary_path]

    if config is not None:
        config_path = out_dir / RESOLVED_CONFIG_FILE
        config_path.write_text(render_resolved_config(config), encoding="utf-8")
        written.append(config_path)

    logger.info(f"Wrote {len(written)} report file(s) to {out_dir}")
    return written
