"""
Run report generation.

PURPOSE: Collect per-task artifacts of a run into metric tables, image grids and a
    report manifest
DEPENDENCIES: numpy, pandas, pillow, pyyaml, rich

ARCHITECTURE NOTES:
- A task directory is any directory under the run holding observation.yaml; it should
  also hold task_metrics.csv, averaging.csv and renders.ckpt
- Missing artifacts are listed in missing.txt and skipped; the rest of the report is
  still written
- Outputs go to <out> (default <run>/report/): metrics.csv, summary.csv, averaging.csv,
  grids/<task dir>.png, missing.txt, report_manifest.yaml
- Everything is sorted and timestamp-free, so re-running the report gives identical bytes
- Grid columns are views; rows are ground truth, one row per sample, then the variance
  map scaled to [0, 1] for display (raw min/max go to the manifest)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import yaml
from rich.console import Console
from rich.table import Table

from triplane_posterior.analysis.uncertainty import variance_map
from triplane_posterior.diffcore.checkpoint import file_digest, load_checkpoint, save_checkpoint
from triplane_posterior.scenes.dataset import write_png

logger = logging.getLogger(__name__)

TASK_MARKER = "observation.yaml"
TASK_METRICS = "task_metrics.csv"
TASK_AVERAGING = "averaging.csv"
TASK_RENDERS = "renders.ckpt"
REPORT_DIR = "report"

METRIC_COLUMNS = [
    "task",
    "scene_id",
    "seed",
    "psnr",
    "ssim",
    "depth_error",
    "variance_ratio",
    "baseline_psnr",
    "prior_depth_error",
    "rgb_variance",
    "depth_variance",
    "prior_rgb_variance",
    "prior_depth_variance",
]
AVERAGING_COLUMNS = ["task", "scene_id", "k", "mean_latent_psnr", "best_single_psnr"]
SUMMARY_COLUMNS = [
    "task",
    "rows",
    "scenes",
    "mean_psnr",
    "mean_ssim",
    "mean_baseline_psnr",
    "mean_depth_error",
    "depth_error_ratio",
    "relative_rgb_variance",
    "relative_depth_variance",
]


@dataclass
class ReportResult:
    """Paths and tables produced by one report run."""

    directory: Path
    source: Path
    metrics: pd.DataFrame
    summary: pd.DataFrame
    averaging: pd.DataFrame
    grids: list[Path] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)


def write_task_outputs(
    task_dir: Path,
    rows: list[dict[str, object]],
    averaging: list[dict[str, object]],
    renders: dict[int, np.ndarray],
    truths: dict[int, np.ndarray],
    seeds: list[int],
) -> None:
    """Write the per-task artifacts the report consumes."""
    task_dir.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows, columns=METRIC_COLUMNS).to_csv(task_dir / TASK_METRICS, index=False, encoding="utf-8")
    pd.DataFrame(averaging, columns=AVERAGING_COLUMNS).to_csv(
        task_dir / TASK_AVERAGING, index=False, encoding="utf-8"
    )
    tensors: dict[str, np.ndarray] = {}
    for view, stack in renders.items():
        tensors[f"render.{view}"] = np.asarray(stack, dtype=np.float64)
        tensors[f"truth.{view}"] = np.asarray(truths[view], dtype=np.float64)
    save_checkpoint(task_dir / TASK_RENDERS, tensors, {"seeds": seeds, "views": sorted(renders)})


def _separator(images: list[np.ndarray], axis: int) -> np.ndarray:
    parts: list[np.ndarray] = []
    for i, img in enumerate(images):
        if i:
            shape = list(img.shape)
            shape[axis] = 1
            parts.append(np.ones(shape))
        parts.append(img)
    return np.concatenate(parts, axis=axis)


def tile(rows: list[list[np.ndarray]]) -> np.ndarray:
    """Tile equally sized (H, W, 3) images row by row with one-pixel white separators."""
    return _separator([_separator(row, axis=1) for row in rows], axis=0)


def build_grid(renders: dict[int, np.ndarray], truths: dict[int, np.ndarray]) -> tuple[np.ndarray, list[dict[str, Any]]]:
    """Grid image plus per-view variance display ranges."""
    columns: list[np.ndarray] = []
    ranges: list[dict[str, Any]] = []
    for view in sorted(renders):
        stack = renders[view]
        cells = [truths[view], *list(stack)]
        if stack.shape[0] >= 2:
            var = variance_map(stack)
            lo, hi = float(var.min()), float(var.max())
            shown = (var - lo) / (hi - lo) if hi > lo else np.zeros_like(var)
            cells.append(np.repeat(shown[:, :, None], 3, axis=-1))
            ranges.append({"view": int(view), "variance_min": lo, "variance_max": hi})
        columns.append(_separator(cells, axis=0))
    return _separator(columns, axis=1), ranges


def _read_table(path: Path, columns: list[str]) -> pd.DataFrame:
    frame = pd.read_csv(path)
    return frame.reindex(columns=columns)


def report(run_dir: Path, out_dir: Path | None = None, console: Console | None = None) -> ReportResult:
    """Build metric tables and image grids for every task directory under run_dir."""
    out = out_dir or run_dir / REPORT_DIR
    grids_dir = out / "grids"
    grids_dir.mkdir(parents=True, exist_ok=True)

    task_dirs = sorted(p.parent for p in run_dir.rglob(TASK_MARKER) if not p.is_relative_to(out))
    metrics_parts: list[pd.DataFrame] = []
    averaging_parts: list[pd.DataFrame] = []
    missing: list[str] = []
    grids: list[Path] = []
    manifest: dict[str, Any] = {"run": run_dir.name, "tasks": {}}

    for task_dir in task_dirs:
        name = task_dir.relative_to(run_dir).as_posix()
        entry: dict[str, Any] = {}
        for artifact, columns, parts in (
            (TASK_METRICS, METRIC_COLUMNS, metrics_parts),
            (TASK_AVERAGING, AVERAGING_COLUMNS, averaging_parts),
        ):
            path = task_dir / artifact
            if path.exists():
                parts.append(_read_table(path, columns))
                entry[artifact] = file_digest(path)
            else:
                missing.append(f"{name}/{artifact}")

        renders_path = task_dir / TASK_RENDERS
        if renders_path.exists():
            ckpt = load_checkpoint(renders_path)
            renders = {int(k.split(".")[1]): v for k, v in ckpt.group("render").items()}
            truths = {int(k.split(".")[1]): v for k, v in ckpt.group("truth").items()}
            grid, ranges = build_grid(renders, truths)
            grid_path = grids_dir / f"{name.replace('/', '__')}.png"
            write_png(grid_path, grid)
            grids.append(grid_path)
            entry["grid"] = grid_path.relative_to(out).as_posix()
            entry["samples"] = len(ckpt.metadata.get("seeds", []))
            entry["uncertainty_display"] = ranges
            entry[TASK_RENDERS] = file_digest(renders_path)
        else:
            missing.append(f"{name}/{TASK_RENDERS}")
        manifest["tasks"][name] = entry

    metrics = pd.concat(metrics_parts, ignore_index=True) if metrics_parts else pd.DataFrame(columns=METRIC_COLUMNS)
    metrics = metrics.sort_values(["task", "scene_id", "seed"], kind="stable").reset_index(drop=True)
    averaging = (
        pd.concat(averaging_parts, ignore_index=True) if averaging_parts else pd.DataFrame(columns=AVERAGING_COLUMNS)
    )
    averaging = averaging.sort_values(["task", "scene_id", "k"], kind="stable").reset_index(drop=True)
    summary = summarize(metrics)

    metrics.to_csv(out / "metrics.csv", index=False, encoding="utf-8")
    summary.to_csv(out / "summary.csv", index=False, encoding="utf-8")
    averaging.to_csv(out / "averaging.csv", index=False, encoding="utf-8")
    (out / "missing.txt").write_text("".join(f"{m}\n" for m in missing), encoding="utf-8")
    manifest["missing"] = missing
    with open(out / "report_manifest.yaml", "w", encoding="utf-8") as f:
        yaml.safe_dump(manifest, f, sort_keys=False)

    for m in missing:
        logger.warning(f"Report: missing artifact {m}")
    logger.info(f"Report written to {out}: {len(metrics)} metric rows, {len(grids)} grids")
    result = ReportResult(out, run_dir, metrics, summary, averaging, grids, missing)
    if console is not None:
        console.print(summary_table(result))
    return result


def _ratio(group: pd.DataFrame, numerator: str, denominator: str) -> float:
    """Mean of one column over the mean of another; NaN when either is missing or zero."""
    num = float(group[numerator].mean())
    den = float(group[denominator].mean())
    if not np.isfinite(num) or not np.isfinite(den) or den == 0.0:
        return float("nan")
    return round(num / den, 4)


def summarize(metrics: pd.DataFrame) -> pd.DataFrame:
    """Per-task means of the metric table.

    The depth-guidance ratios compare posterior samples with unconditional prior samples:
    depth error over prior depth error, and each spread over its prior spread.
    """
    if metrics.empty:
        return pd.DataFrame(columns=SUMMARY_COLUMNS)
    rows = []
    for task, group in metrics.groupby("task", sort=True):
        rows.append(
            {
                "task": task,
                "rows": len(group),
                "scenes": group["scene_id"].nunique(),
                "mean_psnr": round(float(group["psnr"].mean()), 4),
                "mean_ssim": round(float(group["ssim"].mean()), 4),
                "mean_baseline_psnr": round(float(group["baseline_psnr"].mean()), 4),
                "mean_depth_error": round(float(group["depth_error"].mean()), 4),
                "depth_error_ratio": _ratio(group, "depth_error", "prior_depth_error"),
                "relative_rgb_variance": _ratio(group, "rgb_variance", "prior_rgb_variance"),
                "relative_depth_variance": _ratio(group, "depth_variance", "prior_depth_variance"),
            }
        )
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def summary_table(result: ReportResult) -> Table:
    table = Table(title=f"Report: {result.source.name}")
    table.add_column("Task", style="cyan")
    table.add_column("Rows", justify="right")
    table.add_column("Scenes", justify="right")
    table.add_column("PSNR", justify="right", style="green")
    table.add_column("SSIM", justify="right")
    table.add_column("Baseline PSNR", justify="right", style="dim")
    for row in result.summary.itertuples(index=False):
        table.add_row(
            str(row.task),
            str(row.rows),
            str(row.scenes),
            f"{row.mean_psnr:.2f}",
            f"{row.mean_ssim:.3f}",
            f"{row.mean_baseline_psnr:.2f}",
        )
    if result.missing:
        table.caption = f"{len(result.missing)} missing artifact(s), see missing.txt"
    return table
