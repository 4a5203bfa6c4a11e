"""
Image metrics, uncertainty maps and run reports.

PURPOSE: Score renders against ground truth, reduce posterior samples to per-pixel
    variance, and collect run artifacts into report tables and grids
DEPENDENCIES: numpy, pandas, pyyaml, rich
"""

from triplane_posterior.analysis.metrics import (
    PSNR_SENTINEL,
    SSIM_WINDOW,
    MetricDistribution,
    psnr,
    ssim,
)
from triplane_posterior.analysis.report import (
    ReportResult,
    build_grid,
    report,
    summarize,
    tile,
    write_task_outputs,
)
from triplane_posterior.analysis.uncertainty import (
    UncertaintyMap,
    average_latents,
    render_latent,
    uncertainty_map,
    variance_map,
)

__all__ = [
    # Metrics
    "PSNR_SENTINEL",
    "SSIM_WINDOW",
    "MetricDistribution",
    "psnr",
    "ssim",
    # Uncertainty
    "UncertaintyMap",
    "average_latents",
    "render_latent",
    "uncertainty_map",
    "variance_map",
    # Report
    "ReportResult",
    "build_grid",
    "report",
    "summarize",
    "tile",
    "write_task_outputs",
]
