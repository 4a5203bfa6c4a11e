"""
CLI entry point using Typer and Rich.

PURPOSE: Command-line interface for every pipeline stage, from dataset generation to
    the evaluation report
DEPENDENCIES: typer, rich, pandas, pyyaml

ARCHITECTURE NOTES:
- Root callback holds the global flags; each command assembles its RunConfig from them
  (profile file < --config file < environment < flags)
- Every command writes into a fresh timestamped run directory with manifest.yaml;
  datasets and checkpoints given as inputs are only read and hashed
- Failures print one line "error: <code>: <detail>" to stderr and exit with code 1
- Command groups: pipeline commands at the top level, config show/init
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Iterator
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Annotated, Any, NoReturn

import numpy as np
import pandas as pd
import typer
import yaml
from rich.console import Console
from rich.logging import RichHandler
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn
from rich.table import Table

from triplane_posterior import __version__
from triplane_posterior.analysis.report import report, tile, write_task_outputs
from triplane_posterior.analysis.uncertainty import render_latent
from triplane_posterior.autodecode.fitting import eval_heldout, fit_latent
from triplane_posterior.autodecode.training import LatentTable, TrainingDivergedError, train_stage1
from triplane_posterior.config import ConfigError, RunConfig, load_config
from triplane_posterior.diffcore.checkpoint import load_checkpoint, save_checkpoint
from triplane_posterior.diffcore.tensor import precision
from triplane_posterior.parallel import parallel_map
from triplane_posterior.posterior.guidance import GuidanceSpec
from triplane_posterior.posterior.sampler import PosteriorDivergedError, batch_posterior, save_posterior
from triplane_posterior.posterior.tasks import TASKS, TaskOptions, UnknownTaskError, build_task_observation, evaluate_task, resolve_task
from triplane_posterior.prior.model import PriorModel
from triplane_posterior.prior.sampling import SamplingDivergedError, sample_chain, sample_prior
from triplane_posterior.prior.training import train_prior
from triplane_posterior.reconmodel.model import ReconModel
from triplane_posterior.runs import RunContext, start_run
from triplane_posterior.scenes.dataset import MANIFEST_NAME, DatasetError, SceneDataset, generate_dataset, write_png
from triplane_posterior.scenes.models import CameraPose

logger = logging.getLogger(__name__)

# Rich console for formatted output
console = Console()
err_console = Console(stderr=True)

app = typer.Typer(
    name="triplane-posterior",
    help="Probabilistic 3D reconstruction with tri-plane latents, a diffusion prior and guided posterior sampling.",
    no_args_is_help=True,
    rich_markup_mode="rich",
)

# Checked in order; the first matching type decides the code
ERROR_CODES: list[tuple[type[Exception] | tuple[type[Exception], ...], str]] = [
    (FileNotFoundError, "missing_checkpoint"),
    (ConfigError, "config"),
    (UnknownTaskError, "unknown_task"),
    (DatasetError, "dataset"),
    ((TrainingDivergedError, SamplingDivergedError, PosteriorDivergedError), "diverged"),
    (ValueError, "invalid_argument"),
]

SAMPLE_ELEVATION = 0.35


@dataclass
class CliState:
    """Global flags collected by the root callback."""

    config_path: Path | None = None
    overrides: dict[str, Any] = field(default_factory=dict)


def fail(code: str, detail: str) -> NoReturn:
    """Print the one-line error and exit with status 1."""
    flat = "; ".join(line.strip() for line in detail.splitlines() if line.strip())
    err_console.print(f"error: {code}: {flat}", markup=False, highlight=False, soft_wrap=True)
    raise typer.Exit(1)


@contextmanager
def cli_errors() -> Iterator[None]:
    """Translate library exceptions into the CLI error line."""
    try:
        yield
    except typer.Exit:
        raise
    except Exception as e:
        for types, code in ERROR_CODES:
            if isinstance(e, types):
                logger.debug("Command failed", exc_info=True)
                fail(code, str(e))
        raise


@contextmanager
def training_progress(description: str, total: int) -> Iterator[Callable[[int, int, float], None]]:
    """Progress bar fed by the (step, total, loss) callbacks of the training loops."""
    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TextColumn("{task.completed}/{task.total}"),
        console=err_console,
        transient=True,
    ) as progress:
        task = progress.add_task(description, total=total)

        def update(step: int, steps: int, loss: float) -> None:
            progress.update(task, completed=step, total=steps, description=f"{description} (loss {loss:.4g})")

        yield update


@contextmanager
def spinner(description: str) -> Iterator[None]:
    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        console=err_console,
        transient=True,
    ) as progress:
        progress.add_task(description, total=None)
        yield


def version_callback(value: bool) -> None:
    """Print version and exit."""
    if value:
        console.print(f"triplane-posterior version {__version__}")
        raise typer.Exit()


@app.callback()
def main(
    ctx: typer.Context,
    version: Annotated[
        bool | None,
        typer.Option("--version", "-V", help="Show version and exit.", callback=version_callback, is_eager=True),
    ] = None,
    config: Annotated[Path | None, typer.Option("--config", "-c", help="TOML config file.")] = None,
    profile: Annotated[str | None, typer.Option("--profile", help="Profile: desk or paper.")] = None,
    seed: Annotated[int | None, typer.Option("--seed", help="Run seed.")] = None,
    out: Annotated[Path | None, typer.Option("--out", help="Output root for run directories.")] = None,
    workers: Annotated[int | None, typer.Option("--workers", help="Worker threads.")] = None,
    verbose: Annotated[bool, typer.Option("--verbose", "-v", help="Enable debug logging.")] = False,
) -> None:
    """triplane-posterior - 3D reconstruction with a diffusion prior over scene latents."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=err_console, show_path=False)],
        force=True,
    )
    ctx.obj = CliState(
        config_path=config,
        overrides={"profile": profile, "seed": seed, "output_root": out, "workers": workers},
    )


def _config(ctx: typer.Context, **sections: dict[str, Any]) -> RunConfig:
    """Effective config with command flags (None = not given) layered on top."""
    state: CliState = ctx.obj or CliState()
    overrides = dict(state.overrides)
    for name, values in sections.items():
        given = {k: v for k, v in values.items() if v is not None}
        if given:
            overrides[name] = given
    with cli_errors():
        return load_config(state.config_path, overrides)


def _require_file(path: Path, role: str) -> Path:
    if not path.is_file():
        fail("missing_checkpoint", f"expected {role} checkpoint at {path}")
    return path


def _open_dataset(data: Path | None, config: RunConfig, run: RunContext | None = None) -> SceneDataset:
    root = data or config.dataset.path
    if root is None:
        fail("dataset", "no dataset given; pass --data or set dataset.path")
    dataset = SceneDataset.open(root)
    if run is not None:
        run.record_input("dataset_manifest", root / MANIFEST_NAME)
    return dataset


DataOption = Annotated[Path | None, typer.Option("--data", help="Dataset directory (default: dataset.path).")]
ReconOption = Annotated[Path, typer.Option("--recon", help="Reconstruction checkpoint (recon.ckpt).")]
PriorOption = Annotated[Path, typer.Option("--prior", help="Prior checkpoint (prior.ckpt).")]


# =============================================================================
# Pipeline Commands
# =============================================================================
@app.command("gen-data")
def gen_data(ctx: typer.Context) -> None:
    """Generate the procedural multi-view dataset."""
    config = _config(ctx)
    ds = config.dataset
    with cli_errors():
        run = start_run(config, "gen-data")
        root = run.directory / "dataset"
        with spinner(f"Rendering {ds.n_scenes} scenes x {ds.n_views} views..."):
            manifest = generate_dataset(
                root,
                ds.n_scenes,
                ds.n_views,
                ds.resolution,
                config.seed,
                n_train=ds.n_train,
                n_heldout=ds.n_heldout,
                fov_deg=ds.fov_deg,
                t_near=ds.t_near,
                t_far=ds.t_far,
                workers=config.workers,
            )
        run.seeds = [config.seed]
        run.record_output("dataset_manifest", root / MANIFEST_NAME)
        run.write_manifest()

    console.print(f"[green]Dataset written to {root}[/green]")
    console.print(
        f"{len(manifest.scenes)} scenes ({len(manifest.training_scene_ids)} training, "
        f"{len(manifest.heldout_scene_ids)} held out), {ds.resolution}x{ds.resolution} pixels"
    )


@app.command("train-recon")
def train_recon(
    ctx: typer.Context,
    data: DataOption = None,
    iterations: Annotated[int | None, typer.Option("--iterations", help="Override stage1.iterations.")] = None,
) -> None:
    """Stage 1: train the reconstruction model and the latent table."""
    config = _config(ctx, stage1={"iterations": iterations})
    with cli_errors(), precision(config.precision):
        run = start_run(config, "train-recon")
        dataset = _open_dataset(data, config, run)
        model = ReconModel.initialize(config.model.recon, seed=config.seed)
        train_config = config.stage1.train_config(config.seed, config.profile, config.workers, config.analysis.chunk)
        with training_progress("Stage 1", train_config.iterations) as update:
            result = train_stage1(dataset, train_config, run.directory, model=model, progress=update)
        run.seeds = [config.seed]
        if result.checkpoint is not None:
            run.record_output("recon", result.checkpoint)
        if result.best_checkpoint is not None:
            run.record_output("recon_best", result.best_checkpoint)

        with spinner("Rendering train and test views..."):
            latents = result.table.as_dict()
            samples = config.analysis.samples_per_ray
            train_report = eval_heldout(result.model, latents, dataset, "train", samples, config.analysis.chunk)
            test_report = eval_heldout(result.model, latents, dataset, "test", samples, config.analysis.chunk)
        eval_path = run.directory / "stage1_eval.csv"
        pd.DataFrame(train_report.rows() + test_report.rows()).to_csv(eval_path, index=False, encoding="utf-8")
        run.parameters = {
            "iterations_run": result.iterations_run,
            "skipped": result.skipped,
            "train_psnr": train_report.mean_psnr,
            "test_psnr": test_report.mean_psnr,
        }
        run.write_manifest()

    table = Table(title="Stage 1")
    table.add_column("Split", style="cyan")
    table.add_column("Views", justify="right")
    table.add_column("Mean PSNR", justify="right", style="green")
    table.add_column("Median PSNR", justify="right")
    for split, rep in (("train", train_report), ("test", test_report)):
        table.add_row(split, str(len(rep.views)), f"{rep.mean_psnr:.2f}", f"{rep.median_psnr:.2f}")
    console.print(table)
    console.print(f"[green]Checkpoint: {result.checkpoint}[/green]")


@app.command("fit-latent")
def fit_latent_cmd(
    ctx: typer.Context,
    scene: Annotated[str, typer.Option("--scene", help="Scene id.")],
    recon: ReconOption,
    views: Annotated[int | None, typer.Option("--views", help="Number of training views to fit (default: all).")] = None,
    steps: Annotated[int | None, typer.Option("--steps", help="Override stage1.fit_steps.")] = None,
    data: DataOption = None,
) -> None:
    """Fit a new latent to clean views of one scene with the model frozen."""
    config = _config(ctx, stage1={"fit_steps": steps})
    s1 = config.stage1
    with cli_errors(), precision(config.precision):
        run = start_run(config, "fit-latent")
        run.record_input("recon", _require_file(recon, "recon"))
        dataset = _open_dataset(data, config, run)
        model = ReconModel.load(recon)
        observation = build_task_observation(dataset, scene, "full_views", TaskOptions(views=views), config.seed)
        with training_progress(f"Fitting {scene}", s1.fit_steps) as update:
            fit = fit_latent(
                model,
                observation,
                s1.fit_steps,
                lr=s1.fit_lr,
                samples=s1.samples_per_ray,
                t_near=dataset.t_near,
                t_far=dataset.t_far,
                rays_per_step=s1.fit_rays_per_step,
                seed=config.seed,
                chunk=config.analysis.chunk,
                progress=update,
            )
        ckpt = save_checkpoint(
            run.directory / "fit.ckpt",
            {f"latent.{scene}": fit.latent},
            {"fit": {"scene_id": scene, "views": [v.view_index for v in observation.views], "final_loss": fit.final_loss}},
        )
        pd.DataFrame({"step": range(1, len(fit.losses) + 1), "loss": fit.losses}).to_csv(
            run.directory / "fit_log.csv", index=False, encoding="utf-8"
        )
        scores = eval_heldout(model, {scene: fit.latent}, dataset, "test", config.analysis.samples_per_ray, config.analysis.chunk)
        run.seeds = [config.seed]
        run.record_output("latent", ckpt)
        run.parameters = {"scene_id": scene, "final_loss": fit.final_loss, "test_psnr": scores.mean_psnr}
        run.write_manifest()

    console.print(f"[green]Latent for {scene} written to {ckpt}[/green]")
    console.print(f"Final loss {fit.final_loss:.5f}, skipped steps {fit.skipped}, test-view PSNR {scores.mean_psnr:.2f} dB")


@app.command("train-prior")
def train_prior_cmd(
    ctx: typer.Context,
    recon: ReconOption,
    iterations: Annotated[int | None, typer.Option("--iterations", help="Override prior.iterations.")] = None,
) -> None:
    """Stage 2: train the diffusion prior on the auto-decoded latent table."""
    config = _config(ctx, prior={"iterations": iterations})
    with cli_errors(), precision(config.precision):
        run = start_run(config, "train-prior")
        run.record_input("recon", _require_file(recon, "recon"))
        table = LatentTable.from_checkpoint(load_checkpoint(recon))
        prior_config = config.prior.train_config(config.seed)
        with training_progress("Prior", prior_config.iterations) as update:
            result = train_prior(table.matrix(), prior_config, config.model.unet, run.directory, progress=update)
        run.seeds = [config.seed]
        if result.checkpoint is not None:
            run.record_output("prior", result.checkpoint)
        run.parameters = {"latents": len(table), "iterations_run": result.iterations_run, "skipped": result.skipped}
        run.write_manifest()

    console.print(f"[green]Prior trained on {len(table)} latents: {result.checkpoint}[/green]")
    if result.history:
        console.print(f"Final loss {result.history[-1]['loss']:.5f}")


@app.command("sample")
def sample(
    ctx: typer.Context,
    prior: PriorOption,
    recon: ReconOption,
    n: Annotated[int | None, typer.Option("--n", help="Number of latents (default prior.sample_n).")] = None,
) -> None:
    """Draw unconditional latents from the prior and render them from a camera orbit."""
    config = _config(ctx, prior={"sample_n": n})
    count = config.prior.sample_n
    ds = config.dataset
    with cli_errors(), precision(config.precision):
        run = start_run(config, "sample")
        run.record_input("prior", _require_file(prior, "prior"))
        run.record_input("recon", _require_file(recon, "recon"))
        prior_model = PriorModel.load(prior)
        model = ReconModel.load(recon).frozen()
        with spinner(f"Sampling {count} latents ({prior_model.schedule.T} steps each)..."):
            latents = sample_prior(prior_model, count, seed=config.seed, workers=config.workers)
        ckpt = save_checkpoint(
            run.directory / "samples.ckpt",
            {f"sample.{config.seed + i}": z for i, z in enumerate(latents)},
            {"samples": {"n": count, "seed": config.seed}},
        )
        cameras = [
            CameraPose.from_angles(2 * math.pi * k / config.analysis.grid_views, SAMPLE_ELEVATION, ds.resolution, ds.resolution, fov_deg=ds.fov_deg)
            for k in range(config.analysis.grid_views)
        ]
        with spinner("Rendering samples..."):
            rows = [
                [render_latent(z, model, cam, config.analysis.samples_per_ray, ds.t_near, ds.t_far, config.analysis.chunk) for cam in cameras]
                for z in latents
            ]
        grid = run.directory / "samples.png"
        write_png(grid, tile(rows))
        run.seeds = [config.seed + i for i in range(count)]
        run.record_output("samples", ckpt)
        run.record_output("grid", grid)
        run.write_manifest()

    console.print(f"[green]{count} samples written to {ckpt}[/green]")
    console.print(f"Grid: {grid}")


@app.command("posterior")
def posterior(
    ctx: typer.Context,
    task: Annotated[str, typer.Option("--task", help=f"One of: {', '.join(TASKS)}.")],
    scene: Annotated[str, typer.Option("--scene", help="Scene id.")],
    prior: PriorOption,
    recon: ReconOption,
    n: Annotated[int | None, typer.Option("--n", help="Posterior samples (default posterior.n).")] = None,
    seeds: Annotated[str | None, typer.Option("--seeds", help="Comma-separated chain seeds (overrides --n).")] = None,
    half: Annotated[str | None, typer.Option("--half", help="half_image: top, bottom, left or right.")] = None,
    fraction: Annotated[float | None, typer.Option("--fraction", help="Pixel fraction for sparse tasks.")] = None,
    sigma: Annotated[float | None, typer.Option("--sigma", help="Noise std for noisy_views.")] = None,
    views: Annotated[int | None, typer.Option("--views", help="View count for multi-view tasks.")] = None,
    view: Annotated[int | None, typer.Option("--view", help="Observed view for single-view tasks.")] = None,
    scale: Annotated[float | None, typer.Option("--scale", help="Guidance scale (default: preset).")] = None,
    baseline: Annotated[bool | None, typer.Option("--baseline/--no-baseline", help="Also fit a no-prior latent.")] = None,
    trace: Annotated[bool | None, typer.Option("--trace/--no-trace", help="Write per-step sampler traces.")] = None,
    data: DataOption = None,
) -> None:
    """Guided posterior sampling for one task on one scene."""
    config = _config(
        ctx,
        posterior={"n": n, "half": half, "fraction": fraction, "sigma": sigma, "scale": scale, "baseline": baseline, "trace": trace},
    )
    post = config.posterior
    with cli_errors():
        resolve_task(task)
        chain_seeds = _parse_seeds(seeds) if seeds else list(range(config.seed, config.seed + post.n))

    with cli_errors(), precision(config.precision):
        run = start_run(config, "posterior")
        run.record_input("prior", _require_file(prior, "prior"))
        run.record_input("recon", _require_file(recon, "recon"))
        dataset = _open_dataset(data, config, run)
        prior_model = PriorModel.load(prior)
        model = ReconModel.load(recon)

        view_count = views if views is not None else (post.views if task == "noisy_views" else None)
        options = TaskOptions(half=post.half, fraction=post.fraction, sigma=post.sigma, views=view_count, view=view)
        observation = build_task_observation(dataset, scene, task, options, config.seed)
        spec = GuidanceSpec(
            observation,
            dataset.t_near,
            dataset.t_far,
            samples=post.samples_per_ray,
            scale=post.scale,
            default_scale=post.default_scale,
            noisy_scale=post.noisy_scale,
            noisy_threshold=post.noisy_threshold,
            chunk=config.analysis.chunk,
        )
        task_dir = run.directory / f"{task}__{scene}"
        task_dir.mkdir(parents=True)
        with open(task_dir / "observation.yaml", "w", encoding="utf-8") as f:
            yaml.safe_dump(
                {
                    "task": task,
                    "options": options.model_dump(),
                    "guidance": spec.echo(),
                    "views": [v.view_index for v in observation.views],
                    "pixel_count": observation.pixel_count,
                    "seeds": chain_seeds,
                },
                f,
                sort_keys=False,
            )

        try:
            with spinner(f"Sampling {len(chain_seeds)} guided chains ({task}, s={spec.effective_scale:g})..."):
                results = batch_posterior(prior_model, model, spec, chain_seeds, trace=post.trace, workers=config.workers)
        except PosteriorDivergedError as e:
            e.trace.write_csv(task_dir / "traces" / f"seed_{e.seed}.csv")
            raise
        if post.trace:
            for r in results:
                if r.trace is not None:
                    r.trace.write_csv(task_dir / "traces" / f"seed_{r.seed}.csv")
        posterior_ckpt = save_posterior(task_dir / "posterior.ckpt", results, spec.echo())

        baseline_latent = None
        if post.baseline:
            with training_progress("No-prior baseline", post.baseline_steps) as update:
                fit = fit_latent(
                    model,
                    observation,
                    post.baseline_steps,
                    lr=config.stage1.fit_lr,
                    samples=post.samples_per_ray,
                    t_near=dataset.t_near,
                    t_far=dataset.t_far,
                    rays_per_step=config.stage1.fit_rays_per_step,
                    seed=config.seed,
                    chunk=config.analysis.chunk,
                    progress=update,
                )
            baseline_latent = fit.latent
            save_checkpoint(task_dir / "baseline.ckpt", {f"latent.{scene}": fit.latent}, {"baseline": {"steps": post.baseline_steps}})

        prior_latents = None
        if task == "sparse_depth":
            with spinner(f"Sampling {len(chain_seeds)} unconditional chains for comparison..."):
                draws = parallel_map(lambda s: sample_chain(prior_model, s), chain_seeds, config.workers)
            prior_latents = dict(zip(chain_seeds, draws))
            prior_ckpt = save_checkpoint(
                task_dir / "prior_samples.ckpt",
                {f"prior.{s}": z for s, z in prior_latents.items()},
                {"prior_samples": {"seeds": chain_seeds}},
            )
            run.record_output("prior_samples", prior_ckpt)

        with spinner("Scoring samples..."):
            evaluation = evaluate_task(
                task,
                dataset,
                observation,
                {r.seed: r.latent for r in results},
                model,
                samples=config.analysis.samples_per_ray,
                chunk=config.analysis.chunk,
                baseline=baseline_latent,
                grid_views=config.analysis.grid_views,
                averaging_ks=config.analysis.averaging_ks,
                prior_latents=prior_latents,
            )
        write_task_outputs(task_dir, evaluation.rows, evaluation.averaging, evaluation.renders, evaluation.truths, chain_seeds)
        run.seeds = chain_seeds
        run.record_output("posterior", posterior_ckpt)
        run.parameters = {"task": task, "scene_id": scene, "scale": spec.effective_scale}
        run.write_manifest()

    psnrs = [float(row["psnr"]) for row in evaluation.rows]  # type: ignore[arg-type]
    console.print(f"[green]{len(results)} posterior samples written to {task_dir}[/green]")
    console.print(f"Mean test-view PSNR {np.mean(psnrs):.2f} dB (best {np.max(psnrs):.2f} dB)")


def _parse_seeds(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ValueError(f"--seeds must be comma-separated integers, got {text!r}")


@app.command("eval")
def eval_cmd(
    ctx: typer.Context,
    run_dir: Annotated[Path, typer.Argument(help="Run directory to report on.")],
) -> None:
    """Collect task metrics, grids and uncertainty maps of a run into a report."""
    config = _config(ctx)
    if not run_dir.is_dir():
        fail("invalid_argument", f"run directory not found: {run_dir}")
    with cli_errors():
        run = start_run(config, "eval")
        result = report(run_dir, run.directory / "report", console=console)
        for grid in result.grids:
            run.record_output(f"grid:{grid.stem}", grid)
        run.record_output("metrics", result.directory / "metrics.csv")
        run.parameters = {"source_run": str(run_dir), "missing": len(result.missing)}
        run.write_manifest()
    console.print(f"[green]Report written to {result.directory}[/green]")


# =============================================================================
# Config Commands
# =============================================================================
config_app = typer.Typer(
    name="config",
    help="Configuration management commands.",
    no_args_is_help=True,
)
app.add_typer(config_app)


def _flatten(values: dict[str, Any], prefix: str = "") -> list[tuple[str, Any]]:
    rows: list[tuple[str, Any]] = []
    for key, value in values.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            rows.extend(_flatten(value, f"{name}."))
        else:
            rows.append((name, value))
    return rows


@config_app.command("show")
def config_show(
    ctx: typer.Context,
    json_output: Annotated[bool, typer.Option("--json", help="Output as JSON")] = False,
) -> None:
    """Show the effective configuration."""
    config = _config(ctx)
    if json_output:
        console.print(config.model_dump_json(indent=2))
        return

    table = Table(title=f"Configuration ({config.profile})")
    table.add_column("Setting", style="cyan")
    table.add_column("Value", style="green")
    for name, value in _flatten(config.echo()):
        table.add_row(name, "-" if value is None else str(value))
    console.print(table)


@config_app.command("init")
def config_init(
    ctx: typer.Context,
    path: Annotated[Path, typer.Argument(help="Where to write the TOML file.")] = Path("triplane.toml"),
    force: Annotated[bool, typer.Option("--force", "-f", help="Overwrite existing config")] = False,
) -> None:
    """Write the effective configuration to a TOML file."""
    config = _config(ctx)
    if path.exists() and not force:
        console.print(f"[yellow]Config already exists at {path}[/yellow]")
        console.print("Use --force to overwrite.")
        raise typer.Exit(1)
    config.save_toml(path)
    console.print(f"[green]Configuration written to {path}[/green]")
