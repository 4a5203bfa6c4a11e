"""
TEST DOC: Guided Posterior Sampling

WHAT: Guidance scales and gradients, guided reverse chains, posterior persistence and
    per-task scoring
WHY: Every reconstruction task is a guided chain; at zero scale it must reduce to the
    prior exactly
HOW: Tiny U-Net with an 8-step schedule and the tiny reconstruction model in 64-bit,
    observations of the held-out scene of the small dataset

CASES:
- Scale presets: explicit scale, noisy preset at sigma >= 0.8, default otherwise
- The guidance gradient matches central differences of the guidance loss
- Scale zero reproduces prior sampling bit for bit under the same seed
- Traces hold one row per reverse step, t = T..1
- With an identity observation map and a toy scalar prior, guidance lowers the
  reconstruction loss of the final steps against unguided chains of the same seeds
- Batches return one result per seed in seed order; worker threads agree
- Task evaluation writes one row per sample and averaging rows for the k that fit
- sparse_depth scores unconditional samples of the same seeds next to the guided ones

EDGE CASES:
- Negative scales and loss kinds that disagree with the observation
- A non-finite guidance gradient aborts with the trace so far
- Empty or repeated seed lists
- Unknown task names list the valid tasks
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from triplane_posterior.diffcore import ops
from triplane_posterior.diffcore.tensor import Tensor, backward, record
from triplane_posterior.posterior import sampler as sampler_module
from triplane_posterior.posterior.guidance import (
    DEFAULT_SCALE,
    NOISY_SCALE,
    GuidanceSpec,
    GuidanceStep,
    clean_estimate,
    guidance_gradient,
)
from triplane_posterior.posterior.sampler import (
    TRACE_COLUMNS,
    PosteriorDivergedError,
    batch_posterior,
    load_posterior,
    posterior_sample,
    save_posterior,
)
from triplane_posterior.posterior.tasks import (
    TASKS,
    TaskOptions,
    UnknownTaskError,
    build_task_observation,
    evaluate_task,
    resolve_task,
    sample_spread,
)
from triplane_posterior.prior.model import PriorModel, Standardizer
from triplane_posterior.prior.sampling import ancestral_sample, sample_chain
from triplane_posterior.prior.schedule import NoiseSchedule, build_schedule, q_sample
from triplane_posterior.prior.toy import ToyDenoiser, train_toy, two_component_mixture
from triplane_posterior.prior.unet import UNet, UNetConfig
from triplane_posterior.reconmodel.model import ReconModel
from triplane_posterior.scenes.dataset import SceneDataset
from triplane_posterior.scenes.observations import (
    Observation,
    ObservationError,
    ObservationKind,
    ObservationParams,
    half_indices,
    make_observation,
)

pytestmark = pytest.mark.usefixtures("f64")

HELDOUT = "scene_0003"


@pytest.fixture
def tiny_prior(tiny_unet: UNetConfig, f64: None) -> PriorModel:
    return PriorModel(UNet.initialize(tiny_unet, seed=0), build_schedule(8, 1e-3, 0.2), Standardizer.identity(32))


@pytest.fixture
def sparse_spec(small_dataset: SceneDataset) -> GuidanceSpec:
    obs = make_observation(small_dataset, HELDOUT, ObservationKind.SPARSE_PIXELS, ObservationParams(fraction=0.1))
    return GuidanceSpec(obs, small_dataset.t_near, small_dataset.t_far, samples=4)


class TestGuidanceSpec:
    """Scale selection and ray construction."""

    def test_scale_presets(self, small_dataset: SceneDataset) -> None:
        clean = make_observation(small_dataset, HELDOUT, ObservationKind.HALF_IMAGE)
        noisy = make_observation(
            small_dataset, HELDOUT, ObservationKind.NOISY_VIEWS, ObservationParams(sigma=0.8, n_views=1)
        )
        assert GuidanceSpec(clean, 1.0, 4.0).effective_scale == DEFAULT_SCALE
        assert GuidanceSpec(noisy, 1.0, 4.0).effective_scale == NOISY_SCALE
        assert GuidanceSpec(noisy, 1.0, 4.0, scale=0.25).effective_scale == 0.25

    def test_invalid_settings(self, small_dataset: SceneDataset) -> None:
        obs = make_observation(small_dataset, HELDOUT, ObservationKind.HALF_IMAGE)
        with pytest.raises(ValueError, match="scale"):
            GuidanceSpec(obs, 1.0, 4.0, scale=-1.0)
        with pytest.raises(ValueError, match="does not match"):
            GuidanceSpec(obs, 1.0, 4.0, loss_kind="depth")

    def test_depth_observation_uses_depth_loss(self, small_dataset: SceneDataset) -> None:
        obs = make_observation(small_dataset, HELDOUT, ObservationKind.SPARSE_DEPTH, ObservationParams(fraction=0.5))
        spec = GuidanceSpec(obs, small_dataset.t_near, small_dataset.t_far, samples=4)
        assert spec.kind == "depth"
        rays = spec.rays()
        assert rays.target_depth is not None
        assert spec.rays() is rays
        assert spec.echo()["loss"] == "depth"

    def test_empty_observation(self, small_dataset: SceneDataset) -> None:
        obs = Observation(ObservationKind.SPARSE_PIXELS, HELDOUT, [])
        with pytest.raises(ObservationError, match="at least one"):
            GuidanceSpec(obs, 1.0, 4.0).rays()


class TestGuidanceGradient:
    """Observation-loss gradient with respect to the chain state."""

    def test_clean_estimate_inverts_noising(self, rng: np.random.Generator) -> None:
        schedule = build_schedule(8, 1e-3, 0.2)
        x0 = rng.normal(size=32)
        noise = rng.normal(size=32)
        xt = q_sample(x0, 5, noise, schedule)
        np.testing.assert_allclose(clean_estimate(xt, noise, 5, schedule).data, x0, atol=1e-12)

    def test_matches_central_differences(
        self, tiny_model: ReconModel, tiny_prior: PriorModel, sparse_spec: GuidanceSpec, rng: np.random.Generator
    ) -> None:
        standardizer = Standardizer(mean=rng.normal(size=32) * 0.1, std=rng.uniform(0.5, 1.5, size=32))
        z = rng.normal(size=32)
        eps = rng.normal(size=32)
        t = 4
        step = guidance_gradient(z, eps, t, tiny_model, sparse_spec, tiny_prior.schedule, standardizer)
        assert step.gradient.shape == (32,)
        assert np.isfinite(step.loss)

        h = 1e-5
        numeric = np.zeros(32)
        for i in range(0, 32, 4):
            plus, minus = z.copy(), z.copy()
            plus[i] += h
            minus[i] -= h
            up = guidance_gradient(plus, eps, t, tiny_model, sparse_spec, tiny_prior.schedule, standardizer).loss
            down = guidance_gradient(minus, eps, t, tiny_model, sparse_spec, tiny_prior.schedule, standardizer).loss
            numeric[i] = (up - down) / (2 * h)
        np.testing.assert_allclose(step.gradient[::4], numeric[::4], rtol=1e-4, atol=1e-7)

    def test_model_is_not_updated(
        self, tiny_model: ReconModel, tiny_prior: PriorModel, sparse_spec: GuidanceSpec
    ) -> None:
        before = tiny_model.checksum()
        guidance_gradient(np.zeros(32), np.zeros(32), 3, tiny_model, sparse_spec, tiny_prior.schedule)
        assert tiny_model.checksum() == before


class TestPosteriorSample:
    """Single guided chains."""

    def test_zero_scale_reproduces_prior(
        self, tiny_model: ReconModel, tiny_prior: PriorModel, small_dataset: SceneDataset
    ) -> None:
        obs = make_observation(small_dataset, HELDOUT, ObservationKind.HALF_IMAGE)
        spec = GuidanceSpec(obs, small_dataset.t_near, small_dataset.t_far, samples=4, scale=0.0)
        result = posterior_sample(tiny_prior, tiny_model, spec, seed=11)
        np.testing.assert_array_equal(result.latent, sample_chain(tiny_prior, 11))
        assert result.trace is None
        assert result.scale == 0.0

    def test_guidance_moves_the_sample(
        self, tiny_model: ReconModel, tiny_prior: PriorModel, sparse_spec: GuidanceSpec
    ) -> None:
        sparse_spec.scale = 0.5
        result = posterior_sample(tiny_prior, tiny_model, sparse_spec, seed=11)
        assert not np.array_equal(result.latent, sample_chain(tiny_prior, 11))
        assert np.all(np.isfinite(result.latent))

    def test_trace_rows(
        self, tiny_model: ReconModel, tiny_prior: PriorModel, sparse_spec: GuidanceSpec, temp_dir: Path
    ) -> None:
        result = posterior_sample(tiny_prior, tiny_model, sparse_spec, seed=2, trace=True)
        assert result.trace is not None
        assert result.trace.t == list(range(8, 0, -1))
        assert all(n >= 0 for n in result.trace.guidance_norm)
        frame = pd.read_csv(result.trace.write_csv(temp_dir / "trace.csv"))
        assert list(frame.columns) == TRACE_COLUMNS
        assert len(frame) == 8

    def test_zero_scale_trace_keeps_prior_sample(
        self, tiny_model: ReconModel, tiny_prior: PriorModel, sparse_spec: GuidanceSpec
    ) -> None:
        sparse_spec.scale = 0.0
        result = posterior_sample(tiny_prior, tiny_model, sparse_spec, seed=4, trace=True)
        assert result.trace is not None and len(result.trace) == 8
        np.testing.assert_array_equal(result.latent, sample_chain(tiny_prior, 4))

    def test_non_finite_gradient_aborts(
        self,
        tiny_model: ReconModel,
        tiny_prior: PriorModel,
        sparse_spec: GuidanceSpec,
        monkeypatch: pytest.MonkeyPatch,
    ) -> None:
        def broken(z_prev: np.ndarray, *args: object, **kwargs: object) -> GuidanceStep:
            return GuidanceStep(gradient=np.full(np.shape(z_prev), np.nan), loss=float("nan"))

        monkeypatch.setattr(sampler_module, "guidance_gradient", broken)
        with pytest.raises(PosteriorDivergedError, match="t=8") as info:
            posterior_sample(tiny_prior, tiny_model, sparse_spec, seed=6, trace=True)
        assert info.value.seed == 6
        assert info.value.trace.t == [8]


class TestLinearGuidance:
    """Guided reverse chains on a scalar toy prior with an identity observation map."""

    TARGET = np.array([1.0, -1.0, 0.5, 1.2])

    @pytest.fixture
    def toy_setup(self) -> tuple[ToyDenoiser, NoiseSchedule]:
        schedule = build_schedule(100, 1e-4, 1e-2)
        model = train_toy(two_component_mixture(2000, seed=0), schedule, iterations=300, batch_size=128, seed=0)
        return model, schedule

    def _chain_losses(self, model: ToyDenoiser, schedule: NoiseSchedule, scale: float, seed: int) -> list[float]:
        losses: list[float] = []

        def hook(t: int, z_prev: np.ndarray, eps: np.ndarray) -> np.ndarray:
            z = Tensor(z_prev, requires_grad=True)
            with record() as rec:
                loss = ops.sum(ops.square(ops.sub(clean_estimate(z, eps, t, schedule), self.TARGET)))
            losses.append(float(loss.data))
            if scale == 0.0:
                return z_prev
            return z_prev - scale * backward(rec, loss).wrt(z)

        ancestral_sample(model.epsilon, self.TARGET.shape, schedule, np.random.default_rng(seed), hook=hook)
        return losses

    def test_guidance_lowers_late_reconstruction_loss(self, toy_setup: tuple[ToyDenoiser, NoiseSchedule]) -> None:
        model, schedule = toy_setup
        tail = schedule.T // 10
        late: dict[float, list[float]] = {0.0: [], 5e-3: []}
        for seed in range(20):
            for scale in late:
                losses = self._chain_losses(model, schedule, scale, seed)
                assert len(losses) == schedule.T
                late[scale].append(float(np.mean(losses[-tail:])))
        assert np.all(np.isfinite(late[5e-3]))
        assert np.mean(late[5e-3]) < np.mean(late[0.0])


class TestBatchPosterior:
    """Independent chains per seed."""

    def test_seed_order_and_workers(
        self, tiny_model: ReconModel, tiny_prior: PriorModel, sparse_spec: GuidanceSpec
    ) -> None:
        inline = batch_posterior(tiny_prior, tiny_model, sparse_spec, [5, 1, 3])
        threaded = batch_posterior(tiny_prior, tiny_model, sparse_spec, [5, 1, 3], workers=2)
        assert [r.seed for r in inline] == [5, 1, 3]
        for a, b in zip(inline, threaded):
            np.testing.assert_allclose(b.latent, a.latent, rtol=1e-10, atol=1e-12)
        single = posterior_sample(tiny_prior, tiny_model, sparse_spec, seed=1)
        np.testing.assert_array_equal(inline[1].latent, single.latent)

    @pytest.mark.parametrize("seeds", [[], [1, 1]])
    def test_invalid_seeds(
        self, tiny_model: ReconModel, tiny_prior: PriorModel, sparse_spec: GuidanceSpec, seeds: list[int]
    ) -> None:
        with pytest.raises(ValueError, match="seed"):
            batch_posterior(tiny_prior, tiny_model, sparse_spec, seeds)

    def test_saved_latents_keyed_by_seed(
        self, tiny_model: ReconModel, tiny_prior: PriorModel, sparse_spec: GuidanceSpec, temp_dir: Path
    ) -> None:
        results = batch_posterior(tiny_prior, tiny_model, sparse_spec, [7, 2])
        path = save_posterior(temp_dir / "posterior.ckpt", results, {"task": "sparse_pixels"})
        loaded = load_posterior(path)
        assert list(loaded) == [2, 7]
        np.testing.assert_array_equal(loaded[7], results[0].latent)


class TestTasks:
    """Task registry, observation building and scoring."""

    def test_registry(self) -> None:
        assert set(TASKS) == {"full_views", "half_image", "sparse_pixels", "sparse_depth", "noisy_views"}
        assert resolve_task("sparse_depth") == ObservationKind.SPARSE_DEPTH

    def test_unknown_task_lists_valid_names(self) -> None:
        with pytest.raises(UnknownTaskError, match="valid tasks: full_views") as info:
            resolve_task("inpaint")
        assert info.value.name == "inpaint"
        assert isinstance(info.value, ValueError)

    def test_build_from_options(self, small_dataset: SceneDataset) -> None:
        obs = build_task_observation(small_dataset, HELDOUT, "half_image", TaskOptions(half="bottom", view=2))
        assert obs.views[0].view_index == 2
        np.testing.assert_array_equal(obs.views[0].pixel_indices, half_indices(12, 12, "bottom"))
        noisy = build_task_observation(small_dataset, HELDOUT, "noisy_views", TaskOptions(sigma=0.2, views=3), seed=1)
        assert len(noisy.views) == 3
        assert noisy.noise_std == 0.2

    def test_unknown_option_rejected(self) -> None:
        with pytest.raises(ValueError):
            TaskOptions(radius=2)  # type: ignore[call-arg]

    def test_evaluate_half_image(
        self, tiny_model: ReconModel, small_dataset: SceneDataset, rng: np.random.Generator
    ) -> None:
        obs = build_task_observation(small_dataset, HELDOUT, "half_image")
        latents = {seed: rng.normal(size=32) * 0.5 for seed in (0, 1, 2)}
        result = evaluate_task(
            "half_image",
            small_dataset,
            obs,
            latents,
            tiny_model,
            samples=4,
            baseline=np.zeros(32),
            grid_views=2,
            averaging_ks=(1, 2, 5),
        )
        assert [row["seed"] for row in result.rows] == [0, 1, 2]
        for row in result.rows:
            assert 0.0 < float(row["psnr"]) <= 99.0  # type: ignore[arg-type]
            assert np.isfinite(row["ssim"])  # type: ignore[arg-type]
            assert np.isfinite(row["variance_ratio"])  # type: ignore[arg-type]
            assert row["baseline_psnr"] == result.rows[0]["baseline_psnr"]
            assert np.isnan(row["depth_error"])  # type: ignore[arg-type]
        assert [row["k"] for row in result.averaging] == [1, 2]
        assert result.averaging[0]["best_single_psnr"] == max(float(r["psnr"]) for r in result.rows)  # type: ignore[arg-type]

        observed = obs.views[0].view_index
        assert list(result.renders)[0] == observed
        assert len(result.renders) == 2
        assert result.renders[observed].shape == (3, 12, 12, 3)
        assert result.truths[observed].shape == (12, 12, 3)

    def test_evaluate_sparse_depth(self, tiny_model: ReconModel, small_dataset: SceneDataset) -> None:
        obs = build_task_observation(small_dataset, HELDOUT, "sparse_depth", TaskOptions(fraction=0.5))
        result = evaluate_task("sparse_depth", small_dataset, obs, {0: np.zeros(32)}, tiny_model, samples=4)
        (row,) = result.rows
        assert float(row["depth_error"]) >= 0.0  # type: ignore[arg-type]
        assert np.isnan(row["variance_ratio"])  # type: ignore[arg-type]
        assert np.isnan(row["baseline_psnr"])  # type: ignore[arg-type]
        assert np.isnan(row["prior_depth_error"])  # type: ignore[arg-type]
        assert np.isnan(row["rgb_variance"])  # type: ignore[arg-type]
        assert result.averaging == []

    def test_sparse_depth_compares_with_prior_samples(
        self, tiny_model: ReconModel, small_dataset: SceneDataset, rng: np.random.Generator
    ) -> None:
        obs = build_task_observation(small_dataset, HELDOUT, "sparse_depth", TaskOptions(fraction=0.5))
        latents = {seed: rng.normal(size=32) for seed in (3, 4, 5)}
        prior = {seed: rng.normal(size=32) * 2.0 for seed in (3, 4, 5)}

        same = evaluate_task("sparse_depth", small_dataset, obs, latents, tiny_model, samples=4, prior_latents=latents)
        for row in same.rows:
            assert row["prior_depth_error"] == row["depth_error"]
            assert row["prior_rgb_variance"] == row["rgb_variance"]
            assert row["prior_depth_variance"] == row["depth_variance"]
            assert float(row["rgb_variance"]) > 0.0  # type: ignore[arg-type]
            assert float(row["depth_variance"]) > 0.0  # type: ignore[arg-type]

        other = evaluate_task("sparse_depth", small_dataset, obs, latents, tiny_model, samples=4, prior_latents=prior)
        for mine, theirs in zip(same.rows, other.rows):
            assert theirs["depth_error"] == mine["depth_error"]
            assert theirs["rgb_variance"] == mine["rgb_variance"]
            assert theirs["prior_depth_error"] != mine["prior_depth_error"]
            assert float(theirs["prior_depth_variance"]) >= 0.0  # type: ignore[arg-type]

    def test_prior_samples_ignored_for_rgb_tasks(
        self, tiny_model: ReconModel, small_dataset: SceneDataset, rng: np.random.Generator
    ) -> None:
        obs = build_task_observation(small_dataset, HELDOUT, "sparse_pixels", TaskOptions(fraction=0.5))
        latents = {seed: rng.normal(size=32) for seed in (0, 1)}
        result = evaluate_task("sparse_pixels", small_dataset, obs, latents, tiny_model, samples=4, prior_latents=latents)
        for row in result.rows:
            assert np.isnan(row["prior_depth_error"])  # type: ignore[arg-type]
            assert np.isnan(row["depth_variance"])  # type: ignore[arg-type]

    def test_sample_spread(self) -> None:
        images = [np.zeros((2, 2, 3)), np.ones((2, 2, 3))]
        depths = [np.array([1.0, 2.0]), np.array([3.0, 2.0])]
        rgb, depth = sample_spread(images, depths)
        assert rgb == pytest.approx(0.5)
        assert depth == pytest.approx(1.0)
        assert all(np.isnan(v) for v in sample_spread(images[:1], depths[:1]))
