"""
TEST DOC: Datasets and Observations

WHAT: On-disk dataset generation and loading, and the guidance observation builders
WHY: Every training command and every reconstruction task reads scenes through these
HOW: A small session-scoped dataset, plus tiny throwaway datasets for failure cases

CASES:
- Manifest lists scenes, cameras and disjoint train/test splits; last scenes held out
- Stored images match a fresh analytic render up to 8-bit quantization
- Regenerating with equal arguments gives identical bytes
- Each observation kind selects the documented pixels and targets
- Observation rays carry targets of the right kind

EDGE CASES:
- Missing or malformed manifests, corrupt depth files
- Invalid generation arguments
- Unknown scenes and views
- Sparse fractions outside (0, 1], negative noise, too many noisy views
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from triplane_posterior.scenes.dataset import (
    MANIFEST_NAME,
    DatasetError,
    SceneDataset,
    generate_dataset,
    read_depth,
    read_png,
    scene_id,
    write_png,
)
from triplane_posterior.scenes.geometry import render_reference
from triplane_posterior.scenes.observations import (
    ObservationError,
    ObservationKind,
    ObservationParams,
    half_indices,
    make_observation,
    sparse_count,
)


class TestDatasetLayout:
    """Generated dataset contents."""

    def test_manifest_and_splits(self, small_dataset: SceneDataset) -> None:
        manifest = small_dataset.manifest
        assert small_dataset.scene_ids == [scene_id(i) for i in range(4)]
        assert manifest.heldout_scene_ids == ["scene_0003"]
        assert manifest.training_scene_ids == ["scene_0000", "scene_0001", "scene_0002"]
        for sid in small_dataset.scene_ids:
            train, test = small_dataset.train_views(sid), small_dataset.test_views(sid)
            assert len(train) == 4 and len(test) == 1
            assert sorted(train + test) == list(range(5))

    def test_rasters(self, small_dataset: SceneDataset) -> None:
        rgb = small_dataset.image("scene_0001", 2)
        depth = small_dataset.depth("scene_0001", 2)
        assert rgb.shape == (12, 12, 3)
        assert depth.shape == (12, 12)
        assert rgb.min() >= 0.0 and rgb.max() <= 1.0
        background = depth >= small_dataset.t_far
        np.testing.assert_array_equal(rgb[background], 0.0)
        assert not rgb.flags.writeable

    def test_images_match_reference_render(self, small_dataset: SceneDataset) -> None:
        sid = "scene_0002"
        spec = small_dataset.scene(sid).spec
        assert spec is not None
        for view in range(5):
            rgb, depth = render_reference(spec, small_dataset.camera(sid, view), t_far=small_dataset.t_far)
            np.testing.assert_allclose(small_dataset.image(sid, view), rgb, atol=0.5 / 255 + 1e-9)
            np.testing.assert_allclose(small_dataset.depth(sid, view), depth, rtol=1e-6)

    def test_regeneration_is_byte_identical(self, temp_dir: Path) -> None:
        for name in ("a", "b"):
            generate_dataset(temp_dir / name, n_scenes=2, n_views=3, resolution=6, seed=5, n_train=2, workers=2)
        files = sorted(p.relative_to(temp_dir / "a") for p in (temp_dir / "a").rglob("*") if p.is_file())
        assert Path(MANIFEST_NAME) in files
        for rel in files:
            assert (temp_dir / "a" / rel).read_bytes() == (temp_dir / "b" / rel).read_bytes()

    def test_default_train_split(self, temp_dir: Path) -> None:
        manifest = generate_dataset(temp_dir, n_scenes=1, n_views=5, resolution=4, seed=0)
        assert len(manifest.scenes[0].train_views) == 4


class TestDatasetErrors:
    """Failures reading or writing datasets."""

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"n_scenes": 0, "n_views": 4},
            {"n_scenes": 2, "n_views": 1},
            {"n_scenes": 2, "n_views": 4, "n_train": 4},
            {"n_scenes": 2, "n_views": 4, "n_heldout": 2},
        ],
    )
    def test_invalid_generation_arguments(self, temp_dir: Path, kwargs: dict[str, int]) -> None:
        with pytest.raises(DatasetError):
            generate_dataset(temp_dir, resolution=4, seed=0, **kwargs)

    def test_missing_manifest(self, temp_dir: Path) -> None:
        with pytest.raises(DatasetError, match="manifest not found"):
            SceneDataset.open(temp_dir)

    def test_invalid_manifest(self, temp_dir: Path) -> None:
        (temp_dir / MANIFEST_NAME).write_text("seed: 1\nwidth: 4\nbogus: 2\n", encoding="utf-8")
        with pytest.raises(DatasetError, match="Invalid manifest"):
            SceneDataset.open(temp_dir)

    def test_corrupt_depth(self, temp_dir: Path) -> None:
        path = temp_dir / "depth.bin"
        path.write_bytes(b"XXXX" + b"\x00" * 12)
        with pytest.raises(DatasetError, match="magic"):
            read_depth(path)
        path.write_bytes(b"DP")
        with pytest.raises(DatasetError, match="too short"):
            read_depth(path)

    def test_unknown_scene_and_view(self, small_dataset: SceneDataset) -> None:
        with pytest.raises(DatasetError, match="Unknown scene"):
            small_dataset.scene("scene_9999")
        with pytest.raises(DatasetError, match="no view"):
            small_dataset.image("scene_0000", 5)

    def test_png_quantization(self, temp_dir: Path) -> None:
        image = np.linspace(0.0, 1.0, 48).reshape(4, 4, 3)
        write_png(temp_dir / "x.png", image)
        np.testing.assert_allclose(read_png(temp_dir / "x.png"), image, atol=0.5 / 255 + 1e-9)


class TestObservations:
    """Guidance targets built from a dataset scene."""

    def test_half_indices(self) -> None:
        np.testing.assert_array_equal(half_indices(4, 4, "top"), np.arange(8))
        np.testing.assert_array_equal(half_indices(4, 4, "bottom"), np.arange(8, 16))
        np.testing.assert_array_equal(half_indices(4, 2, "left"), [0, 1, 4, 5])
        np.testing.assert_array_equal(half_indices(4, 2, "right"), [2, 3, 6, 7])

    def test_sparse_count(self) -> None:
        assert sparse_count(0.05, 144) == 8
        assert sparse_count(1.0, 10) == 10
        for bad in (0.0, 1.5):
            with pytest.raises(ObservationError):
                sparse_count(bad, 10)

    def test_full_views_defaults_to_train_views(self, small_dataset: SceneDataset) -> None:
        obs = make_observation(small_dataset, "scene_0000", ObservationKind.FULL_VIEWS)
        assert [v.view_index for v in obs.views] == small_dataset.train_views("scene_0000")
        assert obs.pixel_count == 4 * 144
        assert obs.noise_std == 0.0

    def test_half_image(self, small_dataset: SceneDataset) -> None:
        obs = make_observation(small_dataset, "scene_0001", "half_image", ObservationParams(half="left"))
        (view,) = obs.views
        assert view.view_index == small_dataset.train_views("scene_0001")[0]
        np.testing.assert_array_equal(view.pixel_indices, half_indices(12, 12, "left"))
        image = small_dataset.image("scene_0001", view.view_index).reshape(-1, 3)
        np.testing.assert_array_equal(view.targets, image[view.pixel_indices])

    def test_sparse_pixels_seeded(self, small_dataset: SceneDataset) -> None:
        params = ObservationParams(fraction=0.1)
        a = make_observation(small_dataset, "scene_0001", ObservationKind.SPARSE_PIXELS, params, seed=3)
        b = make_observation(small_dataset, "scene_0001", ObservationKind.SPARSE_PIXELS, params, seed=3)
        indices = a.views[0].pixel_indices
        assert indices.size == 15
        assert np.all(np.diff(indices) > 0)
        np.testing.assert_array_equal(indices, b.views[0].pixel_indices)

    def test_sparse_depth_uses_foreground(self, small_dataset: SceneDataset) -> None:
        obs = make_observation(small_dataset, "scene_0002", ObservationKind.SPARSE_DEPTH, ObservationParams(view=1))
        assert obs.target == "depth"
        assert np.all(obs.views[0].targets < small_dataset.t_far)
        rays = obs.rays(samples=4, t_near=small_dataset.t_near, t_far=small_dataset.t_far)
        assert rays.target_depth is not None and rays.target_rgb is None
        assert rays.n_rays == obs.pixel_count

    def test_noisy_views(self, small_dataset: SceneDataset) -> None:
        params = ObservationParams(sigma=0.1, n_views=2)
        obs = make_observation(small_dataset, "scene_0000", ObservationKind.NOISY_VIEWS, params, seed=1)
        assert len(obs.views) == 2
        assert obs.noise_std == 0.1
        clean = small_dataset.image("scene_0000", obs.views[0].view_index).reshape(-1, 3)
        residual = obs.views[0].targets - clean
        assert 0.05 < residual.std() < 0.15

    def test_noisy_views_zero_sigma_is_clean(self, small_dataset: SceneDataset) -> None:
        obs = make_observation(small_dataset, "scene_0000", ObservationKind.NOISY_VIEWS, ObservationParams(n_views=1))
        clean = small_dataset.image("scene_0000", obs.views[0].view_index).reshape(-1, 3)
        np.testing.assert_array_equal(obs.views[0].targets, clean)

    def test_explicit_view_ids(self, small_dataset: SceneDataset) -> None:
        obs = make_observation(
            small_dataset, "scene_0000", ObservationKind.FULL_VIEWS, ObservationParams(view_ids=[4, 0])
        )
        assert [v.view_index for v in obs.views] == [4, 0]

    @pytest.mark.parametrize(
        "kind,params",
        [
            (ObservationKind.NOISY_VIEWS, ObservationParams()),
            (ObservationKind.NOISY_VIEWS, ObservationParams(sigma=-0.1, n_views=1)),
            (ObservationKind.FULL_VIEWS, ObservationParams(view_ids=[1, 1])),
            (ObservationKind.FULL_VIEWS, ObservationParams(view_ids=[7])),
            (ObservationKind.HALF_IMAGE, ObservationParams(view=9)),
            (ObservationKind.SPARSE_PIXELS, ObservationParams(fraction=0.0)),
        ],
    )
    def test_invalid_parameters(
        self, small_dataset: SceneDataset, kind: ObservationKind, params: ObservationParams
    ) -> None:
        # the small dataset has four training views, fewer than the five noisy views by default
        with pytest.raises(ObservationError):
            make_observation(small_dataset, "scene_0000", kind, params)
