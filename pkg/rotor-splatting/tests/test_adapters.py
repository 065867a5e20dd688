"""
Tests for adapter implementations.
"""
import json
import os

import numpy as np
import pandas as pd
import pytest

from src.adapters.checkpoint import HEADER, MAGIC, BinaryCheckpointRepository
from src.adapters.config_file import load_train_config, parse_config_values, parse_train_config
from src.adapters.dataset_loader import TransformsDatasetRepository, normalize_times, orthonormalize_pose
from src.adapters.images import COLOR_WHEEL, PillowImageStore, composite, flow_to_color, quantize
from src.adapters.knn import KDTreeNeighborSearch
from src.adapters.metrics import (
    InMemoryMetricsSink,
    JsonLinesMetricsSink,
    format_eval_table,
    metrics_frame,
    read_metrics,
)
from src.adapters.schemas import TransformsFileSchema, TransformsFrameSchema
from src.adapters.synthetic import (
    blob_gaussians,
    camera_ring,
    generate_synthetic,
    moving_gaussian,
    scene_store,
)
from src.domain.errors import (
    CheckpointFormatError,
    ConfigError,
    MalformedJsonError,
    MissingFileError,
    NonInvertiblePoseError,
    ShapeMismatchError,
    TooFewPointsError,
)
from src.domain.gaussian import GaussianStore, slice_arrays, speeds
from src.domain.models import (
    SH_COEFFS,
    BlobSpec,
    Camera,
    CameraRingSpec,
    Dataset,
    Frame,
    MotionKind,
    SplitTag,
    SyntheticSceneSpec,
)
from src.domain.rotor import identity_rotor
from src.domain.service import FrameMetrics
from tests.conftest import make_store


def _f32(store: GaussianStore) -> GaussianStore:
    def cast(a):
        return a.astype(np.float32).astype(np.float64)
    return GaussianStore(
        means=cast(store.means),
        log_scales=cast(store.log_scales),
        rotors=cast(store.rotors),
        opacity_logits=cast(store.opacity_logits),
        sh=cast(store.sh),
    )


def _pose(angle=0.3, position=(0.5, -4.0, 1.0)) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    pose = np.eye(4)
    pose[:3, :3] = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
    pose[:3, 3] = position
    return pose


def _dataset(rng, width=8, height=6) -> Dataset:
    frames = [
        Frame(camera_to_world=_pose(0.1), time=0.0, split=SplitTag.TRAIN, image=rng.uniform(size=(height, width, 3))),
        Frame(camera_to_world=_pose(0.7), time=0.5, split=SplitTag.TRAIN, image=rng.uniform(size=(height, width, 3))),
        Frame(camera_to_world=_pose(1.2), time=1.0, split=SplitTag.TEST, image=rng.uniform(size=(height, width, 3))),
    ]
    return Dataset(frames=frames, width=width, height=height, fx=9.0, fy=9.5, cx=4.0, cy=3.0,
                   time_factor=2.0, time_offset=10.0, background=(1.0, 1.0, 1.0))


def _write_split(directory, name, payload):
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, f"transforms_{name}.json"), "w") as f:
        json.dump(payload, f)


class TestBinaryCheckpointRepository:
    """Checkpoint persistence."""

    def test_round_trip_is_exact_for_float32_values(self, rng, tmp_path):
        store = _f32(make_store(rng, 7))
        repo = BinaryCheckpointRepository()
        path = str(tmp_path / "ckpt" / "scene.r4gs")
        repo.save(store, path)
        loaded = repo.load(path)
        for name in ("means", "log_scales", "rotors", "opacity_logits", "sh"):
            np.testing.assert_array_equal(getattr(loaded, name), getattr(store, name))

    def test_empty_store(self, tmp_path):
        repo = BinaryCheckpointRepository()
        path = str(tmp_path / "empty.r4gs")
        repo.save(GaussianStore.empty(), path)
        assert len(repo.load(path)) == 0
        assert os.path.getsize(path) == HEADER.size

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingFileError):
            BinaryCheckpointRepository().load(str(tmp_path / "nope.r4gs"))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.r4gs"
        path.write_bytes(HEADER.pack(b"NOPE", 1, 0, 3))
        with pytest.raises(CheckpointFormatError):
            BinaryCheckpointRepository().load(str(path))

    def test_wrong_version(self, tmp_path):
        path = tmp_path / "v2.r4gs"
        path.write_bytes(HEADER.pack(MAGIC, 2, 0, 3))
        with pytest.raises(CheckpointFormatError):
            BinaryCheckpointRepository().load(str(path))

    def test_truncated_rows(self, rng, tmp_path):
        repo = BinaryCheckpointRepository()
        path = tmp_path / "cut.r4gs"
        repo.save(make_store(rng, 3), str(path))
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(CheckpointFormatError):
            repo.load(str(path))

    def test_short_header(self, tmp_path):
        path = tmp_path / "short.r4gs"
        path.write_bytes(b"R4")
        with pytest.raises(CheckpointFormatError):
            BinaryCheckpointRepository().load(str(path))


class TestImages:
    """PNG codec, compositing and flow colouring."""

    def test_quantize_rounds_half_up_and_clamps(self):
        np.testing.assert_array_equal(quantize(np.array([-0.2, 0.0, 0.5, 1.0, 3.0])), [0, 0, 128, 255, 255])

    def test_png_round_trip_within_half_step(self, rng, tmp_path):
        image = rng.uniform(size=(5, 7, 3))
        store = PillowImageStore()
        path = str(tmp_path / "out" / "img.png")
        store.write(path, image)
        back = store.read(path)
        assert back.shape == (5, 7, 3)
        assert np.max(np.abs(back - image)) <= 0.5 / 255 + 1e-12

    def test_rgba_read_keeps_alpha(self, tmp_path):
        image = np.zeros((2, 2, 4))
        image[..., 3] = 1.0
        image[0, 0, 3] = 0.0
        store = PillowImageStore()
        store.write(str(tmp_path / "a.png"), image)
        back = store.read(str(tmp_path / "a.png"))
        assert back.shape == (2, 2, 4)
        assert back[0, 0, 3] == 0.0

    def test_write_rejects_bad_shape(self, tmp_path):
        with pytest.raises(ShapeMismatchError):
            PillowImageStore().write(str(tmp_path / "x.png"), np.zeros((4, 4)))

    def test_read_missing(self, tmp_path):
        with pytest.raises(MissingFileError):
            PillowImageStore().read(str(tmp_path / "missing.png"))

    def test_composite(self):
        rgba = np.zeros((1, 2, 4))
        rgba[0, 0] = [1.0, 0.0, 0.0, 1.0]
        rgba[0, 1] = [1.0, 0.0, 0.0, 0.0]
        out = composite(rgba, (0.0, 0.0, 1.0))
        np.testing.assert_allclose(out[0], [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])

    def test_composite_passes_rgb_through(self, rng):
        rgb = rng.uniform(size=(2, 2, 3))
        assert composite(rgb, (1.0, 1.0, 1.0)) is rgb

    def test_zero_flow_is_white(self):
        np.testing.assert_allclose(flow_to_color(np.zeros((3, 3, 2))), 1.0)

    def test_strongest_flow_is_fully_saturated(self):
        flow = np.zeros((1, 2, 2))
        flow[0, 1] = [-4.0, 0.0]
        out = flow_to_color(flow)
        np.testing.assert_allclose(out[0, 1], COLOR_WHEEL[27])
        assert np.all((out >= 0.0) & (out <= 1.0))

    def test_explicit_magnitude_scales_saturation(self):
        flow = np.array([[[-1.0, 0.0]]])
        out = flow_to_color(flow, max_magnitude=2.0)
        np.testing.assert_allclose(out[0, 0], 1.0 - 0.5 * (1.0 - COLOR_WHEEL[27]))


class TestKDTreeNeighborSearch:
    """Exact neighbour queries."""

    def test_self_is_first(self, rng):
        points = rng.uniform(size=(50, 4))
        distances, indices = KDTreeNeighborSearch().kneighbors(points, 3)
        np.testing.assert_array_equal(indices[:, 0], np.arange(50))
        np.testing.assert_array_equal(distances[:, 0], 0.0)

    def test_too_few_points(self):
        with pytest.raises(TooFewPointsError):
            KDTreeNeighborSearch().kneighbors(np.zeros((2, 4)), 3)


class TestConfigFile:
    """Flat key = value training configs."""

    def test_typed_values(self):
        values = parse_config_values(
            "# run\n"
            "total_steps = 2000.0\n"
            "lr_rotor = 2e-3   # faster\n"
            "background = 1, 1, 1\n"
            "static_mode = yes\n"
            "seed = none\n"
        )
        assert values == {
            "total_steps": 2000,
            "lr_rotor": 2e-3,
            "background": (1.0, 1.0, 1.0),
            "static_mode": True,
            "seed": None,
        }

    def test_optional_int(self):
        assert parse_config_values("seed = 7")["seed"] == 7

    @pytest.mark.parametrize("text", [
        "total_steps 10",
        "unknown_key = 1",
        "total_steps = 1\ntotal_steps = 2",
        "total_steps = 1.5",
        "static_mode = maybe",
        "background = 1,1",
        "lr_rotor = fast",
    ])
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            parse_config_values(text)

    def test_overrides_win(self):
        config = parse_train_config("total_steps = 100\nstatic_mode = false", total_steps=5, static_mode=True)
        assert config.total_steps == 5
        assert config.static_mode is True

    def test_invalid_values_surface_as_config_error(self):
        with pytest.raises(ConfigError):
            parse_train_config("split_factor = 1.0")
        with pytest.raises(ConfigError):
            parse_train_config("lambda_ssim = 2")

    def test_load_file_and_defaults(self, tmp_path):
        path = tmp_path / "train.cfg"
        path.write_text("batch_size = 2\n")
        assert load_train_config(str(path)).batch_size == 2
        assert load_train_config(None).batch_size == 3

    def test_load_missing(self, tmp_path):
        with pytest.raises(MissingFileError):
            load_train_config(str(tmp_path / "none.cfg"))


class TestMetrics:
    """Metrics sinks and evaluation tables."""

    def test_json_lines_appends(self, tmp_path):
        path = str(tmp_path / "run" / "metrics.jsonl")
        sink = JsonLinesMetricsSink(path)
        sink.record({"step": 1, "loss": 0.5})
        sink.flush()
        sink.record({"step": 2, "loss": 0.25})
        sink.flush()
        sink.flush()
        df = read_metrics(path)
        assert list(df["step"]) == [1, 2]
        assert list(df["loss"]) == [0.5, 0.25]

    def test_in_memory(self):
        sink = InMemoryMetricsSink()
        sink.record({"step": 3})
        sink.flush()
        assert sink.records == [{"step": 3}]

    def test_frame_table_has_mean_row(self):
        metrics = [FrameMetrics(0, 0.0, 30.0, 0.9), FrameMetrics(1, 1.0, 40.0, 0.8)]
        df = metrics_frame(metrics)
        assert df.loc["mean", "psnr"] == pytest.approx(35.0)
        assert df.loc["mean", "ssim"] == pytest.approx(0.85)
        assert pd.isna(df.loc["mean", "time"])
        text = format_eval_table(metrics)
        assert "mean" in text and "35" in text

    def test_empty_table(self):
        assert len(metrics_frame([])) == 0


class TestPoses:
    """Camera pose checks."""

    def test_rigid_pose_unchanged(self):
        pose = _pose()
        np.testing.assert_array_equal(orthonormalize_pose(pose), pose)

    def test_small_drift_repaired(self, rng):
        pose = _pose()
        pose[:3, :3] += 1e-6 * rng.normal(size=(3, 3))
        fixed = orthonormalize_pose(pose)
        np.testing.assert_allclose(fixed[:3, :3] @ fixed[:3, :3].T, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(fixed[:3, :3], _pose()[:3, :3], atol=1e-5)

    def test_large_drift_rejected(self):
        pose = _pose()
        pose[0, 0] += 0.05
        with pytest.raises(NonInvertiblePoseError):
            orthonormalize_pose(pose)

    def test_reflection_rejected(self):
        pose = _pose()
        pose[:3, 0] *= -1.0
        with pytest.raises(NonInvertiblePoseError):
            orthonormalize_pose(pose)

    def test_normalize_times(self):
        times, factor, offset = normalize_times([2.0, 4.0, 6.0])
        np.testing.assert_allclose(times, [0.0, 0.5, 1.0])
        assert (factor, offset) == (4.0, 2.0)

    def test_constant_times(self):
        times, factor, offset = normalize_times([3.0, 3.0])
        np.testing.assert_array_equal(times, 0.0)
        assert (factor, offset) == (1.0, 3.0)


class TestTransformsDatasetRepository:
    """transforms_{split}.json datasets."""

    @pytest.fixture
    def repo(self):
        return TransformsDatasetRepository(PillowImageStore())

    def test_lossless_round_trip(self, rng, tmp_path, repo):
        dataset = _dataset(rng)
        repo.save(dataset, str(tmp_path))
        loaded = repo.load(str(tmp_path))
        assert [f.split for f in loaded.frames] == [SplitTag.TRAIN, SplitTag.TRAIN, SplitTag.TEST]
        for a, b in zip(dataset.frames, loaded.frames):
            np.testing.assert_allclose(b.image, a.image, atol=1e-7)
            np.testing.assert_allclose(b.camera_to_world, a.camera_to_world, atol=1e-12)
            assert b.time == pytest.approx(a.time)
        assert (loaded.fx, loaded.fy, loaded.cx, loaded.cy) == pytest.approx((9.0, 9.5, 4.0, 3.0))
        assert loaded.native_time(0.5) == pytest.approx(11.0)
        assert loaded.background == (1.0, 1.0, 1.0)

    def test_png_only_round_trip(self, rng, tmp_path, repo):
        dataset = _dataset(rng)
        repo.save(dataset, str(tmp_path), lossless=False)
        assert not (tmp_path / "train" / "r_000.npy").exists()
        loaded = repo.load(str(tmp_path))
        assert np.max(np.abs(loaded.frames[0].image - dataset.frames[0].image)) <= 0.5 / 255 + 1e-12

    def test_focal_from_angle_and_rgba_composite(self, tmp_path, repo):
        image = np.zeros((4, 6, 4))
        image[..., 0] = 1.0
        image[0, 0, 3] = 0.0
        image[1:, :, 3] = 1.0
        image[0, 1:, 3] = 1.0
        PillowImageStore().write(str(tmp_path / "img.png"), image)
        _write_split(str(tmp_path), "train", {
            "camera_angle_x": 2 * np.arctan(0.5),
            "background": [0.0, 1.0, 0.0],
            "frames": [{"file_path": "./img", "transform_matrix": _pose().tolist()}],
        })
        loaded = repo.load(str(tmp_path))
        assert loaded.fx == pytest.approx(6.0)
        assert (loaded.cx, loaded.cy) == (3.0, 2.0)
        np.testing.assert_allclose(loaded.frames[0].image[0, 0], [0.0, 1.0, 0.0])
        np.testing.assert_allclose(loaded.frames[0].image[1, 1], [1.0, 0.0, 0.0])
        assert loaded.frames[0].time == 0.0

    def test_no_split_files(self, tmp_path, repo):
        with pytest.raises(MissingFileError):
            repo.load(str(tmp_path))

    def test_missing_image(self, tmp_path, repo):
        _write_split(str(tmp_path), "train", {
            "camera_angle_x": 0.7,
            "frames": [{"file_path": "./gone.png", "transform_matrix": _pose().tolist()}],
        })
        with pytest.raises(MissingFileError):
            repo.load(str(tmp_path))

    def test_invalid_json(self, tmp_path, repo):
        (tmp_path / "transforms_train.json").write_text("{not json")
        with pytest.raises(MalformedJsonError):
            repo.load(str(tmp_path))

    def test_schema_violation(self, tmp_path, repo):
        _write_split(str(tmp_path), "train", {"frames": []})
        with pytest.raises(MalformedJsonError):
            repo.load(str(tmp_path))

    def test_bad_matrix_shape(self, tmp_path, repo):
        _write_split(str(tmp_path), "train", {
            "camera_angle_x": 0.7,
            "frames": [{"file_path": "./a.png", "transform_matrix": [[1, 0, 0], [0, 1, 0], [0, 0, 1]]}],
        })
        with pytest.raises(MalformedJsonError):
            repo.load(str(tmp_path))


class TestTransformsSchema:
    """Validation of transforms files before any image is read."""

    def test_frames_parse_with_optional_fields(self):
        parsed = TransformsFileSchema.model_validate({
            "camera_angle_x": 0.7,
            "frames": [{"file_path": "./a", "transform_matrix": _pose().tolist(), "time": 2.5}],
        })
        assert parsed.frames[0].time == 2.5
        assert parsed.frames[0].float_path is None
        assert parsed.background is None

    def test_rejects_non_square_matrix(self):
        with pytest.raises(ValueError):
            TransformsFrameSchema(file_path="./a", transform_matrix=[[1.0, 0.0, 0.0, 0.0]] * 3)

    def test_rejects_field_of_view_beyond_pi(self):
        with pytest.raises(ValueError):
            TransformsFileSchema(camera_angle_x=4.0, frames=[])


class TestMovingGaussian:
    """Exact 4D Gaussians for moving spheres."""

    @pytest.mark.parametrize("velocity", [(0.4, 0.0, 0.0), (0.0, -1.5, 0.3), (0.2, 0.2, 0.2), (-3.0, 0.5, 0.0)])
    def test_realizes_velocity_and_radius(self, velocity):
        velocity = np.asarray(velocity)
        mean4, log_scales, rotor = moving_gaussian(np.array([0.1, 0.2, 0.3]), 0.05, velocity, 0.4, 0.25)
        store = GaussianStore(
            means=mean4[None], log_scales=log_scales[None], rotors=rotor[None],
            opacity_logits=np.zeros(1), sh=np.zeros((1, SH_COEFFS, 3)),
        )
        np.testing.assert_allclose(speeds(store)[0][0], velocity, atol=1e-8)
        batch = slice_arrays(store.means, store.log_scales, store.rotors, 0.6)
        np.testing.assert_allclose(batch.cov3[0], 0.0025 * np.eye(3), atol=1e-8)
        np.testing.assert_allclose(batch.mean3[0], [0.1, 0.2, 0.3] + 0.2 * velocity, atol=1e-8)

    def test_still_blob_uses_identity(self):
        _, log_scales, rotor = moving_gaussian(np.zeros(3), 0.1, np.zeros(3), 0.5, 1e9)
        np.testing.assert_array_equal(rotor, identity_rotor())
        np.testing.assert_allclose(np.exp(log_scales), [0.1, 0.1, 0.1, 1e9])


class TestSyntheticScenes:
    """Blob decomposition and dataset generation."""

    def test_static_blob_is_one_gaussian(self):
        parts = blob_gaussians(BlobSpec(center=(0, 0, 0), radius=0.2, color=(1, 0, 0)))
        assert len(parts) == 1

    def test_oscillating_blob_segments(self):
        blob = BlobSpec(center=(0, 0, 0), radius=0.1, color=(0, 1, 0), motion=MotionKind.OSCILLATING,
                        amplitude=(0.3, 0.0, 0.0), frequency=1.0)
        parts = blob_gaussians(blob)
        assert len(parts) == 8
        np.testing.assert_allclose([p[0][3] for p in parts], (2 * np.arange(8) + 1) / 16)

    def test_windowed_segments(self):
        blob = BlobSpec(center=(0, 0, 0), radius=0.1, color=(0, 0, 1), motion=MotionKind.LINEAR,
                        velocity=(1.0, 0.0, 0.0), window=(0.2, 0.8), segments=3)
        parts = blob_gaussians(blob)
        np.testing.assert_allclose([p[0][3] for p in parts], [0.3, 0.5, 0.7])
        np.testing.assert_allclose(parts[0][0][:3], blob.position(0.3))

    def test_store_is_float32_exact(self):
        spec = SyntheticSceneSpec(blobs=[BlobSpec(center=(0.1, 0.2, 0.3), radius=0.2, color=(0.7, 0.2, 0.1),
                                                  motion=MotionKind.LINEAR, velocity=(0.3, 0.0, 0.0))])
        store = scene_store(spec)
        np.testing.assert_array_equal(store.means, store.means.astype(np.float32))
        np.testing.assert_array_equal(store.rotors, store.rotors.astype(np.float32))

    def test_ring_looks_at_origin(self):
        spec = SyntheticSceneSpec(blobs=[BlobSpec(center=(0, 0, 0), radius=0.2, color=(1, 1, 1))],
                                  cameras=CameraRingSpec(count=4, radius=3.0, elevation=0.5))
        for pose in camera_ring(spec):
            cam = Camera.from_opengl_pose(pose, 16, 16, 20.0, 20.0)
            origin = cam.world_to_camera @ np.array([0.0, 0.0, 0.0, 1.0])
            np.testing.assert_allclose(origin[:2], 0.0, atol=1e-12)
            assert origin[2] == pytest.approx(np.hypot(3.0, 0.5))

    def test_generate_splits_and_shapes(self):
        spec = SyntheticSceneSpec(
            blobs=[BlobSpec(center=(0, 0, 0), radius=0.4, color=(0.9, 0.3, 0.1), motion=MotionKind.LINEAR,
                            velocity=(0.5, 0.0, 0.0))],
            cameras=CameraRingSpec(count=2, radius=3.0),
            time_samples=3,
            width=16,
            height=12,
            test_every=3,
        )
        dataset, store = generate_synthetic(spec)
        assert len(dataset.frames) == 6
        assert [f.split for f in dataset.frames].count(SplitTag.TEST) == 2
        assert dataset.frames[2].split == SplitTag.TEST
        np.testing.assert_allclose(sorted({f.time for f in dataset.frames}), [0.0, 0.5, 1.0])
        assert dataset.frames[0].image.shape == (12, 16, 3)
        assert max(f.image.max() for f in dataset.frames) > 0.1
        assert len(store) == 1
