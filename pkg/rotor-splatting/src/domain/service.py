"""
Core business logic: training, evaluation and rendering of 4D Gaussian scenes.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .errors import EmptySourceError, MissingFileError, NonFiniteLossError
from .gaussian import GaussianGradients, GaussianStore, slice_at, speeds, speeds_backward
from .loss import (
    Knn4DIndex,
    SSIM_WINDOW,
    LossBreakdown,
    batch_loss,
    build_knn4d,
    psnr,
    ssim_loss,
)
from .models import MAX_SH_DEGREE, Camera, Dataset, SlicedGaussian3D, SplitTag, TrainConfig
from .optim import (
    accumulate_stats,
    adam_step,
    densify_and_prune,
    initialize_scene,
    reset_opacity,
    sample_box,
)
from .ports import ILogger, IMetricsSink, INeighborSearch
from .rasterizer import render_flow, render_view, render_view_backward


@dataclass
class TrainResult:
    """Trained store and the metrics records emitted along the way"""
    store: GaussianStore
    history: List[Dict[str, float]] = field(default_factory=list)


@dataclass
class FrameMetrics:
    """Evaluation metrics of one frame"""
    frame: int
    time: float
    psnr: float
    ssim: float


def active_sh_degree(step: int, interval: int) -> int:
    """SH degree unlocked at a zero-based step"""
    return min(MAX_SH_DEGREE, step // interval)


class TrainingService:
    """
    Training and evaluation of 4D Gaussian scenes.
    Uses dependency injection - all dependencies are ports (interfaces).
    """

    def __init__(
        self,
        neighbor_search: INeighborSearch,
        metrics_sink: IMetricsSink,
        logger: ILogger,
        num_threads: int = 1
    ):
        self.neighbor_search = neighbor_search
        self.metrics_sink = metrics_sink
        self.logger = logger
        self.num_threads = num_threads

    def initialize(self, dataset: Dataset, config: TrainConfig, rng: np.random.Generator) -> GaussianStore:
        """Gaussians from the dataset's point cloud, or uniform in the configured box"""
        if dataset.points is not None:
            points = np.asarray(dataset.points, dtype=np.float64)
            colors = dataset.point_colors
            self.logger.info(f"Initializing from {len(points)} dataset points")
        else:
            points = sample_box(config.init_num_points, config.init_box_min, config.init_box_max, rng)
            colors = None
            self.logger.info(f"Initializing {len(points)} points uniformly in the 4D box")
        return initialize_scene(points, config, self.neighbor_search, rng, colors=colors)

    def train(
        self,
        dataset: Dataset,
        config: TrainConfig,
        store: Optional[GaussianStore] = None
    ) -> TrainResult:
        """
        Run the full optimization schedule.

        Args:
            dataset: posed training frames with images loaded
            config: training configuration
            store: optional starting store; initialized from the dataset otherwise

        Returns:
            Trained store and the metrics history
        """
        try:
            frames = dataset.split(SplitTag.TRAIN) or dataset.frames
            if not frames:
                raise EmptySourceError("dataset has no frames to train on")
            missing = [f.image_path for f in frames if f.image is None]
            if missing:
                raise MissingFileError(f"{len(missing)} training frames have no image, e.g. {missing[0]}")

            rng = np.random.default_rng(config.seed)
            if store is None:
                store = self.initialize(dataset, config, rng)
            extent = config.scene_scale_override or dataset.scene_extent()
            self.logger.info(
                f"Starting training: {config.total_steps} steps, batch {config.batch_size}, "
                f"{len(store)} Gaussians, scene extent {extent:.6g}, static_mode={config.static_mode}"
            )

            result = TrainResult(store=store)
            index: Optional[Knn4DIndex] = None
            for step in range(config.total_steps):
                index = self._refresh_index(result.store, config, step, index)
                breakdown, frame_psnr = self._optimize_step(result.store, frames, dataset, config, step, index, rng)
                result.store, index = self._control_density(result.store, config, step, extent, rng, index)

                iteration = step + 1
                if iteration % config.log_interval == 0 or iteration == config.total_steps:
                    record = {
                        "step": iteration,
                        "loss": breakdown.total(config.loss_weights),
                        **breakdown.as_dict(),
                        "psnr": frame_psnr,
                        "count": len(result.store),
                    }
                    result.history.append(record)
                    self.metrics_sink.record(record)
                    self.logger.info(
                        f"step {iteration}: loss {record['loss']:.6g}, psnr {frame_psnr:.6g}, "
                        f"{len(result.store)} Gaussians"
                    )

            self.metrics_sink.flush()
            self.logger.info("Training completed successfully")
            return result

        except Exception as e:
            self.logger.error("Training failed", e)
            raise

    def _refresh_index(
        self,
        store: GaussianStore,
        config: TrainConfig,
        step: int,
        index: Optional[Knn4DIndex]
    ) -> Optional[Knn4DIndex]:
        weights = config.loss_weights
        if weights.lambda_consistency <= 0.0 or len(store) <= weights.num_neighbors:
            return None
        if index is None or index.size != len(store) or step % config.knn_rebuild_interval == 0:
            return build_knn4d(store.means, weights.num_neighbors, self.neighbor_search)
        return index

    def _optimize_step(
        self,
        store: GaussianStore,
        frames: list,
        dataset: Dataset,
        config: TrainConfig,
        step: int,
        index: Optional[Knn4DIndex],
        rng: np.random.Generator
    ):
        weights = config.loss_weights
        degree = active_sh_degree(step, config.sh_degree_interval)
        picks = rng.choice(len(frames), size=config.batch_size, replace=len(frames) < config.batch_size)
        views = [
            render_view(store, dataset.camera(frames[pick]), config.background_array, degree, self.num_threads)
            for pick in picks
        ]
        targets = [frames[pick].image[..., :3] for pick in picks]

        opacities = store.opacities
        velocity, valid, cache = speeds(store) if index is not None else (None, None, None)
        loss = batch_loss([view.image for view in views], targets, opacities, velocity, weights, index)

        grads = GaussianGradients.zeros(len(store))
        for view, grad_image in zip(views, loss.grad_image):
            frame_grads, view_norms, visible = render_view_backward(view, grad_image, self.num_threads)
            grads.add_(frame_grads, 1.0 / len(picks))
            accumulate_stats(store, view_norms, visible)
        grads.opacity_logits += loss.grad_opacity * opacities * (1.0 - opacities)
        if velocity is not None:
            grad_ls, grad_rot = speeds_backward(cache, valid, loss.grad_speed)
            grads.log_scales += grad_ls
            grads.rotors += grad_rot

        self._check_finite(step + 1, loss.breakdown, grads)
        adam_step(store, grads, config, step)
        frame_psnr = float(np.mean([psnr(view.image, target) for view, target in zip(views, targets)]))
        return loss.breakdown, frame_psnr

    def _control_density(
        self,
        store: GaussianStore,
        config: TrainConfig,
        step: int,
        extent: float,
        rng: np.random.Generator,
        index: Optional[Knn4DIndex]
    ):
        iteration = step + 1
        in_window = config.densify_from <= iteration <= config.densify_until
        if in_window and iteration % config.densify_interval == 0:
            store, report = densify_and_prune(store, config, extent, rng)
            self.logger.info(
                f"step {iteration}: densified {report.before} -> {report.after} Gaussians "
                f"({report.cloned} cloned, {report.split} split, {report.pruned} pruned)"
            )
            index = None
        if iteration % config.opacity_reset_interval == 0 and iteration <= config.densify_until:
            reset_opacity(store, config.reset_opacity_value)
            self.logger.info(f"step {iteration}: opacity reset on {len(store)} Gaussians")
        return store, index

    @staticmethod
    def _check_finite(iteration: int, breakdown: LossBreakdown, grads: GaussianGradients) -> None:
        for term, value in breakdown.as_dict().items():
            if not np.isfinite(value):
                raise NonFiniteLossError(f"{term} loss is {value} at step {iteration}")
        if not grads.is_finite():
            raise NonFiniteLossError(f"gradients are non-finite at step {iteration}")

    def evaluate(
        self,
        store: GaussianStore,
        dataset: Dataset,
        split: SplitTag = SplitTag.TEST,
        background: Optional[np.ndarray] = None
    ) -> List[FrameMetrics]:
        """PSNR and SSIM of every frame of a split, measured on float renders"""
        try:
            frames = dataset.split(split)
            if not frames:
                raise EmptySourceError(f"dataset has no {split.value} frames")
            bg = np.asarray(dataset.background if background is None else background, dtype=np.float64)
            metrics = []
            for i, frame in enumerate(frames):
                if frame.image is None:
                    raise MissingFileError(f"frame {frame.image_path} has no image")
                target = frame.image[..., :3]
                view = render_view(store, dataset.camera(frame), bg, MAX_SH_DEGREE, self.num_threads)
                ssim = float("nan")
                if min(target.shape[:2]) >= SSIM_WINDOW:
                    ssim = 1.0 - ssim_loss(view.image, target)[0]
                metrics.append(FrameMetrics(frame=i, time=frame.time, psnr=psnr(view.image, target), ssim=ssim))
            self.logger.info(
                f"Evaluated {len(metrics)} {split.value} frames: mean PSNR "
                f"{np.mean([m.psnr for m in metrics]):.6g}"
            )
            return metrics

        except Exception as e:
            self.logger.error(f"Evaluation failed on split {split.value}", e)
            raise


class RenderService:
    """Rendering of trained stores for single cameras"""

    def __init__(self, logger: ILogger, num_threads: int = 1):
        self.logger = logger
        self.num_threads = num_threads

    def render(self, store: GaussianStore, camera: Camera, background, time: Optional[float] = None) -> np.ndarray:
        view = render_view(store, camera, background, MAX_SH_DEGREE, self.num_threads, time=time)
        self.logger.info(f"Rendered {len(view.splats)} splats at t={view.slices.time:.6g}")
        return view.image

    def render_flow(self, store: GaussianStore, camera: Camera, time: Optional[float] = None) -> np.ndarray:
        result = render_flow(store, camera, time, self.num_threads)
        self.logger.info(f"Rendered flow of {len(result.records.splats)} splats")
        return result.image

    def slice_debug(self, store: GaussianStore, index: int, time: float) -> SlicedGaussian3D:
        """Slice of one stored Gaussian; raises IndexError for a bad index"""
        if not 0 <= index < len(store):
            raise IndexError(f"Gaussian index {index} out of range for {len(store)} Gaussians")
        sliced = slice_at(store.gaussian(index), time)
        sliced.source_index = index
        return sliced
