"""
Tile-based differentiable rasterizer.

The screen is cut into 16x16 tiles. Every splat is binned into the tiles its
3-sigma box touches, each tile blends its splats front to back by
(depth, source index) and the backward pass replays the same per-tile lists.
Tiles are independent, so both passes hand contiguous chunks of tiles to the
compiled kernels on a thread pool.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .blend_kernels import ALPHA_CLAMP, MAHALANOBIS_MAX, TILE_SIZE, TRANSMITTANCE_MIN, backward_tiles, forward_tiles
from .errors import MissingRecordsError, ShapeMismatchError
from .gaussian import GaussianGradients, GaussianStore, SliceBatch, slice_backward, slice_store
from .models import MAX_SH_DEGREE, Camera
from .render import MIN_ALPHA, SplatBatch, SplatGradients, project_backward, project_batch

logger = logging.getLogger(__name__)

CHUNKS_PER_THREAD = 4


@dataclass
class TileBins:
    """Splat ids of every tile, concatenated, with tile i owning ids[offsets[i]:offsets[i + 1]]"""
    tiles_x: int
    tiles_y: int
    offsets: np.ndarray
    ids: np.ndarray

    @property
    def num_tiles(self) -> int:
        return self.tiles_x * self.tiles_y

    def tile(self, index: int) -> np.ndarray:
        return self.ids[self.offsets[index]:self.offsets[index + 1]]


@dataclass
class BlendRecords:
    """Everything the backward pass needs to replay a forward blend"""
    splats: SplatBatch
    bins: TileBins
    width: int
    height: int
    features: np.ndarray
    background: np.ndarray
    final_transmittance: np.ndarray
    feature_kind: str = "color"


@dataclass
class RenderResult:
    """Blended feature image (H, W, F) with the final per-pixel transmittance"""
    image: np.ndarray
    transmittance: np.ndarray
    records: Optional[BlendRecords] = None

    @property
    def accumulated_alpha(self) -> np.ndarray:
        return 1.0 - self.transmittance


def bin_splats(splats: SplatBatch, width: int, height: int) -> TileBins:
    """Assign splats to tiles and sort every tile by (depth, source index)"""
    tiles_x = (width + TILE_SIZE - 1) // TILE_SIZE
    tiles_y = (height + TILE_SIZE - 1) // TILE_SIZE
    num_tiles = tiles_x * tiles_y
    m = len(splats)
    if m == 0:
        return TileBins(tiles_x, tiles_y, np.zeros(num_tiles + 1, dtype=np.int64), np.zeros(0, dtype=np.int64))

    # padded so that rounding never drops a pixel inside the 3-sigma ellipse
    pad = splats.radii * (1.0 + 1e-9) + 1e-6
    lo = np.floor((splats.mean2 - pad) / TILE_SIZE).astype(np.int64)
    hi = np.floor((splats.mean2 + pad) / TILE_SIZE).astype(np.int64)
    lo[:, 0] = np.clip(lo[:, 0], 0, tiles_x - 1)
    hi[:, 0] = np.clip(hi[:, 0], 0, tiles_x - 1)
    lo[:, 1] = np.clip(lo[:, 1], 0, tiles_y - 1)
    hi[:, 1] = np.clip(hi[:, 1], 0, tiles_y - 1)
    span = hi - lo + 1
    counts = span[:, 0] * span[:, 1]

    owner = np.repeat(np.arange(m, dtype=np.int64), counts)
    local = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    tx = lo[owner, 0] + local % span[owner, 0]
    ty = lo[owner, 1] + local // span[owner, 0]
    tile_id = ty * tiles_x + tx

    rank = np.empty(m, dtype=np.int64)
    rank[np.lexsort((splats.source_index, splats.depth))] = np.arange(m)
    order = np.argsort(tile_id * m + rank[owner])
    ids = owner[order]
    offsets = np.searchsorted(tile_id[order], np.arange(num_tiles + 1), side="left").astype(np.int64)
    logger.debug(f"Binned {m} splats into {len(ids)} tile pairs")
    return TileBins(tiles_x, tiles_y, offsets, ids)


def _blend(px: np.ndarray, py: np.ndarray, mean2: np.ndarray, conic: np.ndarray, alpha_base: np.ndarray):
    """Dense per-pixel alphas and transmittances for depth-sorted splats, shapes (P, K)"""
    dx = px[:, None] - mean2[None, :, 0]
    dy = py[:, None] - mean2[None, :, 1]
    q = conic[None, :, 0] * dx * dx + 2.0 * conic[None, :, 1] * dx * dy + conic[None, :, 2] * dy * dy
    alpha = np.minimum(alpha_base[None, :] * np.exp(-0.5 * q), ALPHA_CLAMP)
    alpha = np.where((q <= MAHALANOBIS_MAX) & (alpha >= MIN_ALPHA), alpha, 0.0)

    survived = np.cumprod(1.0 - alpha, axis=1)
    alpha = np.where(survived >= TRANSMITTANCE_MIN, alpha, 0.0)
    kept = np.cumprod(1.0 - alpha, axis=1)
    before = np.concatenate([np.ones((len(px), 1)), kept[:, :-1]], axis=1)
    final = kept[:, -1] if kept.shape[1] else np.ones(len(px))
    return alpha, before, final


def _run_chunks(kernel, num_tiles: int, num_threads: int, *args) -> None:
    if num_threads <= 1 or num_tiles < 2:
        kernel(0, num_tiles, *args)
        return
    bounds = np.linspace(0, num_tiles, min(num_tiles, num_threads * CHUNKS_PER_THREAD) + 1).astype(np.int64)
    with ThreadPoolExecutor(max_workers=num_threads) as executor:
        futures = [executor.submit(kernel, int(lo), int(hi), *args) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
        for future in futures:
            future.result()


def _contiguous(values: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(values, dtype=np.float64)


def rasterize_forward(
    splats: SplatBatch,
    cam: Camera,
    background,
    features: Optional[np.ndarray] = None,
    num_threads: int = 1,
    feature_kind: str = "color"
) -> RenderResult:
    """
    Front-to-back alpha blending of splats over a background.

    features defaults to the splat colours; pass flow vectors to render flow.
    """
    width, height = cam.width, cam.height
    features = _contiguous(splats.color if features is None else features)
    background = _contiguous(background)
    if features.shape != (len(splats), background.shape[0]):
        raise ShapeMismatchError(
            f"features {features.shape} do not match {len(splats)} splats and background {background.shape}"
        )
    bins = bin_splats(splats, width, height)
    image = np.empty((height, width, background.shape[0]))
    transmittance = np.empty((height, width))
    _run_chunks(
        forward_tiles, bins.num_tiles, num_threads,
        bins.tiles_x, width, height, bins.offsets, bins.ids,
        _contiguous(splats.mean2), _contiguous(splats.conic), _contiguous(splats.alpha_base),
        features, background, image, transmittance,
    )

    records = BlendRecords(
        splats=splats,
        bins=bins,
        width=width,
        height=height,
        features=features,
        background=background,
        final_transmittance=transmittance,
        feature_kind=feature_kind,
    )
    return RenderResult(image=image, transmittance=transmittance, records=records)


def rasterize_backward(
    records: Optional[BlendRecords],
    grad_image: np.ndarray,
    num_threads: int = 1
) -> SplatGradients:
    """
    Gradients of a scalar loss w.r.t. every splat, given dL/dimage.

    Per-pair gradients are summed into splats with bincount, in pair order.

    Raises:
        MissingRecordsError: if the forward pass kept no records
    """
    if records is None:
        raise MissingRecordsError("rasterize_backward needs the records of a forward pass")
    splats = records.splats
    width, height = records.width, records.height
    features = records.features
    grad_image = _contiguous(grad_image)
    if grad_image.shape != (height, width, features.shape[1]):
        raise ShapeMismatchError(f"grad_image has shape {grad_image.shape}, expected {(height, width, features.shape[1])}")
    bins = records.bins
    pairs = len(bins.ids)

    pair_features = np.zeros((pairs, features.shape[1]))
    pair_alpha_base = np.zeros(pairs)
    pair_conic = np.zeros((pairs, 3))
    pair_mean2 = np.zeros((pairs, 2))
    _run_chunks(
        backward_tiles, bins.num_tiles, num_threads,
        bins.tiles_x, width, height, bins.offsets, bins.ids,
        _contiguous(splats.mean2), _contiguous(splats.conic), _contiguous(splats.alpha_base),
        features, records.background, grad_image,
        pair_features, pair_alpha_base, pair_conic, pair_mean2,
    )

    m = len(splats)

    def reduce(values: np.ndarray) -> np.ndarray:
        columns = values.reshape(pairs, -1)
        out = np.stack([np.bincount(bins.ids, weights=columns[:, c], minlength=m) for c in range(columns.shape[1])], axis=1)
        return out.reshape((m,) + values.shape[1:])

    out = SplatGradients.zeros(m)
    if pairs:
        out.alpha_base = reduce(pair_alpha_base)
        out.conic = reduce(pair_conic)
        out.mean2 = reduce(pair_mean2)
        grad_features = reduce(pair_features)
    else:
        grad_features = np.zeros_like(features)
    if records.feature_kind == "flow":
        out.flow2 = grad_features
    else:
        out.color = grad_features
    return out


def render_reference(
    splats: SplatBatch,
    cam: Camera,
    background,
    features: Optional[np.ndarray] = None
) -> RenderResult:
    """Untiled numpy renderer: every pixel blends every splat in global (depth, source index) order"""
    features = splats.color if features is None else np.asarray(features, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64)
    order = np.lexsort((splats.source_index, splats.depth))
    py, px = np.mgrid[0:cam.height, 0:cam.width]
    alpha, before, final = _blend(
        px.ravel().astype(np.float64), py.ravel().astype(np.float64),
        splats.mean2[order], splats.conic[order], splats.alpha_base[order],
    )
    image = (alpha * before) @ features[order] + final[:, None] * background
    return RenderResult(
        image=image.reshape(cam.height, cam.width, -1),
        transmittance=final.reshape(cam.height, cam.width),
    )


@dataclass
class ViewRender:
    """Forward state of one rendered view"""
    camera: Camera
    image: np.ndarray
    transmittance: np.ndarray
    slices: SliceBatch
    splats: SplatBatch
    records: BlendRecords

    @property
    def accumulated_alpha(self) -> np.ndarray:
        return 1.0 - self.transmittance


def render_view(
    store: GaussianStore,
    cam: Camera,
    background,
    sh_degree: int = MAX_SH_DEGREE,
    num_threads: int = 1,
    time: Optional[float] = None
) -> ViewRender:
    """Slice the store at the camera time, project and rasterize"""
    t = cam.time if time is None else time
    slices = slice_store(store, t)
    degenerate = int(np.count_nonzero(~slices.valid))
    if degenerate:
        logger.warning(f"Skipping {degenerate} Gaussians with collapsed temporal variance at t={t:.6g}")
    splats = project_batch(slices, store.sh, store.opacity_logits, cam, sh_degree)
    result = rasterize_forward(splats, cam, background, num_threads=num_threads)
    return ViewRender(
        camera=cam,
        image=result.image,
        transmittance=result.transmittance,
        slices=slices,
        splats=splats,
        records=result.records,
    )


def render_view_backward(
    view: ViewRender,
    grad_image: np.ndarray,
    num_threads: int = 1
) -> Tuple[GaussianGradients, np.ndarray, np.ndarray]:
    """
    Chain dL/dimage to every stored parameter.

    Returns:
        (gradients, view-space positional gradient norm in NDC units per
        Gaussian, mask of Gaussians that were rendered)
    """
    n = len(view.slices)
    splat_grads = rasterize_backward(view.records, grad_image, num_threads)
    proj = project_backward(view.splats, splat_grads, view.camera)
    idx = view.splats.source_index

    grad_mean3 = np.zeros((n, 3))
    grad_cov3 = np.zeros((n, 3, 3))
    grad_decay = np.zeros(n)
    grad_speed = np.zeros((n, 3))
    grad_mean3[idx] = proj.mean3
    grad_cov3[idx] = proj.cov3
    grad_decay[idx] = proj.decay
    grad_speed[idx] = proj.speed

    grads = GaussianGradients.zeros(n)
    grads.means, grads.log_scales, grads.rotors = slice_backward(
        view.slices, grad_mean3, grad_cov3, grad_decay, grad_speed
    )
    grads.opacity_logits[idx] = proj.opacity_logit
    grads.sh[idx] = proj.sh

    ndc_scale = np.array([0.5 * view.camera.width, 0.5 * view.camera.height])
    view_norm = np.zeros(n)
    view_norm[idx] = np.linalg.norm(splat_grads.mean2 * ndc_scale, axis=1)
    visible = np.zeros(n, dtype=bool)
    visible[idx] = True
    return grads, view_norm, visible


def render_flow(
    store: GaussianStore,
    cam: Camera,
    time: Optional[float] = None,
    num_threads: int = 1
) -> RenderResult:
    """Blend each splat's screen-space velocity instead of its colour, over a zero background"""
    t = cam.time if time is None else time
    slices = slice_store(store, t)
    splats = project_batch(slices, store.sh, store.opacity_logits, cam, 0)
    return rasterize_forward(
        splats, cam, np.zeros(2), features=splats.flow2, num_threads=num_threads, feature_kind="flow"
    )
