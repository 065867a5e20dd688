"""
Training objective: L1, SSIM, opacity entropy and 4D speed consistency.

Every loss returns its value together with the gradient w.r.t. its input so
the training loop can superpose them without an autodiff framework.
"""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.signal import convolve2d

from .errors import ShapeMismatchError, StaleIndexError, TooFewPointsError
from .models import LossWeights
from .ports import INeighborSearch

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
OPACITY_CLAMP = 1e-6
PSNR_CAP = 100.0


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"image shapes differ: {a.shape} vs {b.shape}")


def l1_loss(rendered: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean absolute difference and its gradient sign(diff) / N"""
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_same_shape(rendered, target)
    diff = rendered - target
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim_loss(rendered: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    1 - mean SSIM over all valid 11x11 windows and channels.

    Windows never extend past the border, so an (H, W) image yields
    (H - 10) x (W - 10) SSIM positions per channel.

    Returns:
        (loss, dloss/drendered)
    """
    x = np.asarray(rendered, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    _check_same_shape(x, y)
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    h, w = x.shape[:2]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ShapeMismatchError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")
    window = gaussian_window()
    count = (h - SSIM_WINDOW + 1) * (w - SSIM_WINDOW + 1) * x.shape[2]

    total = 0.0
    grad = np.zeros_like(x)
    for ch in range(x.shape[2]):
        xc, yc = x[..., ch], y[..., ch]
        mu_x = convolve2d(xc, window, mode="valid")
        mu_y = convolve2d(yc, window, mode="valid")
        e_xx = convolve2d(xc * xc, window, mode="valid")
        e_yy = convolve2d(yc * yc, window, mode="valid")
        e_xy = convolve2d(xc * yc, window, mode="valid")

        a1 = 2.0 * mu_x * mu_y + SSIM_C1
        a2 = 2.0 * (e_xy - mu_x * mu_y) + SSIM_C2
        b1 = mu_x ** 2 + mu_y ** 2 + SSIM_C1
        b2 = (e_xx - mu_x ** 2) + (e_yy - mu_y ** 2) + SSIM_C2
        denom = b1 * b2
        ssim_map = a1 * a2 / denom
        total += float(ssim_map.sum())

        # d mean(ssim) w.r.t. each windowed statistic, then back through the window
        d_mu_x = (2.0 * mu_y * (a2 - a1) - ssim_map * 2.0 * mu_x * (b2 - b1)) / denom
        d_e_xx = -ssim_map * b1 / denom
        d_e_xy = 2.0 * a1 / denom
        flipped = window[::-1, ::-1]
        grad[..., ch] = (
            convolve2d(d_mu_x, flipped, mode="full")
            + 2.0 * xc * convolve2d(d_e_xx, flipped, mode="full")
            + yc * convolve2d(d_e_xy, flipped, mode="full")
        )

    loss = 1.0 - total / count
    grad = -grad / count
    return loss, grad.reshape(np.shape(rendered))


def entropy_loss(opacities: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Mean of -o log o over opacities clamped to [1e-6, 1 - 1e-6].

    The gradient w.r.t. o is -(log o + 1) / N inside the clamp and 0 outside.
    """
    o = np.asarray(opacities, dtype=np.float64)
    n = max(o.size, 1)
    clamped = np.clip(o, OPACITY_CLAMP, 1.0 - OPACITY_CLAMP)
    value = float(np.sum(-clamped * np.log(clamped)) / n)
    inside = (o >= OPACITY_CLAMP) & (o <= 1.0 - OPACITY_CLAMP)
    grad = np.where(inside, -(np.log(clamped) + 1.0) / n, 0.0)
    return value, grad


@dataclass
class Knn4DIndex:
    """K nearest neighbours of every Gaussian in scale-normalized 4D space"""
    neighbors: np.ndarray
    distances: np.ndarray
    scene_scales: np.ndarray
    size: int

    @property
    def k(self) -> int:
        return self.neighbors.shape[1]


def default_scene_scales(means: np.ndarray) -> np.ndarray:
    """Per-axis spatial extent of the means (floored at 1e-6) and the unit time range"""
    extent = np.ptp(means[:, :3], axis=0) if len(means) else np.ones(3)
    return np.concatenate([np.maximum(extent, 1e-6), [1.0]])


def build_knn4d(
    means: np.ndarray,
    k: int,
    searcher: INeighborSearch,
    scene_scales: Optional[Sequence[float]] = None
) -> Knn4DIndex:
    """
    Exact K nearest neighbours on (x/Sx, y/Sy, z/Sz, t/St).

    Raises:
        TooFewPointsError: unless there are more points than k
    """
    means = np.asarray(means, dtype=np.float64)
    n = len(means)
    if n <= k:
        raise TooFewPointsError(f"need more than {k} points for {k} neighbours, got {n}")
    scales = default_scene_scales(means) if scene_scales is None else np.asarray(scene_scales, dtype=np.float64)
    points = means / scales
    distances, indices = searcher.kneighbors(points, k + 1)

    # drop the query itself; rows where a duplicate point displaced it lose their last entry
    is_self = indices == np.arange(n)[:, None]
    order = np.argsort(is_self, axis=1, kind="stable")[:, :k]
    neighbors = np.take_along_axis(indices, order, axis=1)
    dists = np.take_along_axis(distances, order, axis=1)
    return Knn4DIndex(neighbors=neighbors, distances=dists, scene_scales=scales, size=n)


def consistency_loss(
    speeds: np.ndarray,
    index: Knn4DIndex
) -> Tuple[float, np.ndarray]:
    """
    Mean over Gaussians of || s_i - mean of neighbour speeds ||_1.

    Neighbour lists are constants; the gradient reaches s_i directly and every
    neighbour with weight -1/K.

    Raises:
        StaleIndexError: if the index was built for another store size
    """
    speeds = np.asarray(speeds, dtype=np.float64)
    n = len(speeds)
    if n != index.size:
        raise StaleIndexError(f"index built for {index.size} Gaussians, store has {n}")
    diff = speeds - speeds[index.neighbors].mean(axis=1)
    value = float(np.abs(diff).sum(axis=1).mean())
    g = np.sign(diff) / n
    grad = g.copy()
    np.add.at(grad, index.neighbors, -g[:, None, :] / index.k)
    return value, grad


@dataclass
class LossBreakdown:
    """Component values of the weighted objective"""
    l1: float = 0.0
    ssim: float = 0.0
    entropy: float = 0.0
    consistency: float = 0.0

    def total(self, weights: LossWeights) -> float:
        return (
            (1.0 - weights.lambda_ssim) * self.l1
            + weights.lambda_ssim * self.ssim
            + weights.lambda_entropy * self.entropy
            + weights.lambda_consistency * self.consistency
        )

    def as_dict(self) -> dict:
        return {"l1": self.l1, "ssim": self.ssim, "entropy": self.entropy, "consistency": self.consistency}


def image_loss(
    rendered: np.ndarray,
    target: np.ndarray,
    weights: LossWeights
) -> Tuple[float, float, np.ndarray]:
    """
    Photometric part of the objective.

    Returns:
        (l1 value, ssim loss value, gradient of the weighted sum w.r.t. rendered)
    """
    l1, g_l1 = l1_loss(rendered, target)
    grad = (1.0 - weights.lambda_ssim) * g_l1
    ssim = 0.0
    if weights.lambda_ssim > 0.0:
        ssim, g_ssim = ssim_loss(rendered, target)
        grad = grad + weights.lambda_ssim * g_ssim
    return l1, ssim, grad


@dataclass
class TotalLoss:
    """
    Weighted objective with gradients w.r.t. image, opacities and speeds.

    For a batch, grad_image stacks the gradient of each view's image terms;
    the batch objective weights each of them by 1 / number of views.
    """
    value: float
    breakdown: LossBreakdown
    grad_image: np.ndarray
    grad_opacity: np.ndarray
    grad_speed: np.ndarray


def batch_loss(
    rendered: Sequence[np.ndarray],
    targets: Sequence[np.ndarray],
    opacities: np.ndarray,
    speeds: Optional[np.ndarray],
    weights: LossWeights,
    index: Optional[Knn4DIndex] = None
) -> TotalLoss:
    """
    Objective of one optimization step.

    Image terms are averaged over the views; entropy and consistency enter
    once. Consistency is skipped without an index or speeds.
    """
    if len(rendered) != len(targets) or len(rendered) == 0:
        raise ShapeMismatchError(f"need matching non-empty batches, got {len(rendered)} and {len(targets)} images")
    share = 1.0 / len(rendered)
    breakdown = LossBreakdown()
    grad_images = []
    for image, target in zip(rendered, targets):
        l1, ssim, grad = image_loss(image, target, weights)
        breakdown.l1 += share * l1
        breakdown.ssim += share * ssim
        grad_images.append(grad)

    opacities = np.asarray(opacities, dtype=np.float64)
    grad_opacity = np.zeros(opacities.shape)
    grad_speed = np.zeros((len(opacities), 3)) if speeds is None else np.zeros(np.shape(speeds))
    if weights.lambda_entropy > 0.0:
        breakdown.entropy, g = entropy_loss(opacities)
        grad_opacity = weights.lambda_entropy * g
    if weights.lambda_consistency > 0.0 and index is not None and speeds is not None:
        breakdown.consistency, g = consistency_loss(speeds, index)
        grad_speed = weights.lambda_consistency * g
    return TotalLoss(
        value=breakdown.total(weights),
        breakdown=breakdown,
        grad_image=np.stack(grad_images),
        grad_opacity=grad_opacity,
        grad_speed=grad_speed,
    )


def total_loss(
    rendered: np.ndarray,
    target: np.ndarray,
    opacities: np.ndarray,
    speeds: np.ndarray,
    weights: LossWeights,
    index: Optional[Knn4DIndex] = None
) -> TotalLoss:
    """(1 - l1) L1 + l1 SSIM + l2 entropy + l3 consistency for a single view"""
    result = batch_loss([rendered], [target], opacities, speeds, weights, index)
    result.grad_image = result.grad_image[0]
    return result


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) in dB, capped at 100 for identical images"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP))
