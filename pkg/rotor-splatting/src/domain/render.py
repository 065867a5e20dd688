"""
Spherical-harmonic colour and perspective projection of sliced Gaussians.

Projection follows the EWA splatting approximation: the screen covariance is
J W Sigma3 W^T J^T with J the Jacobian of the pinhole projection at the
Gaussian centre, dilated by 0.3 px.
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import CulledError
from .gaussian import SliceBatch
from .models import MAX_SH_DEGREE, SH_COEFFS, Camera, SlicedGaussian3D, Splat2D

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

NEAR_PLANE = 0.2
COV2D_DILATION = 0.3
MIN_ALPHA = 1.0 / 255.0
SIGMA_EXTENT = 3.0


def _basis_values(x: np.ndarray, y: np.ndarray, z: np.ndarray, degree: int) -> np.ndarray:
    basis = np.zeros((len(x), SH_COEFFS))
    basis[:, 0] = SH_C0
    if degree >= 1:
        basis[:, 1] = -SH_C1 * y
        basis[:, 2] = SH_C1 * z
        basis[:, 3] = -SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        basis[:, 4] = SH_C2[0] * x * y
        basis[:, 5] = SH_C2[1] * y * z
        basis[:, 6] = SH_C2[2] * (2.0 * zz - xx - yy)
        basis[:, 7] = SH_C2[3] * x * z
        basis[:, 8] = SH_C2[4] * (xx - yy)
    if degree >= 3:
        basis[:, 9] = SH_C3[0] * y * (3.0 * xx - yy)
        basis[:, 10] = SH_C3[1] * x * y * z
        basis[:, 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
        basis[:, 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        basis[:, 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
        basis[:, 14] = SH_C3[5] * z * (xx - yy)
        basis[:, 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    return basis


def _basis_derivative(x: np.ndarray, y: np.ndarray, z: np.ndarray, degree: int) -> np.ndarray:
    n = len(x)
    zero = np.zeros(n)
    one = np.ones(n)
    dbasis = np.zeros((n, SH_COEFFS, 3))
    if degree >= 1:
        dbasis[:, 1] = np.stack([zero, -SH_C1 * one, zero], axis=1)
        dbasis[:, 2] = np.stack([zero, zero, SH_C1 * one], axis=1)
        dbasis[:, 3] = np.stack([-SH_C1 * one, zero, zero], axis=1)
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        dbasis[:, 4] = SH_C2[0] * np.stack([y, x, zero], axis=1)
        dbasis[:, 5] = SH_C2[1] * np.stack([zero, z, y], axis=1)
        dbasis[:, 6] = SH_C2[2] * np.stack([-2.0 * x, -2.0 * y, 4.0 * z], axis=1)
        dbasis[:, 7] = SH_C2[3] * np.stack([z, zero, x], axis=1)
        dbasis[:, 8] = SH_C2[4] * np.stack([2.0 * x, -2.0 * y, zero], axis=1)
    if degree >= 3:
        dbasis[:, 9] = SH_C3[0] * np.stack([6.0 * x * y, 3.0 * xx - 3.0 * yy, zero], axis=1)
        dbasis[:, 10] = SH_C3[1] * np.stack([y * z, x * z, x * y], axis=1)
        dbasis[:, 11] = SH_C3[2] * np.stack([-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z], axis=1)
        dbasis[:, 12] = SH_C3[3] * np.stack([-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy], axis=1)
        dbasis[:, 13] = SH_C3[4] * np.stack([4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z], axis=1)
        dbasis[:, 14] = SH_C3[5] * np.stack([2.0 * x * z, -2.0 * y * z, xx - yy], axis=1)
        dbasis[:, 15] = SH_C3[6] * np.stack([3.0 * xx - 3.0 * yy, -6.0 * x * y, zero], axis=1)
    return dbasis


def sh_basis(dirs: np.ndarray, degree: int = MAX_SH_DEGREE, derivative: bool = True) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Real SH basis up to `degree` and its derivative w.r.t. the direction.

    Bands above `degree` are zero.

    Returns:
        (basis (N, 16), dbasis (N, 16, 3) or None when derivative is False)
    """
    dirs = np.atleast_2d(dirs)
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    basis = _basis_values(x, y, z, degree)
    return basis, (_basis_derivative(x, y, z, degree) if derivative else None)


def eval_sh(sh: np.ndarray, direction: np.ndarray, degree: int = MAX_SH_DEGREE) -> np.ndarray:
    """RGB of SH coefficients (16, 3) seen along a unit direction, offset by 0.5 and clamped at 0"""
    direction = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-6:
        raise ValueError("SH direction must be a unit vector")
    basis, _ = sh_basis(direction[None], degree)
    return np.maximum(basis[0] @ np.asarray(sh, dtype=np.float64) + 0.5, 0.0)


@dataclass
class SplatBatch:
    """
    Screen-space splats of one view plus what the backward pass needs.

    Row k came from Gaussian source_index[k]; slice_rows indexes the
    SliceBatch the splats were projected from.
    """
    mean2: np.ndarray
    conic: np.ndarray
    depth: np.ndarray
    color: np.ndarray
    alpha_base: np.ndarray
    flow2: np.ndarray
    source_index: np.ndarray
    radii: np.ndarray
    cam_points: np.ndarray
    transform: np.ndarray
    cov2: np.ndarray
    cov3: np.ndarray
    speed: np.ndarray
    decay: np.ndarray
    opacity: np.ndarray
    view_vec: np.ndarray
    basis: np.ndarray
    sh: np.ndarray
    color_active: np.ndarray
    sh_degree: int = MAX_SH_DEGREE

    def __len__(self):
        return len(self.depth)

    @classmethod
    def empty(cls) -> 'SplatBatch':
        def z(*shape):
            return np.zeros((0,) + shape)
        return cls(
            mean2=z(2), conic=z(3), depth=z(), color=z(3), alpha_base=z(), flow2=z(2),
            source_index=np.zeros(0, dtype=np.int64), radii=z(2), cam_points=z(3),
            transform=z(2, 3), cov2=z(2, 2), cov3=z(3, 3), speed=z(3), decay=z(),
            opacity=z(), view_vec=z(3), basis=z(SH_COEFFS),
            sh=z(SH_COEFFS, 3), color_active=np.zeros((0, 3), dtype=bool),
        )

    def splat(self, k: int) -> Splat2D:
        return Splat2D(
            mean2=self.mean2[k].copy(),
            conic=self.conic[k].copy(),
            depth=float(self.depth[k]),
            color=self.color[k].copy(),
            alpha_base=float(self.alpha_base[k]),
            flow2=self.flow2[k].copy(),
            source_index=int(self.source_index[k]),
        )


@dataclass
class SplatGradients:
    """Per-splat gradients produced by the rasterizer backward pass"""
    mean2: np.ndarray
    conic: np.ndarray
    color: np.ndarray
    alpha_base: np.ndarray
    flow2: np.ndarray

    @classmethod
    def zeros(cls, m: int) -> 'SplatGradients':
        return cls(
            mean2=np.zeros((m, 2)),
            conic=np.zeros((m, 3)),
            color=np.zeros((m, 3)),
            alpha_base=np.zeros(m),
            flow2=np.zeros((m, 2)),
        )


def _projection_jacobian(points: np.ndarray, cam: Camera) -> np.ndarray:
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    jac = np.zeros((len(points), 2, 3))
    jac[:, 0, 0] = cam.fx / z
    jac[:, 0, 2] = -cam.fx * x / (z * z)
    jac[:, 1, 1] = cam.fy / z
    jac[:, 1, 2] = -cam.fy * y / (z * z)
    return jac


def project_batch(
    batch: SliceBatch,
    sh: np.ndarray,
    opacity_logits: np.ndarray,
    cam: Camera,
    sh_degree: int = MAX_SH_DEGREE
) -> SplatBatch:
    """
    Project every valid sliced Gaussian into the camera and cull.

    A splat survives when its depth exceeds the near plane, its 3-sigma box
    overlaps the image and alpha_base >= 1/255.
    """
    candidates = np.flatnonzero(batch.valid)
    if len(candidates) == 0:
        return SplatBatch.empty()
    rot = cam.rotation
    points = batch.mean3[candidates] @ rot.T + cam.translation
    keep = points[:, 2] > NEAR_PLANE
    opacity = 1.0 / (1.0 + np.exp(-opacity_logits[candidates]))
    alpha_base = opacity * batch.decay[candidates]
    keep &= alpha_base >= MIN_ALPHA
    idx = candidates[keep]
    points = points[keep]
    opacity = opacity[keep]
    alpha_base = alpha_base[keep]
    if len(idx) == 0:
        return SplatBatch.empty()

    jac = _projection_jacobian(points, cam)
    transform = jac @ rot
    cov3 = batch.cov3[idx]
    cov2 = transform @ cov3 @ np.swapaxes(transform, -1, -2) + COV2D_DILATION * np.eye(2)
    a, b, c = cov2[:, 0, 0], cov2[:, 0, 1], cov2[:, 1, 1]
    det = a * c - b * b
    mean2 = np.stack(
        [cam.fx * points[:, 0] / points[:, 2] + cam.cx, cam.fy * points[:, 1] / points[:, 2] + cam.cy],
        axis=1,
    )
    radii = SIGMA_EXTENT * np.sqrt(np.stack([a, c], axis=1))
    on_screen = (
        (det > 0.0)
        & (mean2[:, 0] + radii[:, 0] >= 0.0)
        & (mean2[:, 0] - radii[:, 0] <= cam.width - 1)
        & (mean2[:, 1] + radii[:, 1] >= 0.0)
        & (mean2[:, 1] - radii[:, 1] <= cam.height - 1)
    )
    sel = np.flatnonzero(on_screen)
    idx = idx[sel]
    points, transform, cov2, cov3 = points[sel], transform[sel], cov2[sel], cov3[sel]
    mean2, radii, opacity, alpha_base = mean2[sel], radii[sel], opacity[sel], alpha_base[sel]
    a, b, c, det = a[sel], b[sel], c[sel], det[sel]
    conic = np.stack([c / det, -b / det, a / det], axis=1)

    view_vec = batch.mean3[idx] - cam.center
    dirs = view_vec / np.linalg.norm(view_vec, axis=1, keepdims=True)
    basis, _ = sh_basis(dirs, sh_degree, derivative=False)
    raw = np.einsum("nk,nkc->nc", basis, sh[idx]) + 0.5
    speed = batch.speed[idx]

    return SplatBatch(
        mean2=mean2,
        conic=conic,
        depth=points[:, 2],
        color=np.maximum(raw, 0.0),
        alpha_base=alpha_base,
        flow2=np.einsum("nij,nj->ni", transform, speed),
        source_index=idx.astype(np.int64),
        radii=radii,
        cam_points=points,
        transform=transform,
        cov2=cov2,
        cov3=cov3,
        speed=speed,
        decay=batch.decay[idx],
        opacity=opacity,
        view_vec=view_vec,
        basis=basis,
        sh_degree=sh_degree,
        sh=sh[idx],
        color_active=raw > 0.0,
    )


def project(
    s: SlicedGaussian3D,
    cam: Camera,
    sh: np.ndarray,
    opacity_logit: float,
    sh_degree: int = MAX_SH_DEGREE
) -> Splat2D:
    """
    Project one sliced Gaussian.

    Raises:
        CulledError: behind the near plane, off screen or too transparent
    """
    batch = SliceBatch(
        time=cam.time,
        mean3=s.mean3[None],
        cov3=s.cov3[None],
        decay=np.array([s.decay]),
        speed=s.speed[None],
        lam=np.array([s.lam]),
        valid=np.array([True]),
        cache=None,
        delta=np.zeros(1),
    )
    splats = project_batch(batch, np.asarray(sh, dtype=np.float64)[None], np.array([opacity_logit]), cam, sh_degree)
    if len(splats) == 0:
        raise CulledError(f"Gaussian {s.source_index} is culled for this camera")
    splat = splats.splat(0)
    splat.source_index = s.source_index
    return splat


@dataclass
class ProjectionGradients:
    """Gradients of the projection inputs, one row per splat"""
    mean3: np.ndarray
    cov3: np.ndarray
    decay: np.ndarray
    speed: np.ndarray
    opacity_logit: np.ndarray
    sh: np.ndarray


def project_backward(splats: SplatBatch, grads: SplatGradients, cam: Camera) -> ProjectionGradients:
    """Chain per-splat gradients through colour, opacity, conic, mean and flow"""
    m = len(splats)
    rot = cam.rotation
    x, y, z = splats.cam_points[:, 0], splats.cam_points[:, 1], splats.cam_points[:, 2]
    fx, fy = cam.fx, cam.fy

    grad_decay = grads.alpha_base * splats.opacity
    grad_logit = grads.alpha_base * splats.decay * splats.opacity * (1.0 - splats.opacity)

    grad_raw = grads.color * splats.color_active
    grad_sh = splats.basis[:, :, None] * grad_raw[:, None, :]
    norm = np.linalg.norm(splats.view_vec, axis=1, keepdims=True)
    dirs = splats.view_vec / norm
    _, dbasis = sh_basis(dirs, splats.sh_degree)
    grad_dir = np.einsum("nk,nkd->nd", np.einsum("nkc,nc->nk", splats.sh, grad_raw), dbasis)

    conic = splats.conic
    conic_mat = np.stack(
        [np.stack([conic[:, 0], conic[:, 1]], axis=1), np.stack([conic[:, 1], conic[:, 2]], axis=1)],
        axis=1,
    )
    g_conic = np.stack(
        [
            np.stack([grads.conic[:, 0], 0.5 * grads.conic[:, 1]], axis=1),
            np.stack([0.5 * grads.conic[:, 1], grads.conic[:, 2]], axis=1),
        ],
        axis=1,
    )
    grad_cov2 = -conic_mat @ g_conic @ conic_mat
    transform = splats.transform
    grad_cov3 = np.swapaxes(transform, -1, -2) @ grad_cov2 @ transform
    grad_transform = 2.0 * grad_cov2 @ transform @ splats.cov3
    grad_transform += grads.flow2[:, :, None] * splats.speed[:, None, :]
    grad_speed = np.einsum("nij,ni->nj", transform, grads.flow2)
    grad_jac = grad_transform @ rot.T

    grad_point = np.zeros((m, 3))
    grad_point[:, 0] = grads.mean2[:, 0] * fx / z - grad_jac[:, 0, 2] * fx / (z * z)
    grad_point[:, 1] = grads.mean2[:, 1] * fy / z - grad_jac[:, 1, 2] * fy / (z * z)
    grad_point[:, 2] = (
        -grads.mean2[:, 0] * fx * x / (z * z)
        - grads.mean2[:, 1] * fy * y / (z * z)
        - grad_jac[:, 0, 0] * fx / (z * z)
        + grad_jac[:, 0, 2] * 2.0 * fx * x / (z * z * z)
        - grad_jac[:, 1, 1] * fy / (z * z)
        + grad_jac[:, 1, 2] * 2.0 * fy * y / (z * z * z)
    )
    grad_mean3 = grad_point @ rot

    grad_mean3 += (grad_dir - np.sum(grad_dir * dirs, axis=1, keepdims=True) * dirs) / norm

    return ProjectionGradients(
        mean3=grad_mean3,
        cov3=grad_cov3,
        decay=grad_decay,
        speed=grad_speed,
        opacity_logit=grad_logit,
        sh=grad_sh,
    )
