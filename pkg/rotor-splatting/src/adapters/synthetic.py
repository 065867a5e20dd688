"""
Synthetic dynamic scenes: analytic blobs seen by a ring of cameras.

Every blob is expressed exactly as one or more 4D Gaussians, so the generated
ground-truth store reproduces the rendered frames bit for bit.
"""
import logging
from typing import List, Tuple

import numpy as np

from src.domain.errors import InvalidSpecError
from src.domain.gaussian import GaussianStore, speeds
from src.domain.models import (
    MAX_SH_DEGREE,
    SH_COEFFS,
    BivectorPlane,
    BlobSpec,
    Camera,
    Dataset,
    Frame,
    MotionKind,
    SplitTag,
    SyntheticSceneSpec,
)
from src.domain.optim import STATIC_LOG_TEMPORAL_SCALE
from src.domain.rasterizer import render_view
from src.domain.render import SH_C0
from src.domain.rotor import compose, from_quaternion, identity_rotor, rotor_from_plane_angle

logger = logging.getLogger(__name__)

LINEAR_TEMPORAL_SCALE = 5.0
MIN_SPEED = 1e-12
SPEED_TOL = 1e-9


def _look_at_origin(position: np.ndarray) -> np.ndarray:
    """OpenGL camera-to-world pose at position looking at the origin with +z up"""
    forward = -position / np.linalg.norm(position)
    right = np.cross(forward, np.array([0.0, 0.0, 1.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    c2w = np.eye(4)
    c2w[:3, 0] = right
    c2w[:3, 1] = -down
    c2w[:3, 2] = -forward
    c2w[:3, 3] = position
    return c2w


def camera_ring(spec: SyntheticSceneSpec) -> List[np.ndarray]:
    ring = spec.cameras
    poses = []
    for k in range(ring.count):
        phi = 2.0 * np.pi * k / ring.count
        position = np.array([ring.radius * np.cos(phi), ring.radius * np.sin(phi), ring.elevation])
        poses.append(_look_at_origin(position))
    return poses


def _align_x_to(direction: np.ndarray) -> np.ndarray:
    """Spatial rotor turning the x axis onto a unit direction"""
    x = np.array([1.0, 0.0, 0.0])
    axis = np.cross(x, direction)
    sin_angle = np.linalg.norm(axis)
    cos_angle = float(np.clip(direction @ x, -1.0, 1.0))
    if sin_angle < 1e-12:
        if cos_angle > 0:
            return identity_rotor()
        axis, sin_angle = np.array([0.0, 0.0, 1.0]), 1.0
    half = 0.5 * np.arctan2(sin_angle, cos_angle)
    q = np.concatenate([[np.cos(half)], np.sin(half) * axis / np.linalg.norm(axis)])
    return from_quaternion(q / np.linalg.norm(q))


def moving_gaussian(
    center: np.ndarray,
    radius: float,
    velocity: np.ndarray,
    time: float,
    temporal_scale: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    4D Gaussian whose slices are spheres of the given radius moving at velocity.

    Its covariance is [[r^2 I + tau^2 v v^T, tau^2 v], [tau^2 v^T, tau^2]]. The
    x-t block is diagonalized in a frame whose x axis is the motion direction.

    Returns:
        (mean4, log_scales4, rotor)
    """
    mean4 = np.append(np.asarray(center, dtype=np.float64), time)
    velocity = np.asarray(velocity, dtype=np.float64)
    speed = float(np.linalg.norm(velocity))
    if speed < MIN_SPEED:
        log_scales = np.log([radius, radius, radius, temporal_scale])
        return mean4, log_scales, identity_rotor()

    tau2 = temporal_scale * temporal_scale
    block = np.array([[radius * radius + tau2 * speed * speed, tau2 * speed], [tau2 * speed, tau2]])
    eigvals, eigvecs = np.linalg.eigh(block)
    # column 1 holds the larger eigenvalue, the one along the motion
    u = eigvecs[:, 1]
    log_scales = 0.5 * np.log([eigvals[1], radius * radius, radius * radius, eigvals[0]])
    spatial = _align_x_to(velocity / speed)

    best, best_error = None, np.inf
    for theta in (np.arctan2(-u[1], u[0]), np.arctan2(u[1], u[0])):
        rotor = compose(spatial, rotor_from_plane_angle(BivectorPlane.XT, theta))
        probe = GaussianStore(
            means=mean4[None],
            log_scales=log_scales[None],
            rotors=rotor[None],
            opacity_logits=np.zeros(1),
            sh=np.zeros((1, SH_COEFFS, 3)),
        )
        error = float(np.max(np.abs(speeds(probe)[0][0] - velocity)))
        if error < best_error:
            best, best_error = rotor, error
    if best_error > SPEED_TOL * max(1.0, speed):
        raise InvalidSpecError(f"could not realize blob velocity {velocity.tolist()} (error {best_error:.3g})")
    return mean4, log_scales, best


def _velocity(blob: BlobSpec, t: float) -> np.ndarray:
    if blob.motion == MotionKind.LINEAR:
        return np.asarray(blob.velocity, dtype=np.float64)
    if blob.motion == MotionKind.OSCILLATING:
        omega = 2.0 * np.pi * blob.frequency
        return np.asarray(blob.amplitude, dtype=np.float64) * omega * np.cos(omega * t + blob.phase)
    return np.zeros(3)


def _segment_count(blob: BlobSpec, t0: float, t1: float) -> int:
    if blob.segments is not None:
        return blob.segments
    if blob.motion == MotionKind.OSCILLATING:
        return max(4, int(np.ceil(8.0 * blob.frequency * (t1 - t0))))
    return 1


def blob_gaussians(blob: BlobSpec) -> List[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """
    Gaussians representing one blob.

    A static or linear blob without window is a single long-lived Gaussian.
    Oscillating and windowed blobs become short segments staggered in time,
    each moving with the path's tangent at its centre time.
    """
    if blob.window is None and blob.motion != MotionKind.OSCILLATING:
        temporal = np.exp(STATIC_LOG_TEMPORAL_SCALE) if blob.motion == MotionKind.STATIC else LINEAR_TEMPORAL_SCALE
        return [moving_gaussian(blob.position(0.5), blob.radius, _velocity(blob, 0.5), 0.5, temporal)]

    t0, t1 = blob.window if blob.window is not None else (0.0, 1.0)
    count = _segment_count(blob, t0, t1)
    half = 0.5 * (t1 - t0) / count
    result = []
    for k in range(count):
        tk = t0 + (2 * k + 1) * half
        result.append(moving_gaussian(blob.position(tk), blob.radius, _velocity(blob, tk), tk, half))
    return result


def scene_store(spec: SyntheticSceneSpec) -> GaussianStore:
    """Ground-truth store, rounded to float32 so a checkpoint reproduces it exactly"""
    means, log_scales, rotors, logits, sh = [], [], [], [], []
    for blob in spec.blobs:
        dc = (np.asarray(blob.color, dtype=np.float64) - 0.5) / SH_C0
        logit = np.log(blob.opacity / (1.0 - blob.opacity))
        for mean4, scales4, rotor in blob_gaussians(blob):
            means.append(mean4)
            log_scales.append(scales4)
            rotors.append(rotor)
            logits.append(logit)
            coeffs = np.zeros((SH_COEFFS, 3))
            coeffs[0] = dc
            sh.append(coeffs)

    def f32(values) -> np.ndarray:
        return np.asarray(values, dtype=np.float64).astype(np.float32).astype(np.float64)

    return GaussianStore(
        means=f32(means),
        log_scales=f32(log_scales),
        rotors=f32(rotors),
        opacity_logits=f32(logits),
        sh=f32(sh),
    )


def generate_synthetic(spec: SyntheticSceneSpec, num_threads: int = 1) -> Tuple[Dataset, GaussianStore]:
    """Render every (time, camera) pair of the scene; every test_every-th frame goes to test"""
    store = scene_store(spec)
    poses = camera_ring(spec)
    fx = 0.5 * spec.width / np.tan(0.5 * spec.cameras.camera_angle_x)
    times = np.linspace(0.0, 1.0, spec.time_samples) if spec.time_samples > 1 else np.zeros(1)

    frames = []
    for time in times:
        for pose in poses:
            index = len(frames)
            cam = Camera.from_opengl_pose(pose, spec.width, spec.height, fx, fx, time=float(time))
            view = render_view(store, cam, spec.background, MAX_SH_DEGREE, num_threads)
            split = SplitTag.TEST if (index + 1) % spec.test_every == 0 else SplitTag.TRAIN
            frames.append(Frame(camera_to_world=pose, time=float(time), split=split, image=view.image))
    logger.info(
        f"Rendered {len(frames)} synthetic frames ({len(times)} times x {len(poses)} cameras) "
        f"from {len(store)} Gaussians"
    )
    dataset = Dataset(
        frames=frames,
        width=spec.width,
        height=spec.height,
        fx=fx,
        fy=fx,
        cx=0.5 * spec.width,
        cy=0.5 * spec.height,
        background=tuple(spec.background),
    )
    return dataset, store
