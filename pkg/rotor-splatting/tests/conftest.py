"""
Shared fixtures and numerical helpers for the test suites.
"""
import numpy as np
import pytest

from src.domain.gaussian import GaussianStore
from src.domain.models import SH_COEFFS, Camera
from src.domain.rotor import normalize


def central_difference(func, x0: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """
    Jacobian of func at x0 by centred differences.

    func maps an array shaped like x0 to an array (or scalar); the result is
    shaped func(x0).shape + x0.shape.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    f0 = np.asarray(func(x0.copy()), dtype=np.float64)
    jac = np.zeros(f0.shape + x0.shape)
    for j in np.ndindex(x0.shape):
        x = x0.copy()
        x[j] = x0[j] + eps
        fplus = np.asarray(func(x), dtype=np.float64)
        x[j] = x0[j] - eps
        fminus = np.asarray(func(x), dtype=np.float64)
        jac[(Ellipsis,) + j] = (fplus - fminus) / (2.0 * eps)
    return jac


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def random_rotors(rng: np.random.Generator, n: int, temporal: bool = True) -> np.ndarray:
    r = rng.normal(size=(n, 8))
    if not temporal:
        r[:, 4:] = 0.0
    return normalize(r)


def look_at_camera(
    position,
    width: int = 32,
    height: int = 32,
    focal: float = 40.0,
    time: float = 0.5
) -> Camera:
    """OpenCV-axis camera at position looking at the origin with +z up"""
    position = np.asarray(position, dtype=np.float64)
    forward = -position / np.linalg.norm(position)
    right = np.cross(forward, [0.0, 0.0, 1.0])
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])
    w2c = np.eye(4)
    w2c[:3, :3] = rot
    w2c[:3, 3] = -rot @ position
    return Camera(
        width=width,
        height=height,
        fx=focal,
        fy=focal,
        cx=width / 2.0,
        cy=height / 2.0,
        world_to_camera=w2c,
        time=time,
    )


def make_store(rng: np.random.Generator, n: int, spread: float = 0.5, scale: float = 0.15) -> GaussianStore:
    """Random Gaussians around the origin with moderate scales and opacities"""
    means = np.column_stack([rng.uniform(-spread, spread, (n, 3)), rng.uniform(0.3, 0.7, n)])
    log_scales = np.log(np.column_stack([rng.uniform(0.5, 1.5, (n, 3)) * scale, rng.uniform(0.5, 1.0, n)]))
    sh = rng.normal(scale=0.3, size=(n, SH_COEFFS, 3))
    return GaussianStore(
        means=means,
        log_scales=log_scales,
        rotors=random_rotors(rng, n),
        opacity_logits=rng.uniform(-1.0, 1.5, n),
        sh=sh,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def front_camera():
    return look_at_camera([0.0, -3.0, 0.5])
