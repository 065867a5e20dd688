"""
4D Gaussian storage, covariance assembly and temporal slicing.

A 4D Gaussian with covariance Sigma = R S S^T R^T is conditioned on time t
through the blocks U (3x3), V (3) and W (scalar) of Sigma. The sliced mean
moves with speed V / W, the sliced covariance is the Schur complement
U - V V^T / W and the opacity decays with exp(-0.5 (t - mu_t)^2 / W).
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateTimeError, ShapeMismatchError
from .models import SH_COEFFS, Gaussian4D, Rotor4, SlicedGaussian3D
from .rotor import normalize, normalize_jacobian, to_matrix, to_matrix_jacobian

W_FLOOR = 1e-12
COV_REGULARIZER = 1e-9
VISIBILITY_THRESHOLD = 16.0

PARAM_NAMES = ("means", "log_scales", "rotors", "opacity_logits", "sh")


def _param_shapes(n: int) -> Dict[str, Tuple[int, ...]]:
    return {
        "means": (n, 4),
        "log_scales": (n, 4),
        "rotors": (n, 8),
        "opacity_logits": (n,),
        "sh": (n, SH_COEFFS, 3),
    }


@dataclass
class GaussianGradients:
    """Gradients of a scalar loss w.r.t. every stored parameter"""
    means: np.ndarray
    log_scales: np.ndarray
    rotors: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> 'GaussianGradients':
        return cls(**{name: np.zeros(shape) for name, shape in _param_shapes(n).items()})

    def __len__(self):
        return len(self.means)

    def add_(self, other: 'GaussianGradients', weight: float = 1.0) -> 'GaussianGradients':
        for name in PARAM_NAMES:
            getattr(self, name)[...] += weight * getattr(other, name)
        return self

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(getattr(self, name))) for name in PARAM_NAMES)


@dataclass
class GaussianStore:
    """
    Growable set of 4D Gaussians held as parallel arrays.

    Adam moments and densification statistics are kept alongside the
    parameters so that append/select keep every array aligned.
    """
    means: np.ndarray
    log_scales: np.ndarray
    rotors: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray
    exp_avg: Dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: Dict[str, np.ndarray] = field(default_factory=dict)
    grad_accum: Optional[np.ndarray] = None
    grad_count: Optional[np.ndarray] = None
    adam_step: int = 0

    def __post_init__(self):
        n = len(self.means)
        for name, shape in _param_shapes(n).items():
            value = np.asarray(getattr(self, name), dtype=np.float64)
            if value.shape != shape:
                raise ShapeMismatchError(f"{name} must have shape {shape}, got {value.shape}")
            setattr(self, name, value)
            self.exp_avg.setdefault(name, np.zeros(shape))
            self.exp_avg_sq.setdefault(name, np.zeros(shape))
        if self.grad_accum is None:
            self.grad_accum = np.zeros(n)
        if self.grad_count is None:
            self.grad_count = np.zeros(n)

    def __len__(self):
        return len(self.means)

    @classmethod
    def empty(cls) -> 'GaussianStore':
        return cls(**{name: np.zeros(shape) for name, shape in _param_shapes(0).items()})

    @classmethod
    def from_gaussians(cls, gaussians: Sequence[Gaussian4D]) -> 'GaussianStore':
        return cls(
            means=np.array([g.mean4 for g in gaussians]).reshape(-1, 4),
            log_scales=np.array([g.log_scales4 for g in gaussians]).reshape(-1, 4),
            rotors=np.array([g.rotor.as_array() for g in gaussians]).reshape(-1, 8),
            opacity_logits=np.array([g.opacity_logit for g in gaussians], dtype=np.float64),
            sh=np.array([g.sh for g in gaussians]).reshape(-1, SH_COEFFS, 3),
        )

    def gaussian(self, index: int) -> Gaussian4D:
        return Gaussian4D(
            mean4=self.means[index].copy(),
            log_scales4=self.log_scales[index].copy(),
            rotor=Rotor4.from_array(self.rotors[index]),
            opacity_logit=float(self.opacity_logits[index]),
            sh=self.sh[index].copy(),
        )

    @property
    def opacities(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.opacity_logits))

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def parameters(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> 'GaussianStore':
        return GaussianStore(
            **{name: getattr(self, name).copy() for name in PARAM_NAMES},
            exp_avg={k: v.copy() for k, v in self.exp_avg.items()},
            exp_avg_sq={k: v.copy() for k, v in self.exp_avg_sq.items()},
            grad_accum=self.grad_accum.copy(),
            grad_count=self.grad_count.copy(),
            adam_step=self.adam_step,
        )

    def select(self, keep: np.ndarray) -> 'GaussianStore':
        """Compacted store holding the rows picked by a boolean mask or index array"""
        keep = np.asarray(keep)
        return GaussianStore(
            **{name: getattr(self, name)[keep] for name in PARAM_NAMES},
            exp_avg={k: v[keep] for k, v in self.exp_avg.items()},
            exp_avg_sq={k: v[keep] for k, v in self.exp_avg_sq.items()},
            grad_accum=self.grad_accum[keep],
            grad_count=self.grad_count[keep],
            adam_step=self.adam_step,
        )

    def append(self, other: 'GaussianStore') -> 'GaussianStore':
        """Concatenate rows; moments and statistics of the new rows come from other"""
        return GaussianStore(
            **{name: np.concatenate([getattr(self, name), getattr(other, name)]) for name in PARAM_NAMES},
            exp_avg={k: np.concatenate([self.exp_avg[k], other.exp_avg[k]]) for k in PARAM_NAMES},
            exp_avg_sq={k: np.concatenate([self.exp_avg_sq[k], other.exp_avg_sq[k]]) for k in PARAM_NAMES},
            grad_accum=np.concatenate([self.grad_accum, other.grad_accum]),
            grad_count=np.concatenate([self.grad_count, other.grad_count]),
            adam_step=self.adam_step,
        )

    def reset_stats(self) -> None:
        self.grad_accum[:] = 0.0
        self.grad_count[:] = 0.0


@dataclass
class CovarianceCache:
    """Intermediate values of covariance assembly kept for the backward pass"""
    rotors_raw: np.ndarray
    rotors: np.ndarray
    rotation: np.ndarray
    scales: np.ndarray
    cov4: np.ndarray


def assemble_covariances(log_scales: np.ndarray, rotors: np.ndarray) -> CovarianceCache:
    """Batched Sigma = R S S^T R^T with R from the normalized rotors"""
    rotors_raw = np.asarray(rotors, dtype=np.float64)
    unit = normalize(rotors_raw)
    rotation = to_matrix(unit, check=False)
    scales = np.exp(log_scales)
    m = rotation * scales[..., None, :]
    cov4 = m @ np.swapaxes(m, -1, -2)
    return CovarianceCache(rotors_raw=rotors_raw, rotors=unit, rotation=rotation, scales=scales, cov4=cov4)


def assemble_covariance(g: Gaussian4D) -> np.ndarray:
    """4x4 covariance of one Gaussian"""
    return assemble_covariances(g.log_scales4[None], g.rotor.as_array()[None]).cov4[0]


def covariance_backward(cache: CovarianceCache, grad_cov4: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Chain dL/dSigma (any layout) to log-scales and raw rotor coefficients.

    Returns:
        (grad_log_scales (N, 4), grad_rotors (N, 8))
    """
    sym = 0.5 * (grad_cov4 + np.swapaxes(grad_cov4, -1, -2))
    m = cache.rotation * cache.scales[..., None, :]
    grad_m = 2.0 * sym @ m
    grad_rotation = grad_m * cache.scales[..., None, :]
    grad_scales = np.sum(grad_m * cache.rotation, axis=-2)
    grad_log_scales = grad_scales * cache.scales

    entry_jac = to_matrix_jacobian(cache.rotors)
    grad_unit = np.einsum("...k,...ka->...a", grad_rotation.reshape(grad_rotation.shape[:-2] + (16,)), entry_jac)
    grad_rotors = np.einsum("...ba,...b->...a", normalize_jacobian(cache.rotors_raw), grad_unit)
    return grad_log_scales, grad_rotors


@dataclass
class SliceBatch:
    """
    All Gaussians of a store conditioned on time t.

    Rows flagged invalid have W below the floor; their outputs are zero
    and they must be skipped by the renderer.
    """
    time: float
    mean3: np.ndarray
    cov3: np.ndarray
    decay: np.ndarray
    speed: np.ndarray
    lam: np.ndarray
    valid: np.ndarray
    cache: CovarianceCache
    delta: np.ndarray

    def __len__(self):
        return len(self.mean3)

    def sliced(self, index: int) -> SlicedGaussian3D:
        return SlicedGaussian3D(
            mean3=self.mean3[index].copy(),
            cov3=self.cov3[index].copy(),
            decay=float(self.decay[index]),
            speed=self.speed[index].copy(),
            lam=float(self.lam[index]),
            source_index=index,
        )


def _blocks(cov4: np.ndarray):
    return cov4[..., :3, :3], cov4[..., :3, 3], cov4[..., 3, 3]


def slice_arrays(means: np.ndarray, log_scales: np.ndarray, rotors: np.ndarray, t: float) -> SliceBatch:
    """Batched slicing of raw parameter arrays at time t"""
    cache = assemble_covariances(log_scales, rotors)
    u, v, w = _blocks(cache.cov4)
    valid = w >= W_FLOOR
    safe_w = np.where(valid, w, 1.0)
    speed = np.where(valid[:, None], v / safe_w[:, None], 0.0)
    delta = t - means[:, 3]
    mean3 = means[:, :3] + delta[:, None] * speed
    cov3 = u - v[:, :, None] * v[:, None, :] / safe_w[:, None, None] + COV_REGULARIZER * np.eye(3)
    lam = np.where(valid, 1.0 / safe_w, 0.0)
    decay = np.where(valid, np.exp(-0.5 * delta * delta * lam), 0.0)
    return SliceBatch(
        time=float(t),
        mean3=mean3,
        cov3=np.where(valid[:, None, None], cov3, 0.0),
        decay=decay,
        speed=speed,
        lam=lam,
        valid=valid,
        cache=cache,
        delta=delta,
    )


def slice_store(store: GaussianStore, t: float) -> SliceBatch:
    return slice_arrays(store.means, store.log_scales, store.rotors, t)


def slice_at(g: Gaussian4D, t: float) -> SlicedGaussian3D:
    """
    Condition one Gaussian on time t.

    Raises:
        DegenerateTimeError: if the temporal variance W is below 1e-12
    """
    batch = slice_arrays(g.mean4[None], g.log_scales4[None], g.rotor.as_array()[None], t)
    if not batch.valid[0]:
        raise DegenerateTimeError(f"temporal variance {batch.cache.cov4[0, 3, 3]:.3e} below {W_FLOOR}")
    return batch.sliced(0)


def is_visible(g: Gaussian4D, t: float) -> bool:
    """True iff lambda (t - mu_t)^2 <= 16"""
    w = assemble_covariance(g)[3, 3]
    if w < W_FLOOR:
        return bool(t == g.mean4[3])
    delta = t - g.mean4[3]
    return bool(delta * delta / w <= VISIBILITY_THRESHOLD)


def slice_backward(
    batch: SliceBatch,
    grad_mean3: np.ndarray,
    grad_cov3: np.ndarray,
    grad_decay: np.ndarray,
    grad_speed: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Chain gradients of the sliced outputs back to the 4D parameters.

    Returns:
        (grad_means (N, 4), grad_log_scales (N, 4), grad_rotors (N, 8))
    """
    n = len(batch)
    if grad_speed is None:
        grad_speed = np.zeros((n, 3))
    valid = batch.valid
    u, v, w = _blocks(batch.cache.cov4)
    safe_w = np.where(valid, w, 1.0)
    delta = batch.delta

    grad_means = np.zeros((n, 4))
    grad_means[:, :3] = grad_mean3
    speed_total = grad_speed + delta[:, None] * grad_mean3
    grad_means[:, 3] = (
        -np.sum(grad_mean3 * batch.speed, axis=1)
        + grad_decay * batch.decay * delta / safe_w
    )

    gsym = grad_cov3 + np.swapaxes(grad_cov3, -1, -2)
    grad_v = speed_total / safe_w[:, None] - np.einsum("nij,nj->ni", gsym, v) / safe_w[:, None]
    grad_w = (
        grad_decay * batch.decay * 0.5 * delta * delta / (safe_w * safe_w)
        - np.sum(speed_total * v, axis=1) / (safe_w * safe_w)
        + np.einsum("ni,nij,nj->n", v, grad_cov3, v) / (safe_w * safe_w)
    )

    grad_cov4 = np.zeros((n, 4, 4))
    grad_cov4[:, :3, :3] = grad_cov3
    grad_cov4[:, :3, 3] = grad_v
    grad_cov4[:, 3, 3] = grad_w
    grad_cov4[~valid] = 0.0
    grad_means[~valid] = 0.0

    grad_log_scales, grad_rotors = covariance_backward(batch.cache, grad_cov4)
    return grad_means, grad_log_scales, grad_rotors


def speeds(store: GaussianStore) -> Tuple[np.ndarray, np.ndarray, CovarianceCache]:
    """
    Time-independent speed V / W of every Gaussian.

    Returns:
        (speeds (N, 3), valid mask (N,), cache for speeds_backward)
    """
    cache = assemble_covariances(store.log_scales, store.rotors)
    _, v, w = _blocks(cache.cov4)
    valid = w >= W_FLOOR
    safe_w = np.where(valid, w, 1.0)
    return np.where(valid[:, None], v / safe_w[:, None], 0.0), valid, cache


def speeds_backward(cache: CovarianceCache, valid: np.ndarray, grad_speed: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Chain dL/dspeed to (grad_log_scales, grad_rotors)"""
    _, v, w = _blocks(cache.cov4)
    safe_w = np.where(valid, w, 1.0)
    n = len(w)
    grad_cov4 = np.zeros((n, 4, 4))
    grad_cov4[:, :3, 3] = grad_speed / safe_w[:, None]
    grad_cov4[:, 3, 3] = -np.sum(grad_speed * v, axis=1) / (safe_w * safe_w)
    grad_cov4[~valid] = 0.0
    return covariance_backward(cache, grad_cov4)


def degenerate_indices(batch: SliceBatch) -> List[int]:
    return [int(i) for i in np.flatnonzero(~batch.valid)]
