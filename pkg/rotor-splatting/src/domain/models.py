"""
Domain models for rotor splatting.
"""
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from .errors import ConfigError, InvalidSpecError, NonInvertiblePoseError, ShapeMismatchError


SH_COEFFS = 16
MAX_SH_DEGREE = 3


class BivectorPlane(Enum):
    """Rotation planes of a 4D rotor, valued by their coefficient slot"""
    XY = 1
    XZ = 2
    YZ = 3
    XT = 4
    YT = 5
    ZT = 6


class SplitTag(Enum):
    """Dataset splits as they appear in transforms_{split}.json"""
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class MotionKind(Enum):
    """Centre paths supported by synthetic blobs"""
    STATIC = "static"
    LINEAR = "linear"
    OSCILLATING = "oscillating"


@dataclass(frozen=True)
class Rotor4:
    """
    Eight-coefficient 4D rotor.

    The first four slots (s, b01, b02, b12) carry the spatial rotation,
    the last four (b03, b13, b23, p) the spatio-temporal one.
    """
    s: float = 1.0
    b01: float = 0.0
    b02: float = 0.0
    b12: float = 0.0
    b03: float = 0.0
    b13: float = 0.0
    b23: float = 0.0
    p: float = 0.0

    @classmethod
    def identity(cls) -> 'Rotor4':
        return cls()

    @classmethod
    def from_array(cls, values) -> 'Rotor4':
        arr = np.asarray(values, dtype=np.float64)
        if arr.shape != (8,):
            raise ShapeMismatchError(f"Rotor needs 8 coefficients, got shape {arr.shape}")
        return cls(*(float(v) for v in arr))

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.s, self.b01, self.b02, self.b12, self.b03, self.b13, self.b23, self.p],
            dtype=np.float64,
        )

    @property
    def is_spatial(self) -> bool:
        """True when all spatio-temporal components are zero"""
        return self.b03 == 0.0 and self.b13 == 0.0 and self.b23 == 0.0 and self.p == 0.0


@dataclass
class Gaussian4D:
    """Domain model for one 4D Gaussian primitive"""
    mean4: np.ndarray
    log_scales4: np.ndarray
    rotor: Rotor4
    opacity_logit: float
    sh: np.ndarray = field(default_factory=lambda: np.zeros((SH_COEFFS, 3)))

    def __post_init__(self):
        self.mean4 = np.asarray(self.mean4, dtype=np.float64)
        self.log_scales4 = np.asarray(self.log_scales4, dtype=np.float64)
        self.sh = np.asarray(self.sh, dtype=np.float64)
        if self.mean4.shape != (4,):
            raise ShapeMismatchError(f"mean4 must have shape (4,), got {self.mean4.shape}")
        if self.log_scales4.shape != (4,):
            raise ShapeMismatchError(f"log_scales4 must have shape (4,), got {self.log_scales4.shape}")
        if self.sh.shape != (SH_COEFFS, 3):
            raise ShapeMismatchError(f"sh must have shape ({SH_COEFFS}, 3), got {self.sh.shape}")
        scales = np.exp(self.log_scales4)
        if not np.all(np.isfinite(scales)) or np.any(scales <= 0.0):
            raise ValueError("exp(log_scales4) must be finite and positive")

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales4)

    @property
    def opacity(self) -> float:
        return float(1.0 / (1.0 + np.exp(-self.opacity_logit)))


@dataclass
class SlicedGaussian3D:
    """Domain model for a 4D Gaussian conditioned on one time instant"""
    mean3: np.ndarray
    cov3: np.ndarray
    decay: float
    speed: np.ndarray
    lam: float
    source_index: int = -1


@dataclass
class Splat2D:
    """Screen-space footprint of a sliced Gaussian"""
    mean2: np.ndarray
    conic: np.ndarray
    depth: float
    color: np.ndarray
    alpha_base: float
    flow2: np.ndarray
    source_index: int = -1


@dataclass
class Camera:
    """
    Pinhole camera with OpenCV axes (+x right, +y down, +z forward).

    world_to_camera maps homogeneous world points into camera space.
    Pixel centres sit at integer coordinates.
    """
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    world_to_camera: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.world_to_camera = np.asarray(self.world_to_camera, dtype=np.float64)
        if self.width < 1 or self.height < 1:
            raise ValueError("Camera width and height must be positive")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("Focal lengths fx and fy must be positive")
        if self.world_to_camera.shape != (4, 4):
            raise ShapeMismatchError("world_to_camera must be a 4x4 matrix")
        rot = self.world_to_camera[:3, :3]
        if np.max(np.abs(rot @ rot.T - np.eye(3))) > 1e-6:
            raise NonInvertiblePoseError("world_to_camera rotation block is not orthogonal")

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates"""
        return -self.rotation.T @ self.translation

    @classmethod
    def from_opengl_pose(
        cls,
        camera_to_world: np.ndarray,
        width: int,
        height: int,
        fx: float,
        fy: float,
        cx: Optional[float] = None,
        cy: Optional[float] = None,
        time: float = 0.0
    ) -> 'Camera':
        """Build a camera from a camera-to-world pose with OpenGL axes (-z forward, +y up)"""
        c2w = np.array(camera_to_world, dtype=np.float64)
        c2w[:3, 1:3] *= -1.0
        rot = c2w[:3, :3]
        w2c = np.eye(4)
        w2c[:3, :3] = rot.T
        w2c[:3, 3] = -rot.T @ c2w[:3, 3]
        return cls(
            width=width,
            height=height,
            fx=fx,
            fy=fy,
            cx=width / 2.0 if cx is None else cx,
            cy=height / 2.0 if cy is None else cy,
            world_to_camera=w2c,
            time=time,
        )


@dataclass
class LossWeights:
    """Weights of the training objective and the neighbour count of the consistency term"""
    lambda_ssim: float = 0.2
    lambda_entropy: float = 0.01
    lambda_consistency: float = 0.05
    num_neighbors: int = 8

    def __post_init__(self):
        if not 0.0 <= self.lambda_ssim <= 1.0:
            raise ConfigError("lambda_ssim must lie in [0, 1]")
        if self.lambda_entropy < 0 or self.lambda_consistency < 0:
            raise ConfigError("lambda_entropy and lambda_consistency must be non-negative")
        if self.num_neighbors < 1:
            raise ConfigError("num_neighbors must be at least 1")


@dataclass
class TrainConfig:
    """
    Configuration for a training run.
    Field names double as keys of the flat config file.
    """
    total_steps: int = 20000
    batch_size: int = 3
    lr_position: float = 1.6e-4
    lr_position_final: float = 1.6e-6
    lr_time: float = 1.6e-4
    lr_time_final: float = 1.6e-6
    lr_scales: float = 5e-3
    lr_rotor: float = 1e-3
    lr_sh_dc: float = 2.5e-3
    lr_sh_rest: float = 1.25e-4
    lr_opacity: float = 0.05
    densify_grad_threshold: float = 2e-4
    densify_interval: int = 100
    densify_from: int = 500
    densify_until: int = 15000
    opacity_reset_interval: int = 3000
    prune_opacity: float = 0.005
    reset_opacity_value: float = 0.01
    percent_dense: float = 0.01
    split_factor: float = 1.6
    prune_scale_fraction: float = 0.5
    max_gaussians: int = 200000
    min_gaussians: int = 16
    lambda_ssim: float = 0.2
    lambda_entropy: float = 0.01
    lambda_consistency: float = 0.05
    num_neighbors: int = 8
    knn_rebuild_interval: int = 100
    background: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    static_mode: bool = False
    init_num_points: int = 100000
    init_box_min: Tuple[float, float, float] = (-1.0, -1.0, -1.0)
    init_box_max: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    temporal_scale_init: float = 0.1414
    init_opacity: float = 0.1
    sh_degree_interval: int = 1000
    log_interval: int = 100
    seed: Optional[int] = None
    scene_scale_override: Optional[float] = None

    def __post_init__(self):
        """Validate configuration after initialization"""
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name.startswith("lr_") and value <= 0:
                raise ConfigError(f"{f.name} must be positive")
        intervals = [
            "densify_interval", "opacity_reset_interval", "knn_rebuild_interval",
            "sh_degree_interval", "log_interval",
        ]
        for name in intervals:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.total_steps < 0:
            raise ConfigError("total_steps must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.densify_grad_threshold <= 0:
            raise ConfigError("densify_grad_threshold must be positive")
        if self.split_factor <= 1.0:
            raise ConfigError("split_factor must exceed 1")
        if not 0.0 < self.init_opacity < 1.0:
            raise ConfigError("init_opacity must lie in (0, 1)")
        if not 0.0 < self.reset_opacity_value < 1.0:
            raise ConfigError("reset_opacity_value must lie in (0, 1)")
        if self.temporal_scale_init <= 0:
            raise ConfigError("temporal_scale_init must be positive")
        if self.min_gaussians < 1 or self.max_gaussians < self.min_gaussians:
            raise ConfigError("need 1 <= min_gaussians <= max_gaussians")
        if self.init_num_points < 1:
            raise ConfigError("init_num_points must be at least 1")
        if len(self.background) != 3:
            raise ConfigError("background must have three components")
        if len(self.init_box_min) != 3 or len(self.init_box_max) != 3:
            raise ConfigError("init_box_min and init_box_max must have three components")
        if any(lo >= hi for lo, hi in zip(self.init_box_min, self.init_box_max)):
            raise ConfigError("init_box_min must be below init_box_max on every axis")
        if self.scene_scale_override is not None and self.scene_scale_override <= 0:
            raise ConfigError("scene_scale_override must be positive")
        # surfaces out-of-range weights under the config's own error type
        self.loss_weights

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(
            lambda_ssim=self.lambda_ssim,
            lambda_entropy=self.lambda_entropy,
            lambda_consistency=self.lambda_consistency,
            num_neighbors=self.num_neighbors,
        )

    @property
    def background_array(self) -> np.ndarray:
        return np.asarray(self.background, dtype=np.float64)


@dataclass
class Frame:
    """One posed image of a dataset"""
    camera_to_world: np.ndarray
    time: float
    split: SplitTag = SplitTag.TRAIN
    image: Optional[np.ndarray] = None
    image_path: Optional[str] = None


@dataclass
class Dataset:
    """
    Posed frames with shared intrinsics.
    Times are normalized to [0, 1]; native = time * time_factor + time_offset.
    """
    frames: List[Frame]
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    time_factor: float = 1.0
    time_offset: float = 0.0
    background: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    points: Optional[np.ndarray] = None
    point_colors: Optional[np.ndarray] = None

    def __post_init__(self):
        for frame in self.frames:
            if frame.image is not None and frame.image.shape[:2] != (self.height, self.width):
                raise ShapeMismatchError(
                    f"Frame {frame.image_path} has shape {frame.image.shape[:2]}, "
                    f"expected {(self.height, self.width)}"
                )

    @property
    def camera_angle_x(self) -> float:
        return float(2.0 * np.arctan(0.5 * self.width / self.fx))

    def split(self, tag: SplitTag) -> List[Frame]:
        return [f for f in self.frames if f.split == tag]

    def camera(self, frame: Frame) -> Camera:
        return Camera.from_opengl_pose(
            frame.camera_to_world,
            width=self.width,
            height=self.height,
            fx=self.fx,
            fy=self.fy,
            cx=self.cx,
            cy=self.cy,
            time=frame.time,
        )

    def native_time(self, time: float) -> float:
        return time * self.time_factor + self.time_offset

    def scene_extent(self, tag: SplitTag = SplitTag.TRAIN) -> float:
        """1.1 times the largest distance of a camera centre from their mean"""
        frames = self.split(tag) or self.frames
        centers = np.array([self.camera(f).center for f in frames])
        radius = float(np.max(np.linalg.norm(centers - centers.mean(axis=0), axis=1)))
        return 1.1 * max(radius, 1e-6)


@dataclass
class BlobSpec:
    """Analytic blob of a synthetic scene"""
    center: Tuple[float, float, float]
    radius: float
    color: Tuple[float, float, float]
    opacity: float = 0.95
    motion: MotionKind = MotionKind.STATIC
    velocity: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    amplitude: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    frequency: float = 1.0
    phase: float = 0.0
    window: Optional[Tuple[float, float]] = None
    segments: Optional[int] = None

    def __post_init__(self):
        if self.radius <= 0:
            raise InvalidSpecError("blob radius must be positive")
        if not 0.0 < self.opacity < 1.0:
            raise InvalidSpecError("blob opacity must lie in (0, 1)")
        if any(c < 0.0 or c > 1.0 for c in self.color):
            raise InvalidSpecError("blob color channels must lie in [0, 1]")
        if self.window is not None:
            t0, t1 = self.window
            if not 0.0 <= t0 < t1 <= 1.0:
                raise InvalidSpecError("blob window must satisfy 0 <= t0 < t1 <= 1")
        if self.segments is not None and self.segments < 1:
            raise InvalidSpecError("blob segments must be at least 1")
        if self.frequency <= 0:
            raise InvalidSpecError("blob frequency must be positive")

    def position(self, t: float) -> np.ndarray:
        """Analytic centre at normalized time t"""
        center = np.asarray(self.center, dtype=np.float64)
        if self.motion == MotionKind.LINEAR:
            return center + (t - 0.5) * np.asarray(self.velocity, dtype=np.float64)
        if self.motion == MotionKind.OSCILLATING:
            return center + np.asarray(self.amplitude, dtype=np.float64) * np.sin(
                2.0 * np.pi * self.frequency * t + self.phase
            )
        return center


@dataclass
class CameraRingSpec:
    """Cameras evenly spaced on a circle around the origin, looking at it"""
    count: int = 20
    radius: float = 4.0
    elevation: float = 0.3
    camera_angle_x: float = 0.8

    def __post_init__(self):
        if self.count < 2:
            raise InvalidSpecError("a camera ring needs at least 2 cameras")
        if self.radius <= 0:
            raise InvalidSpecError("camera ring radius must be positive")
        if not 0.0 < self.camera_angle_x < np.pi:
            raise InvalidSpecError("camera_angle_x must lie in (0, pi)")


@dataclass
class SyntheticSceneSpec:
    """Blobs, camera ring and sampling of a synthetic dynamic scene"""
    blobs: List[BlobSpec]
    cameras: CameraRingSpec = field(default_factory=CameraRingSpec)
    time_samples: int = 10
    width: int = 128
    height: int = 128
    background: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    test_every: int = 5

    def __post_init__(self):
        if len(self.blobs) < 1:
            raise InvalidSpecError("a synthetic scene needs at least one blob")
        if self.time_samples < 1:
            raise InvalidSpecError("time_samples must be at least 1")
        if self.width < 1 or self.height < 1:
            raise InvalidSpecError("image size must be positive")
        if self.test_every < 2:
            raise InvalidSpecError("test_every must be at least 2")
