"""
Pydantic schemas for the CLI JSON inputs: camera files and synthetic scene specs.
"""
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from src.adapters.schemas import check_matrix4
from src.domain.models import BlobSpec, CameraRingSpec, MotionKind, SyntheticSceneSpec


class CameraFileSchema(BaseModel):
    """Camera for the render and flow commands"""
    width: int = Field(..., gt=0, description="Image width in pixels")
    height: int = Field(..., gt=0, description="Image height in pixels")
    camera_to_world: List[List[float]] = Field(..., description="Camera-to-world matrix, OpenGL axes, row-major")
    camera_angle_x: Optional[float] = Field(None, gt=0, lt=np.pi, description="Horizontal field of view in radians")
    fx: Optional[float] = Field(None, gt=0, description="Horizontal focal length in pixels")
    fy: Optional[float] = Field(None, gt=0, description="Vertical focal length in pixels")
    cx: Optional[float] = Field(None, description="Principal point x in pixels")
    cy: Optional[float] = Field(None, description="Principal point y in pixels")
    background: Tuple[float, float, float] = Field((0.0, 0.0, 0.0), description="Background colour")

    check_camera_to_world = field_validator("camera_to_world")(check_matrix4)

    @model_validator(mode="after")
    def check_focal_given(self):
        if self.fx is None and self.camera_angle_x is None:
            raise ValueError("camera needs either camera_angle_x or fx")
        return self

    def focal_lengths(self) -> Tuple[float, float]:
        fx = self.fx if self.fx is not None else 0.5 * self.width / np.tan(0.5 * self.camera_angle_x)
        return fx, self.fy if self.fy is not None else fx


class BlobSchema(BaseModel):
    """Analytic blob of a synthetic scene"""
    center: Tuple[float, float, float] = Field(..., description="Centre at t = 0.5 (linear) or rest position")
    radius: float = Field(..., gt=0, description="Standard deviation of the blob in world units")
    color: Tuple[float, float, float] = Field(..., description="RGB in [0, 1]")
    opacity: float = Field(0.95, gt=0, lt=1, description="Peak opacity")
    motion: MotionKind = Field(MotionKind.STATIC, description="static, linear or oscillating")
    velocity: Tuple[float, float, float] = Field((0.0, 0.0, 0.0), description="World units per unit time")
    amplitude: Tuple[float, float, float] = Field((0.0, 0.0, 0.0), description="Oscillation amplitude")
    frequency: float = Field(1.0, gt=0, description="Oscillations per unit time")
    phase: float = Field(0.0, description="Oscillation phase in radians")
    window: Optional[Tuple[float, float]] = Field(None, description="Existence interval [t0, t1]")
    segments: Optional[int] = Field(None, ge=1, description="Number of short-lived Gaussians along the path")

    def to_domain(self) -> BlobSpec:
        return BlobSpec(**self.model_dump())


class CameraRingSchema(BaseModel):
    """Ring of cameras looking at the origin"""
    count: int = Field(20, ge=2, description="Number of cameras")
    radius: float = Field(4.0, gt=0, description="Ring radius")
    elevation: float = Field(0.3, description="Height of the ring above the xy plane")
    camera_angle_x: float = Field(0.8, gt=0, lt=np.pi, description="Horizontal field of view in radians")


class SyntheticSceneSchema(BaseModel):
    """Specification of a synthetic dynamic scene"""
    blobs: List[BlobSchema] = Field(..., min_length=1, description="Analytic primitives")
    cameras: CameraRingSchema = Field(default_factory=CameraRingSchema, description="Camera ring")
    time_samples: int = Field(10, ge=1, description="Number of timestamps in [0, 1]")
    width: int = Field(128, gt=0, description="Image width")
    height: int = Field(128, gt=0, description="Image height")
    background: Tuple[float, float, float] = Field((0.0, 0.0, 0.0), description="Background colour")
    test_every: int = Field(5, ge=2, description="Every n-th frame is held out for testing")

    class Config:
        json_schema_extra = {
            "example": {
                "blobs": [
                    {"center": [0, 0, 0], "radius": 0.3, "color": [0.9, 0.2, 0.2],
                     "motion": "linear", "velocity": [0.5, 0, 0]}
                ],
                "cameras": {"count": 20, "radius": 4.0},
                "time_samples": 10,
            }
        }

    def to_domain(self) -> SyntheticSceneSpec:
        return SyntheticSceneSpec(
            blobs=[b.to_domain() for b in self.blobs],
            cameras=CameraRingSpec(**self.cameras.model_dump()),
            time_samples=self.time_samples,
            width=self.width,
            height=self.height,
            background=self.background,
            test_every=self.test_every,
        )
