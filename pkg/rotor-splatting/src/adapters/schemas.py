"""
Pydantic schemas of the transforms_{split}.json dataset files.
"""
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator


def check_matrix4(value: List[List[float]]) -> List[List[float]]:
    if len(value) != 4 or any(len(row) != 4 for row in value):
        raise ValueError("transform_matrix must be a 4x4 nested list")
    return value


class TransformsFrameSchema(BaseModel):
    """One entry of the frames list of a transforms_{split}.json file"""
    file_path: str = Field(..., description="Image path relative to the dataset directory")
    transform_matrix: List[List[float]] = Field(..., description="Camera-to-world matrix, OpenGL axes, row-major")
    time: Optional[float] = Field(None, description="Native frame time; absent for static scenes")
    float_path: Optional[str] = Field(None, description="Optional lossless float32 copy of the image (.npy)")

    check_transform_matrix = field_validator("transform_matrix")(check_matrix4)


class TransformsFileSchema(BaseModel):
    """Schema of a transforms_{split}.json file"""
    camera_angle_x: float = Field(..., gt=0, lt=np.pi, description="Horizontal field of view in radians")
    fl_x: Optional[float] = Field(None, gt=0, description="Explicit horizontal focal length in pixels")
    fl_y: Optional[float] = Field(None, gt=0, description="Explicit vertical focal length in pixels")
    cx: Optional[float] = Field(None, description="Principal point x in pixels")
    cy: Optional[float] = Field(None, description="Principal point y in pixels")
    background: Optional[Tuple[float, float, float]] = Field(None, description="Compositing colour for RGBA images")
    frames: List[TransformsFrameSchema] = Field(..., description="Posed frames")

    class Config:
        json_schema_extra = {
            "example": {
                "camera_angle_x": 0.6911112070083618,
                "frames": [
                    {
                        "file_path": "./train/r_000",
                        "time": 0.0,
                        "transform_matrix": [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 4], [0, 0, 0, 1]],
                    }
                ],
            }
        }
