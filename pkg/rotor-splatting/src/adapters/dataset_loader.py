"""
Dataset repository for the transforms_{split}.json layout.

Each split file carries camera_angle_x (optionally fl_x, fl_y, cx, cy, background)
and a list of frames with file_path, transform_matrix (camera-to-world, OpenGL
axes) and an optional native time. Times are min-max normalized over all splits.
"""
import json
import logging
import os
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from src.adapters.images import composite
from src.adapters.schemas import TransformsFileSchema, TransformsFrameSchema
from src.domain.errors import MalformedJsonError, MissingFileError, NonInvertiblePoseError
from src.domain.models import Dataset, Frame, SplitTag
from src.domain.ports import IDatasetRepository, IImageStore

logger = logging.getLogger(__name__)

POSE_REJECT_TOL = 1e-3
POSE_REPAIR_TOL = 1e-9
IMAGE_EXTENSION = ".png"


def orthonormalize_pose(camera_to_world: np.ndarray, name: str = "") -> np.ndarray:
    """
    Snap the rotation block of a camera-to-world matrix to the nearest rotation.

    Raises NonInvertiblePoseError when it is further than POSE_REJECT_TOL from one.
    """
    pose = np.array(camera_to_world, dtype=np.float64)
    rot = pose[:3, :3]
    error = float(np.max(np.abs(rot.T @ rot - np.eye(3))))
    if error > POSE_REJECT_TOL or abs(np.linalg.det(rot) - 1.0) > POSE_REJECT_TOL:
        raise NonInvertiblePoseError(f"pose of {name or 'frame'} is not a rigid transform (error {error:.3g})")
    if error > POSE_REPAIR_TOL:
        u, _, vt = np.linalg.svd(rot)
        pose[:3, :3] = u @ vt
        logger.debug(f"Re-orthonormalized pose of {name} (error {error:.3g})")
    pose[3] = (0.0, 0.0, 0.0, 1.0)
    return pose


def normalize_times(native: List[float]) -> Tuple[np.ndarray, float, float]:
    """Map native times to [0, 1]; returns (times, factor, offset)"""
    values = np.asarray(native, dtype=np.float64)
    if values.size == 0:
        return values, 1.0, 0.0
    lo, hi = float(values.min()), float(values.max())
    if hi - lo <= 0.0:
        return np.zeros_like(values), 1.0, lo
    return (values - lo) / (hi - lo), hi - lo, lo


class TransformsDatasetRepository(IDatasetRepository):
    """Loads and writes datasets as transforms_{train,val,test}.json plus images"""

    def __init__(self, image_store: IImageStore):
        self.image_store = image_store

    def _read_split(self, path: str) -> TransformsFileSchema:
        try:
            with open(path, "r") as f:
                raw = json.load(f)
            return TransformsFileSchema.model_validate(raw)
        except json.JSONDecodeError as e:
            raise MalformedJsonError(f"{path} is not valid JSON: {e}") from e
        except ValidationError as e:
            raise MalformedJsonError(f"{path} does not match the transforms schema: {e}") from e

    def _resolve_image(self, directory: str, frame: TransformsFrameSchema) -> Tuple[str, Optional[str]]:
        image_path = os.path.normpath(os.path.join(directory, frame.file_path))
        if not os.path.splitext(image_path)[1]:
            image_path += IMAGE_EXTENSION
        float_path = None
        if frame.float_path:
            float_path = os.path.normpath(os.path.join(directory, frame.float_path))
        return image_path, float_path

    def _read_image(self, image_path: str, float_path: Optional[str], background) -> np.ndarray:
        if float_path is not None and os.path.exists(float_path):
            image = np.load(float_path).astype(np.float64)
        else:
            if not os.path.exists(image_path):
                raise MissingFileError(f"image not found: {image_path}")
            image = self.image_store.read(image_path)
        return composite(image, background)

    def load(self, directory: str) -> Dataset:
        split_files: Dict[SplitTag, TransformsFileSchema] = {}
        for tag in SplitTag:
            path = os.path.join(directory, f"transforms_{tag.value}.json")
            if os.path.exists(path):
                split_files[tag] = self._read_split(path)
        if not split_files:
            raise MissingFileError(f"no transforms_{{train,val,test}}.json found in {directory}")

        first = next(iter(split_files.values()))
        background = tuple(first.background) if first.background is not None else (0.0, 0.0, 0.0)

        entries = []
        for tag, schema in split_files.items():
            for item in schema.frames:
                entries.append((tag, item))
        times, factor, offset = normalize_times([item.time or 0.0 for _, item in entries])

        frames: List[Frame] = []
        width = height = None
        for (tag, item), time in zip(entries, times):
            image_path, float_path = self._resolve_image(directory, item)
            image = self._read_image(image_path, float_path, background)
            if width is None:
                height, width = image.shape[:2]
            frames.append(
                Frame(
                    camera_to_world=orthonormalize_pose(item.transform_matrix, image_path),
                    time=float(time),
                    split=tag,
                    image=image,
                    image_path=image_path,
                )
            )
        if width is None:
            raise MissingFileError(f"dataset in {directory} has no frames")

        fx = first.fl_x if first.fl_x is not None else 0.5 * width / np.tan(0.5 * first.camera_angle_x)
        fy = first.fl_y if first.fl_y is not None else fx
        dataset = Dataset(
            frames=frames,
            width=width,
            height=height,
            fx=float(fx),
            fy=float(fy),
            cx=float(first.cx) if first.cx is not None else 0.5 * width,
            cy=float(first.cy) if first.cy is not None else 0.5 * height,
            time_factor=factor,
            time_offset=offset,
            background=background,
        )
        logger.info(
            f"Loaded {len(frames)} frames from {directory} "
            + ", ".join(f"{tag.value}={len(dataset.split(tag))}" for tag in split_files)
        )
        return dataset

    def save(self, dataset: Dataset, directory: str, lossless: bool = True) -> None:
        """Write split files and PNG images; lossless also stores float32 .npy copies"""
        os.makedirs(directory, exist_ok=True)
        for tag in SplitTag:
            frames = dataset.split(tag)
            if not frames:
                continue
            records = []
            for i, frame in enumerate(frames):
                if frame.image is None:
                    raise MissingFileError(f"frame {i} of split {tag.value} has no image to write")
                stem = os.path.join(tag.value, f"r_{i:03d}")
                self.image_store.write(os.path.join(directory, stem + IMAGE_EXTENSION), frame.image)
                record = {
                    "file_path": "./" + stem,
                    "time": dataset.native_time(frame.time),
                    "transform_matrix": np.asarray(frame.camera_to_world, dtype=np.float64).tolist(),
                }
                if lossless:
                    np.save(os.path.join(directory, stem + ".npy"), frame.image.astype(np.float32))
                    record["float_path"] = "./" + stem + ".npy"
                records.append(record)
            payload = {
                "camera_angle_x": dataset.camera_angle_x,
                "fl_x": dataset.fx,
                "fl_y": dataset.fy,
                "cx": dataset.cx,
                "cy": dataset.cy,
                "background": list(dataset.background),
                "frames": records,
            }
            with open(os.path.join(directory, f"transforms_{tag.value}.json"), "w") as f:
                json.dump(payload, f, indent=2)
            logger.info(f"Wrote {len(records)} {tag.value} frames to {directory}")
