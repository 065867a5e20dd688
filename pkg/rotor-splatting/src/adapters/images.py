"""
Image adapters: Pillow PNG codec and optical-flow colouring.
"""
import logging
import os

import numpy as np
from PIL import Image

from src.domain.errors import MissingFileError, ShapeMismatchError
from src.domain.ports import IImageStore

logger = logging.getLogger(__name__)


def quantize(image: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and round half up to 8 bits"""
    return np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


class PillowImageStore(IImageStore):
    """Reads and writes 8-bit PNG images"""

    def read(self, path: str) -> np.ndarray:
        if not os.path.exists(path):
            raise MissingFileError(f"image not found: {path}")
        with Image.open(path) as image:
            mode = "RGBA" if image.mode in ("RGBA", "LA", "P") else "RGB"
            data = np.asarray(image.convert(mode), dtype=np.float64) / 255.0
        return data

    def write(self, path: str, image: np.ndarray) -> None:
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 3 or image.shape[2] not in (3, 4):
            raise ShapeMismatchError(f"expected an (H, W, 3|4) image, got {image.shape}")
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        mode = "RGBA" if image.shape[2] == 4 else "RGB"
        Image.fromarray(quantize(image), mode).save(path)
        logger.debug(f"Wrote {image.shape[1]}x{image.shape[0]} image to {path}")


def composite(image: np.ndarray, background) -> np.ndarray:
    """Blend an RGBA image over a background colour; RGB images pass through"""
    if image.shape[2] == 3:
        return image
    alpha = image[:, :, 3:4]
    return image[:, :, :3] * alpha + np.asarray(background, dtype=np.float64) * (1.0 - alpha)


def _color_wheel() -> np.ndarray:
    segments = [(15, (255, 0, 0), (255, 255, 0)),
                (6, (255, 255, 0), (0, 255, 0)),
                (4, (0, 255, 0), (0, 255, 255)),
                (11, (0, 255, 255), (0, 0, 255)),
                (13, (0, 0, 255), (255, 0, 255)),
                (6, (255, 0, 255), (255, 0, 0))]
    rows = []
    for count, start, end in segments:
        frac = np.arange(count)[:, None] / count
        rows.append(np.asarray(start) + frac * (np.asarray(end) - np.asarray(start)))
    return np.concatenate(rows) / 255.0


COLOR_WHEEL = _color_wheel()


def flow_to_color(flow: np.ndarray, max_magnitude: float = None) -> np.ndarray:
    """
    Colour-code a flow field (H, W, 2) with the conventional optical-flow wheel.

    Hue encodes direction, saturation the magnitude relative to max_magnitude
    (the largest magnitude in the field when omitted).
    """
    flow = np.asarray(flow, dtype=np.float64)
    u, v = flow[..., 0], flow[..., 1]
    magnitude = np.sqrt(u * u + v * v)
    if max_magnitude is None:
        max_magnitude = float(magnitude.max()) if magnitude.size else 0.0
    scale = max_magnitude if max_magnitude > 0 else 1.0
    radius = np.clip(magnitude / scale, 0.0, 1.0)

    ncols = len(COLOR_WHEEL)
    angle = np.arctan2(-v, -u) / np.pi
    fk = (angle + 1.0) / 2.0 * (ncols - 1)
    k0 = np.floor(fk).astype(int)
    k1 = (k0 + 1) % ncols
    f = (fk - k0)[..., None]
    color = (1.0 - f) * COLOR_WHEEL[k0] + f * COLOR_WHEEL[k1]
    return 1.0 - radius[..., None] * (1.0 - color)
