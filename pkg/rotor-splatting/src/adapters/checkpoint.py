"""
Binary checkpoint repository.

Layout (little-endian):
    header  magic b"R4GS", version u32, count u32, SH degree u32
    rows    count x 65 float32: mean4, log_scales4, rotor (8), opacity logit,
            then 48 SH coefficients stored channel by channel (16 per channel)
"""
import logging
import os
import struct

import numpy as np

from src.domain.errors import CheckpointFormatError, MissingFileError
from src.domain.gaussian import GaussianStore
from src.domain.models import MAX_SH_DEGREE, SH_COEFFS
from src.domain.ports import ICheckpointRepository

logger = logging.getLogger(__name__)

MAGIC = b"R4GS"
VERSION = 1
HEADER = struct.Struct("<4sIII")
ROW_FLOATS = 4 + 4 + 8 + 1 + 3 * SH_COEFFS
ROW_DTYPE = np.dtype("<f4")


class BinaryCheckpointRepository(ICheckpointRepository):
    """Stores Gaussian parameters as float32 rows behind a fixed header"""

    def save(self, store: GaussianStore, path: str) -> None:
        rows = np.concatenate(
            [
                store.means,
                store.log_scales,
                store.rotors,
                store.opacity_logits[:, None],
                np.swapaxes(store.sh, 1, 2).reshape(len(store), 3 * SH_COEFFS),
            ],
            axis=1,
        ).astype(ROW_DTYPE)
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "wb") as f:
            f.write(HEADER.pack(MAGIC, VERSION, len(store), MAX_SH_DEGREE))
            f.write(rows.tobytes())
        logger.info(f"Saved {len(store)} Gaussians to {path}")

    def load(self, path: str) -> GaussianStore:
        if not os.path.exists(path):
            raise MissingFileError(f"checkpoint not found: {path}")
        with open(path, "rb") as f:
            data = f.read()
        if len(data) < HEADER.size:
            raise CheckpointFormatError(f"{path} is too short for a checkpoint header")
        magic, version, count, degree = HEADER.unpack_from(data)
        if magic != MAGIC:
            raise CheckpointFormatError(f"{path} has magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise CheckpointFormatError(f"{path} has checkpoint version {version}, expected {VERSION}")
        if degree != MAX_SH_DEGREE:
            raise CheckpointFormatError(f"{path} stores SH degree {degree}, expected {MAX_SH_DEGREE}")
        expected = HEADER.size + count * ROW_FLOATS * ROW_DTYPE.itemsize
        if len(data) != expected:
            raise CheckpointFormatError(f"{path} holds {len(data)} bytes, expected {expected} for {count} Gaussians")

        rows = np.frombuffer(data, dtype=ROW_DTYPE, offset=HEADER.size).reshape(count, ROW_FLOATS).astype(np.float64)
        store = GaussianStore(
            means=rows[:, 0:4].copy(),
            log_scales=rows[:, 4:8].copy(),
            rotors=rows[:, 8:16].copy(),
            opacity_logits=rows[:, 16].copy(),
            sh=np.swapaxes(rows[:, 17:].reshape(count, 3, SH_COEFFS), 1, 2).copy(),
        )
        logger.info(f"Loaded {count} Gaussians from {path}")
        return store
