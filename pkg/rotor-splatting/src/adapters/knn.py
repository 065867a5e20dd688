"""
Neighbour search adapter backed by scikit-learn's KD-tree.
"""
import logging
from typing import Tuple

import numpy as np
from sklearn.neighbors import NearestNeighbors

from src.domain.errors import TooFewPointsError
from src.domain.ports import INeighborSearch

logger = logging.getLogger(__name__)


class KDTreeNeighborSearch(INeighborSearch):
    """Exact k-nearest neighbours of a point set among itself"""

    def __init__(self, leaf_size: int = 30, n_jobs: int = None):
        self.leaf_size = leaf_size
        self.n_jobs = n_jobs

    def kneighbors(self, points: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
        points = np.asarray(points, dtype=np.float64)
        if len(points) < k:
            raise TooFewPointsError(f"cannot query {k} neighbours among {len(points)} points")
        model = NearestNeighbors(
            n_neighbors=k,
            algorithm="kd_tree",
            leaf_size=self.leaf_size,
            metric="euclidean",
            n_jobs=self.n_jobs,
        ).fit(points)
        distances, indices = model.kneighbors(points)
        logger.debug(f"KD-tree query: {len(points)} points, k={k}")
        return distances, indices
