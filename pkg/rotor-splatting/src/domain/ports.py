"""
Ports (interfaces) defining the contracts between core business logic and adapters.
"""
from abc import ABC, abstractmethod
from typing import Any, Dict, Tuple

import numpy as np

from .gaussian import GaussianStore
from .models import Dataset


class ICheckpointRepository(ABC):
    """Port for Gaussian store persistence"""

    @abstractmethod
    def save(self, store: GaussianStore, path: str) -> None:
        """Write every Gaussian parameter to path"""
        pass

    @abstractmethod
    def load(self, path: str) -> GaussianStore:
        """Read a store written by save"""
        pass


class IDatasetRepository(ABC):
    """Port for posed image datasets"""

    @abstractmethod
    def load(self, directory: str) -> Dataset:
        """Load every split found in directory"""
        pass

    @abstractmethod
    def save(self, dataset: Dataset, directory: str) -> None:
        """Write dataset so that load reproduces it"""
        pass


class IImageStore(ABC):
    """Port for image encoding"""

    @abstractmethod
    def read(self, path: str) -> np.ndarray:
        """Read an image as floats in [0, 1], shape (H, W, C)"""
        pass

    @abstractmethod
    def write(self, path: str, image: np.ndarray) -> None:
        """Write a float image in [0, 1] as 8 bits per channel"""
        pass


class INeighborSearch(ABC):
    """Port for exact k-nearest-neighbour queries"""

    @abstractmethod
    def kneighbors(self, points: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
        """
        Query the k nearest points of every point among the points themselves.

        Returns:
            (distances (N, k) ascending, indices (N, k))
        """
        pass


class IMetricsSink(ABC):
    """Port for training metrics"""

    @abstractmethod
    def record(self, metrics: Dict[str, Any]) -> None:
        """Append one metrics record"""
        pass

    @abstractmethod
    def flush(self) -> None:
        """Persist buffered records"""
        pass


class ILogger(ABC):
    """Port for logging"""

    @abstractmethod
    def info(self, message: str):
        pass

    @abstractmethod
    def warning(self, message: str):
        pass

    @abstractmethod
    def error(self, message: str, exception: Exception = None):
        pass

    @abstractmethod
    def debug(self, message: str):
        pass
