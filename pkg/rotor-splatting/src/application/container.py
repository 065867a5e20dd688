"""
Dependency injection container for wiring adapters and services.
"""
import os
import logging
from typing import Optional

from dotenv import load_dotenv

from src.domain.service import RenderService, TrainingService
from src.domain.ports import (
    ICheckpointRepository,
    IDatasetRepository,
    IImageStore,
    ILogger,
    IMetricsSink,
    INeighborSearch,
)
from src.adapters.checkpoint import BinaryCheckpointRepository
from src.adapters.dataset_loader import TransformsDatasetRepository
from src.adapters.images import PillowImageStore
from src.adapters.knn import KDTreeNeighborSearch
from src.adapters.logging import PythonLogger
from src.adapters.metrics import InMemoryMetricsSink, JsonLinesMetricsSink

logger = logging.getLogger(__name__)


def _env_int(name: str, default: Optional[int]) -> Optional[int]:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        logger.warning(f"Ignoring non-integer {name}={raw!r}")
        return default


class ApplicationContainer:
    """Container managing application dependencies"""

    def __init__(self):
        load_dotenv()
        self.num_threads = max(1, _env_int("R4GS_NUM_THREADS", os.cpu_count() or 1))
        self.log_level = os.getenv("R4GS_LOG_LEVEL", "INFO")
        self.log_file = os.getenv("R4GS_LOG_FILE") or None
        self.default_seed = _env_int("R4GS_SEED", None)

        self._logger: Optional[ILogger] = None
        self._checkpoints: Optional[ICheckpointRepository] = None
        self._datasets: Optional[IDatasetRepository] = None
        self._images: Optional[IImageStore] = None
        self._neighbor_search: Optional[INeighborSearch] = None
        self._render_service: Optional[RenderService] = None

    def get_logger(self) -> ILogger:
        if self._logger is None:
            self._logger = PythonLogger("rotor-splatting", self.log_level, self.log_file)
        return self._logger

    def get_checkpoint_repository(self) -> ICheckpointRepository:
        if self._checkpoints is None:
            self._checkpoints = BinaryCheckpointRepository()
        return self._checkpoints

    def get_image_store(self) -> IImageStore:
        if self._images is None:
            self._images = PillowImageStore()
        return self._images

    def get_dataset_repository(self) -> IDatasetRepository:
        if self._datasets is None:
            self._datasets = TransformsDatasetRepository(self.get_image_store())
        return self._datasets

    def get_neighbor_search(self) -> INeighborSearch:
        if self._neighbor_search is None:
            self._neighbor_search = KDTreeNeighborSearch(n_jobs=self.num_threads)
        return self._neighbor_search

    def get_training_service(self, metrics_path: Optional[str] = None) -> TrainingService:
        """Training service writing metrics to metrics_path, or keeping them in memory"""
        sink: IMetricsSink = JsonLinesMetricsSink(metrics_path) if metrics_path else InMemoryMetricsSink()
        service = TrainingService(
            neighbor_search=self.get_neighbor_search(),
            metrics_sink=sink,
            logger=self.get_logger(),
            num_threads=self.num_threads,
        )
        logger.info(f"Training service initialized with {self.num_threads} threads")
        return service

    def get_render_service(self) -> RenderService:
        if self._render_service is None:
            self._render_service = RenderService(logger=self.get_logger(), num_threads=self.num_threads)
            logger.info("Render service initialized")
        return self._render_service


# Singleton instance
_container: Optional[ApplicationContainer] = None


def get_container() -> ApplicationContainer:
    """Get the application container singleton"""
    global _container
    if _container is None:
        _container = ApplicationContainer()
    return _container


def reset_container() -> None:
    global _container
    _container = None
