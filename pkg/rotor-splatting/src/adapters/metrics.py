"""
Metrics adapters backed by pandas.
"""
import logging
import os
from dataclasses import asdict
from typing import Any, Dict, List, Sequence

import pandas as pd

from src.domain.ports import IMetricsSink

logger = logging.getLogger(__name__)


class JsonLinesMetricsSink(IMetricsSink):
    """Buffers metrics records and appends them to a line-delimited JSON file"""

    def __init__(self, path: str):
        self.path = path
        self._buffer: List[Dict[str, Any]] = []

    def record(self, metrics: Dict[str, Any]) -> None:
        self._buffer.append(dict(metrics))

    def flush(self) -> None:
        if not self._buffer:
            return
        directory = os.path.dirname(self.path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        df = pd.DataFrame(self._buffer)
        text = df.to_json(orient="records", lines=True)
        if not text.endswith("\n"):
            text += "\n"
        with open(self.path, "a") as f:
            f.write(text)
        logger.info(f"Flushed {len(df)} metrics records to {self.path}")
        self._buffer.clear()


class InMemoryMetricsSink(IMetricsSink):
    """Keeps every record; used when no metrics file is wanted"""

    def __init__(self):
        self.records: List[Dict[str, Any]] = []

    def record(self, metrics: Dict[str, Any]) -> None:
        self.records.append(dict(metrics))

    def flush(self) -> None:
        pass


def read_metrics(path: str) -> pd.DataFrame:
    return pd.read_json(path, orient="records", lines=True)


def metrics_frame(metrics: Sequence) -> pd.DataFrame:
    """Per-frame evaluation table with a trailing mean row"""
    df = pd.DataFrame([asdict(m) for m in metrics], columns=["frame", "time", "psnr", "ssim"])
    df = df.set_index("frame")
    if len(df):
        df.loc["mean"] = df.mean(numeric_only=True)
        df.loc["mean", "time"] = float("nan")
    return df


def format_eval_table(metrics: Sequence) -> str:
    """Render evaluation metrics with 6 significant digits"""
    return metrics_frame(metrics).to_string(float_format=lambda v: f"{v:.6g}", na_rep="")
