"""CSV sink for training metrics (`step,epoch,split,loss,accuracy`)."""

from __future__ import annotations

import csv
import io
import logging
from pathlib import Path
from typing import TextIO

from src.grainflow.core.errors import StorageError
from src.grainflow.training.trainer import MetricsRecord

logger = logging.getLogger(__name__)

CSV_HEADER = ("step", "epoch", "split", "loss", "accuracy")


def format_row(record: MetricsRecord) -> list[str]:
    return [
        str(record.step),
        f"{record.epoch:.6f}",
        record.split.value,
        f"{record.loss:.6f}",
        f"{record.accuracy:.6f}",
    ]


class CsvMetricsWriter:
    """Writes one CSV row per record; UTF-8, LF line endings, header first."""

    def __init__(self, stream: TextIO) -> None:
        self._stream = stream
        self._writer = csv.writer(stream, lineterminator="\n")
        self._writer.writerow(CSV_HEADER)
        self.rows = 0

    @classmethod
    def open(cls, path: str | Path) -> "CsvMetricsWriter":
        try:
            stream = open(path, "w", encoding="utf-8", newline="")
        except OSError as exc:
            raise StorageError(f"cannot open metrics file {path}: {exc}") from exc
        logger.info("Writing metrics to %s", path)
        return cls(stream)

    def write(self, record: MetricsRecord) -> None:
        self._writer.writerow(format_row(record))
        self.rows += 1

    def close(self) -> None:
        self._stream.close()

    def __enter__(self) -> "CsvMetricsWriter":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()


def render_csv(records: list[MetricsRecord]) -> str:
    """The exact text CsvMetricsWriter produces for `records`."""
    buffer = io.StringIO()
    writer = CsvMetricsWriter(buffer)
    for record in records:
        writer.write(record)
    return buffer.getvalue()
