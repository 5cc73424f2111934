from __future__ import annotations

from pathlib import Path

import pytest

from src.grainflow.core.errors import StorageError, ValueRangeError
from src.grainflow.training.metrics import CsvMetricsWriter, render_csv
from src.grainflow.training.trainer import MetricsRecord, Split


def _rows() -> list[MetricsRecord]:
    return [
        MetricsRecord(step=5, epoch=5 / 6, split=Split.TRAIN, loss=0.69314718, accuracy=0.5),
        MetricsRecord(step=5, epoch=5 / 6, split=Split.VAL, loss=0.1, accuracy=1.0),
    ]


def test_render_csv_header_and_precision() -> None:
    assert render_csv(_rows()) == (
        "step,epoch,split,loss,accuracy\n"
        "5,0.833333,train,0.693147,0.500000\n"
        "5,0.833333,val,0.100000,1.000000\n"
    )


def test_empty_history_is_header_only() -> None:
    assert render_csv([]) == "step,epoch,split,loss,accuracy\n"


def test_file_writer_uses_lf(tmp_path: Path) -> None:
    path = tmp_path / "metrics.csv"
    with CsvMetricsWriter.open(path) as writer:
        for record in _rows():
            writer.write(record)
        assert writer.rows == 2
    raw = path.read_bytes()
    assert b"\r\n" not in raw
    assert raw.decode("utf-8") == render_csv(_rows())


def test_unwritable_path_is_storage_error(tmp_path: Path) -> None:
    with pytest.raises(StorageError):
        CsvMetricsWriter.open(tmp_path / "missing" / "metrics.csv")


@pytest.mark.parametrize("loss, accuracy", [(-0.1, 0.5), (float("nan"), 0.5), (0.1, 1.5)])
def test_record_ranges(loss: float, accuracy: float) -> None:
    with pytest.raises(ValueRangeError):
        MetricsRecord(step=1, epoch=1.0, split=Split.TRAIN, loss=loss, accuracy=accuracy)
