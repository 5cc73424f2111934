from __future__ import annotations

from src.grainflow.core import network as nn
from src.grainflow.core.network import NetworkConfig
from src.grainflow.data.dataset import Dataset
from src.grainflow.training.gradcheck import CheckResult, GradcheckReport
from src.grainflow.training.trainer import evaluate
from src.grainflow.utils.formatters import (
    Verdict,
    evaluation_lines,
    format_value,
    format_verdict,
    gradcheck_lines,
    table,
)


def test_verdict_line() -> None:
    assert format_verdict("OK", 0.6743619) == "this is a OK with possibility 0.67436"
    assert Verdict(class_name="bad", probability=1.0).formatted == "this is a bad with possibility 1.00000"


def test_format_value() -> None:
    assert format_value(None) == "n/a"
    assert format_value(0.5) == "0.500000"
    assert format_value(3) == "3"


def test_table_aligns_columns() -> None:
    lines = table(["name", "n"], [["bad", 12], ["OK", 3]])
    assert lines == ["name  n", "----  --", "bad   12", "OK    3"]


def test_evaluation_lines_for_uniform_network(small_config: NetworkConfig, binary_dataset: Dataset) -> None:
    lines = evaluation_lines(evaluate(nn.init(small_config, 0), binary_dataset), small_config.class_names)
    assert "samples=8" in lines
    assert "accuracy=0.500000" in lines
    assert "accuracy_bad=1.000000" in lines
    assert "accuracy_OK=0.000000" in lines
    assert "confusion_OK_bad=4" in lines
    assert "confidence_OK_mean=0.500000" in lines


def test_gradcheck_lines() -> None:
    report = GradcheckReport(
        tolerance=1e-4,
        results=[
            CheckResult(check_id="layer0 (relu).input", layer="layer0 (relu)", passed=True, worst_error=2e-9, coords=4),
            CheckResult(check_id="network.layer1.weights", layer="network", passed=False, worst_error=0.25, coords=8),
        ],
    )
    lines = gradcheck_lines(report)
    assert lines[:3] == ["passed=no", "tolerance=0.000100", "worst_error=2.500e-01"]
    assert any(line.startswith("network.layer1.weights") and line.endswith("FAIL") for line in lines)
    assert lines[-1] == "network: worst 2.500e-01"
