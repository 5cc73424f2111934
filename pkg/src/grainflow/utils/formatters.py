"""Text rendering for command output.

Machine-readable lines are `key=value`; reals print with 6 decimals. Verdict lines
print the probability with 5 decimals (Python's round-half-even `.5f` formatting).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from src.grainflow.training.gradcheck import GradcheckReport
from src.grainflow.training.trainer import EvaluationReport, MetricsRecord, StudyPoint

VERDICT_TEMPLATE = "this is a {class_name} with possibility {probability:.5f}"


@dataclass(frozen=True, slots=True)
class Verdict:
    class_name: str
    probability: float

    @property
    def formatted(self) -> str:
        return VERDICT_TEMPLATE.format(class_name=self.class_name, probability=self.probability)


def format_verdict(class_name: str, probability: float) -> str:
    return Verdict(class_name=class_name, probability=probability).formatted


def format_value(value: object) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def kv_lines(pairs: Iterable[tuple[str, object]]) -> list[str]:
    return [f"{key}={format_value(value)}" for key, value in pairs]


def table(headers: Sequence[str], rows: Sequence[Sequence[object]]) -> list[str]:
    """Left-aligned plain-text table."""
    cells = [[str(h) for h in headers]] + [[format_value(v) for v in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]

    def render(row: Sequence[str]) -> str:
        return "  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()

    return [render(cells[0]), render(["-" * w for w in widths])] + [render(r) for r in cells[1:]]


def evaluation_lines(report: EvaluationReport, class_names: Sequence[str]) -> list[str]:
    pairs: list[tuple[str, object]] = [
        ("samples", report.sample_count),
        ("loss", report.loss),
        ("accuracy", report.accuracy),
    ]
    for name, acc in zip(class_names, report.per_class_accuracy):
        pairs.append((f"accuracy_{name}", acc))
    for name, stats in zip(class_names, report.confidence):
        for key in ("min", "mean", "max"):
            pairs.append((f"confidence_{name}_{key}", getattr(stats, key) if stats else None))
    for t, true_name in enumerate(class_names):
        for p, pred_name in enumerate(class_names):
            pairs.append((f"confusion_{true_name}_{pred_name}", report.confusion[t][p]))

    lines = kv_lines(pairs)
    lines.append("")
    lines += table(
        ["true \\ predicted", *class_names, "accuracy"],
        [[name, *report.confusion[t], report.per_class_accuracy[t]] for t, name in enumerate(class_names)],
    )
    return lines


def training_summary_lines(final_train: MetricsRecord | None, final_val: MetricsRecord | None, steps: int) -> list[str]:
    pairs: list[tuple[str, object]] = [("steps", steps)]
    for prefix, record in (("train", final_train), ("val", final_val)):
        if record is not None:
            pairs += [(f"{prefix}_loss", record.loss), (f"{prefix}_accuracy", record.accuracy)]
    return kv_lines(pairs)


def gradcheck_lines(report: GradcheckReport) -> list[str]:
    lines = kv_lines(
        [
            ("passed", "yes" if report.passed else "no"),
            ("tolerance", report.tolerance),
            ("worst_error", f"{report.worst_error:.3e}"),
        ]
    )
    lines.append("")
    lines += table(
        ["check", "coords", "worst relative error", "status"],
        [[r.check_id, r.coords, f"{r.worst_error:.3e}", "ok" if r.passed else "FAIL"] for r in report.results],
    )
    lines.append("")
    lines += [f"{layer}: worst {error:.3e}" for layer, error in report.per_layer().items()]
    return lines


def study_lines(points: Sequence[StudyPoint], class_names: Sequence[str]) -> list[str]:
    lines: list[str] = []
    for point in points:
        pairs: list[tuple[str, object]] = [("step", point.step), ("test_accuracy", point.report.accuracy)]
        for name, conf in zip(class_names, point.report.predicted_confidence):
            pairs.append((f"confidence_{name}", conf))
        lines += kv_lines(pairs)
    lines.append("")
    lines += table(
        ["steps", "test accuracy", *(f"{name} confidence" for name in class_names)],
        [[p.step, p.report.accuracy, *p.report.predicted_confidence] for p in points],
    )
    return lines
