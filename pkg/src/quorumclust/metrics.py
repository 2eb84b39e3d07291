"""Scoring of assignments against ground truth, plus the benchmark table."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .colonies import OUTLIER
from .engine import EngineConfig, run_static

__all__ = ["Score", "matched_accuracy", "bench_table", "BenchRow", "BenchReport"]


@dataclass(frozen=True)
class Score:
    accuracy: float         # correct / n, outliers in the denominator
    k_found: int
    outlier_count: int
    misclassified: int      # non-outlier cells whose matched label differs
    n: int

    @property
    def correct(self) -> int:
        return self.n - self.outlier_count - self.misclassified


def matched_accuracy(assignment, labels) -> Score:
    """Score an assignment under the best one-to-one colony/label matching.

    The matching maximizes total agreement on the k_found x k_true
    contingency table (exact assignment-problem solve; k is small in
    practice).  Outlier cells are excluded from the matching but still count
    against accuracy through the denominator.
    """
    pred = np.asarray(getattr(assignment, "labels", assignment))
    truth = np.asarray(labels)
    if truth.shape[0] != pred.shape[0]:
        raise ValueError("assignment and labels must have equal length")
    n = pred.shape[0]
    is_outlier = pred == OUTLIER
    clustered = ~is_outlier

    colony_ids = np.unique(pred[clustered])
    label_ids = np.unique(truth)
    if n == 0 or colony_ids.size == 0:
        return Score(0.0, 0, int(is_outlier.sum()), 0, n)

    table = np.zeros((colony_ids.size, label_ids.size), dtype=int)
    col_index = {c: i for i, c in enumerate(colony_ids)}
    lab_index = {l: j for j, l in enumerate(label_ids)}
    for p, t in zip(pred[clustered], truth[clustered]):
        table[col_index[p], lab_index[t]] += 1

    rows, cols = linear_sum_assignment(table, maximize=True)
    correct = int(table[rows, cols].sum())
    outliers = int(is_outlier.sum())
    miscls = n - outliers - correct
    return Score(correct / n, int(colony_ids.size), outliers, miscls, n)


@dataclass
class BenchRow:
    name: str
    accuracy: float | None = None
    k_found: int | None = None
    outlier_count: int | None = None
    misclassified: int | None = None
    steps: int | None = None
    seconds: float = 0.0
    reference: float | None = None  # previously reported accuracy, if any
    error: str | None = None


@dataclass
class BenchReport:
    rows: list

    def to_markdown(self) -> str:
        head = ("| dataset | accuracy | reference | k | outliers | "
                "misclassified | steps | seconds |")
        sep = "|---|---|---|---|---|---|---|---|"
        lines = [head, sep]
        for r in self.rows:
            if r.error is not None:
                lines.append(f"| {r.name} | ERROR: {r.error} | "
                             f"{_fmt(r.reference)} | | | | | |")
                continue
            lines.append(
                f"| {r.name} | {r.accuracy:.3f} | {_fmt(r.reference)} "
                f"| {r.k_found} | {r.outlier_count} | {r.misclassified} "
                f"| {r.steps} | {r.seconds:.2f} |")
        return "\n".join(lines)

    def to_csv(self) -> str:
        lines = ["dataset,accuracy,reference,k,outliers,misclassified,"
                 "steps,seconds,error"]
        for r in self.rows:
            if r.error is not None:
                lines.append(f"{r.name},,,,,,,,{r.error!r}")
            else:
                lines.append(
                    f"{r.name},{r.accuracy:.6f},{_fmt(r.reference)},"
                    f"{r.k_found},{r.outlier_count},{r.misclassified},"
                    f"{r.steps},{r.seconds:.3f},")
        return "\n".join(lines)


def _fmt(x) -> str:
    return "" if x is None else f"{x:.3f}"


def bench_table(entries) -> BenchReport:
    """Run a list of (dataset, config, reference accuracy) benchmark rows.

    A failing run becomes an error row; the table is emitted regardless.
    Datasets without labels get accuracy fields left at None.
    """
    rows = []
    for dataset, cfg, reference in entries:
        row = BenchRow(name=dataset.name, reference=reference)
        t0 = time.perf_counter()
        try:
            if not isinstance(cfg, EngineConfig):
                raise TypeError("entry config must be an EngineConfig")
            result = run_static(dataset.cellset(), cfg)
            row.steps = result.steps_used
            row.k_found = result.k_found
            if dataset.labels is not None:
                score = matched_accuracy(result.assignment, dataset.labels)
                row.accuracy = score.accuracy
                row.outlier_count = score.outlier_count
                row.misclassified = score.misclassified
            else:
                row.outlier_count = result.assignment.outlier_count
                row.misclassified = None
        except Exception as exc:  # row-level isolation, table still ships
            row.error = f"{type(exc).__name__}: {exc}"
        row.seconds = time.perf_counter() - t0
        rows.append(row)
    return BenchReport(rows=rows)
