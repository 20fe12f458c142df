"""Dice/confusion metrics, the multi-strategy benchmark runner, and report
formatting (per-image rows with best/second-best marks, plus a timing row).

Conventions: Dice of two empty masks is 1.0; marks break ties by column
order; a failed cell is recorded as an error and excluded from means and
marks without aborting the run.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .imaging import require_mask


def confusion(pred: np.ndarray, gt: np.ndarray) -> tuple[int, int, int, int]:
    """Exact pixel counts (tp, fp, fn, tn); tp+fp+fn+tn = width*height."""
    pred = require_mask(pred)
    gt = require_mask(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"mask dims differ: {pred.shape} vs {gt.shape}")
    p = pred.astype(bool)
    g = gt.astype(bool)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = pred.size - tp - fp - fn
    return tp, fp, fn, tn


def dice(pred: np.ndarray, gt: np.ndarray) -> float:
    """Dice overlap 2|P.G| / (|P|+|G|); 1.0 when both masks are empty."""
    tp, fp, fn, _ = confusion(pred, gt)
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 1.0
    return 2.0 * tp / denom


@dataclass(frozen=True)
class CellResult:
    dice: float | None = None
    tp: int | None = None
    fp: int | None = None
    fn: int | None = None
    tn: int | None = None
    time_s: float | None = None
    error: str | None = None

    def validate(self) -> None:
        if self.dice is not None and not 0.0 <= self.dice <= 1.0:
            raise ValueError("dice must be in [0, 1]")
        if None not in (self.dice, self.tp, self.fp, self.fn):
            denom = 2 * self.tp + self.fp + self.fn
            expected = 1.0 if denom == 0 else 2.0 * self.tp / denom
            if abs(expected - self.dice) > 5e-4:  # cells may carry 3-decimal dice
                raise ValueError(
                    f"dice {self.dice} inconsistent with counts ({expected:.6f})"
                )


@dataclass(frozen=True)
class EvalReport:
    images: tuple[str, ...]
    strategies: tuple[str, ...]
    cells: dict[tuple[str, str], CellResult]

    def cell(self, image: str, strategy: str) -> CellResult:
        return self.cells[(image, strategy)]

    def mean_dice(self, strategy: str) -> float | None:
        vals = [
            c.dice
            for (_, s), c in self.cells.items()
            if s == strategy and c.dice is not None
        ]
        return float(np.mean(vals)) if vals else None

    def mean_time(self, strategy: str) -> float | None:
        vals = [
            c.time_s
            for (_, s), c in self.cells.items()
            if s == strategy and c.time_s is not None
        ]
        return float(np.mean(vals)) if vals else None


def report_from_table(images, strategies, dice_rows, times=None) -> EvalReport:
    """Build a report from bare dice values (row per image) and optional
    per-strategy times; used to re-render externally published tables."""
    cells = {}
    for img, row in zip(images, dice_rows):
        for strat, value in zip(strategies, row):
            t = times.get(strat) if isinstance(times, dict) else None
            cells[(img, strat)] = CellResult(dice=value, time_s=t)
    return EvalReport(tuple(images), tuple(strategies), cells)


def run_benchmark(dataset, strategies) -> EvalReport:
    """Evaluate every (image, strategy) pair.

    dataset: iterable of (name, image, gt_mask); strategies: iterable of
    (name, runner) where runner(image) -> (mask, TimingRecord). Failures are
    recorded per cell and do not abort the run.
    """
    dataset = list(dataset)
    strategies = list(strategies)
    if not dataset:
        raise ValueError("benchmark dataset is empty")
    if not strategies:
        raise ValueError("benchmark needs at least one strategy")
    cells: dict[tuple[str, str], CellResult] = {}
    for image_name, image, gt in dataset:
        gt = require_mask(gt)
        for strat_name, runner in strategies:
            try:
                mask, timing = runner(image)
                tp, fp, fn, tn = confusion(mask, gt)
                cells[(image_name, strat_name)] = CellResult(
                    dice=dice(mask, gt), tp=tp, fp=fp, fn=fn, tn=tn, time_s=timing.total
                )
            except Exception as exc:  # error isolation per cell
                cells[(image_name, strat_name)] = CellResult(
                    error=f"{type(exc).__name__}: {exc}"
                )
    return EvalReport(
        tuple(name for name, _, _ in dataset),
        tuple(name for name, _ in strategies),
        cells,
    )


def _marks(values: list[float | None], better: str) -> dict[int, str]:
    """Map column index -> 'bold'/'underline' for the best and second best.

    Ties resolve by column order: with all-equal values the first occurrence
    is bold and the second underlined.
    """
    present = [(i, v) for i, v in enumerate(values) if v is not None]
    if not present:
        return {}
    reverse = better == "max"
    ordered = sorted(present, key=lambda iv: -iv[1] if reverse else iv[1])
    marks = {ordered[0][0]: "bold"}
    if len(ordered) > 1:
        marks[ordered[1][0]] = "underline"
    return marks


def _fmt(value: float | None, mark: str | None) -> str:
    if value is None:
        return "ERR"
    text = f"{value:.3f}"
    if mark == "bold":
        return f"**{text}**"
    if mark == "underline":
        return f"<u>{text}</u>"
    return text


def format_report(report: EvalReport, style: str = "markdown") -> str:
    """Render the report; 'markdown' marks best/second-best, 'csv' is raw cells."""
    if style == "csv":
        return _format_csv(report)
    if style != "markdown":
        raise ValueError(f"unknown report style {style!r}")

    lines = []
    header = ["image"] + list(report.strategies)
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "|".join([" --- "] * len(header)) + "|")
    for image in report.images:
        dices = [report.cell(image, s).dice for s in report.strategies]
        marks = _marks(dices, "max")
        row = [image] + [_fmt(d, marks.get(i)) for i, d in enumerate(dices)]
        lines.append("| " + " | ".join(row) + " |")
    mean_dices = [report.mean_dice(s) for s in report.strategies]
    marks = _marks(mean_dices, "max")
    lines.append(
        "| mean | "
        + " | ".join(_fmt(d, marks.get(i)) for i, d in enumerate(mean_dices))
        + " |"
    )

    lines.append("")
    lines.append("| method | " + " | ".join(report.strategies) + " |")
    lines.append("|" + "|".join([" --- "] * (len(report.strategies) + 1)) + "|")
    mean_times = [report.mean_time(s) for s in report.strategies]
    marks = _marks(mean_times, "min")
    lines.append(
        "| time (s) | "
        + " | ".join(_fmt(t, marks.get(i)) for i, t in enumerate(mean_times))
        + " |"
    )
    return "\n".join(lines) + "\n"


_CSV_FIELDS = ("image", "strategy", "dice", "tp", "fp", "fn", "tn", "time_s", "error")


def _format_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_FIELDS)
    for image in report.images:
        for strategy in report.strategies:
            c = report.cell(image, strategy)
            writer.writerow(
                [
                    image,
                    strategy,
                    "" if c.dice is None else f"{c.dice:.3f}",
                    "" if c.tp is None else c.tp,
                    "" if c.fp is None else c.fp,
                    "" if c.fn is None else c.fn,
                    "" if c.tn is None else c.tn,
                    "" if c.time_s is None else f"{c.time_s:.3f}",
                    c.error or "",
                ]
            )
    return buf.getvalue()


def parse_report_csv(text: str) -> EvalReport:
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if not rows or tuple(rows[0]) != _CSV_FIELDS:
        raise ValueError("not a wsibench report csv")
    images: list[str] = []
    strategies: list[str] = []
    cells = {}
    for row in rows[1:]:
        image, strategy, d, tp, fp, fn, tn, t, err = row
        if image not in images:
            images.append(image)
        if strategy not in strategies:
            strategies.append(strategy)
        cells[(image, strategy)] = CellResult(
            dice=float(d) if d else None,
            tp=int(tp) if tp else None,
            fp=int(fp) if fp else None,
            fn=int(fn) if fn else None,
            tn=int(tn) if tn else None,
            time_s=float(t) if t else None,
            error=err or None,
        )
    return EvalReport(tuple(images), tuple(strategies), cells)
