"""Dice, Hausdorff distance, regional aggregation and area regression."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

REGIONS = ("top", "mid", "low")


def _binary(m, name: str) -> np.ndarray:
    a = np.asarray(m)
    if a.dtype != bool:
        if not np.isin(a, (0, 1)).all():
            raise ValueError(f"{name}: mask is not binary")
        a = a.astype(bool)
    return a


def dice(a, b) -> float:
    """2|A & B| / (|A| + |B|); two empty masks score 1."""
    a, b = _binary(a, "dice"), _binary(b, "dice")
    if a.shape != b.shape:
        raise ValueError(f"dice: shapes {a.shape} and {b.shape} differ")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def image_diagonal(shape: tuple[int, int], spacing=(1.0, 1.0)) -> float:
    return math.hypot(shape[0] * spacing[0], shape[1] * spacing[1])


def hausdorff(a, b, spacing=(1.0, 1.0)) -> float:
    """Symmetric Hausdorff distance in mm between the pixel sets of two masks.

    Both empty gives 0; exactly one empty gives the image diagonal.
    """
    a, b = _binary(a, "hausdorff"), _binary(b, "hausdorff")
    if a.shape != b.shape:
        raise ValueError(f"hausdorff: shapes {a.shape} and {b.shape} differ")
    na, nb = a.any(), b.any()
    if not na and not nb:
        return 0.0
    if not na or not nb:
        return image_diagonal(a.shape, spacing)
    scale = np.asarray(spacing, dtype=np.float64)
    pa = np.argwhere(a) * scale
    pb = np.argwhere(b) * scale
    d_ab = cKDTree(pb).query(pa, k=1)[0].max()
    d_ba = cKDTree(pa).query(pb, k=1)[0].max()
    return float(max(d_ab, d_ba))


def assign_regions(n_slices: int) -> list[str]:
    """Base-to-apex thirds: ceil(S/3) top, floor(S/3) low, the rest mid."""
    if n_slices < 3:
        raise ValueError(f"need at least 3 slices to assign regions, got {n_slices}")
    top = -(-n_slices // 3)
    low = n_slices // 3
    return ["top"] * top + ["mid"] * (n_slices - top - low) + ["low"] * low


def area_regression(manual_areas: Sequence[float], auto_areas: Sequence[float]) -> tuple[float, float, float]:
    """OLS fit auto = slope * manual + intercept, plus Pearson R."""
    x = np.asarray(manual_areas, dtype=np.float64)
    y = np.asarray(auto_areas, dtype=np.float64)
    if x.shape != y.shape or x.size < 3:
        raise ValueError("area_regression needs two equal-length sequences of at least 3 values")
    dx = x - x.mean()
    sxx = float(dx @ dx)
    if sxx == 0:
        raise ValueError("manual areas are constant; R is undefined")
    dy = y - y.mean()
    sxy = float(dx @ dy)
    syy = float(dy @ dy)
    slope = sxy / sxx
    intercept = float(y.mean() - slope * x.mean())
    r = sxy / math.sqrt(sxx * syy) if syy > 0 else float("nan")
    return slope, intercept, r


@dataclass
class SliceMetrics:
    stack_id: str
    slice_index: int
    dice: float
    hausdorff_mm: float
    region: str
    manual_area_mm2: float = 0.0
    auto_area_mm2: float = 0.0
    hd_empty_sentinel: bool = False


@dataclass
class MetricsReport:
    slices: list[SliceMetrics]
    summary: dict[str, dict[str, float]] = field(default_factory=dict)
    slope: float = float("nan")
    intercept: float = float("nan")
    r: float = float("nan")

    def row(self, region: str) -> dict[str, float]:
        return self.summary[region]


def _mean_sd(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return float("nan"), float("nan")
    return float(v.mean()), float(v.std())


def summarize(slices: list[SliceMetrics]) -> MetricsReport:
    report = MetricsReport(slices)
    for region in REGIONS + ("all",):
        sel = [s for s in slices if region == "all" or s.region == region]
        di_m, di_sd = _mean_sd([s.dice for s in sel])
        hd_m, hd_sd = _mean_sd([s.hausdorff_mm for s in sel])
        report.summary[region] = {"n": len(sel), "di_mean": di_m, "di_sd": di_sd, "hd_mean": hd_m, "hd_sd": hd_sd}
    manual = [s.manual_area_mm2 for s in slices]
    auto = [s.auto_area_mm2 for s in slices]
    try:
        report.slope, report.intercept, report.r = area_regression(manual, auto)
    except ValueError:
        pass
    return report


def score_stack(stack_id: str, pred: np.ndarray, truth: np.ndarray, spacing=(1.0, 1.0)) -> list[SliceMetrics]:
    """Per-slice metrics for binary (S, [1,] H, W) prediction and ground truth."""
    pred = np.asarray(pred).reshape(truth.shape[0], *truth.shape[-2:])
    truth = np.asarray(truth).reshape(pred.shape)
    regions = assign_regions(pred.shape[0])
    px_area = spacing[0] * spacing[1]
    out = []
    for s in range(pred.shape[0]):
        hd_sentinel = bool(pred[s].any()) != bool(truth[s].any())
        out.append(
            SliceMetrics(
                stack_id, s, dice(pred[s], truth[s]), hausdorff(pred[s], truth[s], spacing), regions[s],
                float(truth[s].sum()) * px_area, float(pred[s].sum()) * px_area, hd_sentinel,
            )
        )
    return out


def write_report(report: MetricsReport, out_dir, resize_note: Optional[str] = None) -> tuple[Path, Path]:
    """Write ``report.csv`` (per slice) and ``summary.csv`` (per region)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    per_slice = out / "report.csv"
    with per_slice.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["stack_id", "slice", "region", "dice", "hd_mm"])
        for s in report.slices:
            w.writerow([s.stack_id, s.slice_index, s.region, f"{s.dice:.6f}", f"{s.hausdorff_mm:.6f}"])
    summary = out / "summary.csv"
    with summary.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["region", "di_mean", "di_sd", "hd_mean", "hd_sd"])
        for region in REGIONS + ("all",):
            row = report.summary[region]
            w.writerow([region] + [f"{row[k]:.6f}" for k in ("di_mean", "di_sd", "hd_mean", "hd_sd")])
    notes = [
        f"# area regression: slope={report.slope:.6f} intercept={report.intercept:.6f} R={report.r:.6f}",
        "# conventions: both-empty Dice = 1; one-empty HD = image diagonal (mm); SD is the population SD",
    ]
    if resize_note:
        notes.append(f"# {resize_note}")
    (out / "notes.txt").write_text("\n".join(notes) + "\n")
    return per_slice, summary
