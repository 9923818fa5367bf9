"""Score a trained generator on one split and export the report."""

from __future__ import annotations

from pathlib import Path
from typing import Optional

from .data import Dataset, overlay, write_pgm
from .metrics import MetricsReport, score_stack, summarize, write_report
from .networks import Generator
from .training import predict_masks


def evaluate(
    gen: Generator,
    dataset: Dataset,
    split: str = "test",
    out_dir=None,
    resize_note: Optional[str] = None,
    overlays: bool = True,
) -> MetricsReport:
    """Per-slice Dice/HD over ``split``; with ``out_dir`` writes CSVs and PGM overlays."""
    pairs = dataset.pairs(split)
    if not pairs:
        raise ValueError(f"split {split!r} is empty")
    slices = []
    overlay_dir = Path(out_dir) / "overlays" if out_dir is not None and overlays else None
    if overlay_dir is not None:
        overlay_dir.mkdir(parents=True, exist_ok=True)
    for stack, mask in pairs:
        pred = predict_masks(gen, stack)
        slices.extend(score_stack(stack.id, pred, mask.masks, stack.pixel_spacing))
        if overlay_dir is not None:
            for s in range(pred.shape[0]):
                write_pgm(overlay_dir / f"{stack.id}_s{s:02d}.pgm", overlay(stack.slices[s, 0], pred[s, 0]))
    report = summarize(slices)
    if out_dir is not None:
        write_report(report, out_dir, resize_note)
    return report
