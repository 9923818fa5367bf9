"""
Synthetic short-axis stacks and ROI crops
=========================================

Generate a few crescent phantoms, look at how the foreground shrinks from
base to apex, and cut the ground-truth bounding boxes used by the local
generator. PGM files land in ``demo_out/phantoms``.
"""

from pathlib import Path

import numpy as np

from roigan.data import extract_roi, make_phantom_dataset, overlay, roi_stream, write_pgm

out = Path("demo_out/phantoms")
out.mkdir(parents=True, exist_ok=True)

ds = make_phantom_dataset(10, size=(64, 64), slices_per_stack=10, seed=1)
print("split sizes:", {k: len(ds.manifest.split(k)) for k in ("train", "val", "test")})

stack, mask = ds.pairs("train")[0]
areas = mask.masks.reshape(10, -1).sum(axis=1)
print("foreground pixels base -> apex:", areas.tolist())

# the ROI is the tight box around the mask plus a 4 pixel margin
box = extract_roi(mask.masks[0, 0], margin=4)
print("slice 0 box (x0, y0, x1, y1):", box.bounds)

imgs, msks, boxes = roi_stream(stack, mask, target=(64, 64))
print("ROI stream:", imgs.shape, "crops, masks binary:", set(np.unique(msks)) <= {0, 1})

for s in (0, 5, 9):
    write_pgm(out / f"slice{s}.pgm", stack.slices[s, 0])
    write_pgm(out / f"slice{s}_contour.pgm", overlay(stack.slices[s, 0], mask.masks[s, 0]))
    write_pgm(out / f"slice{s}_roi.pgm", imgs[s, 0])
print("wrote", len(list(out.glob("*.pgm"))), "PGMs to", out)
