"""Synthetic short-axis phantoms, ROI extraction, dataset splits and stack files."""

from __future__ import annotations

import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import ndimage

from .functional import bilinear_matrix

RVS_MAGIC = b"RVSTACK1"
RVS_VERSION = 1
_RVS_HEADER = struct.Struct("<8sIIIIff")


class FormatError(ValueError):
    """Malformed stack or checkpoint file."""

    def __init__(self, message: str, offset: Optional[int] = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


@dataclass
class SliceStack:
    id: str
    slices: np.ndarray  # (S, 1, H, W) float32 in [0, 1], ordered base -> apex
    pixel_spacing: tuple[float, float] = (2.5, 2.5)  # (row mm, col mm)

    def __post_init__(self):
        if self.slices.ndim != 4 or self.slices.shape[1] != 1:
            raise ValueError(f"stack {self.id!r}: expected (S, 1, H, W), got {self.slices.shape}")


@dataclass
class MaskStack:
    id: str
    masks: np.ndarray  # (S, 1, H, W) uint8 in {0, 1}


@dataclass
class RoiBox:
    slice_index: int
    x0: int
    y0: int
    x1: int  # exclusive
    y1: int  # exclusive
    margin: int = 0

    @property
    def bounds(self) -> tuple[int, int, int, int]:
        return self.x0, self.y0, self.x1, self.y1


@dataclass
class DatasetManifest:
    train: list[str]
    val: list[str]
    test: list[str]
    fractions: tuple[float, float, float] = (0.70, 0.15, 0.15)
    seed: int = 0

    def split(self, name: str) -> list[str]:
        if name not in ("train", "val", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)


@dataclass
class Dataset:
    stacks: dict[str, SliceStack]
    masks: dict[str, MaskStack]
    manifest: Optional[DatasetManifest] = None
    ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.ids:
            self.ids = list(self.stacks)

    def pairs(self, split: Optional[str] = None) -> list[tuple[SliceStack, MaskStack]]:
        ids = self.ids if split is None else self.manifest.split(split)
        return [(self.stacks[i], self.masks[i]) for i in ids]


# -- phantoms -----------------------------------------------------------------

def _disk(h: int, w: int, cy: float, cx: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def _phantom_stack(rng: np.random.Generator, h: int, w: int, n_slices: int):
    scale = min(h, w) / 64.0
    r_base = rng.uniform(13.0, 16.0) * scale
    r_apex = rng.uniform(4.0, 5.5) * scale
    lv_r = rng.uniform(9.0, 11.0) * scale
    wall = 2.0 * scale
    cy = h / 2 + rng.uniform(-4, 4) * scale
    cx = w / 2 - rng.uniform(3, 7) * scale
    angle = rng.uniform(-0.4, 0.4)
    sep0 = rng.uniform(0.95, 1.1)
    rv_int, lv_int = rng.uniform(0.7, 0.9), rng.uniform(0.55, 0.75)
    myo_int, bg_int = rng.uniform(0.2, 0.3), rng.uniform(0.3, 0.45)
    texture = ndimage.gaussian_filter(rng.standard_normal((n_slices, h, w)), sigma=(0, 2 * scale, 2 * scale))
    texture /= texture.std() + 1e-12
    images = np.empty((n_slices, 1, h, w), dtype=np.float32)
    masks = np.empty((n_slices, 1, h, w), dtype=np.uint8)
    yy, xx = np.mgrid[0:h, 0:w]
    body = ((yy - h / 2) / (0.45 * h)) ** 2 + ((xx - w / 2) / (0.47 * w)) ** 2 <= 1
    for s in range(n_slices):
        t = s / (n_slices - 1)
        r = r_base + (r_apex - r_base) * t
        cy += rng.normal(0, 0.4 * scale)
        cx += rng.normal(0, 0.4 * scale)
        # the septum bulges into the RV less towards the apex, so the crescent rounds off
        lr = lv_r * (1 - 0.55 * t)
        sep = (r + lr) * (sep0 + 0.5 * t)
        ly, lx = cy + sep * math.sin(angle), cx + sep * math.cos(angle)
        rv = _disk(h, w, cy, cx, r)
        lv_outer = _disk(h, w, ly, lx, lr + wall)
        lv_pool = _disk(h, w, ly, lx, lr)
        mask = rv & ~lv_outer
        img = np.where(body, bg_int, 0.05) + 0.06 * texture[s]
        img = np.where(lv_outer, myo_int, img)
        img = np.where(lv_pool, lv_int + 0.03 * texture[s], img)
        img = np.where(mask, rv_int + 0.03 * texture[s], img)
        img = ndimage.gaussian_filter(img, 0.6 * scale) + rng.normal(0, 0.04, (h, w))
        images[s, 0] = np.clip(img, 0.0, 1.0)
        masks[s, 0] = mask
    return images, masks


def gen_phantom_dataset(
    n_stacks: int,
    size: tuple[int, int] = (64, 64),
    slices_per_stack: int = 10,
    seed: int = 0,
) -> tuple[list[SliceStack], list[MaskStack]]:
    """Generate RV-like crescent phantoms; stack ``i`` uses seed ``seed + i``."""
    h, w = size
    if h % 64 or w % 64 or h <= 0 or w <= 0:
        raise ValueError(f"phantom size {size} must be positive multiples of 64")
    if not 8 <= slices_per_stack <= 16:
        raise ValueError(f"slices_per_stack must be in [8, 16], got {slices_per_stack}")
    if n_stacks < 1:
        raise ValueError("n_stacks must be at least 1")
    spacing = (160.0 / h, 160.0 / w)
    stacks, masks = [], []
    for i in range(n_stacks):
        rng = np.random.default_rng(seed + i)
        img, msk = _phantom_stack(rng, h, w, slices_per_stack)
        sid = f"phantom_{seed}_{i:04d}"
        stacks.append(SliceStack(sid, img, spacing))
        masks.append(MaskStack(sid, msk))
    return stacks, masks


# -- ROI ----------------------------------------------------------------------

def extract_roi(mask_slice: np.ndarray, margin: int = 4, slice_index: int = 0) -> Optional[RoiBox]:
    """Tight bounding box of the foreground grown by ``margin``; ``None`` if the slice is empty."""
    m = np.asarray(mask_slice)
    if m.ndim == 3:
        m = m[0]
    rows = np.flatnonzero(m.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(m.any(axis=0))
    h, w = m.shape
    return RoiBox(
        slice_index,
        max(int(cols[0]) - margin, 0),
        max(int(rows[0]) - margin, 0),
        min(int(cols[-1]) + 1 + margin, w),
        min(int(rows[-1]) + 1 + margin, h),
        margin,
    )


def _nearest_index(src: int, dst: int) -> np.ndarray:
    return np.minimum(np.floor((np.arange(dst) + 0.5) * src / dst).astype(int), src - 1)


def crop_resize(arr: np.ndarray, box: RoiBox, target: tuple[int, int], mode: str = "bilinear") -> np.ndarray:
    """Crop ``box`` out of the last two axes and resize to ``target``.

    ``mode='nearest'`` keeps masks binary; ``'bilinear'`` is for images.
    """
    if box.x1 <= box.x0 or box.y1 <= box.y0:
        raise ValueError(f"degenerate ROI box {box.bounds}")
    crop = arr[..., box.y0 : box.y1, box.x0 : box.x1]
    ch, cw = crop.shape[-2:]
    if mode == "nearest":
        return crop[..., _nearest_index(ch, target[0])[:, None], _nearest_index(cw, target[1])[None, :]]
    if mode == "bilinear":
        ry = bilinear_matrix(ch, target[0])
        rx = bilinear_matrix(cw, target[1])
        return (ry @ crop.astype(np.float64) @ rx.T).astype(arr.dtype if arr.dtype.kind == "f" else np.float32)
    raise ValueError(f"unknown resize mode {mode!r}")


def resize_nearest(arr: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    h, w = arr.shape[-2:]
    return crop_resize(arr, RoiBox(0, 0, 0, w, h), target, "nearest")


def roi_stream(stack: SliceStack, mask: MaskStack, target: tuple[int, int], margin: int = 4):
    """ROI crops of every non-empty slice: (images, masks, boxes), base -> apex order kept."""
    imgs, msks, boxes = [], [], []
    for s in range(mask.masks.shape[0]):
        box = extract_roi(mask.masks[s, 0], margin, s)
        if box is None:
            continue
        imgs.append(crop_resize(stack.slices[s], box, target, "bilinear"))
        msks.append(crop_resize(mask.masks[s], box, target, "nearest"))
        boxes.append(box)
    if not boxes:
        return None
    return np.stack(imgs).astype(stack.slices.dtype), np.stack(msks), boxes


# -- splits -------------------------------------------------------------------

def split_dataset(
    ids: Sequence[str],
    fractions: tuple[float, float, float] = (0.70, 0.15, 0.15),
    seed: int = 0,
) -> DatasetManifest:
    """Seeded shuffle, then contiguous train/val/test partition.

    Validation and test sizes are rounded down; the remainder goes to train.
    """
    ids = list(ids)
    if len(ids) < 3:
        raise ValueError(f"need at least 3 ids to split, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate ids")
    if abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError(f"split fractions {fractions} must be non-negative and sum to 1")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n = len(ids)
    n_val = int(math.floor(fractions[1] * n + 1e-9))
    n_test = int(math.floor(fractions[2] * n + 1e-9))
    n_train = n - n_val - n_test
    return DatasetManifest(
        shuffled[:n_train],
        shuffled[n_train : n_train + n_val],
        shuffled[n_train + n_val :],
        tuple(fractions),
        seed,
    )


def write_manifest(manifest: DatasetManifest, path) -> None:
    lines = [f"{split}\t{sid}\n" for split in ("train", "val", "test") for sid in manifest.split(split)]
    Path(path).write_text("".join(lines))


def read_manifest(path) -> DatasetManifest:
    splits: dict[str, list[str]] = {"train": [], "val": [], "test": []}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            split, sid = line.split("\t")
            splits[split].append(sid)
        except (ValueError, KeyError):
            raise FormatError(f"{path}: bad manifest line {n}: {line!r}") from None
    return DatasetManifest(splits["train"], splits["val"], splits["test"])


# -- stack files --------------------------------------------------------------

def stack_io_save(stack: SliceStack, mask: MaskStack, path) -> None:
    s, _, h, w = stack.slices.shape
    if mask.masks.shape != stack.slices.shape:
        raise ValueError(f"mask shape {mask.masks.shape} differs from stack shape {stack.slices.shape}")
    header = _RVS_HEADER.pack(RVS_MAGIC, RVS_VERSION, s, h, w, *stack.pixel_spacing)
    body = stack.slices.astype("<f4").tobytes() + mask.masks.astype(np.uint8).tobytes()
    Path(path).write_bytes(header + body)


def stack_io_load(path) -> tuple[SliceStack, MaskStack]:
    raw = Path(path).read_bytes()
    if len(raw) < _RVS_HEADER.size:
        raise FormatError(f"{path}: truncated header", len(raw))
    magic, version, s, h, w, sy, sx = _RVS_HEADER.unpack_from(raw)
    if magic != RVS_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}", 0)
    if version != RVS_VERSION:
        raise FormatError(f"{path}: unsupported version {version}", 8)
    n = s * h * w
    expected = _RVS_HEADER.size + 5 * n
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, file has {len(raw)}", min(len(raw), expected))
    off = _RVS_HEADER.size
    img = np.frombuffer(raw, dtype="<f4", count=n, offset=off).astype(np.float32).reshape(s, 1, h, w)
    msk = np.frombuffer(raw, dtype=np.uint8, count=n, offset=off + 4 * n).reshape(s, 1, h, w).copy()
    if msk.max(initial=0) > 1:
        raise FormatError(f"{path}: mask payload is not binary", off + 4 * n)
    sid = Path(path).stem
    return SliceStack(sid, img, (float(sy), float(sx))), MaskStack(sid, msk)


def save_dataset(stacks: Iterable[SliceStack], masks: Iterable[MaskStack], manifest: DatasetManifest, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for st, mk in zip(stacks, masks):
        stack_io_save(st, mk, out / f"{st.id}.rvs")
    write_manifest(manifest, out / "manifest.txt")


def load_dataset(data_dir) -> Dataset:
    d = Path(data_dir)
    manifest = read_manifest(d / "manifest.txt")
    stacks, masks = {}, {}
    for sid in manifest.train + manifest.val + manifest.test:
        st, mk = stack_io_load(d / f"{sid}.rvs")
        stacks[sid], masks[sid] = st, mk
    return Dataset(stacks, masks, manifest)


def make_phantom_dataset(n_stacks: int, size=(64, 64), slices_per_stack: int = 10, seed: int = 0) -> Dataset:
    stacks, masks = gen_phantom_dataset(n_stacks, size, slices_per_stack, seed)
    manifest = split_dataset([s.id for s in stacks], seed=seed)
    return Dataset({s.id: s for s in stacks}, {m.id: m for m in masks}, manifest)


# -- PGM export ---------------------------------------------------------------

def write_pgm(path, image: np.ndarray) -> None:
    """8-bit binary PGM (P5). Float input is taken to be in [0, 1]."""
    img = np.asarray(image)
    if img.dtype.kind == "f":
        img = np.clip(np.round(img * 255), 0, 255)
    img = img.astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if m is None:
        raise FormatError(f"{path}: not a binary PGM", 0)
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PGM supported", m.start(3))
    return np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=m.end()).reshape(h, w)


def boundary(mask: np.ndarray) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    return m & ~ndimage.binary_erosion(m, border_value=0)


def overlay(image: np.ndarray, pred_mask: np.ndarray) -> np.ndarray:
    """Grey image with the predicted contour drawn at full intensity."""
    out = np.clip(np.round(np.asarray(image, dtype=np.float64) * 200), 0, 255).astype(np.uint8)
    out[boundary(pred_mask)] = 255
    return out
