"""Synthetic location-bias datasets.

``quadrant``: the same random-texture patch appears once in the top-left and
once in the bottom-right corner of a black canvas (optionally surrounded by a
black border), so only its absolute position tells the classes apart.

``redgreen``: a red and a green 4x4 block on a black 32x32 image; the label is
their left/right order.  Class 0 sits near the top and class 1 near the
bottom during training; the ``dissimilar`` test set mirrors the rows so the
position bias is reversed while the order cue is untouched.

Every image is rendered from a placement record, so any sample can be
re-rendered at an offset without inventing pixels.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, CorruptFileError
from .tensor import Rng, derive_stream

SPLIT_STREAMS = {"train": 1, "val": 2, "test": 3}
RG_SIZE = 32
RG_BLOCK = 4
# class-0 blocks start on row RG_OFFSET + d (block centres on rows 3.5..10.5,
# within reach of the top border); class-1 rows are the mirror, 28 - (RG_OFFSET + d)
RG_OFFSET = 6
# inclusive range of d; eight rows make every stride-8 phase equally likely
RG_JITTER = (-4, 3)


class ShiftMode(str, enum.Enum):
    ZERO_FILL = "zero_fill"
    CYCLIC = "cyclic"
    CROP_FROM_CANVAS = "crop_from_canvas"


@dataclass
class LabeledDataset:
    images: np.ndarray
    labels: np.ndarray
    manifest: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def records(self) -> List[dict]:
        return self.manifest.get("records", [])

    def render(self, index: int, dy: int = 0, dx: int = 0) -> np.ndarray:
        """Re-draw sample ``index`` with its content moved by ``(dy, dx)``."""
        return render_record(self.manifest, self.records[index], dy, dx)

    def content_box(self, index: int):
        """``(top, left, bottom, right)`` of all non-background content."""
        return _content_box(self.manifest, self.records[index])

    def feasible_diagonal_shifts(self, index: int, max_shift: int) -> List[int]:
        """Diagonal offsets ``d`` in ``[-max_shift, max_shift]`` that keep all
        content of sample ``index`` inside the frame."""
        top, left, bottom, right = self.content_box(index)
        H, W = self.images.shape[2:]
        lo = max(-top, -left, -max_shift)
        hi = min(H - bottom, W - right, max_shift)
        return list(range(lo, hi + 1))

    def subset(self, indices) -> "LabeledDataset":
        indices = list(indices)
        manifest = dict(self.manifest)
        manifest["records"] = [self.records[i] for i in indices]
        return LabeledDataset(self.images[indices], self.labels[indices], manifest)


# -- quadrant ---------------------------------------------------------------

def _quadrant_patch(manifest: dict, patch_id: int) -> np.ndarray:
    p = manifest["params"]
    rng = Rng(manifest["seed"], derive_stream(manifest["stream"], patch_id))
    return rng.random((p["channels"], p["patch"], p["patch"]))


def gen_quadrant(seed: int, n_per_class: int, canvas: int = 32, patch: int = 8, border: int = 0,
                 channels: int = 3, stream: int = 0) -> LabeledDataset:
    """Paired top-left / bottom-right patch images.

    Each patch is drawn once and rendered into both classes; samples alternate
    class 0, class 1 for successive patches.
    """
    if canvas < 2 * patch or patch < 1:
        raise ConfigError(f"canvas {canvas} must hold two {patch}px patches side by side")
    if border < 0 or n_per_class < 0:
        raise ConfigError("border and n_per_class must be non-negative")
    size = canvas + 2 * border
    corners = {0: border, 1: border + canvas - patch}
    records = []
    for pid in range(n_per_class):
        for label in (0, 1):
            records.append({"uid": len(records), "label": label, "patch": pid,
                            "top": corners[label], "left": corners[label]})
    manifest = {
        "task": "quadrant", "seed": int(seed), "stream": int(stream),
        "params": {"n_per_class": n_per_class, "canvas": canvas, "patch": patch,
                   "border": border, "channels": channels, "size": size},
        "patch_source": "uniform random texture in [0,1) (stand-in for natural image crops)",
        "records": records,
    }
    images = np.zeros((len(records), channels, size, size))
    patches = {}
    for i, r in enumerate(records):
        if r["patch"] not in patches:
            patches[r["patch"]] = _quadrant_patch(manifest, r["patch"])
        images[i, :, r["top"]:r["top"] + patch, r["left"]:r["left"] + patch] = patches[r["patch"]]
    labels = np.array([r["label"] for r in records], dtype=np.int64)
    return LabeledDataset(images, labels, manifest)


# -- red/green --------------------------------------------------------------

def _rg_pairs() -> List[tuple]:
    """All (left_col, right_col) with both blocks inside and at least one
    empty column between them."""
    hi = RG_SIZE - RG_BLOCK
    return [(l, r) for l in range(hi + 1) for r in range(l + RG_BLOCK + 1, hi + 1)]


def _rg_records(seed: int, stream: int, n: int, shared_row: bool, jitter, offset) -> List[dict]:
    if n % 2:
        raise ConfigError(f"split sizes must be even for an exact class balance, got {n}")
    pairs = _rg_pairs()
    records = []
    for uid in range(n):
        label = uid % 2
        rng = Rng(seed, derive_stream(stream, uid))
        left, right = pairs[rng.choice(len(pairs))]
        # cycle d within each class so every row (and so every phase of the
        # network's total stride) is equally represented
        span = jitter[1] - jitter[0] + 1
        row_a = offset + jitter[0] + (uid // 2) % span
        row_b = row_a if shared_row else offset + int(rng.integers(*jitter))
        if label == 1:
            row_a, row_b = RG_SIZE - RG_BLOCK - row_a, RG_SIZE - RG_BLOCK - row_b
        red, green = ((row_a, left), (row_b, right)) if label == 0 else ((row_b, right), (row_a, left))
        records.append({"uid": uid, "label": label, "red": list(red), "green": list(green)})
    return records


def reflect_rows(records: List[dict]) -> List[dict]:
    """Mirror block rows top-to-bottom (``row -> 28 - row``); an involution."""
    flip = RG_SIZE - RG_BLOCK
    out = []
    for r in records:
        out.append({**r, "red": [flip - r["red"][0], r["red"][1]],
                    "green": [flip - r["green"][0], r["green"][1]]})
    return out


def _rg_dataset(seed, stream, split, variant, records, shared_row, jitter, offset) -> LabeledDataset:
    manifest = {
        "task": "redgreen", "seed": int(seed), "stream": int(stream), "split": split,
        "variant": variant,
        "params": {"size": RG_SIZE, "block": RG_BLOCK, "offset": offset, "jitter": list(jitter),
                   "min_gap": 1, "shared_row": shared_row, "channels": 3,
                   "horizontal": "uniform over non-overlapping (left, right) column pairs"},
        "records": records,
    }
    images = np.stack([render_record(manifest, r)[0] for r in records]) if records else \
        np.zeros((0, 3, RG_SIZE, RG_SIZE))
    labels = np.array([r["label"] for r in records], dtype=np.int64)
    return LabeledDataset(images, labels, manifest)


def gen_red_green(seed: int, n_train: int = 2000, n_val: int = 1000, n_test: int = 1000,
                  variant: str = "similar", shared_row: bool = True,
                  jitter=RG_JITTER, offset: int = RG_OFFSET) -> Dict[str, LabeledDataset]:
    """Train/val/test splits; ``variant`` selects the test set's position bias.

    The dissimilar test set reuses the similar test placements with mirrored
    rows, so the two test sets are in one-to-one correspondence.
    """
    if variant not in ("similar", "dissimilar"):
        raise ConfigError(f"variant must be 'similar' or 'dissimilar', got {variant!r}")
    jitter = (int(jitter[0]), int(jitter[1]))
    if jitter[0] > jitter[1] or offset + jitter[0] < 0 or offset + jitter[1] > RG_SIZE // 2 - RG_BLOCK:
        raise ConfigError(f"jitter {jitter} must keep each class in its own half of the image")
    out = {}
    for split, n in (("train", n_train), ("val", n_val), ("test", n_test)):
        stream = SPLIT_STREAMS[split]
        recs = _rg_records(seed, stream, n, shared_row, jitter, offset)
        v = "similar"
        if split == "test" and variant == "dissimilar":
            recs, v = reflect_rows(recs), "dissimilar"
        out[split] = _rg_dataset(seed, stream, split, v, recs, shared_row, jitter, offset)
    return out


# -- rendering and shifts ---------------------------------------------------

def _content_box(manifest: dict, rec: dict):
    if manifest["task"] == "quadrant":
        p = manifest["params"]["patch"]
        return rec["top"], rec["left"], rec["top"] + p, rec["left"] + p
    b = manifest["params"]["block"]
    rows = [rec["red"][0], rec["green"][0]]
    cols = [rec["red"][1], rec["green"][1]]
    return min(rows), min(cols), max(rows) + b, max(cols) + b


def render_record(manifest: dict, rec: dict, dy: int = 0, dx: int = 0) -> np.ndarray:
    """Draw one record as a ``(1, C, H, W)`` tensor, content offset by ``(dy, dx)``."""
    top, left, bottom, right = _content_box(manifest, rec)
    size = manifest["params"]["size"]
    if top + dy < 0 or left + dx < 0 or bottom + dy > size or right + dx > size:
        raise ConfigError(f"shift ({dy}, {dx}) moves sample {rec['uid']} out of the canvas")
    if manifest["task"] == "quadrant":
        p = manifest["params"]
        img = np.zeros((1, p["channels"], size, size))
        patch = _quadrant_patch(manifest, rec["patch"])
        img[0, :, rec["top"] + dy:rec["top"] + dy + p["patch"],
            rec["left"] + dx:rec["left"] + dx + p["patch"]] = patch
        return img
    b = manifest["params"]["block"]
    img = np.zeros((1, 3, size, size))
    for ch, key in ((0, "red"), (1, "green")):
        r, c = rec[key]
        img[0, ch, r + dy:r + dy + b, c + dx:c + dx + b] = 1.0
    return img


def shift_image(x: np.ndarray, dy: int, dx: int, mode=ShiftMode.ZERO_FILL, *,
                dataset: Optional[LabeledDataset] = None, index: Optional[int] = None,
                max_shift: Optional[int] = None) -> np.ndarray:
    """Translate image content by ``(dy, dx)`` pixels (positive = down/right).

    ``crop_from_canvas`` re-renders sample ``index`` of ``dataset`` instead of
    moving pixels of ``x``.
    """
    mode = ShiftMode(mode)
    H, W = x.shape[2:]
    limit_h, limit_w = (H, W) if max_shift is None else (max_shift, max_shift)
    if abs(dy) > limit_h or abs(dx) > limit_w:
        raise ConfigError(f"shift ({dy}, {dx}) outside the allowed range")
    if mode is ShiftMode.CYCLIC:
        return np.roll(x, (dy, dx), axis=(2, 3))
    if mode is ShiftMode.CROP_FROM_CANVAS:
        if dataset is None or index is None:
            raise ConfigError("crop_from_canvas needs the dataset and sample index")
        return dataset.render(index, dy, dx)
    out = np.zeros_like(x)
    src_h = slice(max(0, -dy), min(H, H - dy))
    dst_h = slice(max(0, dy), min(H, H + dy))
    src_w = slice(max(0, -dx), min(W, W - dx))
    dst_w = slice(max(0, dx), min(W, W + dx))
    out[:, :, dst_h, dst_w] = x[:, :, src_h, src_w]
    return out


# -- persistence ------------------------------------------------------------

def save_dataset(ds: LabeledDataset, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "manifest.json").write_text(json.dumps(ds.manifest, sort_keys=True, indent=1) + "\n")
    T.save(ds.images, d / "images.bt")
    with open(d / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "label"])
        for i, lab in enumerate(ds.labels):
            w.writerow([i, int(lab)])
    return d


def load_dataset(directory) -> LabeledDataset:
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
    except ValueError as exc:
        raise CorruptFileError(f"bad manifest in {d}: {exc}") from exc
    images = T.load(d / "images.bt")
    with open(d / "labels.csv", newline="") as fh:
        labels = np.array([int(row["label"]) for row in csv.DictReader(fh)], dtype=np.int64)
    if labels.shape[0] != images.shape[0]:
        raise CorruptFileError(f"{d}: {images.shape[0]} images but {labels.shape[0]} labels")
    return LabeledDataset(images, labels, manifest)
