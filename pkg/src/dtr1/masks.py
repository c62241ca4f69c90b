"""Binary masks (run-length encoded), depth maps, and depth statistics.

Masks are encoded row-major as alternating counts of zeros and ones,
always starting with a zero-count (which may be 0). Mask files are plain
text: a version line, a `width height` line, and the run counts.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _kernels

MASK_FILE_VERSION = "dtr1-mask/1"


class MaskError(ValueError):
    pass


@dataclass(frozen=True)
class BinaryMask:
    width: int
    height: int
    runs: tuple[int, ...]

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise MaskError("mask dimensions must be positive")
        if any(c < 0 for c in self.runs):
            raise MaskError("run counts must be non-negative")
        if sum(self.runs) != self.width * self.height:
            raise MaskError(
                f"run counts sum to {sum(self.runs)}, expected {self.width * self.height}"
            )

    def decode(self) -> np.ndarray:
        """Pixel grid of shape (height, width), dtype uint8."""
        values = np.resize(np.array([0, 1], dtype=np.uint8), len(self.runs))
        flat = np.repeat(values, self.runs)
        return np.ascontiguousarray(flat.reshape(self.height, self.width))

    @property
    def pixel_count(self) -> int:
        return int(sum(self.runs[1::2]))

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height, "runs": list(self.runs)}

    @classmethod
    def from_dict(cls, data: dict) -> "BinaryMask":
        return cls(
            width=int(data["width"]),
            height=int(data["height"]),
            runs=tuple(int(c) for c in data["runs"]),
        )


def mask_encode(grid) -> BinaryMask:
    arr = np.asarray(grid)
    if arr.ndim != 2:
        raise MaskError("mask grid must be two-dimensional")
    if arr.dtype == bool:
        arr = arr.astype(np.uint8)
    if not np.isin(arr, (0, 1)).all():
        raise MaskError("mask grid values must be 0 or 1")
    height, width = arr.shape
    flat = arr.ravel().astype(np.uint8)
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0] == 1:
        runs = [0] + runs
    return BinaryMask(width=width, height=height, runs=tuple(int(r) for r in runs))


def mask_decode(mask: BinaryMask) -> np.ndarray:
    return mask.decode()


def mask_bbox(mask: BinaryMask) -> tuple[int, int, int, int]:
    """Tight (x_min, y_min, x_max, y_max), half-open on the max edges."""
    grid = mask.decode()
    ys, xs = np.nonzero(grid)
    if ys.size == 0:
        raise MaskError("empty mask has no bounding box")
    return int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1


def save_mask(mask: BinaryMask, path: str | Path) -> None:
    lines = [
        MASK_FILE_VERSION,
        f"{mask.width} {mask.height}",
        " ".join(str(c) for c in mask.runs),
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_mask(path: str | Path) -> BinaryMask:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if len(lines) < 3 or lines[0].strip() != MASK_FILE_VERSION:
        raise MaskError(f"not a {MASK_FILE_VERSION} file: {path}")
    try:
        width, height = (int(tok) for tok in lines[1].split())
        runs = tuple(int(tok) for tok in lines[2].split())
    except ValueError as err:
        raise MaskError(f"malformed mask file {path}: {err}") from err
    return BinaryMask(width=width, height=height, runs=runs)


class DepthMap:
    """Dense relative-depth values, row-major, one per pixel."""

    def __init__(self, width: int, height: int, values):
        arr = np.asarray(values, dtype=np.float64)
        if arr.size != width * height:
            raise MaskError(f"depth map has {arr.size} values, expected {width * height}")
        if not np.isfinite(arr).all():
            raise MaskError("depth values must be finite")
        self.width = width
        self.height = height
        self.values = np.ascontiguousarray(arr.reshape(height, width))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, DepthMap)
            and self.width == other.width
            and self.height == other.height
            and np.array_equal(self.values, other.values)
        )

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "values": self.values.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DepthMap":
        return cls(int(data["width"]), int(data["height"]), data["values"])


@dataclass(frozen=True)
class DepthStats:
    mean: float
    std: float
    min: float
    max: float
    pixel_count: int

    def __post_init__(self):
        if self.pixel_count < 1:
            raise MaskError("depth statistics require at least one pixel")
        if not (self.min <= self.mean <= self.max):
            raise MaskError("inconsistent depth statistics: min <= mean <= max violated")
        if self.std < 0:
            raise MaskError("standard deviation cannot be negative")

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std": self.std,
            "min": self.min,
            "max": self.max,
            "pixel_count": self.pixel_count,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DepthStats":
        return cls(
            mean=float(data["mean"]),
            std=float(data["std"]),
            min=float(data["min"]),
            max=float(data["max"]),
            pixel_count=int(data["pixel_count"]),
        )


def depth_stats(mask: BinaryMask, depth: DepthMap) -> DepthStats:
    """Mean, population std, min, max of depth over the mask's set pixels."""
    if (mask.width, mask.height) != (depth.width, depth.height):
        raise MaskError(
            f"dimension mismatch: mask {mask.width}x{mask.height} "
            f"vs depth {depth.width}x{depth.height}"
        )
    if mask.pixel_count == 0:
        raise MaskError("cannot compute depth statistics over an empty mask")
    count, mean, std, lo, hi = _kernels.masked_depth_stats(mask.decode(), depth.values)
    return DepthStats(mean=mean, std=std, min=lo, max=hi, pixel_count=count)
