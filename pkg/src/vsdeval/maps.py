"""Per-pixel image types: depth maps, distance maps and visibility masks.

Arrays are indexed ``[v, u]`` (row, column). Invalid pixels store 0 and are
excluded from every statistic.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch


def _freeze(a):
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class _ValueMap:
    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        valid = np.array(self.valid, dtype=bool)
        if values.ndim != 2 or values.shape != valid.shape:
            raise DimensionMismatch(f"values {values.shape} and validity {valid.shape} must be equal 2-D shapes")
        bad = valid & ~(values > 0)
        if np.any(bad):
            raise ValueError(f"{int(bad.sum())} valid pixels have non-positive values")
        values[~valid] = 0.0
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "valid", _freeze(valid))

    @classmethod
    def from_array(cls, values):
        """Wrap a raw array; zero, negative and non-finite entries become invalid."""
        a = np.asarray(values, dtype=np.float64)
        valid = np.isfinite(a) & (a > 0)
        return cls(np.where(valid, a, 0.0), valid)

    @classmethod
    def empty(cls, height: int, width: int):
        return cls(np.zeros((height, width)), np.zeros((height, width), dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return bool(np.array_equal(self.values, other.values) and np.array_equal(self.valid, other.valid))


class DepthMap(_ValueMap):
    """Per-pixel Z coordinate of the observed or rendered surface (mm)."""


class DistanceMap(_ValueMap):
    """Per-pixel distance from the camera center to the surface (mm)."""


@dataclass(frozen=True, eq=False)
class VisibilityMask:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.array(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise DimensionMismatch(f"mask must be 2-D, got shape {bits.shape}")
        object.__setattr__(self, "bits", _freeze(bits))

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def __len__(self):
        return self.count()

    def __or__(self, other: "VisibilityMask") -> "VisibilityMask":
        check_shapes(self, other)
        return VisibilityMask(self.bits | other.bits)

    def __and__(self, other: "VisibilityMask") -> "VisibilityMask":
        check_shapes(self, other)
        return VisibilityMask(self.bits & other.bits)

    def issubset(self, other: "VisibilityMask") -> bool:
        check_shapes(self, other)
        return not np.any(self.bits & ~other.bits)

    def __eq__(self, other):
        if not isinstance(other, VisibilityMask):
            return NotImplemented
        return bool(np.array_equal(self.bits, other.bits))


def check_shapes(*items) -> None:
    shapes = {tuple(i.shape) for i in items}
    if len(shapes) > 1:
        raise DimensionMismatch(f"mismatched image dimensions: {sorted(shapes)}")


# --- debug dumps --------------------------------------------------------------


def dump_map_png(m: _ValueMap, path, scale: float | None = None) -> float:
    """Write a depth or distance map as a 16-bit PNG plus ``<path>.scale.txt``.

    Stored value times the scale gives millimeters. Returns the scale used.
    """
    from PIL import Image

    path = Path(path)
    if scale is None:
        top = float(m.values.max()) if m.valid.any() else 1.0
        scale = max(top / 65535.0, 1e-6)
    q = np.where(m.valid, np.clip(np.round(m.values / scale), 1, 65535), 0).astype(np.uint16)
    Image.fromarray(q).save(path)
    path.with_name(path.name + ".scale.txt").write_text(f"{scale!r}\n")
    return scale


def dump_mask_png(mask: VisibilityMask, path) -> None:
    """Write a visibility mask as a 1-bit PNG."""
    from PIL import Image

    Image.fromarray(mask.bits).convert("1").save(Path(path))
