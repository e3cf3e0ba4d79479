"""X-shaped sparse support: parametric spec, rasterization, coverage, export.

Coordinates follow the image convention used everywhere in the package:
``(row, col)`` integer pixel indices, with pixel ``(h, w)`` covering the unit
square whose centre sits at continuous position ``(w + 0.5, h + 0.5)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DegenerateMaskError, InvalidInputError

# ties within this distance of .5 are treated as exact (keeps symmetric specs symmetric)
_SNAP_DECIMALS = 9


@dataclass(frozen=True)
class ImageShape:
    height: int
    width: int
    channels: int = 3

    def problems(self) -> list[str]:
        out = []
        if not isinstance(self.height, (int, np.integer)) or self.height < 8:
            out.append("height must be an integer >= 8")
        if not isinstance(self.width, (int, np.integer)) or self.width < 8:
            out.append("width must be an integer >= 8")
        if self.channels not in (1, 3):
            out.append("channels must be 1 or 3")
        return out


@dataclass(frozen=True)
class XMaskSpec:
    rho_col: float = 0.5
    rho_row: float = 0.5
    angles: tuple[float, float] = (math.pi / 4, 3 * math.pi / 4)
    length_ratio: float = 0.4
    line_width: int = 3

    def as_dict(self) -> dict:
        return {
            "rho_col": self.rho_col,
            "rho_row": self.rho_row,
            "angles": list(self.angles),
            "length_ratio": self.length_ratio,
            "line_width": self.line_width,
        }


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def __str__(self) -> str:
        return "pass" if self.ok else "; ".join(self.violations)


@dataclass(frozen=True, eq=False)
class XMask:
    mask: np.ndarray  # bool, H x W
    paths: tuple[np.ndarray, ...]  # each (n, 2) int array of (row, col)
    shape: ImageShape
    spec: XMaskSpec

    def __post_init__(self):
        if self.mask.shape != (self.shape.height, self.shape.width):
            raise InvalidInputError("mask grid does not match image shape")
        if not self.mask.any():
            raise DegenerateMaskError("mask support is empty")

    @property
    def support(self) -> np.ndarray:
        """(n, 2) array of support coordinates in row-major order."""
        return np.argwhere(self.mask)

    @property
    def support_size(self) -> int:
        return int(self.mask.sum())


def validate_spec(spec: XMaskSpec, shape: ImageShape) -> ValidationReport:
    report = ValidationReport(shape.problems())
    if not 0.0 < spec.rho_col < 1.0:
        report.violations.append("rho_col out of range (0, 1)")
    if not 0.0 < spec.rho_row < 1.0:
        report.violations.append("rho_row out of range (0, 1)")
    if len(spec.angles) != 2:
        report.violations.append("angles must be a pair")
    else:
        diff = math.remainder(spec.angles[0] - spec.angles[1], math.pi)
        if abs(diff) < 1e-9:
            report.violations.append("degenerate angles: directions coincide modulo pi")
    if not 0.0 < spec.length_ratio <= 1.0:
        report.violations.append("length_ratio out of range (0, 1]")
    if not isinstance(spec.line_width, (int, np.integer)) or spec.line_width < 1:
        report.violations.append("line_width must be an integer >= 1")
    return report


def half_length(spec: XMaskSpec, shape: ImageShape) -> float:
    return spec.length_ratio * min(shape.height, shape.width) * math.sqrt(2.0) / 2.0


def center_index(spec: XMaskSpec, shape: ImageShape) -> tuple[float, float]:
    """Cross centre in continuous index space, as (col, row)."""
    return spec.rho_col * shape.width - 0.5, spec.rho_row * shape.height - 0.5


def _round_toward(v: float, anchor: float) -> int:
    v = round(v, _SNAP_DECIMALS)
    lo = math.floor(v)
    frac = v - lo
    if frac > 0.5:
        return lo + 1
    if frac < 0.5:
        return lo
    return lo + 1 if anchor > v else lo


def _clip_parameter_range(c: tuple[float, float], d: tuple[float, float],
                          s_lo: float, s_hi: float,
                          box: tuple[float, float]) -> tuple[float, float] | None:
    # Liang-Barsky on [0, box[0]] x [0, box[1]]
    for ci, di, hi in ((c[0], d[0], box[0]), (c[1], d[1], box[1])):
        if abs(di) < 1e-12:
            if ci < 0 or ci > hi:
                return None
            continue
        a, b = (0 - ci) / di, (hi - ci) / di
        if a > b:
            a, b = b, a
        s_lo, s_hi = max(s_lo, a), min(s_hi, b)
    if s_lo > s_hi:
        return None
    return s_lo, s_hi


def segment_endpoints(spec: XMaskSpec, shape: ImageShape, theta: float):
    """Clipped, rounded integer endpoints ``((r0, c0), (r1, c1))`` for one diagonal.

    The first endpoint is the lower-parameter end of ``c + s * (cos t, sin t)``.
    Returns None when the segment misses the image entirely.
    """
    cx, cy = center_index(spec, shape)
    d = (math.cos(theta), math.sin(theta))
    L = half_length(spec, shape)
    rng = _clip_parameter_range((cx, cy), d, -L, L, (shape.width - 1, shape.height - 1))
    if rng is None:
        return None
    ends = []
    for s in rng:
        x, y = cx + s * d[0], cy + s * d[1]
        ends.append((_round_toward(y, cy), _round_toward(x, cx)))
    return tuple(ends)


def bresenham(p0: tuple[int, int], p1: tuple[int, int]) -> np.ndarray:
    """Integer line from p0 to p1 inclusive, in traversal order.

    Along the major axis step ``i`` the minor offset is ``floor((2*i*dm + n) / 2n)``,
    i.e. nearest integer with exact halves rounded away from p0.
    """
    (r0, c0), (r1, c1) = p0, p1
    dr, dc = r1 - r0, c1 - c0
    sr, sc = (1 if dr >= 0 else -1), (1 if dc >= 0 else -1)
    dr, dc = abs(dr), abs(dc)
    n = max(dr, dc)
    out = np.empty((n + 1, 2), dtype=np.int64)
    row_major = dr >= dc
    dm = dc if row_major else dr
    err, q = n, 0
    for i in range(n + 1):
        if row_major:
            out[i] = (r0 + sr * i, c0 + sc * q)
        else:
            out[i] = (r0 + sr * q, c0 + sc * i)
        err += 2 * dm
        if err >= 2 * n:
            err -= 2 * n
            q += 1
    return out


def build_x_mask(spec: XMaskSpec, shape: ImageShape) -> XMask:
    report = validate_spec(spec, shape)
    if not report:
        raise InvalidInputError(f"invalid mask spec: {report}")
    centre = np.zeros((shape.height, shape.width), dtype=bool)
    paths = []
    for theta in spec.angles:
        ends = segment_endpoints(spec, shape, theta)
        if ends is None:
            continue
        path = bresenham(*ends)
        centre[path[:, 0], path[:, 1]] = True
        paths.append(path)
    if not paths:
        raise DegenerateMaskError("both centerlines fall outside the image")
    radius = spec.line_width // 2
    if radius:
        structure = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
        support = ndimage.binary_dilation(centre, structure=structure)
    else:
        support = centre
    return XMask(mask=support, paths=tuple(paths), shape=shape, spec=spec)


def mask_coverage(mask: XMask) -> float:
    return mask.support_size / float(mask.shape.height * mask.shape.width)


def render_mask_preview(mask: XMask, base_image: np.ndarray | None = None,
                        color=(1.0, 0.0, 0.0)) -> np.ndarray:
    """Binary H x W image of the mask, or ``base_image`` (C x H x W) with the X painted."""
    m = mask.mask
    if base_image is None:
        return m.astype(np.float32)
    base = np.asarray(base_image, dtype=np.float32)
    if base.ndim != 3 or base.shape[1:] != m.shape:
        raise InvalidInputError(
            f"base image shape {base.shape} does not match mask {m.shape}")
    out = base.copy()
    col = np.asarray(color, dtype=np.float32)[: base.shape[0]]
    if base.shape[0] == 1:
        col = np.ones(1, dtype=np.float32)
    out[:, m] = col[:, None]
    return out


def write_mask_png(mask: XMask, path: str | Path) -> None:
    from PIL import Image

    Image.fromarray(mask.mask.astype(np.uint8) * 255, mode="L").save(path)


def read_mask_png(path: str | Path) -> np.ndarray:
    from PIL import Image

    return np.asarray(Image.open(path)) > 127


def format_paths(paths) -> str:
    blocks = ["\n".join(f"{r},{c}" for r, c in p) for p in paths]
    return "\n\n".join(blocks) + "\n"


def parse_paths(text: str) -> list[np.ndarray]:
    out = []
    for block in text.strip().split("\n\n"):
        rows = [tuple(int(v) for v in line.split(",")) for line in block.splitlines() if line]
        out.append(np.asarray(rows, dtype=np.int64).reshape(-1, 2))
    return out
