"""Slow, independent reference computations used by the tests."""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


def _nearest_toward(v: float, anchor: float) -> int:
    # nearest integer; an exact half goes to the side of ``anchor``
    f = Fraction(round(v, 9)).limit_denominator(10**9)
    lo = math.floor(f)
    rem = f - lo
    if rem == Fraction(1, 2):
        return lo + 1 if anchor > f else lo
    return lo + 1 if rem > Fraction(1, 2) else lo


def endpoints(rho_col, rho_row, theta, ratio, H, W):
    """Clipped integer endpoints of one centreline, found by clipping against each
    image edge in turn. Returns ((r0, c0), (r1, c1)) or None."""
    cx, cy = rho_col * W - 0.5, rho_row * H - 0.5
    L = ratio * min(H, W) * math.sqrt(2.0) / 2.0
    dx, dy = math.cos(theta), math.sin(theta)
    lo, hi = -L, L
    for c, d, top in ((cx, dx, W - 1), (cy, dy, H - 1)):
        if abs(d) < 1e-12:
            if not 0 <= c <= top:
                return None
            continue
        s1, s2 = sorted(((0 - c) / d, (top - c) / d))
        lo, hi = max(lo, s1), min(hi, s2)
    if lo > hi:
        return None
    return tuple((_nearest_toward(cy + s * dy, cy), _nearest_toward(cx + s * dx, cx))
                 for s in (lo, hi))


def digital_line(p0, p1) -> list[tuple[int, int]]:
    """Pixels of the digital segment p0 -> p1: for each step along the longer axis,
    the nearest minor coordinate to the exact line, ties away from p0."""
    (r0, c0), (r1, c1) = p0, p1
    n = max(abs(r1 - r0), abs(c1 - c0))
    if n == 0:
        return [(r0, c0)]
    out = []
    for i in range(n + 1):
        t = Fraction(i, n)
        r, c = r0 + t * (r1 - r0), c0 + t * (c1 - c0)

        def near(v, start):
            fl = math.floor(v)
            frac = v - fl
            if frac == Fraction(1, 2):
                return fl + 1 if v > start else fl
            return fl + 1 if frac > Fraction(1, 2) else fl

        out.append((near(r, r0), near(c, c0)))
    return out


def x_mask(rho_col, rho_row, angles, ratio, b, H, W):
    """Support by brute force: every pixel whose Chebyshev distance to some
    centreline pixel is at most floor(b/2)."""
    centre = []
    for theta in angles:
        e = endpoints(rho_col, rho_row, theta, ratio, H, W)
        if e is not None:
            centre.extend(digital_line(*e))
    rad = b // 2
    rr, cc = np.mgrid[0:H, 0:W]
    pts = np.asarray(centre).reshape(-1, 2)
    if len(pts) == 0:
        return np.zeros((H, W), dtype=bool)
    # full pixel x centre-pixel distance table
    cheb = np.maximum(np.abs(rr[..., None] - pts[:, 0]), np.abs(cc[..., None] - pts[:, 1]))
    return cheb.min(axis=-1) <= rad


def margin(logits, y):
    best_other = max(v for k, v in enumerate(logits) if k != y)
    return logits[y] - best_other


def cross_entropy(logits, y):
    m = max(logits)
    return -(logits[y] - (m + math.log(sum(math.exp(v - m) for v in logits))))


def magnitude(delta, mask):
    C, H, W = delta.shape
    total, count = 0.0, 0
    for r in range(H):
        for c in range(W):
            if mask[r, c]:
                count += 1
                for ch in range(C):
                    total += float(delta[ch, r, c]) ** 2
    return total / count


def line_smoothness(delta, paths):
    per_path = []
    for p in paths:
        s = 0.0
        for k in range(1, len(p)):
            for ch in range(delta.shape[0]):
                s += (float(delta[ch, p[k][0], p[k][1]]) - float(delta[ch, p[k - 1][0], p[k - 1][1]])) ** 2
        per_path.append(s / (len(p) - 1))
    return sum(per_path) / len(per_path)
