import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from xmask_attack.errors import InvalidInputError
from xmask_attack.geometry import (
    ImageShape,
    XMask,
    XMaskSpec,
    bresenham,
    build_x_mask,
    format_paths,
    mask_coverage,
    parse_paths,
    read_mask_png,
    render_mask_preview,
    segment_endpoints,
    validate_spec,
    write_mask_png,
)

DEFAULT = XMaskSpec()


def oracle_mask(spec, H, W):
    return oracles.x_mask(spec.rho_col, spec.rho_row, spec.angles, spec.length_ratio,
                          spec.line_width, H, W)


def test_default_coverage_on_224():
    cov = mask_coverage(build_x_mask(DEFAULT, ImageShape(224, 224)))
    assert 0.015 <= cov <= 0.020


def test_full_length_thin_cross_is_the_two_diagonals():
    n = 8
    m = build_x_mask(XMaskSpec(length_ratio=1.0, line_width=1), ImageShape(n, n))
    expected = np.eye(n, dtype=bool) | np.fliplr(np.eye(n, dtype=bool))
    assert np.array_equal(m.mask, expected)


def test_five_by_five_diagonals_through_rasterizer():
    # ImageShape requires sides >= 8, so the 5x5 case goes through the pieces
    shape = ImageShape.__new__(ImageShape)
    object.__setattr__(shape, "height", 5)
    object.__setattr__(shape, "width", 5)
    spec = XMaskSpec(length_ratio=1.0, line_width=1)
    pix = set()
    for th in spec.angles:
        pix |= {tuple(p) for p in bresenham(*segment_endpoints(spec, shape, th))}
    assert pix == {(i, i) for i in range(5)} | {(i, 4 - i) for i in range(5)}
    assert len(pix) == 9
    mask = np.zeros((5, 5), bool)
    mask[tuple(np.array(sorted(pix)).T)] = True
    xm = XMask(mask, (np.array(sorted(pix)),), shape, spec)
    assert mask_coverage(xm) == pytest.approx(0.36)


@pytest.mark.parametrize("b", [1, 3, 5])
def test_wider_line_strictly_increases_coverage(b):
    shape = ImageShape(224, 224)
    a = mask_coverage(build_x_mask(XMaskSpec(line_width=b), shape))
    c = mask_coverage(build_x_mask(XMaskSpec(line_width=b + 1), shape))
    # b and b+1 share floor(b/2) only when b is even
    assert c > a


def test_default_mask_is_symmetric():
    m = build_x_mask(DEFAULT, ImageShape(224, 224)).mask
    assert np.array_equal(m, m[::-1, :])
    assert np.array_equal(m, m[:, ::-1])
    assert np.array_equal(m, m.T)


@pytest.mark.parametrize("shape", [(32, 32), (17, 40), (64, 23)])
def test_fixed_specs_match_oracle(shape):
    H, W = shape
    for spec in (DEFAULT, XMaskSpec(0.3, 0.7, (0.2, 1.9), 0.9, 2),
                 XMaskSpec(0.9, 0.1, (0.0, math.pi / 2), 1.0, 5)):
        assert np.array_equal(build_x_mask(spec, ImageShape(H, W)).mask, oracle_mask(spec, H, W))


def test_randomized_specs_match_oracle():
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 60:
        H, W = (int(v) for v in rng.integers(8, 33, size=2))
        a = rng.uniform(0, math.pi, size=2)
        if abs(math.remainder(a[0] - a[1], math.pi)) < 0.05:
            continue
        spec = XMaskSpec(float(rng.uniform(0.05, 0.95)), float(rng.uniform(0.05, 0.95)),
                         (float(a[0]), float(a[1])), float(rng.uniform(0.05, 1.0)),
                         int(rng.integers(1, 6)))
        want = oracle_mask(spec, H, W)
        if not want.any():
            continue
        assert np.array_equal(build_x_mask(spec, ImageShape(H, W)).mask, want), spec
        checked += 1


def test_paths_are_connected_and_inside():
    m = build_x_mask(XMaskSpec(0.4, 0.6, (0.3, 2.0), 0.8, 3), ImageShape(40, 30))
    assert len(m.paths) == 2
    for p in m.paths:
        steps = np.abs(np.diff(p, axis=0))
        assert steps.max() == 1  # 8-connected, no repeated pixel
        assert (p[:, 0] >= 0).all() and (p[:, 0] < 40).all()
        assert (p[:, 1] >= 0).all() and (p[:, 1] < 30).all()
        assert m.mask[p[:, 0], p[:, 1]].all()


def test_centerline_passes_near_the_centre():
    shape = ImageShape(64, 48)
    spec = XMaskSpec(0.3, 0.6, (0.4, 2.1), 0.5, 1)
    m = build_x_mask(spec, shape)
    cx, cy = spec.rho_col * 48 - 0.5, spec.rho_row * 64 - 0.5
    for p in m.paths:
        d = np.min(np.hypot(p[:, 1] - cx, p[:, 0] - cy))
        assert d <= 1.0


def test_endpoint_oracle_agrees():
    rng = np.random.default_rng(3)
    for _ in range(200):
        H, W = (int(v) for v in rng.integers(3, 65, size=2))
        spec = XMaskSpec(float(rng.uniform(0.01, 0.99)), float(rng.uniform(0.01, 0.99)),
                         (0.5, 2.5), float(rng.uniform(0.01, 1)), 1)
        for th in spec.angles:
            assert segment_endpoints(spec, ImageShape(H, W), th) == oracles.endpoints(
                spec.rho_col, spec.rho_row, th, spec.length_ratio, H, W)


@given(st.integers(-20, 20), st.integers(-20, 20), st.integers(-20, 20), st.integers(-20, 20))
def test_bresenham_matches_exact_nearest_pixel(r0, c0, r1, c1):
    got = [tuple(v) for v in bresenham((r0, c0), (r1, c1))]
    assert got == oracles.digital_line((r0, c0), (r1, c1))


@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(0.1, 1.0), st.integers(1, 6))
@settings(max_examples=50, deadline=None)
def test_support_contains_dilated_centrelines(rc, rr, ratio, b):
    m = build_x_mask(XMaskSpec(rc, rr, (math.pi / 4, 3 * math.pi / 4), ratio, b),
                     ImageShape(24, 24))
    rad = b // 2
    for p in m.paths:
        for r, c in p:
            block = m.mask[max(0, r - rad): r + rad + 1, max(0, c - rad): c + rad + 1]
            assert block.all()


@pytest.mark.parametrize("spec,message", [
    (XMaskSpec(rho_col=0.0), "rho_col out of range"),
    (XMaskSpec(rho_row=1.0), "rho_row out of range"),
    (XMaskSpec(angles=(0.3, 0.3 + math.pi)), "degenerate angles"),
    (XMaskSpec(angles=(0.7, 0.7)), "degenerate angles"),
    (XMaskSpec(length_ratio=0.0), "length_ratio out of range"),
    (XMaskSpec(length_ratio=1.5), "length_ratio out of range"),
    (XMaskSpec(line_width=0), "line_width must be an integer"),
])
def test_validation_messages(spec, message):
    report = validate_spec(spec, ImageShape(32, 32))
    assert not report.ok
    assert any(message in v for v in report.violations)
    with pytest.raises(InvalidInputError, match="invalid mask spec"):
        build_x_mask(spec, ImageShape(32, 32))


def test_valid_spec_reports_ok():
    assert validate_spec(DEFAULT, ImageShape(224, 224)).ok


def test_xmask_rejects_empty_support():
    with pytest.raises(Exception):
        XMask(np.zeros((4, 4), bool), (np.zeros((2, 2), np.int64),), ImageShape(4, 4), DEFAULT)


def test_preview_without_base_is_the_binary_mask():
    m = build_x_mask(DEFAULT, ImageShape(32, 32))
    prev = render_mask_preview(m)
    assert prev.shape == (32, 32)
    assert np.array_equal(prev > 0.5, m.mask)


def test_preview_paints_only_support():
    m = build_x_mask(DEFAULT, ImageShape(32, 32))
    base = np.random.default_rng(0).uniform(size=(3, 32, 32)).astype(np.float32)
    out = render_mask_preview(m, base)
    assert np.array_equal(out[:, ~m.mask], base[:, ~m.mask])
    assert np.allclose(out[0, m.mask], 1.0) and np.allclose(out[1:, m.mask], 0.0)
    with pytest.raises(InvalidInputError):
        render_mask_preview(m, base[:, :16])


def test_mask_png_and_path_text_round_trip(tmp_path):
    m = build_x_mask(XMaskSpec(0.4, 0.5, (0.3, 2.2), 0.7, 3), ImageShape(40, 36))
    write_mask_png(m, tmp_path / "m.png")
    assert np.array_equal(read_mask_png(tmp_path / "m.png"), m.mask)
    back = parse_paths(format_paths(m.paths))
    assert len(back) == len(m.paths)
    for a, b in zip(back, m.paths):
        assert np.array_equal(a, b)
