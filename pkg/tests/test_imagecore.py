import numpy as np
import pytest

from rainflow.imagecore import (
    FlowField,
    Image,
    build_pyramid,
    gradient,
    known_mask,
    resample_flow,
    resize,
    to_gray,
    warp,
    warp_with_mask,
    zero_flow,
    UNKNOWN_FLOW,
)


def test_image_validation():
    with pytest.raises(ValueError):
        Image(np.zeros((4, 4, 2)))
    with pytest.raises(ValueError):
        Image(np.array([[np.nan]]))
    with pytest.raises(ValueError):
        Image(np.zeros((0, 3, 1)))
    img = Image(np.zeros((3, 4)))
    assert img.channels == 1 and img.shape == (3, 4, 1)


def test_flowfield_validation():
    with pytest.raises(ValueError):
        FlowField(np.zeros((3, 4)), np.zeros((4, 3)))
    with pytest.raises(ValueError):
        FlowField(np.array([[np.inf]]), np.array([[0.0]]))


def test_warp_zero_flow_is_identity():
    rng = np.random.default_rng(0)
    img = Image(rng.uniform(0, 1, (13, 17, 3)))
    out = warp(img, zero_flow(13, 17))
    assert np.array_equal(out.data, img.data), "zero-flow warp must be bit-exact"


def test_warp_integer_shift_matches_index_oracle():
    rng = np.random.default_rng(1)
    for _ in range(20):
        h, w = rng.integers(6, 24, size=2)
        dx, dy = int(rng.integers(-3, 4)), int(rng.integers(-3, 4))
        data = rng.uniform(0, 1, (h, w, 3))
        img = Image(data)
        flow = FlowField(np.full((h, w), float(dx)), np.full((h, w), float(dy)))
        out, valid = warp_with_mask(img, flow)
        ys, xs = np.indices((h, w))
        sy, sx = ys + dy, xs + dx
        interior = (sx >= 0) & (sx < w) & (sy >= 0) & (sy < h)
        assert np.allclose(out.data[interior], data[sy[interior], sx[interior]], atol=1e-12)
        assert valid[interior].all()
        assert not valid[~interior].any(), "clamped samples must be flagged"


def test_warp_horizontal_ramp():
    w = 10
    ramp = np.tile(np.arange(w, dtype=np.float64) / w, (6, 1))
    img = Image(ramp)
    flow = FlowField(np.ones((6, w)), np.zeros((6, w)))
    out = warp(img, flow)
    expected = np.tile(np.minimum(np.arange(w) + 1, w - 1) / w, (6, 1))
    assert np.allclose(out.plane(0), expected, atol=1e-12)


def test_gradient_forward_differences():
    img = Image(np.zeros((11, 11)))
    gx, gy = gradient(img)
    assert not gx.data.any() and not gy.data.any()

    xs = np.tile(np.arange(9, dtype=np.float64), (7, 1))
    gx, gy = gradient(Image(xs))
    assert np.allclose(gx.plane(0)[:, :-1], 1.0)
    assert np.allclose(gx.plane(0)[:, -1], 0.0), "last column is Neumann"
    assert not gy.data.any()

    spot = np.zeros((8, 8))
    spot[5, 5] = 1.0
    gx, _ = gradient(Image(spot))
    row = gx.plane(0)[5]
    assert row[4] == 1.0 and row[5] == -1.0
    assert np.count_nonzero(row) == 2


def test_gradient_row_telescopes():
    rng = np.random.default_rng(2)
    data = rng.uniform(0, 1, (5, 12))
    gx, _ = gradient(Image(data))
    sums = gx.plane(0).sum(axis=1)
    assert np.allclose(sums, data[:, -1] - data[:, 0], atol=1e-12)


def test_pyramid_level_dims():
    img = Image(np.zeros((64, 64)))
    pyr = build_pyramid(img, 0.5, min_size=8)
    dims = [(lvl.height, lvl.width) for lvl in pyr.levels]
    assert dims == [(64, 64), (32, 32), (16, 16), (8, 8)]

    single = build_pyramid(Image(np.zeros((8, 8))), 0.5, min_size=8)
    assert len(single) == 1

    const = build_pyramid(Image(np.full((32, 20), 0.37)), 0.8)
    for lvl in const.levels:
        assert np.allclose(lvl.data, 0.37, atol=1e-12)


def test_pyramid_dims_idempotent():
    rng = np.random.default_rng(3)
    img = Image(rng.uniform(0, 1, (50, 75)))
    first = [(l.height, l.width) for l in build_pyramid(img, 0.7).levels]
    again = [(l.height, l.width) for l in build_pyramid(img, 0.7).levels]
    assert first == again


def test_pyramid_scale_bounds():
    img = Image(np.zeros((32, 32)))
    with pytest.raises(ValueError):
        build_pyramid(img, 0.3)
    with pytest.raises(ValueError):
        build_pyramid(img, 0.99)
    with pytest.raises(ValueError):
        build_pyramid(img, 0.5, min_size=4)


def test_resample_flow_scaling():
    f = FlowField(np.ones((8, 8)), np.zeros((8, 8)))
    up = resample_flow(f, 16, 16)
    assert np.allclose(up.u, 2.0) and np.allclose(up.v, 0.0)

    same = resample_flow(f, 8, 8)
    assert np.allclose(same.u, f.u) and np.allclose(same.v, f.v)

    z = resample_flow(zero_flow(8, 8), 5, 13)
    assert not z.u.any() and not z.v.any()
    assert z.height == 13 and z.width == 5


def test_resize_preserves_constants():
    img = Image(np.full((9, 14, 3), 0.6))
    out = resize(img, 21, 5)
    assert out.shape == (5, 21, 3)
    assert np.allclose(out.data, 0.6, atol=1e-12)


def test_to_gray_weights():
    data = np.zeros((2, 2, 3))
    data[0, 0] = [1.0, 0.0, 0.0]
    data[0, 1] = [0.0, 1.0, 0.0]
    data[1, 0] = [0.0, 0.0, 1.0]
    data[1, 1] = [1.0, 1.0, 1.0]
    g = to_gray(Image(data)).plane(0)
    assert np.allclose(g, [[0.299, 0.587], [0.114, 1.0]])
    mono = Image(np.full((3, 3), 0.4))
    assert to_gray(mono) is mono


def test_known_mask_sentinel():
    u = np.zeros((3, 3))
    v = np.zeros((3, 3))
    u[1, 1] = UNKNOWN_FLOW
    mask = known_mask(FlowField(u, v))
    assert mask.sum() == 8 and not mask[1, 1]
