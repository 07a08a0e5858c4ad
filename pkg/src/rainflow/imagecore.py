"""Core raster types and the shared resampling/differencing kernels.

Conventions used across the package:

* image samples are stored as ``(height, width, channels)`` float64 arrays,
  channels 1 or 3, nominal range [0, 1] (intermediates may leave it);
* flow fields hold per-pixel displacement in pixels, ``u`` horizontal
  (positive right), ``v`` vertical (positive down), indexed [row, col];
* warping samples frame content at ``x + u(x)`` with bilinear interpolation
  and clamp-to-edge behaviour, flagging out-of-bounds taps in a mask;
* spatial gradients are forward differences with a zero last row/column
  (Neumann boundary).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

__all__ = [
    "GRAY_WEIGHTS",
    "UNKNOWN_FLOW",
    "UNKNOWN_FLOW_THRESHOLD",
    "Image",
    "FlowField",
    "Pyramid",
    "to_gray",
    "build_pyramid",
    "warp",
    "warp_with_mask",
    "gradient",
    "resize",
    "resample_flow",
    "zero_flow",
    "known_mask",
]

GRAY_WEIGHTS = (0.299, 0.587, 0.114)

# Ground-truth fields mark pixels without usable flow by writing a huge
# component value; anything above the threshold is excluded from metrics.
UNKNOWN_FLOW = 1e10
UNKNOWN_FLOW_THRESHOLD = 1e9


def _as_samples(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, np.newaxis]
    if arr.ndim != 3:
        raise ValueError(f"expected HxW or HxWxC samples, got shape {arr.shape}")
    if arr.shape[2] not in (1, 3):
        raise ValueError(f"channel count must be 1 or 3, got {arr.shape[2]}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("image dimensions must be at least 1x1")
    if not np.isfinite(arr).all():
        raise ValueError("image samples must be finite")
    return arr


@dataclass(frozen=True, eq=False)
class Image:
    """Immutable raster; ``data`` has shape (height, width, channels)."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _as_samples(self.data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def plane(self, index: int = 0) -> np.ndarray:
        """Return one channel as a 2-D array (no copy)."""
        return self.data[:, :, index]


@dataclass(frozen=True, eq=False)
class FlowField:
    """Dense displacement field; ``u``/``v`` are (height, width) float64."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if u.ndim != 2 or u.shape != v.shape:
            raise ValueError(f"u and v must be matching 2-D arrays, got {u.shape} / {v.shape}")
        if u.shape[0] < 1 or u.shape[1] < 1:
            raise ValueError("flow dimensions must be at least 1x1")
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise ValueError("flow components must be finite")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)


def zero_flow(height: int, width: int) -> FlowField:
    return FlowField(np.zeros((height, width)), np.zeros((height, width)))


def known_mask(flow: FlowField) -> np.ndarray:
    """True where both flow components are below the unknown-value sentinel."""
    return (np.abs(flow.u) < UNKNOWN_FLOW_THRESHOLD) & (
        np.abs(flow.v) < UNKNOWN_FLOW_THRESHOLD
    )


@dataclass(frozen=True, eq=False)
class Pyramid:
    """Coarse-to-fine image stack; levels[0] is full resolution."""

    levels: tuple[Image, ...]
    scale_factor: float

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        if not self.levels:
            raise ValueError("pyramid needs at least one level")

    def __len__(self) -> int:
        return len(self.levels)


def to_gray(img: Image) -> Image:
    """Collapse a 3-channel image to luminance with ITU-R 601 weights.

    Single-channel input is returned unchanged.
    """
    if img.channels == 1:
        return img
    wr, wg, wb = GRAY_WEIGHTS
    d = img.data
    return Image(wr * d[:, :, 0] + wg * d[:, :, 1] + wb * d[:, :, 2])


def _sample_grid(new_h: int, new_w: int, old_h: int, old_w: int):
    """Pixel-center aligned sample coordinates for resizing to (new_h, new_w)."""
    xs = (np.arange(new_w, dtype=np.float64) + 0.5) * (old_w / new_w) - 0.5
    ys = (np.arange(new_h, dtype=np.float64) + 0.5) * (old_h / new_h) - 0.5
    return np.meshgrid(xs, ys)


def _bilinear(data: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    """Sample ``data`` (H, W) or (H, W, C) at float coordinates.

    Coordinates outside [0, W-1] x [0, H-1] are clamped to the border and
    reported in the returned out-of-bounds mask.
    """
    h, w = data.shape[:2]
    oob = (xs < 0.0) | (xs > w - 1.0) | (ys < 0.0) | (ys > h - 1.0)
    cx = np.clip(xs, 0.0, w - 1.0)
    cy = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(cx).astype(np.intp)
    y0 = np.floor(cy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = cx - x0
    fy = cy - y0
    if data.ndim == 3:
        fx = fx[..., np.newaxis]
        fy = fy[..., np.newaxis]
    v00 = data[y0, x0]
    v01 = data[y0, x1]
    v10 = data[y1, x0]
    v11 = data[y1, x1]
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    return top * (1.0 - fy) + bot * fy, oob


def _bilinear_with_grad(data: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    """Like :func:`_bilinear` but also returns the exact partial derivatives
    of the sampled bilinear surface with respect to x and y."""
    h, w = data.shape[:2]
    oob = (xs < 0.0) | (xs > w - 1.0) | (ys < 0.0) | (ys > h - 1.0)
    cx = np.clip(xs, 0.0, w - 1.0)
    cy = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(cx).astype(np.intp)
    y0 = np.floor(cy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = cx - x0
    fy = cy - y0
    v00 = data[y0, x0]
    v01 = data[y0, x1]
    v10 = data[y1, x0]
    v11 = data[y1, x1]
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    val = top * (1.0 - fy) + bot * fy
    dvdx = (v01 - v00) * (1.0 - fy) + (v11 - v10) * fy
    dvdy = bot - top
    return val, dvdx, dvdy, oob


def warp_with_mask(img: Image, flow: FlowField) -> tuple[Image, np.ndarray]:
    """Warp ``img`` by ``flow``: output(x) = img(x + u(x)), bilinear, clamped.

    Returns the warped image and a boolean mask that is True where the sample
    position was inside the frame (False marks clamped/occluded border taps).
    """
    if (flow.height, flow.width) != (img.height, img.width):
        raise ValueError(
            f"flow size {flow.height}x{flow.width} does not match image {img.height}x{img.width}"
        )
    ys, xs = np.indices((img.height, img.width), dtype=np.float64)
    val, oob = _bilinear(img.data, xs + flow.u, ys + flow.v)
    return Image(val), ~oob


def warp(img: Image, flow: FlowField) -> Image:
    return warp_with_mask(img, flow)[0]


def gradient(img: Image) -> tuple[Image, Image]:
    """Forward-difference spatial gradients with zero last column/row.

    Multi-channel images get per-channel gradients.
    """
    d = img.data
    gx = np.zeros_like(d)
    gy = np.zeros_like(d)
    gx[:, :-1, :] = d[:, 1:, :] - d[:, :-1, :]
    gy[:-1, :, :] = d[1:, :, :] - d[:-1, :, :]
    return Image(gx), Image(gy)


def resize(img: Image, new_w: int, new_h: int) -> Image:
    """Bilinear resize with pixel-center alignment and clamped borders."""
    if new_w < 1 or new_h < 1:
        raise ValueError("target dimensions must be at least 1x1")
    if (new_h, new_w) == (img.height, img.width):
        return img
    xs, ys = _sample_grid(new_h, new_w, img.height, img.width)
    val, _ = _bilinear(img.data, xs, ys)
    return Image(val)


def build_pyramid(img: Image, scale_factor: float = 0.8, min_size: int = 8) -> Pyramid:
    """Gaussian pyramid: blur (sigma derived from scale_factor) then resample.

    Level sizes follow ceil(previous * scale_factor); construction stops before
    either dimension would drop below ``min_size``. Images already smaller than
    ``min_size`` yield a single-level pyramid.
    """
    if not (0.5 <= scale_factor <= 0.95):
        raise ValueError(f"scale_factor must lie in [0.5, 0.95], got {scale_factor}")
    if min_size < 8:
        raise ValueError(f"min_size must be >= 8, got {min_size}")
    sigma = 0.6 * math.sqrt(1.0 / scale_factor**2 - 1.0)
    levels = [img]
    while True:
        cur = levels[-1]
        nw = math.ceil(cur.width * scale_factor)
        nh = math.ceil(cur.height * scale_factor)
        if min(nw, nh) < min_size:
            break
        blurred = ndimage.gaussian_filter(cur.data, sigma=(sigma, sigma, 0.0), mode="nearest")
        levels.append(resize(Image(blurred), nw, nh))
    return Pyramid(tuple(levels), scale_factor)


def resample_flow(flow: FlowField, new_w: int, new_h: int) -> FlowField:
    """Resample a flow field to a new grid, rescaling displacements.

    u is scaled by new_w/old_w and v by new_h/old_h so that the field keeps
    pointing at the same scene locations after the resize.
    """
    if new_w < 1 or new_h < 1:
        raise ValueError("target dimensions must be at least 1x1")
    if (new_h, new_w) == (flow.height, flow.width):
        return flow
    xs, ys = _sample_grid(new_h, new_w, flow.height, flow.width)
    u, _ = _bilinear(flow.u, xs, ys)
    v, _ = _bilinear(flow.v, xs, ys)
    return FlowField(u * (new_w / flow.width), v * (new_h / flow.height))
