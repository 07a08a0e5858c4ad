"""Synthetic rain rendering with exact compositing records.

Streaks are anti-aliased capsules (line segments with rounded caps)
composited over the background with per-streak opacity tau:

    rendered = (1 - tau) * background + tau * rain_radiance

Rain radiance is the same on every channel, so rendered rain is achromatic
by construction. Overlapping streaks combine opacity multiplicatively,
tau = 1 - prod(1 - tau_k). The renderer returns the effective per-pixel
tau map so tests can verify the compositing identity exactly instead of
eyeballing output frames.

A heavy-rain veil (many unresolved streaks along the line of sight) is
modelled separately as a single contrast-reducing mix toward an airlight
radiance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imagecore import UNKNOWN_FLOW, FlowField, Image, warp, zero_flow

__all__ = [
    "RainParams",
    "RainRender",
    "render_streaks",
    "render_accumulation",
    "make_static_pair",
    "make_translation_pair",
]


@dataclass(frozen=True)
class RainParams:
    """Knobs for the streak renderer.

    tau_range           per-streak opacity, drawn uniformly
    angle_range_deg     streak tilt relative to vertical, drawn uniformly
    streak_count        expected streaks per megapixel
    streak_length       (mean_px, jitter_fraction); length = mean*(1 +/- jitter)
    streak_width        full width in pixels, anti-aliased over a 1 px band
    rain_radiance       streak brightness, equal on all channels
    accumulation_A      veil strength in [0, 1); 0 disables the veil
    airlight            veil radiance
    seed                RNG seed; renders are reproducible per seed
    """

    tau_range: tuple[float, float] = (0.0, 0.5)
    angle_range_deg: tuple[float, float] = (-15.0, 15.0)
    streak_count: float = 400.0
    streak_length: tuple[float, float] = (24.0, 0.3)
    streak_width: float = 1.5
    rain_radiance: float = 0.85
    accumulation_A: float = 0.0
    airlight: float = 0.9
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.tau_range
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValueError(f"tau_range must be an interval inside [0, 1], got {self.tau_range}")
        if self.angle_range_deg[0] > self.angle_range_deg[1]:
            raise ValueError(f"angle_range_deg must be ordered, got {self.angle_range_deg}")
        if self.streak_count < 0:
            raise ValueError("streak_count must be non-negative")
        mean, jitter = self.streak_length
        if mean <= 0 or not (0.0 <= jitter <= 1.0):
            raise ValueError(f"streak_length needs mean > 0 and jitter in [0, 1], got {self.streak_length}")
        if self.streak_width <= 0:
            raise ValueError("streak_width must be positive")
        if not (0.0 <= self.rain_radiance <= 1.0):
            raise ValueError("rain_radiance must lie in [0, 1]")
        if not (0.0 <= self.accumulation_A < 1.0):
            raise ValueError(f"accumulation_A must lie in [0, 1), got {self.accumulation_A}")
        if not (0.0 <= self.airlight <= 1.0):
            raise ValueError("airlight must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class RainRender:
    """A rendered frame plus the records needed to invert the compositing.

    image == (1 - tau_map) * background + tau_map * rain_radiance holds
    exactly wherever the accumulation veil is disabled.
    """

    image: Image
    tau_map: np.ndarray
    streak_mask: np.ndarray


def _capsule_coverage(h: int, w: int, cx, cy, angle_deg, length, half_width):
    """Anti-aliased coverage of one capsule inside its bounding box.

    Returns (rows, cols, coverage) index arrays; coverage ramps linearly
    from 1 at half_width - 0.5 inside the edge to 0 at half_width + 0.5.
    """
    theta = math.radians(angle_deg)
    dx = math.sin(theta)
    dy = math.cos(theta)
    hl = length / 2.0
    x0, x1 = cx - dx * hl, cx + dx * hl
    y0, y1 = cy - dy * hl, cy + dy * hl
    pad = half_width + 0.5
    c0 = max(int(math.floor(min(x0, x1) - pad)), 0)
    c1 = min(int(math.ceil(max(x0, x1) + pad)), w - 1)
    r0 = max(int(math.floor(min(y0, y1) - pad)), 0)
    r1 = min(int(math.ceil(max(y0, y1) + pad)), h - 1)
    if c0 > c1 or r0 > r1:
        return None
    cols, rows = np.meshgrid(np.arange(c0, c1 + 1), np.arange(r0, r1 + 1))
    px = cols - x0
    py = rows - y0
    t = np.clip((px * (x1 - x0) + py * (y1 - y0)) / max(length**2, 1e-12), 0.0, 1.0)
    ex = px - t * (x1 - x0)
    ey = py - t * (y1 - y0)
    dist = np.sqrt(ex * ex + ey * ey)
    cov = np.clip(half_width + 0.5 - dist, 0.0, 1.0)
    keep = cov > 0.0
    if not keep.any():
        return None
    return rows[keep], cols[keep], cov[keep]


def _render_streaks_rng(background: Image, params: RainParams, rng: np.random.Generator) -> RainRender:
    if background.channels != 3:
        raise ValueError("streak rendering expects a 3-channel background")
    h, w = background.height, background.width
    n = int(round(params.streak_count * (h * w) / 1e6))
    transmit = np.ones((h, w))
    mask = np.zeros((h, w), dtype=bool)
    if n > 0:
        cx = rng.uniform(0.0, w, size=n)
        cy = rng.uniform(0.0, h, size=n)
        ang = rng.uniform(params.angle_range_deg[0], params.angle_range_deg[1], size=n)
        mean, jitter = params.streak_length
        length = np.maximum(mean * (1.0 + jitter * rng.uniform(-1.0, 1.0, size=n)), 1.0)
        tau = rng.uniform(params.tau_range[0], params.tau_range[1], size=n)
        half_width = params.streak_width / 2.0
        for k in range(n):
            hit = _capsule_coverage(h, w, cx[k], cy[k], ang[k], length[k], half_width)
            if hit is None:
                continue
            rows, cols, cov = hit
            transmit[rows, cols] *= 1.0 - tau[k] * cov
            mask[rows, cols] |= True
    tau_map = 1.0 - transmit
    out = (1.0 - tau_map[:, :, np.newaxis]) * background.data + tau_map[:, :, np.newaxis] * params.rain_radiance
    return RainRender(Image(out), tau_map, mask)


def render_streaks(background: Image, params: RainParams) -> RainRender:
    """Draw streaks over ``background``; the veil (accumulation_A) is ignored.

    Pixel values stay inside [min, max] of background and rain_radiance, and
    pixels with zero coverage keep their background value bit for bit.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(params.seed)))
    return _render_streaks_rng(background, params, rng)


def render_accumulation(background: Image, A: float, airlight: float) -> Image:
    """Mix the background toward a flat airlight radiance: A*air + (1-A)*bg."""
    if not (0.0 <= A < 1.0):
        raise ValueError(f"accumulation ratio must lie in [0, 1), got {A}")
    if A == 0.0:
        return background
    return Image(A * airlight + (1.0 - A) * background.data)


def _rain_frames(backgrounds: list[Image], params: RainParams) -> list[RainRender]:
    """Independent streak renders (distinct sub-seeds), veil applied first."""
    children = np.random.SeedSequence(params.seed).spawn(len(backgrounds))
    out = []
    for bg, child in zip(backgrounds, children):
        base = render_accumulation(bg, params.accumulation_A, params.airlight)
        out.append(_render_streaks_rng(base, params, np.random.Generator(np.random.PCG64(child))))
    return out


def make_static_pair(background: Image, params: RainParams) -> tuple[Image, Image, FlowField]:
    """Two rain renders of the same static scene; ground truth is zero flow."""
    r1, r2 = _rain_frames([background, background], params)
    return r1.image, r2.image, zero_flow(background.height, background.width)


def make_translation_pair(
    background: Image, shift: tuple[float, float], params: RainParams
) -> tuple[Image, Image, FlowField]:
    """Globally translated pair with independent rain on each frame.

    ``shift`` = (dx, dy) is where frame-1 content lands in frame 2, so the
    ground truth is the uniform field (dx, dy). Pixels whose target falls
    outside the frame carry the unknown-flow sentinel instead. Frame 2 is the
    background resampled bilinearly, which limits the usable shift: the
    overlapping region must stay at least 32 px in each direction.
    """
    dx, dy = float(shift[0]), float(shift[1])
    h, w = background.height, background.width
    if w - math.ceil(abs(dx)) < 32 or h - math.ceil(abs(dy)) < 32:
        raise ValueError(f"shift {shift} leaves less than a 32 px overlap on a {w}x{h} frame")
    moved = warp(background, FlowField(np.full((h, w), -dx), np.full((h, w), -dy)))
    r1, r2 = _rain_frames([background, moved], params)
    u = np.full((h, w), dx)
    v = np.full((h, w), dy)
    ys, xs = np.indices((h, w), dtype=np.float64)
    off = (xs + dx < 0) | (xs + dx > w - 1) | (ys + dy < 0) | (ys + dy > h - 1)
    u[off] = UNKNOWN_FLOW
    v[off] = UNKNOWN_FLOW
    return r1.image, r2.image, FlowField(u, v)
