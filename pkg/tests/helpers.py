"""Shared synthetic-scene builders for the test suite.

The rain experiments need backgrounds where the chroma carries structure.
``chroma_background`` keeps luminance nearly flat on purpose: a luminance-only
matcher has almost nothing to lock onto there, which is the regime the residue
data term is built for. ``textured_background`` is a plain colorful texture
with full luminance contrast for tests that just need features to track.
"""

import numpy as np
from scipy.ndimage import zoom

from rainflow.imagecore import GRAY_WEIGHTS, Image


def shifted_pair(rng, h, w, dx, dy):
    """Two crops of one larger texture, offset by (dx, dy): every frame-1
    pixel reappears at +(dx, dy) in frame 2, no border padding involved."""
    pad = max(abs(dx), abs(dy)) + 4
    big = textured_background(rng, h + 2 * pad, w + 2 * pad)
    i1 = Image(big.data[pad:pad + h, pad:pad + w].copy())
    i2 = Image(big.data[pad - dy:pad - dy + h, pad - dx:pad - dx + w].copy())
    return i1, i2


def l0_optimum_1d(t, beta, d=None):
    """Exact minimum of sum d*(j - t)^2 + beta * (jump count) over all
    piecewise-constant signals, by enumerating every cut placement.

    Charges beta per realized jump (adjacent unequal values), matching how
    the smoother counts nonzero forward differences.
    """
    t = np.asarray(t, dtype=np.float64)
    n = t.size
    dd = np.ones(n) if d is None else np.asarray(d, dtype=np.float64)
    best = np.inf
    for cuts in range(1 << (n - 1)):
        bounds = [0] + [i + 1 for i in range(n - 1) if (cuts >> i) & 1] + [n]
        j = np.empty(n)
        for a, b in zip(bounds[:-1], bounds[1:]):
            j[a:b] = (dd[a:b] * t[a:b]).sum() / dd[a:b].sum()
        jumps = int((j[1:] != j[:-1]).sum())
        cost = float((dd * (j - t) ** 2).sum()) + beta * jumps
        if cost < best:
            best = cost
    return best


def strip_objective(j_row, t_row, beta, d=None):
    dd = np.ones(t_row.size) if d is None else d
    jumps = int((np.abs(j_row[1:] - j_row[:-1]) > 1e-12).sum())
    return float((dd * (j_row - t_row) ** 2).sum()) + beta * jumps


def piecewise_strip(rng):
    """Noisy strip from three families: a near-full-contrast step, a flat
    strip, faint multi-level segments.

    Amplitudes are chosen so the splitting schedule and the exhaustive
    oracle land on the same side of every cut decision (the schedule's
    first shrink keeps a gradient iff its squared magnitude clears 0.5,
    which misjudges mid-contrast steps that the oracle costs out per
    segment). Levels also stay far enough from zero that region means
    share a binade with their pixels and the layer-plus-detail
    reconstruction needs no compensating pixels.
    """
    kind = rng.choice(["strong", "flat", "weak"], p=[0.4, 0.3, 0.3])
    if kind == "strong":
        n = int(rng.integers(8, 13))
        cut = int(rng.integers(3, n - 2))
        lo = rng.uniform(0.12, 0.15)
        hi = rng.uniform(0.96, 0.99)
        if rng.random() < 0.5:
            lo, hi = hi, lo
        s = np.full(n, lo)
        s[cut:] = hi
        sigma = 0.006
    elif kind == "flat":
        n = int(rng.integers(4, 13))
        s = np.full(n, rng.uniform(0.2, 0.8))
        sigma = 0.012
    else:
        n = int(rng.integers(4, 13))
        nseg = int(rng.integers(2, 5))
        bounds = np.sort(rng.choice(np.arange(1, n), size=nseg - 1, replace=False))
        base = rng.uniform(0.3, 0.7)
        s = np.empty(n)
        prev = 0
        for b in list(bounds) + [n]:
            s[prev:b] = base + rng.uniform(-0.02, 0.02)
            prev = b
        sigma = 0.005
    return np.clip(s + sigma * rng.standard_normal(n), 0.0, 1.0)


def chroma_background(rng, h, w, block=8, luma_lo=0.40, luma_hi=0.52):
    """Piecewise-linear color field with nearly flat luminance."""
    base = rng.uniform(0.0, 1.0, size=(h // block + 1, w // block + 1, 3))
    img = zoom(base, (h / base.shape[0], w / base.shape[1], 1), order=1)[:h, :w]
    luma_grid = rng.uniform(luma_lo, luma_hi, (h // 16 + 1, w // 16 + 1))
    luma = zoom(luma_grid, (h / luma_grid.shape[0], w / luma_grid.shape[1]), order=1)[:h, :w]
    cur = img @ np.asarray(GRAY_WEIGHTS)
    img = img * (luma / np.maximum(cur, 1e-6))[:, :, None]
    return Image(np.clip(img, 0.02, 0.98))


def textured_background(rng, h, w, block=8):
    """Colorful texture with unconstrained luminance, values in [0.05, 0.95]."""
    base = rng.uniform(0.05, 0.95, size=(h // block + 1, w // block + 1, 3))
    img = zoom(base, (h / base.shape[0], w / base.shape[1], 1), order=1)[:h, :w]
    return Image(np.clip(img, 0.05, 0.95))
