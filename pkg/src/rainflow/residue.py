"""Chroma residue channel and the per-pixel data-term weight map.

Rain streaks are close to achromatic: they raise all three colour channels
by nearly the same amount. The residue channel (max channel minus min
channel) therefore cancels additive grey contamination, which makes it a
far more reliable matching signal in rainy footage than raw intensity.
The weight map scores local chroma so the flow data term can lean on the
residue channel where colour information actually exists and fall back to
intensity in grey regions.
"""

from __future__ import annotations

import numpy as np

from .imagecore import Image

__all__ = ["residue_channel", "weight_map"]


def residue_channel(img: Image) -> Image:
    """Max channel minus min channel, per pixel."""
    if img.channels != 3:
        raise ValueError("residue needs 3 color channels; grayscale input has no usable chroma")
    d = img.data
    return Image(d.max(axis=2) - d.min(axis=2))


def weight_map(img: Image, gamma: float = 2.0) -> Image:
    """Chroma magnitude mapped into [0, 1].

    The raw score is the root-sum-square of pairwise channel differences,
    scaled by ``gamma`` and clamped at 1. Saturated colours score 1,
    achromatic pixels score 0.
    """
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if img.channels != 3:
        raise ValueError("weight map needs 3 color channels")
    r = img.data[:, :, 0]
    g = img.data[:, :, 1]
    b = img.data[:, :, 2]
    score = np.sqrt((r - g) ** 2 + (g - b) ** 2 + (b - r) ** 2)
    return Image(np.clip(gamma * score, 0.0, 1.0))
