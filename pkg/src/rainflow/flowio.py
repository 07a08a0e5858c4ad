"""File formats: PNG and binary PPM images, Middlebury-style .flo flow
files, and the standard color-wheel flow visualization.

All failures raise a subclass of FlowIOError so callers can map any
malformed input to an error path instead of a crash:

    UnsupportedFormatError  unknown container, mode, or extension
    TruncatedFileError      header or payload shorter than declared
    DimensionError          nonsensical or overflowing dimensions
    BadMagicError           .flo magic tag mismatch
"""

from __future__ import annotations

import io
import struct

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from .imagecore import FlowField, Image, known_mask

__all__ = [
    "FlowIOError",
    "UnsupportedFormatError",
    "TruncatedFileError",
    "DimensionError",
    "BadMagicError",
    "read_image",
    "write_image",
    "read_flo",
    "write_flo",
    "flow_to_color",
]

FLO_MAGIC = 202021.25
MAX_DIMENSION = 1 << 20


class FlowIOError(Exception):
    """Base class for every file-format failure in this module."""


class UnsupportedFormatError(FlowIOError):
    pass


class TruncatedFileError(FlowIOError):
    pass


class DimensionError(FlowIOError):
    pass


class BadMagicError(FlowIOError):
    pass


def _check_dims(w: int, h: int):
    if w < 1 or h < 1 or w > MAX_DIMENSION or h > MAX_DIMENSION:
        raise DimensionError(f"unreasonable image dimensions {w}x{h}")


def _read_ppm(data: bytes) -> Image:
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise UnsupportedFormatError(f"not a binary PPM/PGM file (magic {magic!r})")

    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(data):
            raise TruncatedFileError("PPM header ended before width/height/maxval")
        ch = data[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            nl = data.find(b"\n", pos)
            if nl < 0:
                raise TruncatedFileError("PPM comment never terminated")
            pos = nl + 1
        elif ch.isdigit():
            end = pos
            while end < len(data) and data[end:end + 1].isdigit():
                end += 1
            fields.append(int(data[pos:end]))
            pos = end
        else:
            raise UnsupportedFormatError(f"unexpected byte {ch!r} in PPM header")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise TruncatedFileError("PPM header missing the single whitespace before the raster")
    pos += 1

    w, h, maxval = fields
    _check_dims(w, h)
    if not (0 < maxval < 65536):
        raise UnsupportedFormatError(f"PPM maxval {maxval} out of range")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = w * h * channels * dtype.itemsize
    raster = data[pos:pos + need]
    if len(raster) < need:
        raise TruncatedFileError(f"PPM raster has {len(raster)} bytes, needs {need}")
    arr = np.frombuffer(raster, dtype=dtype).reshape(h, w, channels).astype(np.float64)
    return Image(arr / maxval)


def _write_ppm(img: Image) -> bytes:
    q = np.clip(np.rint(img.data * 255.0), 0, 255).astype(np.uint8)
    magic = b"P6" if img.channels == 3 else b"P5"
    header = magic + f"\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + q.tobytes()


def _read_png(data: bytes) -> Image:
    try:
        with PILImage.open(io.BytesIO(data)) as pil:
            pil.load()
            mode = pil.mode
            w, h = pil.size
            _check_dims(w, h)
            if mode == "L":
                arr = np.asarray(pil, dtype=np.float64) / 255.0
            elif mode in ("I", "I;16"):
                arr = np.asarray(pil, dtype=np.float64) / 65535.0
            elif mode == "RGB":
                arr = np.asarray(pil, dtype=np.float64) / 255.0
            else:
                raise UnsupportedFormatError(f"unsupported PNG mode {mode!r}")
    except UnidentifiedImageError as exc:
        raise UnsupportedFormatError(f"not a decodable image: {exc}") from exc
    except (OSError, ValueError, SyntaxError) as exc:
        raise TruncatedFileError(f"damaged PNG stream: {exc}") from exc
    if arr.ndim not in (2, 3):
        raise UnsupportedFormatError(f"unsupported PNG layout with shape {arr.shape}")
    return Image(arr)


def read_image(path) -> Image:
    """Load a PNG or binary PPM/PGM file, normalized to [0, 1]."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return _read_png(data)
    if data[:2] in (b"P5", b"P6"):
        return _read_ppm(data)
    raise UnsupportedFormatError(f"{path}: neither PNG nor binary PPM")


def write_image(img: Image, path):
    """Write 8-bit PNG (.png) or binary PPM/PGM (.ppm/.pgm).

    Samples are clipped to [0, 1] and quantized to 255 levels, so an 8-bit
    read/write cycle is exact.
    """
    name = str(path).lower()
    if name.endswith(".png"):
        q = np.clip(np.rint(img.data * 255.0), 0, 255).astype(np.uint8)
        if img.channels == 1:
            pil = PILImage.fromarray(q[:, :, 0], mode="L")
        else:
            pil = PILImage.fromarray(q, mode="RGB")
        pil.save(path, format="PNG")
    elif name.endswith((".ppm", ".pgm")):
        with open(path, "wb") as f:
            f.write(_write_ppm(img))
    else:
        raise UnsupportedFormatError(f"{path}: can only write .png, .ppm, or .pgm")


def read_flo(path) -> FlowField:
    """Read a .flo file: 'PIEH' float magic, int32 w/h, interleaved
    float32 (u, v) row-major, all little-endian."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 12:
        raise TruncatedFileError(f"flow file is only {len(data)} bytes")
    magic, w, h = struct.unpack("<fii", data[:12])
    if magic != FLO_MAGIC:
        raise BadMagicError(f"bad flow magic {magic!r}, want {FLO_MAGIC}")
    _check_dims(w, h)
    need = 8 * w * h
    payload = data[12:]
    if len(payload) < need:
        raise TruncatedFileError(f"flow payload has {len(payload)} bytes, needs {need}")
    if len(payload) > need:
        raise DimensionError(f"flow payload has {len(payload) - need} trailing bytes")
    samples = np.frombuffer(payload, dtype="<f4").reshape(h, w, 2)
    if not np.isfinite(samples).all():
        raise DimensionError("flow payload contains non-finite samples")
    return FlowField(samples[:, :, 0].astype(np.float64), samples[:, :, 1].astype(np.float64))


def write_flo(flow: FlowField, path):
    u = flow.u.astype("<f4")
    v = flow.v.astype("<f4")
    samples = np.stack([u, v], axis=2)
    with open(path, "wb") as f:
        f.write(struct.pack("<fii", FLO_MAGIC, flow.width, flow.height))
        f.write(samples.tobytes())


def _color_wheel() -> np.ndarray:
    """The 55-entry hue wheel used by the standard flow visualization."""
    transitions = [  # (count, from_rgb, ramp_channel, direction)
        (15, [1.0, 0.0, 0.0], 1, +1),  # red to yellow
        (6, [1.0, 1.0, 0.0], 0, -1),   # yellow to green
        (4, [0.0, 1.0, 0.0], 2, +1),   # green to cyan
        (11, [0.0, 1.0, 1.0], 1, -1),  # cyan to blue
        (13, [0.0, 0.0, 1.0], 0, +1),  # blue to magenta
        (6, [1.0, 0.0, 1.0], 2, -1),   # magenta to red
    ]
    rows = []
    for count, start, chan, sign in transitions:
        for i in range(count):
            rgb = list(start)
            step = i / count
            rgb[chan] = step if sign > 0 else 1.0 - step
            rows.append(rgb)
    return np.array(rows)


_WHEEL = _color_wheel()


def flow_to_color(flow: FlowField, max_magnitude: float | None = None) -> Image:
    """Direction-as-hue, magnitude-as-saturation rendering of a flow field.

    Zero flow is white; magnitudes at ``max_magnitude`` are fully saturated;
    anything beyond is dimmed to flag clipping. ``None`` scales to the
    field's own maximum. Unknown-flow pixels come out black.
    """
    known = known_mask(flow)
    u = np.where(known, flow.u, 0.0)
    v = np.where(known, flow.v, 0.0)
    mag = np.hypot(u, v)
    if max_magnitude is None:
        max_magnitude = float(mag.max())
    elif max_magnitude < 0:
        raise ValueError(f"max_magnitude must be non-negative, got {max_magnitude}")
    rad = mag / max(max_magnitude, 1e-12)

    ncols = len(_WHEEL)
    angle = np.arctan2(-v, -u) / np.pi
    fk = (angle + 1.0) / 2.0 * (ncols - 1)
    k0 = np.floor(fk).astype(np.intp) % ncols
    k1 = (k0 + 1) % ncols
    f = (fk - np.floor(fk))[:, :, np.newaxis]
    col = (1.0 - f) * _WHEEL[k0] + f * _WHEEL[k1]

    r3 = rad[:, :, np.newaxis]
    inside = r3 <= 1.0
    col = np.where(inside, 1.0 - r3 * (1.0 - col), col * 0.75)
    col = np.where(known[:, :, np.newaxis], col, 0.0)
    return Image(col)
