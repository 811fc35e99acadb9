"""Image and heatmap value types plus the pixel-level numeric operations.

Images are 8-bit rasters (grayscale or RGB). Heatmaps are real-valued
importance maps that end up normalized to [0, 1]. All operations are pure
functions on immutable inputs and are safe to call concurrently.

File formats owned here:

* ``.hm``   raw heatmap sidecar: ``HMAP`` magic, u32-LE width, u32-LE
            height, then width*height float32-LE values row-major.
            File-level round trips are bit-exact.
* PNG       via Pillow; heatmap export quantizes ``v -> round(v * 255)``.
* PPM/PGM   binary (P6/P5) read and write; 16-bit PGM write for label maps.
"""

from __future__ import annotations

import io
import math
import re
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage
from PIL import Image as PILImage

from .errors import DataError

_HM_MAGIC = b"HMAP"


@dataclass(frozen=True)
class Image:
    """An 8-bit raster, shape (height, width, channels), channels 1 or 3.

    ``source`` optionally records the file the pixels came from; file-backed
    embedding lookups key on it.
    """

    pixels: np.ndarray
    source: str | None = field(default=None, compare=False)

    def __post_init__(self):
        px = self.pixels
        if px.ndim == 2:
            px = px[:, :, np.newaxis]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(f"expected (H, W, 1|3) pixel array, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image dimensions must be at least 1x1")
        if px.dtype != np.uint8:
            raise ValueError(f"pixels must be uint8, got {px.dtype}")
        object.__setattr__(self, "pixels", np.ascontiguousarray(px))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def content_key(self) -> bytes:
        """Stable digest key over dimensions and pixel bytes."""
        header = struct.pack("<III", self.height, self.width, self.channels)
        return header + self.pixels.tobytes()


@dataclass(frozen=True)
class Heatmap:
    """A real-valued importance map, shape (height, width), float64."""

    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.ndim != 2:
            raise ValueError(f"expected 2-D value array, got shape {v.shape}")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError("heatmap dimensions must be at least 1x1")
        object.__setattr__(
            self, "values", np.ascontiguousarray(v, dtype=np.float64)
        )

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def flip_horizontal(img: Image) -> Image:
    """Mirror an image left-right. Involution, bit-exact."""
    return Image(pixels=np.ascontiguousarray(img.pixels[:, ::-1, :]))


def gaussian_smooth(hmap: Heatmap, sigma: float) -> Heatmap:
    """Convolve with a normalized Gaussian kernel of radius ceil(3*sigma).

    Border handling replicates edge values, so constant maps are preserved
    exactly. ``sigma == 0`` returns the input unchanged.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return Heatmap(values=hmap.values.copy())
    radius = math.ceil(3.0 * sigma)
    out = scipy.ndimage.gaussian_filter(
        hmap.values, sigma=sigma, mode="nearest", radius=radius
    )
    return Heatmap(values=out)


def normalize_01(hmap: Heatmap) -> Heatmap:
    """Affinely rescale values to [0, 1].

    A flat map (range below 1e-12) normalizes to all zeros: no
    discriminative region was found, and zero is the conservative
    "no importance" encoding.
    """
    v = hmap.values
    if not np.all(np.isfinite(v)):
        raise ValueError("heatmap contains non-finite values")
    lo = float(v.min())
    hi = float(v.max())
    if hi - lo < 1e-12:
        return Heatmap(values=np.zeros_like(v))
    return Heatmap(values=(v - lo) / (hi - lo))


def psnr(a: Heatmap, b: Heatmap) -> float:
    """Peak signal-to-noise ratio in dB between two [0, 1] heatmaps.

    Peak value is 1.0 (the maps are normalized), so PSNR = -10*log10(MSE).
    Identical maps return +inf.
    """
    if a.values.shape != b.values.shape:
        raise ValueError(
            f"heatmap dimensions differ: {a.values.shape} vs {b.values.shape}"
        )
    diff = a.values - b.values
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return -10.0 * math.log10(mse)


def average_heatmaps(maps: list[Heatmap]) -> Heatmap:
    """Element-wise arithmetic mean of equally sized heatmaps."""
    if not maps:
        raise ValueError("cannot average an empty list of heatmaps")
    shape = maps[0].values.shape
    for m in maps[1:]:
        if m.values.shape != shape:
            raise ValueError(
                f"heatmap dimensions differ: {shape} vs {m.values.shape}"
            )
    acc = np.zeros(shape, dtype=np.float64)
    for m in maps:
        acc += m.values
    return Heatmap(values=acc / len(maps))


# ---------------------------------------------------------------------------
# Heatmap sidecar format (.hm)
# ---------------------------------------------------------------------------


def hm_to_bytes(hmap: Heatmap) -> bytes:
    payload = hmap.values.astype("<f4").tobytes()
    return _HM_MAGIC + struct.pack("<II", hmap.width, hmap.height) + payload


def hm_from_bytes(data: bytes) -> Heatmap:
    if len(data) < 12 or data[:4] != _HM_MAGIC:
        raise DataError("not a heatmap file: bad magic")
    width, height = struct.unpack("<II", data[4:12])
    expected = 12 + width * height * 4
    if len(data) != expected:
        raise DataError(
            f"heatmap payload size mismatch: expected {expected} bytes, got {len(data)}"
        )
    values = np.frombuffer(data, dtype="<f4", offset=12).astype(np.float64)
    return Heatmap(values=values.reshape(height, width))


def hm_write(path: str, hmap: Heatmap) -> None:
    from . import _atomic

    _atomic.write_bytes(path, hm_to_bytes(hmap))


def hm_read(path: str) -> Heatmap:
    try:
        with open(path, "rb") as fh:
            return hm_from_bytes(fh.read())
    except OSError as exc:
        raise DataError(f"cannot read heatmap {path!r}: {exc}") from exc


# ---------------------------------------------------------------------------
# Image I/O: PNG and binary PPM/PGM
# ---------------------------------------------------------------------------


def load_image(path: str) -> Image:
    """Read a PNG/PPM/PGM file into an Image, recording its source path."""
    lower = path.lower()
    try:
        if lower.endswith((".ppm", ".pgm", ".pnm")):
            img = _read_pnm(path)
        else:
            with PILImage.open(path) as pil:
                if pil.mode == "L":
                    arr = np.asarray(pil, dtype=np.uint8)[:, :, np.newaxis]
                else:
                    arr = np.asarray(pil.convert("RGB"), dtype=np.uint8)
            img = Image(pixels=arr)
    except OSError as exc:
        raise DataError(f"cannot read image {path!r}: {exc}") from exc
    return Image(pixels=img.pixels, source=path)


def save_image(path: str, img: Image) -> None:
    lower = path.lower()
    if lower.endswith((".ppm", ".pgm")):
        _write_pnm(path, img)
        return
    arr = img.pixels[:, :, 0] if img.channels == 1 else img.pixels
    buf = io.BytesIO()
    PILImage.fromarray(arr).save(buf, format="PNG")
    from . import _atomic

    _atomic.write_bytes(path, buf.getvalue())


def heatmap_to_png(path: str, hmap: Heatmap) -> None:
    """Lossy 8-bit grayscale visualization: v -> round(v * 255)."""
    gray = np.rint(np.clip(hmap.values, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    PILImage.fromarray(gray, mode="L").save(buf, format="PNG")
    from . import _atomic

    _atomic.write_bytes(path, buf.getvalue())


_PNM_HEADER = re.compile(rb"^(P[56])\s")


def _read_pnm_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    """Parse `count` whitespace/comment-separated integers, return (values, offset)."""
    values: list[int] = []
    i = 0
    while len(values) < count:
        if i >= len(data):
            raise DataError("truncated PNM header")
        c = data[i : i + 1]
        if c == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j : j + 1].isspace():
                j += 1
            token = data[i:j]
            if not token.isdigit():
                raise DataError(f"bad PNM header token {token!r}")
            values.append(int(token))
            i = j
    return values, i + 1  # single whitespace byte after the last header token


def _read_pnm(path: str) -> Image:
    with open(path, "rb") as fh:
        data = fh.read()
    m = _PNM_HEADER.match(data)
    if not m:
        raise DataError(f"{path!r} is not a binary PPM/PGM file")
    kind = m.group(1)
    values, offset = _read_pnm_tokens(data[2:], 3)
    offset += 2
    width, height, maxval = values
    if maxval != 255:
        raise DataError(f"unsupported PNM maxval {maxval} (only 8-bit supported)")
    channels = 3 if kind == b"P6" else 1
    expected = width * height * channels
    payload = data[offset : offset + expected]
    if len(payload) != expected:
        raise DataError(f"truncated PNM payload in {path!r}")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return Image(pixels=arr)


def _write_pnm(path: str, img: Image) -> None:
    if img.channels == 3:
        header = b"P6 %d %d 255\n" % (img.width, img.height)
    else:
        header = b"P5 %d %d 255\n" % (img.width, img.height)
    from . import _atomic

    _atomic.write_bytes(path, header + img.pixels.tobytes())


def write_pgm16(path: str, values: np.ndarray) -> None:
    """16-bit big-endian PGM, used for superpixel label map debug export."""
    if values.ndim != 2:
        raise ValueError("expected a 2-D array")
    if values.min() < 0 or values.max() > 65535:
        raise ValueError("values out of 16-bit range")
    header = b"P5 %d %d 65535\n" % (values.shape[1], values.shape[0])
    payload = values.astype(">u2").tobytes()
    from . import _atomic

    _atomic.write_bytes(path, header + payload)
