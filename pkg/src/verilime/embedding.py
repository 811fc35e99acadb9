"""The black-box recognizer contract and everything built directly on it.

An embedder is any object with a ``descriptor`` attribute and an
``embed(image) -> vector`` method. Three synthetic families ship for
testing; real models are reached through the subprocess bridge client or
through precomputed ``.emb`` batch files.

Verification descriptors are held at single precision (the ``.emb``
payload width), so scoring from a precomputed batch file is bit-identical
to scoring against the live embedder that produced it.
"""

from __future__ import annotations

import csv
import hashlib
import math
import os
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .errors import DataError, EmbedderError
from .raster import Image, flip_horizontal

_EMB_MAGIC = b"EMB1"


@dataclass(frozen=True)
class EmbedderDescriptor:
    """Identity and shape of an embedder; echoed into result metadata."""

    name: str
    dim: int
    kind: str  # synthetic-region | synthetic-constant | synthetic-projection | bridge | file
    preferred_fill: tuple[int, int, int] | None = None


class Embedder(Protocol):
    descriptor: EmbedderDescriptor

    def embed(self, img: Image) -> np.ndarray: ...


def embed(embedder: Embedder, img: Image) -> np.ndarray:
    """Query an embedder and enforce its declared contract."""
    try:
        vec = np.asarray(embedder.embed(img), dtype=np.float64)
    except EmbedderError:
        raise
    except Exception as exc:
        raise EmbedderError(f"{embedder.descriptor.name}: {exc}") from exc
    desc = embedder.descriptor
    if vec.shape != (desc.dim,):
        raise EmbedderError(
            f"{desc.name}: embedding shape {vec.shape} does not match declared dim {desc.dim}"
        )
    if not np.all(np.isfinite(vec)):
        raise EmbedderError(f"{desc.name}: embedding contains non-finite values")
    return vec


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """dot(u, v) / (|u| |v|), clamped to [-1, 1] against rounding.

    The denominator is sqrt(dot(u,u) * dot(v,v)), which makes the
    self-similarity of any vector exactly 1.0.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"embedding dims differ: {u.shape} vs {v.shape}")
    duu = float(np.dot(u, u))
    dvv = float(np.dot(v, v))
    if duu < 1e-24 or dvv < 1e-24:
        raise ValueError("cosine similarity undefined for (near-)zero-norm vectors")
    c = float(np.dot(u, v)) / math.sqrt(duu * dvv)
    return min(1.0, max(-1.0, c))


def flip_averaged_descriptor(embedder: Embedder, img: Image) -> np.ndarray:
    """Element-wise mean of the embeddings of an image and its mirror."""
    return (embed(embedder, img) + embed(embedder, flip_horizontal(img))) * 0.5


def verification_descriptor(embedder: Embedder, img: Image) -> np.ndarray:
    """The descriptor used for verification scoring, at single precision.

    File-backed embedders already store final descriptors; live embedders
    are flip-averaged per the verification protocol.
    """
    if getattr(embedder, "provides_descriptors", False):
        vec = embed(embedder, img)
    else:
        vec = flip_averaged_descriptor(embedder, img)
    return vec.astype(np.float32)


def scalar_probe(probe: Callable[[Image], float], img: Image) -> float:
    """Evaluate an image -> [0, 1] probe, rejecting out-of-range replies."""
    try:
        r = float(probe(img))
    except EmbedderError:
        raise
    except Exception as exc:
        raise EmbedderError(f"scalar probe failed: {exc}") from exc
    if not math.isfinite(r) or not 0.0 <= r <= 1.0:
        raise EmbedderError(f"scalar probe returned {r!r}, expected a value in [0, 1]")
    return r


# ---------------------------------------------------------------------------
# Synthetic embedders
# ---------------------------------------------------------------------------


class ConstantEmbedder:
    """Returns the same vector for every image (degenerate test double)."""

    def __init__(self, vector=(1.0, 0.5, 0.25, 0.125), name: str = "constant"):
        self._vector = np.asarray(vector, dtype=np.float64)
        self.descriptor = EmbedderDescriptor(
            name=name, dim=self._vector.shape[0], kind="synthetic-constant"
        )

    def embed(self, img: Image) -> np.ndarray:
        return self._vector.copy()


class RegionEmbedder:
    """Mean intensity over 8 fixed zones, one zone amplified by a gain.

    Zones are a 2x4 grid of rectangles (row-major zone index). Coordinate
    ``sensitive_zone`` is ``gain * mean`` over that zone; every other
    coordinate is the plain zone mean. Masking pixels outside the sensitive
    zone therefore leaves its coordinate unchanged, which is the
    ground-truth lever the end-to-end tests pull on.
    """

    ZONE_ROWS = 2
    ZONE_COLS = 4
    DIM = 8

    def __init__(self, sensitive_zone: int = 0, gain: float = 10.0):
        if not 0 <= sensitive_zone < self.DIM:
            raise ValueError(f"sensitive_zone must be in [0, {self.DIM}), got {sensitive_zone}")
        self.sensitive_zone = sensitive_zone
        self.gain = float(gain)
        self.descriptor = EmbedderDescriptor(
            name=f"region(zone={sensitive_zone},gain={self.gain:g})",
            dim=self.DIM,
            kind="synthetic-region",
        )

    @classmethod
    def zone_bounds(cls, height: int, width: int) -> list[tuple[int, int, int, int]]:
        """(y0, y1, x0, x1) half-open bounds of the 8 zones, row-major."""
        if height < cls.ZONE_ROWS or width < cls.ZONE_COLS:
            raise EmbedderError(
                f"region embedder needs at least {cls.ZONE_ROWS}x{cls.ZONE_COLS} images"
            )
        bounds = []
        for r in range(cls.ZONE_ROWS):
            y0 = r * height // cls.ZONE_ROWS
            y1 = (r + 1) * height // cls.ZONE_ROWS
            for c in range(cls.ZONE_COLS):
                x0 = c * width // cls.ZONE_COLS
                x1 = (c + 1) * width // cls.ZONE_COLS
                bounds.append((y0, y1, x0, x1))
        return bounds

    def sensitive_rect(self, height: int, width: int) -> tuple[int, int, int, int]:
        return self.zone_bounds(height, width)[self.sensitive_zone]

    def embed(self, img: Image) -> np.ndarray:
        px = img.pixels.astype(np.float64)
        vec = np.empty(self.DIM, dtype=np.float64)
        for z, (y0, y1, x0, x1) in enumerate(self.zone_bounds(img.height, img.width)):
            vec[z] = px[y0:y1, x0:x1, :].mean()
        vec[self.sensitive_zone] *= self.gain
        return vec


class ProjectionEmbedder:
    """Fixed seeded linear map from normalized pixels to a dense vector."""

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.seed = seed
        self.descriptor = EmbedderDescriptor(
            name=f"projection(dim={dim},seed={seed})", dim=dim, kind="synthetic-projection"
        )
        self._matrices: dict[tuple[int, int, int], np.ndarray] = {}
        self._lock = threading.Lock()

    def _matrix(self, shape: tuple[int, int, int]) -> np.ndarray:
        with self._lock:
            mat = self._matrices.get(shape)
            if mat is None:
                rng = np.random.Generator(np.random.PCG64(self.seed))
                n = shape[0] * shape[1] * shape[2]
                mat = rng.standard_normal((self.descriptor.dim, n))
                self._matrices[shape] = mat
            return mat

    def embed(self, img: Image) -> np.ndarray:
        mat = self._matrix(img.pixels.shape)
        return mat @ (img.pixels.astype(np.float64).ravel() / 255.0)


class ScaledEmbedder:
    """Wraps an embedder, multiplying its outputs by a positive constant."""

    def __init__(self, base: Embedder, factor: float):
        if factor <= 0:
            raise ValueError(f"scale factor must be > 0, got {factor}")
        self._base = base
        self._factor = float(factor)
        d = base.descriptor
        self.descriptor = EmbedderDescriptor(
            name=f"{d.name}*{factor:g}", dim=d.dim, kind=d.kind,
            preferred_fill=d.preferred_fill,
        )

    def embed(self, img: Image) -> np.ndarray:
        return self._factor * embed(self._base, img)


# ---------------------------------------------------------------------------
# Descriptor cache
# ---------------------------------------------------------------------------


class EmbeddingCache:
    """Thread-safe cache keyed by (embedder name, image content hash)."""

    def __init__(self):
        self._data: dict[tuple[str, bytes], np.ndarray] = {}
        self._lock = threading.Lock()

    def get_or_compute(
        self, embedder: Embedder, img: Image, compute: Callable[[], np.ndarray]
    ) -> np.ndarray:
        key = (embedder.descriptor.name, hashlib.sha1(img.content_key()).digest())
        with self._lock:
            cached = self._data.get(key)
        if cached is not None:
            return cached
        value = compute()
        with self._lock:
            return self._data.setdefault(key, value)

    def __len__(self) -> int:
        with self._lock:
            return len(self._data)


# ---------------------------------------------------------------------------
# Embedding batch files (.emb)
# ---------------------------------------------------------------------------


def emb_to_bytes(matrix: np.ndarray) -> bytes:
    matrix = np.asarray(matrix, dtype="<f4")
    if matrix.ndim != 2:
        raise ValueError("embedding batch must be a 2-D (count, dim) matrix")
    count, dim = matrix.shape
    return _EMB_MAGIC + struct.pack("<II", count, dim) + matrix.tobytes()


def emb_from_bytes(data: bytes) -> np.ndarray:
    if len(data) < 12 or data[:4] != _EMB_MAGIC:
        raise DataError("not an embedding batch file: bad magic")
    count, dim = struct.unpack("<II", data[4:12])
    expected = 12 + count * dim * 4
    if len(data) != expected:
        raise DataError(
            f"embedding batch size mismatch: expected {expected} bytes, got {len(data)}"
        )
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(count, dim).copy()


def emb_manifest_path(emb_path: str) -> str:
    return str(Path(emb_path).with_suffix(".csv"))


def emb_write(emb_path: str, matrix: np.ndarray, paths: list[str]) -> None:
    """Write a batch file plus its sibling CSV manifest (index, image path)."""
    matrix = np.asarray(matrix, dtype="<f4")
    if matrix.shape[0] != len(paths):
        raise ValueError("one manifest row is required per embedding")
    from . import _atomic

    _atomic.write_bytes(emb_path, emb_to_bytes(matrix))
    lines = ["index,path"]
    lines += [f"{i},{p}" for i, p in enumerate(paths)]
    _atomic.write_text(emb_manifest_path(emb_path), "\n".join(lines) + "\n")


def emb_read(emb_path: str) -> tuple[np.ndarray, list[str]]:
    try:
        with open(emb_path, "rb") as fh:
            matrix = emb_from_bytes(fh.read())
    except OSError as exc:
        raise DataError(f"cannot read embedding batch {emb_path!r}: {exc}") from exc
    manifest = emb_manifest_path(emb_path)
    paths: list[str] = []
    try:
        with open(manifest, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["index", "path"]:
                raise DataError(f"bad embedding manifest header in {manifest!r}: {header}")
            for row in reader:
                if len(row) != 2:
                    raise DataError(f"bad embedding manifest row in {manifest!r}: {row}")
                paths.append(row[1])
    except OSError as exc:
        raise DataError(f"cannot read embedding manifest {manifest!r}: {exc}") from exc
    if len(paths) != matrix.shape[0]:
        raise DataError(
            f"embedding manifest lists {len(paths)} rows, batch holds {matrix.shape[0]}"
        )
    return matrix, paths


class EmbFileEmbedder:
    """Serves precomputed descriptors from an .emb batch file, keyed by path.

    Rows are final per-image descriptors, so verification scoring uses them
    directly (no flip averaging).
    """

    provides_descriptors = True

    def __init__(self, emb_path: str):
        matrix, paths = emb_read(emb_path)
        self._rows: dict[str, int] = {}
        for i, p in enumerate(paths):
            self._rows.setdefault(p, i)
            self._rows.setdefault(os.path.abspath(p), i)
        self._matrix = matrix
        self.descriptor = EmbedderDescriptor(
            name=f"emb:{os.path.basename(emb_path)}",
            dim=int(matrix.shape[1]),
            kind="file",
        )

    def embed(self, img: Image) -> np.ndarray:
        if img.source is None:
            raise EmbedderError(
                "file-backed embedder needs images loaded from a path (no source recorded)"
            )
        idx = self._rows.get(img.source)
        if idx is None:
            idx = self._rows.get(os.path.abspath(img.source))
        if idx is None:
            raise EmbedderError(f"no precomputed embedding for {img.source!r}")
        return self._matrix[idx].astype(np.float64)


# ---------------------------------------------------------------------------
# Embedder spec strings (CLI surface)
# ---------------------------------------------------------------------------

BRIDGE_ENV_VAR = "VERILIME_BRIDGE_CMD"


def parse_embedder_spec(spec: str) -> Embedder:
    """Build an embedder from a spec string.

    Forms: ``region[:gain=10,zone=0]``, ``constant[:dim=4,value=1.0]``,
    ``projection[:dim=64,seed=0]``, ``emb:<path>``, ``bridge:<command>``.
    The VERILIME_BRIDGE_CMD environment variable overrides the bridge
    command line when set.
    """
    from .errors import ConfigError

    kind, _, rest = spec.partition(":")
    kind = kind.strip()
    if kind == "emb":
        if not rest:
            raise ConfigError("emb spec needs a file path: emb:<path>")
        return EmbFileEmbedder(rest)
    if kind == "bridge":
        command = os.environ.get(BRIDGE_ENV_VAR) or rest
        if not command:
            raise ConfigError("bridge spec needs a command line: bridge:<command>")
        from .bridge_client import BridgeEmbedder

        return BridgeEmbedder(command)
    params: dict[str, str] = {}
    if rest:
        for part in rest.split(","):
            key, eq, value = part.partition("=")
            if not eq:
                raise ConfigError(f"bad embedder parameter {part!r} in {spec!r}")
            params[key.strip()] = value.strip()
    try:
        if kind == "region":
            embedder = RegionEmbedder(
                sensitive_zone=int(params.pop("zone", 0)),
                gain=float(params.pop("gain", 10.0)),
            )
        elif kind == "constant":
            dim = int(params.pop("dim", 4))
            value = float(params.pop("value", 1.0))
            embedder = ConstantEmbedder(vector=np.full(dim, value))
        elif kind == "projection":
            embedder = ProjectionEmbedder(
                dim=int(params.pop("dim", 64)), seed=int(params.pop("seed", 0))
            )
        else:
            raise ConfigError(f"unknown embedder kind {kind!r} in spec {spec!r}")
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad embedder spec {spec!r}: {exc}") from exc
    if params:
        raise ConfigError(f"unknown parameters {sorted(params)} in embedder spec {spec!r}")
    return embedder
