"""Model loading: a dependency-free dummy model plus a TorchScript loader.

A model is a callable mapping an RGB uint8 pixel array (H, W, 3) to a 1-D
float vector, with ``name``, ``dim`` and ``metadata`` attributes. All
preprocessing happens here and is reported through the hello metadata, so
clients can treat the bridge as a black box.
"""

from __future__ import annotations

import numpy as np


class ModelLoadError(Exception):
    pass


class DummyModel:
    """Fixed seeded random projection of the normalized pixels.

    Deterministic per (seed, image shape, pixel values); exists so the
    protocol can be exercised without any ML runtime.
    """

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 1:
            raise ModelLoadError(f"dummy model dim must be >= 1, got {dim}")
        self.dim = dim
        self.seed = seed
        self.name = f"dummy-projection(dim={dim},seed={seed})"
        self.metadata = {"preprocessing": "RGB, pixel values scaled to [0, 1]"}
        self._matrices: dict[tuple[int, ...], np.ndarray] = {}

    def __call__(self, pixels: np.ndarray) -> np.ndarray:
        key = pixels.shape
        matrix = self._matrices.get(key)
        if matrix is None:
            rng = np.random.Generator(np.random.PCG64(self.seed))
            matrix = rng.standard_normal((self.dim, pixels.size))
            self._matrices[key] = matrix
        return matrix @ (pixels.astype(np.float64).ravel() / 255.0)


class TorchScriptModel:
    """Wraps a TorchScript module in evaluation mode.

    Preprocessing: resize to ``size`` when given, scale to [0, 1], optional
    per-channel mean/std normalization, NCHW layout. The output tensor is
    flattened to the descriptor vector.
    """

    def __init__(self, path: str, size: int | None = None,
                 mean: tuple[float, ...] | None = None,
                 std: tuple[float, ...] | None = None):
        try:
            import torch
        except ImportError as exc:
            raise ModelLoadError("torch is not installed; use the dummy model") from exc
        try:
            self._module = torch.jit.load(path, map_location="cpu")
        except Exception as exc:
            raise ModelLoadError(f"cannot load TorchScript model {path!r}: {exc}") from exc
        self._module.eval()
        self._torch = torch
        self._size = size
        self._mean = mean
        self._std = std
        self.name = f"torchscript:{path}"
        self.metadata = {
            "preprocessing": {
                "resize": size,
                "scale": "[0, 1]",
                "mean": list(mean) if mean else None,
                "std": list(std) if std else None,
                "layout": "NCHW",
            }
        }
        probe = np.zeros((size or 8, size or 8, 3), dtype=np.uint8)
        self.dim = int(self(probe).shape[0])

    def __call__(self, pixels: np.ndarray) -> np.ndarray:
        torch = self._torch
        if self._size is not None and pixels.shape[:2] != (self._size, self._size):
            from PIL import Image as PILImage

            resized = PILImage.fromarray(pixels).resize(
                (self._size, self._size), PILImage.BILINEAR
            )
            pixels = np.asarray(resized, dtype=np.uint8)
        x = pixels.astype(np.float32) / 255.0
        if self._mean is not None:
            x = x - np.asarray(self._mean, dtype=np.float32)
        if self._std is not None:
            x = x / np.asarray(self._std, dtype=np.float32)
        tensor = torch.from_numpy(np.transpose(x, (2, 0, 1)))[None, ...]
        with torch.no_grad():
            out = self._module(tensor)
        return out.detach().cpu().numpy().astype(np.float64).ravel()


def load_model(spec: str):
    """Build a model from a spec string.

    Forms: ``dummy[:dim=64,seed=0]`` and
    ``torchscript:path=<file>[,size=113,mean=...,std=...]`` (mean/std are
    ``/``-separated channel triples).
    """
    kind, _, rest = spec.partition(":")
    params: dict[str, str] = {}
    if rest:
        for part in rest.split(","):
            key, eq, value = part.partition("=")
            if not eq:
                raise ModelLoadError(f"bad model parameter {part!r} in {spec!r}")
            params[key.strip()] = value.strip()
    try:
        if kind == "dummy":
            model = DummyModel(
                dim=int(params.pop("dim", 64)), seed=int(params.pop("seed", 0))
            )
        elif kind == "torchscript":
            path = params.pop("path", "")
            if not path:
                raise ModelLoadError("torchscript model needs path=<file>")
            size = int(params.pop("size")) if "size" in params else None
            mean = _triple(params.pop("mean", None))
            std = _triple(params.pop("std", None))
            model = TorchScriptModel(path, size=size, mean=mean, std=std)
        else:
            raise ModelLoadError(f"unknown model kind {kind!r} in spec {spec!r}")
    except (TypeError, ValueError) as exc:
        raise ModelLoadError(f"bad model spec {spec!r}: {exc}") from exc
    if params:
        raise ModelLoadError(f"unknown parameters {sorted(params)} in model spec {spec!r}")
    return model


def _triple(text: str | None) -> tuple[float, ...] | None:
    if text is None:
        return None
    return tuple(float(v) for v in text.split("/"))
