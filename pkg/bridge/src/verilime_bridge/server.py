"""The request loop: line-delimited JSON over stdin/stdout.

Requests: {"op": "hello" | "embed" | "shutdown", "id": int, and for embed
"image": file path, "flip": bool}. Every request gets exactly one response
carrying its id: {"id", "name", "dim", ...} for hello, {"id", "embedding"}
for embed, or {"id", "error"}. Malformed lines get {"id": -1, "error"}.
The loop never crashes on bad input; shutdown flushes and returns.
"""

from __future__ import annotations

import json
from typing import IO

import numpy as np
from PIL import Image as PILImage


def load_rgb(path: str) -> np.ndarray:
    """Read any supported image into (H, W, 3) uint8 RGB."""
    with PILImage.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def flip_pixels(pixels: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(pixels[:, ::-1, :])


def handle_request(model, request: dict, preferred_fill=None) -> tuple[dict, bool]:
    """One request -> (response, keep_running)."""
    rid = request.get("id", -1)
    if not isinstance(rid, int):
        rid = -1
    op = request.get("op")
    if op == "hello":
        reply = {"id": rid, "name": model.name, "dim": model.dim,
                 "metadata": model.metadata}
        if preferred_fill is not None:
            reply["preferred_fill"] = list(preferred_fill)
        return reply, True
    if op == "embed":
        path = request.get("image")
        if not isinstance(path, str):
            return {"id": rid, "error": "embed request needs an 'image' path"}, True
        try:
            pixels = load_rgb(path)
            if request.get("flip", False):
                pixels = flip_pixels(pixels)
            vector = model(pixels)
            return {"id": rid, "embedding": [float(v) for v in vector]}, True
        except Exception as exc:
            return {"id": rid, "error": f"{type(exc).__name__}: {exc}"}, True
    if op == "shutdown":
        return {"id": rid, "ok": True}, False
    return {"id": rid, "error": f"unknown op {op!r}"}, True


def serve(model, stdin: IO[str], stdout: IO[str], preferred_fill=None) -> int:
    """Run the request loop until shutdown or EOF. Returns the exit code."""
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
            if not isinstance(request, dict):
                raise ValueError("request must be a JSON object")
        except ValueError as exc:
            stdout.write(json.dumps({"id": -1, "error": f"malformed request: {exc}"}) + "\n")
            stdout.flush()
            continue
        reply, keep_running = handle_request(model, request, preferred_fill)
        stdout.write(json.dumps(reply) + "\n")
        stdout.flush()
        if not keep_running:
            break
    stdout.flush()
    return 0
