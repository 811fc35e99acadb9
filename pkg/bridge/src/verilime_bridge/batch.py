"""Offline batch extraction: every manifest image -> one .emb row.

The .emb layout ("EMB1", u32-LE count, u32-LE dim, float32-LE rows) and its
sibling CSV manifest (index, path) match the toolkit's reader bit for bit.
By default rows are flip-averaged descriptors, the form the verification
protocol consumes; per-image failures land in a sibling errors CSV and the
failed images are left out of the batch.
"""

from __future__ import annotations

import csv
import json
import os
import struct
import tempfile

import numpy as np

from .server import flip_pixels, load_rgb

EMB_MAGIC = b"EMB1"


class BatchError(Exception):
    pass


def read_manifest_paths(path: str) -> list[str]:
    """Image paths from a dataset manifest JSON (subjects -> images) or a
    plain newline-separated list; relative paths resolve against the file."""
    base = os.path.dirname(os.path.abspath(path))
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise BatchError(f"cannot read manifest {path!r}: {exc}") from exc
    if path.endswith(".json"):
        try:
            doc = json.loads(text)
            paths = [
                os.path.normpath(os.path.join(base, item["path"]))
                for subject in doc["subjects"]
                for item in subject["images"]
            ]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise BatchError(f"malformed manifest {path!r}: {exc}") from exc
        return paths
    return [
        os.path.normpath(os.path.join(base, line.strip()))
        for line in text.splitlines()
        if line.strip()
    ]


def descriptor_for(model, path: str, flip_average: bool) -> np.ndarray:
    pixels = load_rgb(path)
    vector = model(pixels)
    if flip_average:
        vector = (vector + model(flip_pixels(pixels))) * 0.5
    return vector


def embed_batch(model, paths: list[str], out_path: str, flip_average: bool = True) -> dict:
    """Write the batch file, its CSV manifest, and an errors CSV.

    Output appears atomically (temp file + rename); nothing is left behind
    if the run aborts. Returns counts for the run report.
    """
    rows: list[np.ndarray] = []
    row_paths: list[str] = []
    failures: list[tuple[str, str]] = []
    for path in paths:
        try:
            rows.append(descriptor_for(model, path, flip_average).astype("<f4"))
            row_paths.append(path)
        except Exception as exc:
            failures.append((path, f"{type(exc).__name__}: {exc}"))

    matrix = (
        np.stack(rows) if rows else np.zeros((0, model.dim), dtype="<f4")
    )
    count, dim = matrix.shape
    payload = EMB_MAGIC + struct.pack("<II", count, dim) + matrix.astype("<f4").tobytes()

    _atomic_write(out_path, payload)
    manifest_path = os.path.splitext(out_path)[0] + ".csv"
    lines = ["index,path"] + [f"{i},{p}" for i, p in enumerate(row_paths)]
    _atomic_write(manifest_path, ("\n".join(lines) + "\n").encode())

    errors_path = os.path.splitext(out_path)[0] + ".errors.csv"
    if failures:
        import io

        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["path", "reason"])
        writer.writerows(failures)
        _atomic_write(errors_path, buf.getvalue().encode())
    elif os.path.exists(errors_path):
        os.unlink(errors_path)
    return {"count": count, "dim": dim, "failures": len(failures)}


def _atomic_write(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
