"""Client for external embedding servers speaking line-delimited JSON.

The server is any subprocess that answers ``hello``, ``embed`` and
``shutdown`` requests, one JSON object per line on stdin/stdout. A channel
carries one request at a time; parallel callers either share the channel
lock or spawn more processes.

Images travel by file path. When an image was loaded from disk its own
path is sent; synthesized images (perturbations) are written to a scratch
directory first and removed after the reply.
"""

from __future__ import annotations

import json
import os
import queue
import shlex
import shutil
import subprocess
import tempfile
import threading

import numpy as np

from .embedding import EmbedderDescriptor
from .errors import BridgeError
from .raster import Image, save_image


class BridgeEmbedder:
    def __init__(self, command: str, timeout: float = 120.0):
        self._timeout = timeout
        self._lock = threading.Lock()
        self._next_id = 0
        self._scratch = tempfile.mkdtemp(prefix="verilime-bridge-")
        self._closed = False
        try:
            self._proc = subprocess.Popen(
                shlex.split(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise BridgeError(f"cannot start bridge {command!r}: {exc}") from exc
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        hello = self._request({"op": "hello", "id": self._take_id()})
        try:
            name = str(hello["name"])
            dim = int(hello["dim"])
        except (KeyError, TypeError, ValueError) as exc:
            raise BridgeError(f"malformed hello reply: {hello!r}") from exc
        fill = hello.get("preferred_fill")
        self.descriptor = EmbedderDescriptor(
            name=name,
            dim=dim,
            kind="bridge",
            preferred_fill=tuple(int(v) for v in fill) if fill else None,
        )

    def _pump(self):
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _take_id(self) -> int:
        rid = self._next_id
        self._next_id += 1
        return rid

    def _request(self, payload: dict) -> dict:
        proc = self._proc
        if proc.poll() is not None:
            raise BridgeError(f"bridge exited with status {proc.returncode}")
        try:
            assert proc.stdin is not None
            proc.stdin.write(json.dumps(payload) + "\n")
            proc.stdin.flush()
        except (OSError, ValueError) as exc:
            raise BridgeError(f"cannot write to bridge: {exc}") from exc
        try:
            line = self._lines.get(timeout=self._timeout)
        except queue.Empty:
            raise BridgeError(f"bridge reply timed out after {self._timeout}s") from None
        if line is None:
            raise BridgeError("bridge closed its output stream")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BridgeError(f"malformed bridge reply: {line!r}") from exc
        if not isinstance(reply, dict):
            raise BridgeError(f"malformed bridge reply: {line!r}")
        if "error" in reply:
            raise BridgeError(f"bridge error: {reply['error']}")
        if reply.get("id") != payload["id"]:
            raise BridgeError(
                f"bridge reply id {reply.get('id')!r} does not match request id {payload['id']}"
            )
        return reply

    def _image_path(self, img: Image) -> tuple[str, bool]:
        """Path to send for an image: its source file, or a scratch PNG."""
        if img.source and os.path.isfile(img.source):
            return os.path.abspath(img.source), False
        fd, path = tempfile.mkstemp(suffix=".png", dir=self._scratch)
        os.close(fd)
        save_image(path, img)
        return path, True

    def embed(self, img: Image) -> np.ndarray:
        with self._lock:
            path, is_scratch = self._image_path(img)
            try:
                reply = self._request(
                    {"op": "embed", "id": self._take_id(), "image": path, "flip": False}
                )
            finally:
                if is_scratch:
                    try:
                        os.unlink(path)
                    except OSError:
                        pass
        embedding = reply.get("embedding")
        if not isinstance(embedding, list):
            raise BridgeError(f"embed reply carries no embedding array: {reply!r}")
        return np.asarray(embedding, dtype=np.float64)

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        with self._lock:
            if self._proc.poll() is None:
                try:
                    assert self._proc.stdin is not None
                    self._proc.stdin.write(
                        json.dumps({"op": "shutdown", "id": self._take_id()}) + "\n"
                    )
                    self._proc.stdin.flush()
                    self._proc.stdin.close()
                except (OSError, ValueError):
                    pass
                try:
                    self._proc.wait(timeout=10)
                except subprocess.TimeoutExpired:
                    self._proc.kill()
                    self._proc.wait()
        shutil.rmtree(self._scratch, ignore_errors=True)

    def __enter__(self) -> "BridgeEmbedder":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass
