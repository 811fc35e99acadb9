import json
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image as PILImage


def write_png(path, rng, size=16):
    pixels = rng.integers(0, 256, (size, size, 3)).astype(np.uint8)
    PILImage.fromarray(pixels).save(path)
    return str(path)


class BridgeProcess:
    """Raw protocol driver for tests: one JSON line out, one line back."""

    def __init__(self, model="dummy:dim=8,seed=3", extra_args=()):
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "verilime_bridge", "serve", "--model", model,
             *extra_args],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._next_id = 0

    def send_line(self, line: str) -> dict:
        assert self.proc.stdin and self.proc.stdout
        self.proc.stdin.write(line + "\n")
        self.proc.stdin.flush()
        return json.loads(self.proc.stdout.readline())

    def request(self, op, **fields) -> dict:
        rid = self._next_id
        self._next_id += 1
        return self.send_line(json.dumps({"op": op, "id": rid, **fields}))

    def shutdown(self) -> int:
        if self.proc.poll() is None:
            try:
                self.request("shutdown")
            except Exception:
                pass
        self.proc.stdin.close()
        return self.proc.wait(timeout=10)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        try:
            self.shutdown()
        except Exception:
            self.proc.kill()


@pytest.fixture
def rng():
    return np.random.default_rng(424242)
