"""Regenerate the golden files with raw struct packing (no roigan imports).

Run once; the tests pin the resulting bytes by SHA-256, so rerunning must be a no-op.
"""

import struct
from pathlib import Path

HERE = Path(__file__).parent

S, H, W = 3, 2, 4
IMAGE = [(k % 7) / 8.0 for k in range(S * H * W)]  # exact in float32
MASK = [1 if k % 3 == 0 else 0 for k in range(S * H * W)]


def rvs() -> bytes:
    head = b"RVSTACK1" + struct.pack("<IIIIff", 1, S, H, W, 1.25, 2.5)
    return head + struct.pack(f"<{len(IMAGE)}f", *IMAGE) + bytes(MASK)


def entry(name: str, tag: int, shape, payload: bytes) -> bytes:
    key = name.encode()
    return (struct.pack("<I", len(key)) + key + struct.pack("<BB", tag, len(shape))
            + struct.pack(f"<{len(shape)}I", *shape) + struct.pack("<Q", len(payload)) + payload)


def ckpt() -> bytes:
    params = [entry("net.w", 1, (2, 2), struct.pack("<4f", 0.5, -1.0, 2.0, 0.25)),
              entry("net.b", 2, (3,), struct.pack("<3d", 1e-3, 0.0, -7.5))]
    optim = [entry("gen.net.w.step", 4, (), struct.pack("<q", 12))]
    meta = [entry("note", 3, (2,), b"ok")]
    out = b"ROIGANCK" + struct.pack("<I", 1)
    for table in (params, optim, meta):
        out += struct.pack("<I", len(table)) + b"".join(table)
    return out


if __name__ == "__main__":
    (HERE / "stack.rvs").write_bytes(rvs())
    (HERE / "tiny.ckpt").write_bytes(ckpt())
