"""Binary PPM (P6, 8-bit) image IO; images are float arrays in [-1,1], HWC."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def to_u8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round((img + 1.0) * 127.5), 0, 255).astype(np.uint8)


def from_u8(u8: np.ndarray) -> np.ndarray:
    return (u8.astype(np.float32) / 127.5) - 1.0


def write_ppm(path, img: np.ndarray):
    """img: (H,W,3) float in [-1,1]."""
    u8 = to_u8(img)
    h, w, _ = u8.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(u8.tobytes())


def ppm_bytes(img: np.ndarray) -> bytes:
    u8 = to_u8(img)
    h, w, _ = u8.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + u8.tobytes()


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    return parse_ppm(raw)


def parse_ppm(raw: bytes) -> np.ndarray:
    if not raw.startswith(b"P6"):
        raise ValueError("not a binary PPM (P6) image")
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = int(fields[0]), int(fields[1]), int(fields[2])
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    u8 = np.frombuffer(raw[pos : pos + w * h * 3], dtype=np.uint8).reshape(h, w, 3)
    return from_u8(u8)
