"""Binary PPM (P6) and PGM (P5) with maxval 255.

Readers tolerate ``#`` comments in the header; writers emit the canonical
form ``P6\\n<w> <h>\\n255\\n`` followed by the raw payload.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class FormatError(ValueError):
    """Malformed or truncated netpbm data; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True, eq=False)
class Image:
    """8-bit RGB image stored as a (height, width, 3) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if p.dtype != np.uint8 or p.ndim != 3 or p.shape[2] != 3 or min(p.shape) < 1:
            raise ValueError(f"expected an (h, w, 3) uint8 array, got {p.dtype} {p.shape}")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        return isinstance(other, Image) and np.array_equal(self.pixels, other.pixels)


_WHITESPACE = b" \t\n\r\v\f"


def _header(data: bytes, magic: bytes) -> tuple[list[int], int]:
    if data[:2] != magic:
        raise FormatError(f"expected magic {magic.decode()}, found {data[:2]!r}", 0)
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(data):
            raise FormatError("truncated header", pos)
        ch = data[pos:pos + 1]
        if ch == b"#":
            end = data.find(b"\n", pos)
            if end < 0:
                raise FormatError("unterminated comment in header", pos)
            pos = end + 1
        elif ch in _WHITESPACE:
            pos += 1
        elif ch.isdigit():
            start = pos
            while pos < len(data) and data[pos:pos + 1].isdigit():
                pos += 1
            fields.append(int(data[start:pos]))
        else:
            raise FormatError(f"unexpected byte {ch!r} in header", pos)
    if pos >= len(data) or data[pos:pos + 1] not in _WHITESPACE:
        raise FormatError("missing whitespace after maxval", pos)
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise FormatError(f"non-positive dimensions {width}x{height}", 2)
    if maxval != 255:
        raise FormatError(f"maxval must be 255, got {maxval}", pos)
    return [width, height], pos + 1


def _payload(data: bytes, start: int, n: int) -> np.ndarray:
    if len(data) - start < n:
        raise FormatError(
            f"truncated payload: expected {n} bytes, found {len(data) - start}", len(data)
        )
    return np.frombuffer(data, dtype=np.uint8, count=n, offset=start)


def read_ppm(data: bytes) -> Image:
    (w, h), start = _header(data, b"P6")
    return Image(_payload(data, start, w * h * 3).reshape(h, w, 3).copy())


def write_ppm(image: Image) -> bytes:
    return f"P6\n{image.width} {image.height}\n255\n".encode("ascii") + image.pixels.tobytes()


def read_pgm(data: bytes) -> np.ndarray:
    """Returns a (height, width) uint8 array."""
    (w, h), start = _header(data, b"P5")
    return _payload(data, start, w * h).reshape(h, w).copy()


def write_pgm(gray: np.ndarray) -> bytes:
    gray = np.asarray(gray)
    if gray.dtype != np.uint8 or gray.ndim != 2:
        raise ValueError(f"expected an (h, w) uint8 array, got {gray.dtype} {gray.shape}")
    h, w = gray.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + gray.tobytes()
