"""Little-endian binary encoding helpers shared by the file formats."""

import struct

import numpy as np

from .errors import RasterFormatError


class Reader:
    """Cursor over a byte buffer with offset-aware errors."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise RasterFormatError(
                f"truncated file: needed {n} bytes for {what}", self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def expect_magic(self, magic: bytes):
        got = self.take(len(magic), "magic")
        if got != magic:
            raise RasterFormatError(
                f"bad magic {got!r}, expected {magic!r}", 0)

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def utf8(self, n: int, what: str) -> str:
        return self.take(n, what).decode("utf-8")

    def f32_array(self, count: int, what: str) -> np.ndarray:
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4").copy()

    def f64_array(self, count: int, what: str) -> np.ndarray:
        raw = self.take(8 * count, what)
        return np.frombuffer(raw, dtype="<f8").copy()

    def done(self):
        if self.pos != len(self.data):
            raise RasterFormatError(
                f"{len(self.data) - self.pos} unexpected trailing bytes", self.pos)


def u32(value: int) -> bytes:
    return struct.pack("<I", value)


def f32_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def f64_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()
