"""Binary PGM ("P5") reading and writing.

Samples are one byte when maxval < 256 and two bytes, most significant
first, otherwise. Comments (``#`` to end of line) are allowed between
header tokens.
"""
from pathlib import Path

import numpy as np

from .errors import MalformedPgm

_WS = b" \t\r\n\v\f"


def _tokens(buf: bytes, count: int):
    """First ``count`` header tokens and the offset of the raster."""
    out = []
    pos = 0
    n = len(buf)
    while len(out) < count:
        while pos < n and (buf[pos] in _WS or buf[pos] == ord("#")):
            if buf[pos] == ord("#"):
                while pos < n and buf[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < n and buf[pos] not in _WS and buf[pos] != ord("#"):
            pos += 1
        if start == pos:
            raise MalformedPgm("header ended early")
        out.append(buf[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    if pos >= n or buf[pos] not in _WS:
        raise MalformedPgm("missing whitespace after maxval")
    return out, pos + 1


def decode_pgm(buf: bytes) -> tuple[np.ndarray, int]:
    """Parse P5 bytes into ``(H x W array, maxval)``."""
    if buf[:2] != b"P5":
        raise MalformedPgm(f"bad magic {buf[:2]!r}, expected b'P5'")
    try:
        toks, off = _tokens(buf[2:], 3)
        width, height, maxval = (int(t) for t in toks)
    except ValueError as exc:
        raise MalformedPgm(f"bad header: {exc}") from None
    off += 2
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise MalformedPgm(f"bad header values {width}x{height} maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    raster = buf[off : off + need]
    if len(raster) != need:
        raise MalformedPgm(f"raster has {len(raster)} bytes, expected {need}")
    img = np.frombuffer(raster, dtype=dtype).reshape(height, width)
    if img.max(initial=0) > maxval:
        raise MalformedPgm("sample exceeds maxval")
    return img.astype(np.uint16 if dtype.itemsize == 2 else np.uint8), maxval


def encode_pgm(img: np.ndarray, maxval: int) -> bytes:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got {img.shape}")
    dtype = ">u2" if maxval > 255 else "u1"
    h, w = img.shape
    return b"P5\n%d %d\n%d\n" % (w, h, maxval) + img.astype(dtype).tobytes()


def read_pgm(path) -> tuple[np.ndarray, int]:
    return decode_pgm(Path(path).read_bytes())


def write_pgm(path, img: np.ndarray, maxval: int) -> None:
    Path(path).write_bytes(encode_pgm(img, maxval))
