"""Binary netpbm raster I/O.

Two formats are supported, both in their binary variants:

* P6 -- RGB rasters, maxval 255, 3 bytes per pixel.
* P5 -- grayscale rasters; maxval <= 255 stores 1 byte per pixel,
  maxval 256..65535 stores 2 bytes per pixel, most significant byte first.

Writers always emit the canonical header ``P{5,6}\\n<w> <h>\\n<maxval>\\n``
followed by raw samples in row-major order, so write->read->write is
byte-identical.
"""

from __future__ import annotations

import numpy as np

from .errors import IoError, ParseError

__all__ = ["read_ppm", "write_ppm", "read_pgm", "write_pgm"]


def _read_header_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    # skip whitespace and '#' comments that netpbm headers allow
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c in b" \t\r\n":
            pos += 1
        elif c == b"#":
            while pos < n and buf[pos : pos + 1] != b"\n":
                pos += 1
        else:
            break
    start = pos
    while pos < n and buf[pos : pos + 1] not in b" \t\r\n":
        pos += 1
    if start == pos:
        raise ParseError("truncated netpbm header")
    return buf[start:pos], pos


def _parse_header(buf: bytes, magic: bytes) -> tuple[int, int, int, int]:
    if buf[:2] != magic:
        raise ParseError(f"expected {magic.decode()} magic, got {buf[:2]!r}")
    pos = 2
    w_tok, pos = _read_header_token(buf, pos)
    h_tok, pos = _read_header_token(buf, pos)
    m_tok, pos = _read_header_token(buf, pos)
    try:
        width, height, maxval = int(w_tok), int(h_tok), int(m_tok)
    except ValueError as exc:
        raise ParseError(f"malformed netpbm header field: {exc}") from exc
    if width < 1 or height < 1:
        raise ParseError(f"bad raster dimensions {width}x{height}")
    if not 0 < maxval < 65536:
        raise ParseError(f"maxval {maxval} out of range")
    # exactly one whitespace byte separates header and payload
    return width, height, maxval, pos + 1


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 file into a uint8 array of shape (H, W, 3)."""
    try:
        buf = open(path, "rb").read()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    width, height, maxval, pos = _parse_header(buf, b"P6")
    if maxval > 255:
        raise ParseError("16-bit P6 not supported")
    need = width * height * 3
    data = np.frombuffer(buf, dtype=np.uint8, offset=pos)
    if data.size < need:
        raise ParseError(f"P6 payload too short: {data.size} < {need}")
    return data[:need].reshape(height, width, 3).copy()


def write_ppm(path, image: np.ndarray) -> None:
    """Write an (H, W, 3) uint8 array as binary P6."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise IoError(f"P6 writer expects (H, W, 3), got {img.shape}")
    img = img.astype(np.uint8, copy=False)
    header = f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    try:
        with open(path, "wb") as f:
            f.write(header + img.tobytes())
    except OSError as exc:
        raise IoError(str(exc)) from exc


def read_pgm(path) -> np.ndarray:
    """Read a binary P5 file.

    Returns uint8 (H, W) when maxval <= 255, else uint16 (H, W).
    """
    try:
        buf = open(path, "rb").read()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    width, height, maxval, pos = _parse_header(buf, b"P5")
    if maxval <= 255:
        data = np.frombuffer(buf, dtype=np.uint8, offset=pos)
        need = width * height
        if data.size < need:
            raise ParseError(f"P5 payload too short: {data.size} < {need}")
        return data[:need].reshape(height, width).copy()
    data = np.frombuffer(buf, dtype=">u2", offset=pos)
    need = width * height
    if data.size < need:
        raise ParseError(f"P5 payload too short: {data.size} < {need}")
    return data[:need].reshape(height, width).astype(np.uint16)


def write_pgm(path, image: np.ndarray, maxval: int = 255) -> None:
    """Write an (H, W) integer array as binary P5 with the given maxval."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise IoError(f"P5 writer expects (H, W), got {img.shape}")
    if not 0 < maxval < 65536:
        raise IoError(f"maxval {maxval} out of range")
    if img.size and (img.min() < 0 or img.max() > maxval):
        raise IoError(f"pixel values outside [0, {maxval}]")
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii")
    payload = (
        img.astype(np.uint8).tobytes()
        if maxval <= 255
        else img.astype(">u2").tobytes()
    )
    try:
        with open(path, "wb") as f:
            f.write(header + payload)
    except OSError as exc:
        raise IoError(str(exc)) from exc
