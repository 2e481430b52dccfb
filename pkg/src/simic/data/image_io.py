#!/usr/bin/env python
# std-lib imports
from pathlib import Path
from typing import Tuple, Union

# 3 party imports
import numpy as np


class ImageFormatError(ValueError):
    """Malformed or unsupported binary greymap file; `offset` is the byte where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


_WHITESPACE = b" \t\r\n\v\f"


def _next_token(buf: bytes, pos: int) -> Tuple[bytes, int]:
    # skip whitespace and '#' comments that run to end of line
    while pos < len(buf):
        if buf[pos:pos + 1] in (b"#",):
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif buf[pos] in _WHITESPACE:
            pos += 1
        else:
            break
    start = pos
    while pos < len(buf) and buf[pos] not in _WHITESPACE and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError("unexpected end of header", start)
    return buf[start:pos], pos


def _header_int(buf: bytes, pos: int, name: str) -> Tuple[int, int]:
    token, end = _next_token(buf, pos)
    if not token.isdigit():
        raise ImageFormatError(f"{name} is not a decimal integer: {token!r}", end - len(token))
    return int(token), end


def decode_image(buf: bytes) -> np.ndarray:
    """
    Decodes a binary "P5" greymap with maxval 255 into an (H, W) uint8 array.

    Raises:
        ImageFormatError: On a bad magic number, malformed or non-positive
            dimensions, a maxval other than 255, or a truncated payload.
    """
    if buf[:2] != b"P5":
        raise ImageFormatError(f"bad magic number {buf[:2]!r}, expected b'P5'", 0)
    pos = 2
    width, pos = _header_int(buf, pos, "width")
    height, pos = _header_int(buf, pos, "height")
    maxval, pos = _header_int(buf, pos, "maxval")
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"non-positive image size {width}x{height}", pos)
    if maxval != 255:
        raise ImageFormatError(f"unsupported maxval {maxval}, only 8-bit (255) images are accepted", pos)
    if pos >= len(buf) or buf[pos] not in _WHITESPACE:
        raise ImageFormatError("missing single whitespace byte after maxval", pos)
    pos += 1
    expected = width * height
    payload = buf[pos:pos + expected]
    if len(payload) < expected:
        raise ImageFormatError(f"truncated payload: expected {expected} bytes, got {len(payload)}", pos + len(payload))
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()


def encode_image(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"expected a 2-D greyscale image, got shape {image.shape}")
    if image.dtype != np.uint8:
        if image.min() < 0 or image.max() > 255 or not np.all(np.equal(np.mod(image, 1), 0)):
            raise ValueError("pixel values must be integers in [0, 255]")
        image = image.astype(np.uint8)
    height, width = image.shape
    return b"P5\n%d %d\n255\n" % (width, height) + np.ascontiguousarray(image).tobytes()


def read_image(path: Union[str, Path]) -> np.ndarray:
    return decode_image(Path(path).read_bytes())


def write_image(path: Union[str, Path], image: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_image(image))
