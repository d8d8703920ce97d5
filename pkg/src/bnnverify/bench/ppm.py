"""Binary PPM (P6) codec for 8-bit RGB traffic-sign images."""

import numpy as np

from ..errors import PpmFormatError

_MAXVAL = 255


def _header_tokens(data):
    """Yield (token, end_offset) pairs, skipping whitespace and # comments."""
    i = 0
    n = len(data)
    while True:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i] != 0x0A:
                i += 1
            continue
        if i >= n:
            return
        start = i
        while i < n and not data[i : i + 1].isspace() and data[i : i + 1] != b"#":
            i += 1
        yield data[start:i].decode("ascii", errors="replace"), i


def load_ppm(data: bytes) -> np.ndarray:
    """Decode P6 bytes into an (H, W, 3) float tensor of raw 0-255 values."""
    tokens = _header_tokens(data)
    fields = []
    end = 0
    try:
        for _ in range(4):
            tok, end = next(tokens)
            fields.append(tok)
    except StopIteration:
        raise PpmFormatError(
            f"header ended early: got fields {fields!r}"
        ) from None
    magic, width_s, height_s, maxval_s = fields
    if magic != "P6":
        raise PpmFormatError(f"expected magic 'P6', got {magic!r}")
    try:
        width, height, maxval = int(width_s), int(height_s), int(maxval_s)
    except ValueError:
        raise PpmFormatError(
            f"non-numeric dimensions in header: {fields[1:]!r}"
        ) from None
    if width <= 0 or height <= 0:
        raise PpmFormatError(f"invalid dimensions {width}x{height}")
    if maxval != _MAXVAL:
        raise PpmFormatError(f"only maxval {_MAXVAL} is supported, got {maxval}")
    # exactly one whitespace byte separates the header from the raster
    pixels = data[end + 1 :]
    need = width * height * 3
    if len(pixels) < need:
        raise PpmFormatError(
            f"truncated pixel data: need {need} bytes, have {len(pixels)}"
        )
    if len(pixels) > need:
        raise PpmFormatError(
            f"trailing bytes after pixel data: need {need}, have {len(pixels)}"
        )
    raster = np.frombuffer(pixels, dtype=np.uint8, count=need)
    return raster.reshape(height, width, 3).astype(np.float64)


def save_ppm(image) -> bytes:
    """Encode an (H, W, 3) tensor of whole values in [0, 255] as P6 bytes."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {arr.shape}")
    if np.any((arr < 0) | (arr > _MAXVAL)) or np.any(arr != np.floor(arr)):
        raise ValueError("pixel values must be whole numbers in [0, 255]")
    h, w = arr.shape[:2]
    header = f"P6\n{w} {h}\n{_MAXVAL}\n".encode("ascii")
    return header + arr.astype(np.uint8).tobytes()
