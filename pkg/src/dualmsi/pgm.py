"""Binary 16-bit PGM (P5) reader/writer.

The on-disk frame format is fixed: magic ``P5``, maxval 65535, two bytes
per pixel most-significant byte first, rows from the top-left.  Writing is
byte-deterministic so repeated saves of the same frame are identical.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

MAXVAL = 65535


def write_pgm16(path, values: np.ndarray) -> None:
    """Write a 2-D uint16 array as a binary P5 file with maxval 65535."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ValidationError(f"PGM frame must be 2-D, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValidationError("PGM frame must hold integer counts")
    if arr.min(initial=0) < 0 or arr.max(initial=0) > MAXVAL:
        raise ValidationError("PGM values out of range [0, 65535]")
    height, width = arr.shape
    header = f"P5\n{width} {height}\n{MAXVAL}\n".encode("ascii")
    payload = arr.astype(">u2").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_pgm16(path) -> np.ndarray:
    """Read a binary P5 file, returning a uint16 array of shape (h, w)."""
    with open(path, "rb") as fh:
        data = fh.read()

    tokens = []
    pos = 0
    # Header is three whitespace-separated tokens after the magic.
    # '#' starts a comment running to end of line, as in classic PNM.
    while len(tokens) < 4 and pos < len(data):
        ch = data[pos : pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
        else:
            end = pos
            while end < len(data) and not data[end : end + 1].isspace():
                end += 1
            tokens.append(data[pos:end])
            pos = end
    if len(tokens) < 4:
        raise ValidationError(f"truncated PGM header: {path}")
    if tokens[0] != b"P5":
        raise ValidationError(f"not a binary PGM (P5) file: {path}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise ValidationError(f"malformed PGM header: {path}") from exc
    if maxval != MAXVAL:
        raise ValidationError(f"expected maxval {MAXVAL}, got {maxval}: {path}")
    if width <= 0 or height <= 0:
        raise ValidationError(f"non-positive PGM dimensions: {path}")

    # Exactly one whitespace byte separates the header from the payload.
    pos += 1
    expected = width * height * 2
    payload = data[pos : pos + expected]
    if len(payload) != expected:
        raise ValidationError(
            f"PGM payload truncated: expected {expected} bytes, "
            f"got {len(payload)}: {path}"
        )
    return np.frombuffer(payload, dtype=">u2").reshape(height, width).astype(np.uint16)
