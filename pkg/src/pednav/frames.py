"""Grayscale frames and the on-disk frame formats (PGM and .seq containers)."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

SEQ_MAGIC = b"PNSQ"
_SEQ_HEADER = struct.Struct("<4sIII")  # magic, width, height, frame count

MIN_FRAME_SIDE = 16


class FrameFormatError(ValueError):
    """Malformed PGM or .seq input."""


@dataclass(frozen=True)
class Frame:
    """A single 8-bit grayscale frame, row-major.

    ``pixels`` has shape (height, width), dtype uint8. Image points are
    (x, y) with x along columns and y along rows, origin at the top-left
    pixel center.
    """

    pixels: np.ndarray
    timestamp_ms: float | None = None

    def __post_init__(self) -> None:
        px = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if px.ndim != 2:
            raise ValueError(f"expected a 2-D pixel array, got shape {px.shape}")
        h, w = px.shape
        if w < MIN_FRAME_SIDE or h < MIN_FRAME_SIDE:
            raise ValueError(f"frame must be at least {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}, got {w}x{h}")
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def crop(self, x0: int, y0: int, x1: int, y1: int) -> "Frame":
        """Clipped rectangular crop; coordinates are pixel indices, x1/y1 exclusive."""
        x0 = max(0, int(x0))
        y0 = max(0, int(y0))
        x1 = min(self.width, int(x1))
        y1 = min(self.height, int(y1))
        if x1 - x0 < MIN_FRAME_SIDE or y1 - y0 < MIN_FRAME_SIDE:
            raise ValueError("crop region too small")
        return Frame(self.pixels[y0:y1, x0:x1].copy(), self.timestamp_ms)


def write_pgm(frame: Frame, path: str | Path) -> None:
    """Write a frame as binary PGM (P5, maxval 255)."""
    with open(path, "wb") as fh:
        fh.write(f"P5\n{frame.width} {frame.height}\n255\n".encode("ascii"))
        fh.write(frame.pixels.tobytes())


def read_pgm(path: str | Path) -> Frame:
    """Read a binary PGM (P5, maxval 255) frame."""
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise FrameFormatError(f"{path}: not a binary PGM (P5) file")
    # PGM header: magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comment lines allowed.
    pos = 2
    tokens: list[int] = []
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FrameFormatError(f"{path}: truncated PGM header")
        tokens.append(int(data[start:pos]))
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = tokens
    if maxval != 255:
        raise FrameFormatError(f"{path}: only maxval 255 supported, got {maxval}")
    raw = data[pos : pos + width * height]
    if len(raw) != width * height:
        raise FrameFormatError(f"{path}: pixel payload truncated")
    return Frame(np.frombuffer(raw, dtype=np.uint8).reshape(height, width).copy())


def write_seq(frames: list[Frame] | Iterator[Frame], path: str | Path) -> int:
    """Write frames to a .seq container; returns the number of frames written.

    All frames must share one size. Layout: 16-byte header (magic 'PNSQ',
    u32 width, u32 height, u32 frame count, little-endian) followed by the
    raw uint8 frames back to back.
    """
    frames = list(frames)
    if not frames:
        raise ValueError("cannot write an empty .seq file")
    w, h = frames[0].width, frames[0].height
    with open(path, "wb") as fh:
        fh.write(_SEQ_HEADER.pack(SEQ_MAGIC, w, h, len(frames)))
        for fr in frames:
            if fr.width != w or fr.height != h:
                raise ValueError("all frames in a .seq file must share one size")
            fh.write(fr.pixels.tobytes())
    return len(frames)


def iter_seq(path: str | Path) -> Iterator[Frame]:
    """Stream frames from a .seq container without loading the whole file."""
    with open(path, "rb") as fh:
        header = fh.read(_SEQ_HEADER.size)
        if len(header) != _SEQ_HEADER.size:
            raise FrameFormatError(f"{path}: truncated header")
        magic, width, height, count = _SEQ_HEADER.unpack(header)
        if magic != SEQ_MAGIC:
            raise FrameFormatError(f"{path}: bad magic {magic!r}")
        nbytes = width * height
        for i in range(count):
            raw = fh.read(nbytes)
            if len(raw) != nbytes:
                raise FrameFormatError(f"{path}: frame {i} truncated")
            yield Frame(np.frombuffer(raw, dtype=np.uint8).reshape(height, width).copy())


def read_seq(path: str | Path) -> list[Frame]:
    """Read every frame of a .seq container into memory."""
    return list(iter_seq(path))


def seq_info(path: str | Path) -> tuple[int, int, int]:
    """Return (width, height, frame_count) from a .seq header."""
    with open(path, "rb") as fh:
        header = fh.read(_SEQ_HEADER.size)
    if len(header) != _SEQ_HEADER.size:
        raise FrameFormatError(f"{path}: truncated header")
    magic, width, height, count = _SEQ_HEADER.unpack(header)
    if magic != SEQ_MAGIC:
        raise FrameFormatError(f"{path}: bad magic {magic!r}")
    return width, height, count
