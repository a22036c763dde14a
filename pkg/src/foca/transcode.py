"""Binary-to-audio and binary-to-image transcoders.

Audio: every byte becomes one unsigned 8-bit PCM sample of a mono
8000 Hz RIFF/WAVE stream. Image: bytes are laid row-major onto a single
grid whose width depends on the file size; a byte lands in the red,
green or blue channel depending on whether it belongs to the header,
the data section or the rest of the file.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np

DEX_MAGIC = b"dex\n"
DEX_HEADER_SIZE = 0x70
RAW_HEADER_SIZE = 112
SAMPLE_RATE = 8000

# (exclusive upper bound in bytes, width)
WIDTH_TABLE = (
    (10 * 1024, 32),
    (30 * 1024, 64),
    (60 * 1024, 128),
    (100 * 1024, 256),
    (200 * 1024, 384),
    (500 * 1024, 512),
    (1000 * 1024, 768),
)
MAX_WIDTH = 1024


class TranscodeError(ValueError):
    pass


class MalformedHeaderError(TranscodeError):
    pass


@dataclass(frozen=True)
class BinaryBlob:
    data: bytes
    kind: str  # "dex" or "raw"

    def __post_init__(self):
        if not self.data:
            raise TranscodeError("empty input")
        if self.kind not in ("dex", "raw"):
            raise TranscodeError(f"unknown kind {self.kind!r}")
        if self.kind == "dex" and self.data[:4] != DEX_MAGIC:
            raise MalformedHeaderError("missing dex magic")

    @classmethod
    def from_bytes(cls, data: bytes, kind: str = "auto") -> "BinaryBlob":
        if kind == "auto":
            kind = "dex" if data[:4] == DEX_MAGIC else "raw"
        return cls(bytes(data), kind)

    def __len__(self) -> int:
        return len(self.data)


def to_audio(blob: BinaryBlob) -> bytes:
    """Canonical 44-byte-header WAV, one sample per input byte, no pad byte."""
    n = len(blob.data)
    header = b"".join(
        [
            b"RIFF", struct.pack("<I", 36 + n), b"WAVE",
            b"fmt ", struct.pack("<IHHIIHH", 16, 1, 1, SAMPLE_RATE, SAMPLE_RATE, 1, 8),
            b"data", struct.pack("<I", n),
        ]
    )
    return header + blob.data


@dataclass
class SectionMap:
    header: tuple[int, int]
    data: tuple[int, int]
    rest: list[tuple[int, int]] = field(default_factory=list)
    warning: str | None = None

    def ranges(self) -> list[tuple[int, int]]:
        return [self.header, self.data, *self.rest]

    def to_dict(self) -> dict:
        return {
            "header": list(self.header),
            "data": list(self.data),
            "rest": [list(r) for r in self.rest],
            "warning": self.warning,
        }


def _raw_sections(n: int, warning: str | None = None) -> SectionMap:
    h = min(RAW_HEADER_SIZE, n)
    mid = h + (n - h) // 2
    rest = [(mid, n)] if mid < n else []
    return SectionMap((0, h), (h, mid), rest, warning)


def parse_sections(blob: BinaryBlob) -> SectionMap:
    """Split a blob into header / data / rest byte ranges.

    DEX: the 0x70-byte header, then the data section declared by the
    ``data_size`` and ``data_off`` header fields (clamped to the file).
    Anything else: the first 112 bytes, then the remainder split in half.
    """
    n = len(blob.data)
    if blob.kind == "raw":
        return _raw_sections(n)
    if n < DEX_HEADER_SIZE:
        raise MalformedHeaderError(f"dex file has {n} bytes, header needs {DEX_HEADER_SIZE}")
    data_size, data_off = struct.unpack_from("<II", blob.data, 0x68)
    start = min(max(data_off, DEX_HEADER_SIZE), n)
    end = min(data_off + data_size, n)
    if end <= start:
        return _raw_sections(n, f"degenerate data section (off=0x{data_off:x}, size=0x{data_size:x}); raw split used")
    rest = [r for r in ((DEX_HEADER_SIZE, start), (end, n)) if r[0] < r[1]]
    return SectionMap((0, DEX_HEADER_SIZE), (start, end), rest)


def image_width(n_bytes: int) -> int:
    for bound, width in WIDTH_TABLE:
        if n_bytes < bound:
            return width
    return MAX_WIDTH


@dataclass
class RgbImage:
    width: int
    height: int
    pixels: np.ndarray  # (height, width, 3) uint8

    def to_png(self) -> bytes:
        """PNG bytes from a pinned Pillow configuration."""
        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(self.pixels, "RGB").save(buf, format="PNG", compress_level=6, optimize=False)
        return buf.getvalue()


def to_image(blob: BinaryBlob, sections: SectionMap | None = None) -> RgbImage:
    sections = sections or parse_sections(blob)
    n = len(blob.data)
    width = image_width(n)
    height = math.ceil(n / width)
    flat = np.zeros((width * height, 3), dtype=np.uint8)
    values = np.frombuffer(blob.data, dtype=np.uint8)
    for channel, ranges in ((0, [sections.header]), (1, [sections.data]), (2, sections.rest)):
        for a, b in ranges:
            flat[a:b, channel] = values[a:b]
    return RgbImage(width, height, flat.reshape(height, width, 3))


def decode_png(raw: bytes) -> np.ndarray:
    from PIL import Image

    with Image.open(io.BytesIO(raw)) as im:
        return np.asarray(im.convert("RGB"))
