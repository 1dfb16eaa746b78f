"""Georeferenced multi-band grids and the DMR1 on-disk container.

A :class:`MultiBandRaster` is a north-up grid of float64 samples with a
square cell size in meters.  NaN is the only nodata representation.  The
DMR1 format is a minimal little-endian container:

    bytes 0-3    magic ``DMR1``
    bytes 4-7    header length L (uint32)
    bytes 8..8+L UTF-8 ``key=value`` lines (width, height, bands,
                 band_names comma-separated, cell_size, origin_x, origin_y)
    then         width*height*bands float32 samples, band-sequential,
                 each band row-major

Values are stored as float32 on disk and float64 in memory.  Rasters are
treated as immutable once constructed; writers own their raster exclusively.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"DMR1"

_HEADER_KEYS = ("width", "height", "bands", "band_names", "cell_size", "origin_x", "origin_y")

# Canonical quiet NaN written to disk (payload bits zeroed).
_QNAN_BITS = np.uint32(0x7FC00000)


class RasterFormatError(ValueError):
    """Malformed DMR1 byte stream; message carries the offending byte offset."""


@dataclass
class MultiBandRaster:
    width: int
    height: int
    bands: int
    band_names: list[str]
    cell_size: float = 30.0
    origin_x: float = 0.0
    origin_y: float = 0.0
    data: np.ndarray = field(default=None, repr=False)  # (bands, height, width) float64

    def __post_init__(self):
        if self.data is None:
            self.data = np.full((self.bands, self.height, self.width), np.nan)
        self.data = np.asarray(self.data, dtype=np.float64).reshape(
            self.bands, self.height, self.width
        )
        if self.cell_size <= 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")
        if len(self.band_names) != self.bands:
            raise ValueError(
                f"band_names length {len(self.band_names)} != bands {self.bands}"
            )
        for name in self.band_names:
            if "," in name or "\n" in name:
                raise ValueError(f"band name {name!r} may not contain ',' or newline")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.bands, self.height, self.width)

    def band(self, name: str) -> np.ndarray:
        return self.data[self.band_names.index(name)]

    def same_geometry(self, other: "MultiBandRaster") -> bool:
        return (
            self.width == other.width
            and self.height == other.height
            and self.cell_size == other.cell_size
            and self.origin_x == other.origin_x
            and self.origin_y == other.origin_y
        )

    def copy_with(self, data: np.ndarray, band_names: list[str] | None = None) -> "MultiBandRaster":
        """New raster on this raster's geometry with different samples."""
        data = np.asarray(data, dtype=np.float64)
        if data.ndim == 2:
            data = data[None]
        names = list(band_names) if band_names is not None else list(self.band_names)
        return MultiBandRaster(
            width=self.width,
            height=self.height,
            bands=data.shape[0],
            band_names=names,
            cell_size=self.cell_size,
            origin_x=self.origin_x,
            origin_y=self.origin_y,
            data=data,
        )


@dataclass
class RasterWindow:
    center_row: int
    center_col: int
    half_extent: int
    edge_policy: str = "truncate"  # or "reject"

    def __post_init__(self):
        if self.edge_policy not in ("truncate", "reject"):
            raise ValueError(f"unknown edge policy {self.edge_policy!r}")
        if self.half_extent < 0:
            raise ValueError("half_extent must be >= 0")


def write_raster(raster: MultiBandRaster, path) -> None:
    """Write a raster as DMR1.  Identical rasters produce identical bytes."""
    names = ",".join(raster.band_names)
    header = (
        f"width={raster.width}\n"
        f"height={raster.height}\n"
        f"bands={raster.bands}\n"
        f"band_names={names}\n"
        f"cell_size={raster.cell_size!r}\n"
        f"origin_x={raster.origin_x!r}\n"
        f"origin_y={raster.origin_y!r}\n"
    ).encode("utf-8")
    payload = raster.data.astype("<f4")
    bits = payload.view(np.uint32)
    bits[np.isnan(payload)] = _QNAN_BITS
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(payload.tobytes())


def read_raster(path) -> MultiBandRaster:
    """Read a DMR1 file; write_raster followed by read_raster is the identity."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise RasterFormatError(
            f"bad magic {blob[:4]!r} at byte offset 0 (expected {MAGIC!r})"
        )
    if len(blob) < 8:
        raise RasterFormatError(f"truncated header length field at byte offset 4")
    (hlen,) = struct.unpack("<I", blob[4:8])
    if len(blob) < 8 + hlen:
        raise RasterFormatError(
            f"truncated text header at byte offset {len(blob)} (need {8 + hlen} bytes)"
        )
    fields = {}
    for line in blob[8 : 8 + hlen].decode("utf-8").splitlines():
        if not line:
            continue
        key, _, value = line.partition("=")
        fields[key] = value
    missing = [k for k in _HEADER_KEYS if k not in fields]
    if missing:
        raise RasterFormatError(
            f"header at byte offset 8 missing keys: {', '.join(missing)}"
        )
    width = int(fields["width"])
    height = int(fields["height"])
    bands = int(fields["bands"])
    band_names = fields["band_names"].split(",") if fields["band_names"] else []
    if bands == 0:
        band_names = []
    n = width * height * bands
    expected = 8 + hlen + 4 * n
    if len(blob) != expected:
        raise RasterFormatError(
            f"header/payload size mismatch at byte offset {8 + hlen}: "
            f"file has {len(blob)} bytes, header implies {expected}"
        )
    data = np.frombuffer(blob, dtype="<f4", count=n, offset=8 + hlen)
    data = data.astype(np.float64).reshape(bands, height, width)
    return MultiBandRaster(
        width=width,
        height=height,
        bands=bands,
        band_names=band_names,
        cell_size=float(fields["cell_size"]),
        origin_x=float(fields["origin_x"]),
        origin_y=float(fields["origin_y"]),
        data=data,
    )


def window_bounds(raster: MultiBandRaster, window: RasterWindow) -> tuple[int, int, int, int]:
    """(row0, row1, col0, col1) half-open bounds of the truncated window."""
    r, c, h = window.center_row, window.center_col, window.half_extent
    if not (0 <= r < raster.height and 0 <= c < raster.width):
        raise ValueError(f"window center ({r}, {c}) out of bounds")
    return (
        max(0, r - h),
        min(raster.height, r + h + 1),
        max(0, c - h),
        min(raster.width, c + h + 1),
    )


def window_view(raster: MultiBandRaster, window: RasterWindow):
    """Cells of a (2h+1)^2 block around the center, row-major.

    Returns a list of (row, col, values) where values is the per-band sample
    vector.  With the reject policy the block must lie fully in bounds.
    """
    r0, r1, c0, c1 = window_bounds(raster, window)
    h = window.half_extent
    full = (2 * h + 1) ** 2
    count = (r1 - r0) * (c1 - c0)
    if window.edge_policy == "reject" and count != full:
        raise ValueError(
            f"window at ({window.center_row}, {window.center_col}) with half extent "
            f"{h} has {count} in-bounds cells, needs {full}"
        )
    out = []
    for row in range(r0, r1):
        for col in range(c0, c1):
            out.append((row, col, raster.data[:, row, col].copy()))
    return out
