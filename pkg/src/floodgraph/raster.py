"""Georeferenced single-band rasters, ESRI ASCII grid I/O and raster primitives.

A :class:`Grid` stores its values as a ``(nrows, ncols)`` float64 array, top row
first, with missing cells holding the ``nodata`` sentinel.  Binary masks use the
same class with values restricted to ``{0, 1, nodata}``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .exceptions import DimensionError, DomainError, GeoreferenceError, GridFormatError

DEFAULT_NODATA = -9999.0
HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "NODATA_value")


@dataclass(frozen=True, eq=False)
class Grid:
    values: np.ndarray
    xll: float = 0.0
    yll: float = 0.0
    cellsize: float = 1.0
    nodata: float = DEFAULT_NODATA
    _valid: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DimensionError(f"grid values must be 2-D, got shape {values.shape}")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise DimensionError("grid must have at least one row and one column")
        if not self.cellsize > 0:
            raise DomainError(f"cellsize must be positive, got {self.cellsize}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_valid", None)

    @property
    def nrows(self) -> int:
        return self.values.shape[0]

    @property
    def ncols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def valid(self) -> np.ndarray:
        """Boolean array, True where the cell holds data."""
        if self._valid is None:
            object.__setattr__(
                self, "_valid", np.isfinite(self.values) & (self.values != self.nodata)
            )
        return self._valid

    @property
    def cell_area(self) -> float:
        return self.cellsize * self.cellsize

    def georef(self) -> tuple:
        return (self.nrows, self.ncols, self.xll, self.yll, self.cellsize)

    def same_georef(self, other: "Grid") -> bool:
        return self.georef() == other.georef()

    def like(self, values, nodata: float | None = None) -> "Grid":
        """New grid with this grid's georeferencing and the given values."""
        return Grid(
            np.asarray(values, dtype=np.float64),
            self.xll,
            self.yll,
            self.cellsize,
            self.nodata if nodata is None else nodata,
        )

    def masked(self, values, valid) -> "Grid":
        """Like :meth:`like`, writing ``nodata`` wherever ``valid`` is False."""
        out = np.where(valid, values, self.nodata).astype(np.float64)
        return self.like(out)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Easting and northing of every cell centre as two 2-D arrays."""
        cols = np.arange(self.ncols)
        rows = np.arange(self.nrows)
        x = self.xll + (cols + 0.5) * self.cellsize
        y = self.yll + (self.nrows - rows - 0.5) * self.cellsize
        return np.meshgrid(x, y)

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        return (
            self.xll + (col + 0.5) * self.cellsize,
            self.yll + (self.nrows - row - 0.5) * self.cellsize,
        )

    def cell_index(self, x, y):
        """Row/column of the cells containing points (x, y).

        Returns integer arrays plus a boolean array marking points inside the
        grid extent; indices for outside points are clipped and meaningless.
        """
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        col = np.floor((x - self.xll) / self.cellsize).astype(np.int64)
        row_from_bottom = np.floor((y - self.yll) / self.cellsize).astype(np.int64)
        row = self.nrows - 1 - row_from_bottom
        inside = (col >= 0) & (col < self.ncols) & (row >= 0) & (row < self.nrows)
        return np.clip(row, 0, self.nrows - 1), np.clip(col, 0, self.ncols - 1), inside

    def bounds(self) -> tuple[float, float, float, float]:
        return (
            self.xll,
            self.yll,
            self.xll + self.ncols * self.cellsize,
            self.yll + self.nrows * self.cellsize,
        )


def check_aligned(*grids: Grid) -> None:
    """Raise :class:`GeoreferenceError` unless all grids share georeferencing."""
    first = grids[0]
    for g in grids[1:]:
        if not first.same_georef(g):
            raise GeoreferenceError(
                f"georeference mismatch: {first.georef()} vs {g.georef()}"
            )


def binary(grid: Grid) -> np.ndarray:
    """True where a binary grid holds 1 (nodata counts as 0)."""
    return grid.valid & (grid.values == 1)


def _format_value(v: float) -> str:
    s = f"{v:.6g}"
    if s.lstrip("-").isdigit():
        s += ".0"
    return s


def load_ascii_grid(path) -> Grid:
    """Read an ESRI ASCII grid (``.asc``)."""
    path = Path(path)
    with path.open() as fh:
        lines = fh.read().splitlines()

    header = {}
    idx = 0
    aliases = {k.lower(): k for k in HEADER_KEYS}
    aliases["xllcenter"] = "xllcenter"
    aliases["yllcenter"] = "yllcenter"
    while idx < len(lines):
        parts = lines[idx].split()
        if not parts:
            idx += 1
            continue
        key = parts[0].lower()
        if key not in aliases:
            break
        if len(parts) != 2:
            raise GridFormatError(f"{path}:{idx + 1}: malformed header line {lines[idx]!r}")
        try:
            header[aliases[key]] = float(parts[1])
        except ValueError:
            raise GridFormatError(
                f"{path}:{idx + 1}: non-numeric header value {lines[idx]!r}"
            ) from None
        idx += 1

    for key in ("ncols", "nrows", "cellsize"):
        if key not in header:
            raise GridFormatError(f"{path}:{idx + 1}: missing header key {key!r}")
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    if ncols < 1 or nrows < 1 or ncols != header["ncols"] or nrows != header["nrows"]:
        raise GridFormatError(f"{path}: invalid dimensions ncols={ncols} nrows={nrows}")
    cellsize = header["cellsize"]
    if "xllcorner" in header:
        xll = header["xllcorner"]
    elif "xllcenter" in header:
        xll = header["xllcenter"] - cellsize / 2
    else:
        raise GridFormatError(f"{path}: missing header key 'xllcorner'")
    if "yllcorner" in header:
        yll = header["yllcorner"]
    elif "yllcenter" in header:
        yll = header["yllcenter"] - cellsize / 2
    else:
        raise GridFormatError(f"{path}: missing header key 'yllcorner'")
    nodata = header.get("NODATA_value", DEFAULT_NODATA)

    rows = []
    for lineno in range(idx, len(lines)):
        parts = lines[lineno].split()
        if not parts:
            continue
        if len(parts) != ncols:
            raise DimensionError(
                f"{path}:{lineno + 1}: expected {ncols} values, found {len(parts)}"
            )
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise GridFormatError(f"{path}:{lineno + 1}: non-numeric value") from None
    if len(rows) != nrows:
        raise DimensionError(f"{path}: expected {nrows} data rows, found {len(rows)}")
    return Grid(np.array(rows, dtype=np.float64), xll, yll, cellsize, nodata)


def store_ascii_grid(grid: Grid, path) -> None:
    """Write ``grid`` as an ESRI ASCII grid with 6 significant digits."""
    path = Path(path)
    nodata_token = _format_value(grid.nodata)
    out = [
        f"ncols {grid.ncols}",
        f"nrows {grid.nrows}",
        f"xllcorner {_format_value(grid.xll)}",
        f"yllcorner {_format_value(grid.yll)}",
        f"cellsize {_format_value(grid.cellsize)}",
        f"NODATA_value {nodata_token}",
    ]
    valid = grid.valid
    for r in range(grid.nrows):
        row = grid.values[r]
        out.append(
            " ".join(
                _format_value(v) if ok else nodata_token for v, ok in zip(row, valid[r])
            )
        )
    path.write_text("\n".join(out) + "\n")


_SQUARE = np.ones((3, 3), dtype=bool)


def binary_open(mask: Grid) -> Grid:
    """Morphological opening with a 3x3 structuring element.

    Nodata is treated as 0 while structuring and restored afterwards; cells
    outside the grid count as 0.
    """
    ones = binary(mask)
    opened = ndimage.binary_opening(ones, structure=_SQUARE, border_value=0)
    return mask.masked(opened.astype(np.float64), mask.valid)


def euclidean_distance(mask: Grid) -> Grid:
    """Exact distance (map units) from every cell centre to the nearest 1-cell."""
    targets = binary(mask)
    if not targets.any():
        raise DomainError("no target cells")
    _, (ri, ci) = ndimage.distance_transform_edt(~targets, return_indices=True)
    rr, cc = np.indices(targets.shape)
    dr = (rr - ri).astype(np.float64)
    dc = (cc - ci).astype(np.float64)
    dist = np.sqrt(dr * dr + dc * dc) * mask.cellsize
    return mask.masked(dist, mask.valid)
