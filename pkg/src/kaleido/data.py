"""Datasets: construction, CSV/IDX ingestion, range normalisation, PGM export."""

import csv
import gzip
import hashlib
import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataFormatError, EmptyDatasetError, ShapeError
from .tensor import ActivationKind

IDX_IMAGES_MAGIC = 0x00000803
DEFAULT_MARGIN = 0.05


@dataclass(frozen=True)
class NormalizeTransform:
    """Affine map ``y = x * scale + offset`` and its inverse."""

    scale: float = 1.0
    offset: float = 0.0

    def apply(self, x):
        return np.asarray(x, dtype=np.float64) * self.scale + self.offset

    def invert(self, y):
        return (np.asarray(y, dtype=np.float64) - self.offset) / self.scale

    def to_dict(self):
        return {"scale": self.scale, "offset": self.offset}


@dataclass(frozen=True)
class Dataset:
    values: np.ndarray
    source: str = "inline"
    normalized_for: ActivationKind = None
    transform: NormalizeTransform = None
    image_shape: tuple = None

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if v.ndim != 2:
            raise ShapeError(f"dataset values must be 2-D, got shape {v.shape}")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise EmptyDatasetError(f"dataset {self.source!r} has no rows")
        if not np.all(np.isfinite(v)):
            raise DataFormatError(f"dataset {self.source!r} contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.image_shape is not None:
            h, w = self.image_shape
            if h * w != v.shape[1]:
                raise ShapeError(f"image shape {h}x{w} does not match D={v.shape[1]}")

    @property
    def n_points(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]

    def fingerprint(self):
        """SHA-256 of the shape and raw float64 bytes."""
        h = hashlib.sha256()
        h.update(struct.pack("<QQ", *self.values.shape))
        h.update(self.values.astype("<f8").tobytes())
        return h.hexdigest()


def synth_points(values, source="inline"):
    """Wrap explicit points into a dataset; scalars count as 1-D points.

    Raises:
        EmptyDatasetError: no points given.
        ShapeError: rows of differing length.
    """
    rows = [np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in values]
    if not rows:
        raise EmptyDatasetError("no points given")
    dims = {r.shape for r in rows}
    if len(dims) != 1 or rows[0].ndim != 1:
        raise ShapeError(f"ragged points: row shapes {sorted(dims)}")
    return Dataset(np.vstack(rows), source=source)


def _parse_float(cell):
    v = float(cell)
    if not math.isfinite(v):
        raise ValueError(cell)
    return v


def load_csv(path):
    """Read a comma-separated numeric matrix.

    A first row that does not parse as numbers is treated as a header. Blank
    lines are skipped.

    Raises:
        DataFormatError: unreadable file, non-numeric cell or ragged row; the
            message names the 1-based line and column.
        EmptyDatasetError: no data rows.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            lines = list(csv.reader(fh))
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    numbered = [(i + 1, row) for i, row in enumerate(lines) if any(c.strip() for c in row)]
    if numbered:
        try:
            [_parse_float(c) for c in numbered[0][1]]
        except ValueError:
            numbered = numbered[1:]
    if not numbered:
        raise EmptyDatasetError(f"{path} has no data rows")
    width = len(numbered[0][1])
    data = []
    for lineno, row in numbered:
        if len(row) != width:
            raise DataFormatError(f"{path}:{lineno}: expected {width} columns, found {len(row)}")
        parsed = []
        for col, cell in enumerate(row, start=1):
            try:
                parsed.append(_parse_float(cell))
            except ValueError:
                raise DataFormatError(
                    f"{path}:{lineno}: column {col}: not a finite number: {cell!r}"
                ) from None
        data.append(parsed)
    return Dataset(np.array(data), source=str(path))


def write_csv(values, path, header=None):
    """Write a matrix as CSV with 17 significant digits per value."""
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header:
            fh.write(",".join(header) + "\n")
        for row in values:
            fh.write(",".join(format(float(v), ".17g") for v in row) + "\n")


def _read_maybe_gzip(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def load_idx(images_path, count_limit=None):
    """Load an IDX3 unsigned-byte image file (optionally gzipped).

    Images are flattened row-major to ``D = rows * cols`` and scaled from
    ``[0, 255]`` to ``[0, 1]``.

    Raises:
        DataFormatError: wrong magic number, truncated payload, or
            ``count_limit`` larger than the number of stored images.
    """
    try:
        raw = _read_maybe_gzip(images_path)
    except OSError as exc:
        raise DataFormatError(f"cannot read {images_path}: {exc}") from exc
    if len(raw) < 16:
        raise DataFormatError(f"{images_path}: truncated IDX header ({len(raw)} bytes)")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DataFormatError(
            f"{images_path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x} (ubyte images)"
        )
    count = n if count_limit is None else int(count_limit)
    if count > n:
        raise DataFormatError(f"{images_path}: requested {count} images but file holds {n}")
    if count < 1:
        raise EmptyDatasetError(f"{images_path}: no images requested")
    need = 16 + count * rows * cols
    if len(raw) < 16 + n * rows * cols:
        raise DataFormatError(
            f"{images_path}: truncated payload, header promises {n} images of {rows}x{cols} "
            f"({16 + n * rows * cols} bytes) but file has {len(raw)}"
        )
    pixels = np.frombuffer(raw, dtype=np.uint8, count=need - 16, offset=16)
    values = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    return Dataset(values, source=str(images_path), image_shape=(rows, cols))


def write_idx(images, path):
    """Write ``(N, rows, cols)`` uint8 images as an uncompressed IDX3 file."""
    images = np.asarray(images)
    if images.ndim != 3 or images.dtype != np.uint8:
        raise ShapeError("write_idx expects a (N, rows, cols) uint8 array")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(np.ascontiguousarray(images).tobytes())


def normalize_for(dataset, activation, margin=DEFAULT_MARGIN):
    """Affinely map the dataset's global ``[min, max]`` into the activation range.

    Sigmoid targets ``[margin, 1 - margin]``; Tanh targets
    ``[-1 + margin, 1 - margin]``. A constant dataset maps to the midpoint.

    Returns:
        ``(normalized_dataset, transform)``.
    """
    activation = ActivationKind(activation)
    if not 0.0 <= margin < 0.5:
        raise ValueError(f"margin must lie in [0, 0.5), got {margin}")
    if not activation.bounded:
        raise ValueError("can only normalise for a bounded activation")
    lo_t, hi_t = activation.bounds
    lo_t, hi_t = lo_t + margin, hi_t - margin
    lo, hi = float(dataset.values.min()), float(dataset.values.max())
    if hi > lo:
        scale = (hi_t - lo_t) / (hi - lo)
        offset = lo_t - lo * scale
    else:
        scale = 1.0
        offset = 0.5 * (lo_t + hi_t) - lo
    transform = NormalizeTransform(scale, offset)
    out = transform.apply(dataset.values)
    # guard against rounding past the target interval
    out = np.clip(out, lo_t, hi_t)
    return replace(dataset, values=out, normalized_for=activation, transform=transform), transform


def quantize(values):
    """Clamp to ``[0, 1]`` and map to bytes, rounding half up."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def write_pgm(row, height, width, path):
    """Write one flattened image with values in ``[0, 1]`` as binary PGM (P5)."""
    row = np.asarray(row, dtype=np.float64).ravel()
    if row.size != height * width:
        raise ShapeError(f"row of length {row.size} cannot be shaped {height}x{width}")
    payload = quantize(row).tobytes()
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (width, height))
        fh.write(payload)


def tile_images(rows, height, width, n_cols=None, pad=1, pad_value=0.0):
    """Arrange flattened images in a grid; returns a ``(H_total, W_total)`` array."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    n = rows.shape[0]
    if rows.shape[1] != height * width:
        raise ShapeError(f"rows of length {rows.shape[1]} cannot be shaped {height}x{width}")
    n_cols = n_cols or math.ceil(math.sqrt(n))
    n_rows = math.ceil(n / n_cols)
    grid = np.full(
        (n_rows * (height + pad) + pad, n_cols * (width + pad) + pad), pad_value, dtype=np.float64
    )
    for k in range(n):
        r, c = divmod(k, n_cols)
        top = pad + r * (height + pad)
        left = pad + c * (width + pad)
        grid[top:top + height, left:left + width] = rows[k].reshape(height, width)
    return grid
