from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from ..logging_utils import get_logger
from .linops import parse_psf_spec

_LOGGER = get_logger(__name__)

_MAX_SEED = 2**64


class ImageFormatError(ValueError):
    def __init__(self, path: Path | str, line: int, message: str) -> None:
        super().__init__(f"{path}: line {line}: {message}")
        self.path = Path(path)
        self.line = line


class PhantomKind(str, Enum):
    CONSTANT = "constant"
    POINT_SOURCES = "point-sources"
    GAUSSIAN_BLOBS = "gaussian-blobs"


@dataclass(frozen=True)
class PhantomSpec:
    """Ground-truth image recipe.

    ``scale`` is the constant level, the largest spike amplitude or the flux of
    each blob depending on ``kind``; spikes and blobs sit on ``background``.
    """

    kind: PhantomKind
    shape: Tuple[int, int]
    scale: float
    count: int = 8
    background: float = 1.0
    blob_sigma: float = 2.0
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", PhantomKind(self.kind))
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        if len(self.shape) != 2 or min(self.shape) <= 0:
            raise ValueError(f"Phantom shape must be two positive sides, got {self.shape}")
        if not self.scale > 0:
            raise ValueError(f"Phantom intensity scale must be positive, got {self.scale}")
        if self.background < 0:
            raise ValueError(f"Phantom background must be non-negative, got {self.background}")
        if self.kind is not PhantomKind.CONSTANT:
            pixels = self.shape[0] * self.shape[1]
            if not 1 <= self.count <= pixels:
                raise ValueError(f"Phantom needs between 1 and {pixels} sources, got {self.count}")
        if self.kind is PhantomKind.GAUSSIAN_BLOBS and not self.blob_sigma > 0:
            raise ValueError(f"Blob width must be positive, got {self.blob_sigma}")


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed < _MAX_SEED:
        raise ValueError(f"Seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def sample_poisson(mean: np.ndarray, seed: int) -> np.ndarray:
    """Independent Poisson draws per pixel.

    numpy's generator samples by sequential inversion below a mean of 10 and by
    transformed rejection above; a zero mean always yields a zero count.
    """

    intensity = np.asarray(mean, dtype=float)
    if not np.all(np.isfinite(intensity)):
        raise ValueError("Poisson means must be finite")
    if np.any(intensity < 0):
        raise ValueError("Poisson means must be non-negative")
    rng = np.random.default_rng(_check_seed(seed))
    return rng.poisson(intensity).astype(np.int64)


def _periodic_gaussian(shape: Tuple[int, int], centre: Tuple[int, int], sigma: float) -> np.ndarray:
    offsets = []
    for size, c in zip(shape, centre):
        delta = np.abs(np.arange(size) - c)
        offsets.append(np.minimum(delta, size - delta))
    dist_sq = offsets[0][:, None] ** 2 + offsets[1][None, :] ** 2
    blob = np.exp(-dist_sq / (2.0 * sigma**2))
    return blob / blob.sum()


def make_phantom(spec: PhantomSpec) -> np.ndarray:
    rows, cols = spec.shape
    if spec.kind is PhantomKind.CONSTANT:
        return np.full(spec.shape, float(spec.scale))

    rng = np.random.default_rng(_check_seed(spec.seed))
    image = np.full(spec.shape, float(spec.background))
    positions = rng.choice(rows * cols, size=spec.count, replace=False)
    if spec.kind is PhantomKind.POINT_SOURCES:
        amplitudes = spec.scale * (1.0 - 0.5 * rng.random(spec.count))
        image.flat[positions] += amplitudes
    else:
        for position in positions:
            centre = divmod(int(position), cols)
            image += spec.scale * _periodic_gaussian(spec.shape, centre, spec.blob_sigma)
    _LOGGER.debug(
        "Built %s phantom %s with total flux %.6g", spec.kind.value, spec.shape, float(image.sum())
    )
    return image


def _read_grid(path: Path | str, header: bool = True) -> Tuple[np.ndarray, List[int]]:
    """Parse a plain-text matrix; returns the values and the file line of each row.

    With ``header`` the first line must be ``w h`` and exactly ``h`` rows of ``w``
    values follow. Without it every non-blank line is a row.
    """

    source = Path(path)
    if not source.exists():
        raise FileNotFoundError(f"Image file not found: {source}")
    numbered = [
        (line_number, line.split())
        for line_number, line in enumerate(source.read_text(encoding="utf-8").splitlines(), start=1)
        if line.strip()
    ]
    if not numbered:
        raise ImageFormatError(source, 1, "file is empty")

    rows = numbered
    if header:
        first_line, first = numbered[0]
        if len(first) != 2 or not all(field.isdigit() for field in first):
            raise ImageFormatError(source, first_line, f"expected a 'w h' header, got {' '.join(first)!r}")
        width, height = int(first[0]), int(first[1])
        if width == 0 or height == 0:
            raise ImageFormatError(source, first_line, f"header declares an empty {width}x{height} image")
        rows = numbered[1:]
        if len(rows) != height:
            line = rows[height][0] if len(rows) > height else numbered[-1][0]
            raise ImageFormatError(source, line, f"header declares {height} rows, file has {len(rows)}")
    else:
        width = len(rows[0][1])

    values = np.empty((len(rows), width))
    for index, (line_number, fields) in enumerate(rows):
        if len(fields) != width:
            raise ImageFormatError(source, line_number, f"expected {width} values, got {len(fields)}")
        for column, field in enumerate(fields):
            try:
                values[index, column] = float(field)
            except ValueError:
                raise ImageFormatError(source, line_number, f"value {field!r} is not a number") from None
        if not np.all(np.isfinite(values[index])):
            raise ImageFormatError(source, line_number, "values must be finite")
    return values, [line_number for line_number, _ in rows]


def load_image(path: Path | str) -> np.ndarray:
    values, _ = _read_grid(path)
    return values


def load_counts(path: Path | str) -> np.ndarray:
    values, line_numbers = _read_grid(path)
    for row, line_number in zip(values, line_numbers):
        if np.any(row < 0):
            raise ImageFormatError(path, line_number, "counts must be non-negative")
        if not np.array_equal(row, np.round(row)):
            raise ImageFormatError(path, line_number, "counts must be integers")
    return values.astype(np.int64)


def _write_grid(values: np.ndarray, path: Path | str, fmt: str, header: bool = True) -> Path:
    grid = np.asarray(values)
    if grid.ndim != 2:
        raise ValueError(f"Only 2-D images can be saved, got shape {grid.shape}")
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    height, width = grid.shape
    np.savetxt(target, grid, fmt=fmt, delimiter=" ", header=f"{width} {height}" if header else "", comments="")
    return target


def save_image(img: np.ndarray, path: Path | str) -> Path:
    return _write_grid(np.asarray(img, dtype=float), path, "%.17g")


def save_counts(counts: np.ndarray, path: Path | str) -> Path:
    values = np.asarray(counts)
    if np.any(values < 0) or not np.array_equal(values, np.round(values)):
        raise ValueError("Counts must be non-negative integers")
    return _write_grid(values.astype(np.int64), path, "%d")


def save_psf(psf: np.ndarray, path: Path | str) -> Path:
    """Write a PSF as bare rows, the form ``load_psf`` reads back."""

    return _write_grid(np.asarray(psf, dtype=float), path, "%.17g", header=False)


def load_psf(source: Path | str) -> np.ndarray:
    """Read a PSF from a header-less matrix file or build it from a ``gaussian:``/``box:``/``delta`` spec."""

    candidate = Path(source)
    if candidate.is_file():
        psf, _ = _read_grid(candidate, header=False)
        if np.any(psf < 0):
            raise ValueError(f"PSF file {candidate} has negative entries")
        return psf
    if isinstance(source, Path):
        raise FileNotFoundError(f"PSF file not found: {candidate}")
    try:
        return parse_psf_spec(source)
    except ValueError:
        if candidate.suffix == ".txt" or "/" in source:
            raise FileNotFoundError(f"PSF file not found: {candidate}") from None
        raise


def observation_stats(counts: np.ndarray) -> dict:
    values = np.asarray(counts)
    return {
        "total": int(values.sum()),
        "max": int(values.max()),
        "mean": float(values.mean()),
        "zeros": int(np.count_nonzero(values == 0)),
    }


__all__ = [
    "ImageFormatError",
    "PhantomKind",
    "PhantomSpec",
    "load_counts",
    "load_image",
    "load_psf",
    "make_phantom",
    "observation_stats",
    "sample_poisson",
    "save_counts",
    "save_image",
    "save_psf",
]
