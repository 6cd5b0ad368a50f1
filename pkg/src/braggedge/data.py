"""Spectrum ingestion from CSV and macro-pixel averaging of pixel stacks."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import BraggEdgeError, InvalidArgumentError
from .noise import noise_std_at
from .spectrum import TransmissionSpectrum

FORMATS = ("csv_tr", "csv_counts")


class IngestError(BraggEdgeError, ValueError):
    """A spectrum file could not be parsed; ``line`` is 1-based."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class DroppedRowsWarning(UserWarning):
    """Rows with zero open-beam counts were skipped."""

    def __init__(self, count):
        super().__init__(f"dropped {count} row(s) with I0 = 0")
        self.count = count


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def _read_rows(path, n_min, n_max):
    rows = []
    with open(path, newline="") as fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            cells = [c.strip() for c in row]
            if not cells or all(c == "" for c in cells) or cells[0].startswith("#"):
                continue
            # a leading row of column names is allowed
            if not rows and not _is_number(cells[0]):
                continue
            if not n_min <= len(cells) <= n_max:
                raise IngestError(f"expected {n_min}-{n_max} columns, got {len(cells)}", line_no)
            try:
                values = [float(c) if c != "" else np.nan for c in cells]
            except ValueError as exc:
                raise IngestError(f"not a number: {exc}", line_no) from exc
            if not all(np.isfinite(values[:2])):
                raise IngestError("wavelength and value must be finite", line_no)
            rows.append((line_no, values))
    if not rows:
        raise IngestError("file holds no data rows")
    return rows


def _check_increasing(rows):
    for (_, prev), (line_no, cur) in zip(rows, rows[1:]):
        if cur[0] <= prev[0]:
            raise IngestError("wavelengths must be strictly increasing", line_no)


def ingest_spectrum(path, format="csv_tr", noise_model=None):
    """Read one spectrum from a CSV file.

    ``csv_tr`` rows are ``lambda, transmission[, noise_std]``; ``csv_counts``
    rows are ``lambda, I, I0`` and give ``Tr = I / I0``.  Rows with
    ``I0 == 0`` are skipped and reported through a
    :class:`DroppedRowsWarning`.  When ``noise_model`` is given, per-point
    noise is taken from it (overriding any ``noise_std`` column).

    Raises
    ------
    IngestError
        Malformed rows (with the 1-based line number), or non-increasing
        wavelengths.
    """
    if format not in FORMATS:
        raise InvalidArgumentError(f"format must be one of {FORMATS}, got {format!r}")
    if format == "csv_tr":
        rows = _read_rows(path, 2, 3)
        _check_increasing(rows)
        lam = np.array([r[1][0] for r in rows])
        tr = np.array([r[1][1] for r in rows])
        std = None
        if all(len(r[1]) == 3 and np.isfinite(r[1][2]) for r in rows):
            std = np.array([r[1][2] for r in rows])
    else:
        rows = _read_rows(path, 3, 3)
        _check_increasing(rows)
        kept = [r for r in rows if r[1][2] != 0]
        dropped = len(rows) - len(kept)
        if dropped:
            warnings.warn(DroppedRowsWarning(dropped), stacklevel=2)
        if not kept:
            raise IngestError("every row has I0 = 0")
        lam = np.array([r[1][0] for r in kept])
        tr = np.array([r[1][1] / r[1][2] for r in kept])
        std = None
    if noise_model is not None:
        std = noise_std_at(noise_model, tr)
    try:
        return TransmissionSpectrum(lam, tr, std)
    except InvalidArgumentError as exc:
        raise IngestError(str(exc)) from exc


@dataclass
class PixelStack:
    """Transmission spectra for a ``height x width`` block of detector pixels.

    ``spectra`` has shape ``(height, width, n_wavelengths)``.
    """

    wavelengths: np.ndarray
    spectra: np.ndarray

    def __post_init__(self):
        self.wavelengths = np.asarray(self.wavelengths, dtype=float)
        self.spectra = np.asarray(self.spectra, dtype=float)
        if self.spectra.ndim != 3 or self.spectra.shape[2] != self.wavelengths.size:
            raise InvalidArgumentError("spectra must have shape (height, width, n_wavelengths)")

    @property
    def height(self):
        return self.spectra.shape[0]

    @property
    def width(self):
        return self.spectra.shape[1]

    def spectrum(self, row, col, noise_std=None):
        return TransmissionSpectrum(self.wavelengths, self.spectra[row, col], noise_std)


def macro_pixel_average(stack, p):
    """Average non-overlapping ``p x p`` blocks.

    Trailing partial blocks are averaged over the pixels they actually hold,
    so the output is ``ceil(height / p) x ceil(width / p)``.
    """
    p = int(p)
    if p < 1:
        raise InvalidArgumentError("block size p must be >= 1")
    h, w, n = stack.spectra.shape
    rows = np.arange(0, h, p)
    cols = np.arange(0, w, p)
    sums = np.add.reduceat(np.add.reduceat(stack.spectra, rows, axis=0), cols, axis=1)
    counts = np.outer(np.diff(np.append(rows, h)), np.diff(np.append(cols, w)))
    return PixelStack(stack.wavelengths.copy(), sums / counts[:, :, None])


def load_pixel_stack(path):
    """Read a stack saved by :func:`save_pixel_stack` (``.npz``)."""
    with np.load(path) as z:
        return PixelStack(z["wavelengths"], z["spectra"])


def save_pixel_stack(path, stack):
    np.savez(path, wavelengths=stack.wavelengths, spectra=stack.spectra)
