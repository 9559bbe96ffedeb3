"""CSV ingestion and stationarity transforms."""
import csv
from dataclasses import dataclass
import math

import numpy as np

from ..exceptions import DataError
from ..var import Panel

__all__ = ["load_csv", "load_codes", "TransformCode", "PreprocessInfo", "preprocess"]

MISSING = {"", "na", "nan", "n/a", "null", "."}
ORDER = {1: 1, 2: 2, 3: 1, 4: 2}


def _cell(text, row, col, path):
    t = text.strip()
    if t.lower() in MISSING:
        return math.nan
    try:
        v = float(t)
    except ValueError:
        raise DataError(f"{path}: non-numeric cell {text!r} at row {row}, column {col}") from None
    if not math.isfinite(v):
        raise DataError(f"{path}: non-finite cell {text!r} at row {row}, column {col}")
    return v


def load_csv(path, task_id=None):
    """Read a time-by-variable CSV into a :class:`Panel` (variables by time).

    The first column holds time labels and the header names the variables.
    Leading rows with a missing cell are dropped so every series starts at the
    same period; a missing cell after that is an error.
    """
    path = str(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if len(header) < 2:
        raise DataError(f"{path}: need a time column and at least one variable")
    if not body:
        raise DataError(f"{path}: header only, no observations")
    width = len(header)
    values = np.empty((len(body), width - 1))
    for i, r in enumerate(body):
        if len(r) != width:
            raise DataError(f"{path}: row {i + 2} has {len(r)} cells, expected {width}")
        values[i] = [_cell(c, i + 2, j + 2, path) for j, c in enumerate(r[1:])]
    complete = ~np.isnan(values).any(axis=1)
    if not complete.any():
        raise DataError(f"{path}: no complete rows")
    start = int(np.argmax(complete))
    values = values[start:]
    if np.isnan(values).any():
        bad = int(np.argwhere(np.isnan(values))[0, 0]) + start + 2
        raise DataError(f"{path}: missing value inside the sample at row {bad}")
    names = tuple(h.strip() for h in header[1:])
    return Panel(np.ascontiguousarray(values.T), task_id or path, 0, names)


@dataclass(frozen=True)
class TransformCode:
    """Per-variable transform codes.

    1 first difference, 2 second difference, 3 log first difference,
    4 log second difference.
    """

    codes: tuple
    standardize: bool = True

    def __post_init__(self):
        codes = tuple(int(c) for c in self.codes)
        if not codes or any(c not in ORDER for c in codes):
            raise DataError(f"transform codes must be in 1..4, got {self.codes}")
        object.__setattr__(self, "codes", codes)

    @property
    def max_order(self):
        return max(ORDER[c] for c in self.codes)


def load_codes(path):
    """Read transform codes from a two-column CSV (variable, code) with a header."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    try:
        return {r[0].strip(): int(r[1]) for r in rows[1:]}
    except (IndexError, ValueError):
        raise DataError(f"{path}: expected rows of (variable, code)") from None


@dataclass(frozen=True)
class PreprocessInfo:
    """What :func:`preprocess` did, enough to map one-step forecasts back to levels."""

    codes: tuple
    mean: np.ndarray
    std: np.ndarray
    variables: tuple = None

    def unstandardize(self, x):
        return np.asarray(x, dtype=float) * self.std + self.mean

    def to_levels(self, forecast, history):
        """Level forecasts from standardized transformed forecasts.

        ``history`` holds at least the last two raw observations, shape (N, >=2).
        """
        x = self.unstandardize(forecast)
        h = np.asarray(history, dtype=float)
        out = np.empty_like(x)
        for i, c in enumerate(self.codes):
            last, prev = h[i, -1], h[i, -2]
            if c == 1:
                out[i] = last + x[i]
            elif c == 2:
                out[i] = x[i] + 2 * last - prev
            elif c == 3:
                out[i] = math.exp(x[i] + math.log(last))
            else:
                out[i] = math.exp(x[i] + 2 * math.log(last) - math.log(prev))
        return out


def _transform(series, code, name):
    if code in (3, 4):
        if np.any(series <= 0):
            raise DataError(f"variable {name!r} has non-positive values under log code {code}")
        series = np.log(series)
    return np.diff(series, n=ORDER[code])


def preprocess(raw, codes):
    """Apply per-variable stationarity transforms, then standardize.

    Every series is trimmed to the length allowed by the largest differencing
    order so that the output stays time-aligned.  An all-constant series
    standardizes to zeros.

    Returns
    -------
    Panel, PreprocessInfo
    """
    if not isinstance(codes, TransformCode):
        codes = TransformCode(tuple(codes))
    Y = raw.Y
    N, n = Y.shape
    if len(codes.codes) != N:
        raise DataError(f"{len(codes.codes)} transform codes for {N} variables")
    d = codes.max_order
    if n <= d:
        raise DataError(f"{n} observations are too few for differencing order {d}")
    names = raw.variables or tuple(f"y{i + 1}" for i in range(N))
    out = np.empty((N, n - d))
    for i, c in enumerate(codes.codes):
        z = _transform(Y[i], c, names[i])
        out[i] = z[len(z) - (n - d):]
    if codes.standardize:
        mean = out.mean(axis=1)
        std = out.std(axis=1)
        safe = np.where(std > 0, std, 1.0)
        out = (out - mean[:, None]) / safe[:, None]
        out[std == 0] = 0.0
        std = safe
    else:
        mean, std = np.zeros(N), np.ones(N)
    info = PreprocessInfo(codes.codes, mean, std, raw.variables)
    return Panel(out, raw.task_id, 0, raw.variables), info
