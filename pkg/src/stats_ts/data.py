"""Delimited-text datasets and synthetic series generators."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from .errors import ContractError
from .rng import RandomSource


@dataclass
class DatasetSpec:
    path: str
    delimiter: str = ","
    header: bool = True
    timestamp: str | None = None
    channels: list = field(default_factory=list)
    frequency: str = ""


def _parse_time(text):
    try:
        return float(text)
    except ValueError:
        return datetime.fromisoformat(text.strip()).timestamp()


def load_csv(spec: DatasetSpec) -> np.ndarray:
    """Numeric ``(N, d)`` matrix; a timestamp column is checked for order and dropped."""
    with open(spec.path, newline="") as fh:
        rows = [r for r in csv.reader(fh, delimiter=spec.delimiter) if any(c.strip() for c in r)]
    if not rows:
        raise ContractError(f"{spec.path}: no data rows")
    names = rows.pop(0) if spec.header else [f"c{i}" for i in range(len(rows[0]))]
    names = [n.strip() for n in names]
    ts_col = None
    if spec.timestamp:
        if spec.timestamp not in names:
            raise ContractError(f"{spec.path}: timestamp column {spec.timestamp!r} not found")
        ts_col = names.index(spec.timestamp)
    keep = [i for i in range(len(names)) if i != ts_col]
    if spec.channels:
        missing = [c for c in spec.channels if c not in names]
        if missing:
            raise ContractError(f"{spec.path}: unknown channels {missing}")
        keep = [names.index(c) for c in spec.channels]
    first_data_line = 2 if spec.header else 1
    out = np.empty((len(rows), len(keep)))
    stamps = []
    for r, row in enumerate(rows):
        if len(row) != len(names):
            raise ContractError(f"{spec.path}: row {r + first_data_line} has {len(row)} fields, expected {len(names)}")
        for j, c in enumerate(keep):
            try:
                value = float(row[c])
            except ValueError:
                raise ContractError(
                    f"{spec.path}: cannot parse {row[c]!r} at row {r + first_data_line}, column {names[c]!r}"
                ) from None
            if not np.isfinite(value):
                raise ContractError(f"{spec.path}: non-finite value at row {r + first_data_line}, column {names[c]!r}")
            out[r, j] = value
        if ts_col is not None:
            stamps.append(_parse_time(row[ts_col]))
    if stamps and np.any(np.diff(stamps) <= 0):
        bad = int(np.argmax(np.diff(stamps) <= 0)) + first_data_line + 1
        raise ContractError(f"{spec.path}: timestamps not strictly increasing at row {bad}")
    return out


def write_csv(path, matrix, names=None, delimiter=","):
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    names = names or [f"c{i}" for i in range(matrix.shape[1])]
    with open(path, "w", newline="") as fh:
        fh.write(delimiter.join(names) + "\n")
        for row in matrix:
            fh.write(delimiter.join(f"{v:.17g}" for v in row) + "\n")


# -- synthetic series --------------------------------------------------------------
PRIMARY_PERIOD = 24.0
SECONDARY_PERIOD = 12.0 * np.sqrt(3.0)


def _sin2(n, d, rng, noise):
    t = np.arange(n, dtype=np.float64)[:, None]
    ch = np.arange(d, dtype=np.float64)[None, :]
    main = np.sin(2 * np.pi * t / PRIMARY_PERIOD + 0.7 * ch)
    second = 0.25 * np.sin(2 * np.pi * t / SECONDARY_PERIOD + 1.9 * ch + 0.3)
    return main + second + noise * rng.normal((n, d))


def _arma(n, d, rng, noise):
    # AR(2) driven by unit innovations, scaled by ``noise``
    burn = 200
    e = rng.normal((n + burn, d))
    x = np.zeros((n + burn, d))
    for i in range(2, n + burn):
        x[i] = 0.6 * x[i - 1] - 0.2 * x[i - 2] + e[i]
    return noise * x[burn:]


GENERATORS = {"sin2": (_sin2, 0.1), "arma": (_arma, 1.0)}


def generate_synthetic(name: str, n: int, d: int = 2, seed: int = 1, noise: float | None = None) -> np.ndarray:
    if name not in GENERATORS:
        raise ContractError(f"unknown generator {name!r}; available: {sorted(GENERATORS)}")
    if n < 1 or d < 1:
        raise ContractError("need n >= 1 and d >= 1")
    fn, default_noise = GENERATORS[name]
    return fn(n, d, RandomSource(seed).child(7), default_noise if noise is None else noise)
