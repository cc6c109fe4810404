"""Time series of per-mode observables: serialisation and cross-run comparison."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GridMismatch
from .moments import fill_initial_limit, g2_ratio

FLOAT_FORMAT = ".17g"


@dataclass
class ObservableSeries:
    """``n_j(t)`` and ``g2_j(t)`` on a shared time grid; ``g2_se`` only for ensembles."""

    times: np.ndarray
    n: np.ndarray
    g2: np.ndarray
    g2_se: np.ndarray | None = None
    method: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def n_modes(self) -> int:
        return self.n.shape[1]

    @classmethod
    def from_estimate(cls, est, meta=None) -> "ObservableSeries":
        return cls(est.times, est.n_mean, est.g2, est.g2_se, "montecarlo", dict(meta or {}))

    @classmethod
    def from_counts(cls, times, n, G, method, meta=None, initial=None) -> "ObservableSeries":
        """From photon numbers and pair correlators of a deterministic route.

        Undefined ``t = 0`` entries take ``initial`` where given, else the
        first positive-time value.
        """
        g2 = g2_ratio(G, n)
        if initial is not None and len(g2):
            first = g2[0]
            fill = np.isnan(first)
            first[fill] = np.asarray(initial)[fill]
        g2 = fill_initial_limit(g2)
        return cls(np.asarray(times), np.asarray(n), g2, None, method, dict(meta or {}))

    def header(self) -> list:
        m = range(1, self.n_modes + 1)
        cols = ["t"] + [f"n_{j}" for j in m] + [f"g2_{j}" for j in m]
        if self.g2_se is not None:
            cols += [f"g2_se_{j}" for j in m]
        return cols

    def table(self) -> np.ndarray:
        parts = [self.times[:, None], self.n, self.g2]
        if self.g2_se is not None:
            parts.append(self.g2_se)
        return np.hstack(parts) if len(self.times) else np.empty((0, len(self.header())))


def emit_series(series: ObservableSeries, path) -> Path:
    """Write ``series`` as comma-separated text with 17 significant digits."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(series.header())
        for row in series.table():
            writer.writerow([format(float(x), FLOAT_FORMAT) for x in row])
    return path


def read_series(path) -> ObservableSeries:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    m = sum(1 for h in header if h.startswith("n_"))
    data = np.array([[float(x) for x in r] for r in body]).reshape(len(body), len(header))
    se = data[:, 1 + 2 * m : 1 + 3 * m] if len(header) > 1 + 2 * m else None
    method = path.stem
    return ObservableSeries(data[:, 0], data[:, 1 : 1 + m], data[:, 1 + m : 1 + 2 * m], se, method)


@dataclass
class ComparisonReport:
    z: np.ndarray
    threshold: float
    min_fraction: float
    fraction_within: float
    compared_points: int

    @property
    def passed(self) -> bool:
        return self.compared_points > 0 and self.fraction_within >= self.min_fraction

    @property
    def max_abs_z(self) -> float:
        finite = np.abs(self.z[~np.isnan(self.z)])
        return float(finite.max()) if finite.size else 0.0

    def summary(self) -> dict:
        return {
            "passed": self.passed,
            "threshold_se": self.threshold,
            "min_fraction": self.min_fraction,
            "fraction_within": self.fraction_within,
            "compared_points": self.compared_points,
            "max_abs_z": self.max_abs_z,
            "max_abs_z_per_mode": [
                float(np.nanmax(np.abs(col))) if np.any(~np.isnan(col)) else None for col in self.z.T
            ],
        }


def compare(
    a: ObservableSeries,
    b: ObservableSeries,
    tolerance: float = 3.0,
    min_fraction: float = 0.95,
    atol: float = 0.0,
    modes=None,
) -> ComparisonReport:
    """z-scores of the g2 difference over the combined standard error.

    Points where either side is undefined are skipped. Without any standard
    error, a difference above ``atol`` scores ``inf``.
    """
    if a.n_modes != b.n_modes:
        raise GridMismatch(f"mode counts differ: {a.n_modes} vs {b.n_modes}")
    if a.times.shape != b.times.shape or not np.allclose(a.times, b.times, rtol=1e-12, atol=0):
        raise GridMismatch("time grids differ")
    cols = list(range(a.n_modes)) if modes is None else list(modes)
    ga, gb = a.g2[:, cols], b.g2[:, cols]
    sa = a.g2_se[:, cols] if a.g2_se is not None else np.zeros_like(ga)
    sb = b.g2_se[:, cols] if b.g2_se is not None else np.zeros_like(gb)
    diff = ga - gb
    se = np.sqrt(np.nan_to_num(sa) ** 2 + np.nan_to_num(sb) ** 2)
    z = np.full(diff.shape, np.nan)
    defined = ~np.isnan(diff)
    small = defined & (np.abs(diff) <= atol)
    z[small] = 0.0
    rest = defined & ~small
    with np.errstate(divide="ignore"):
        z[rest] = np.where(se[rest] > 0, diff[rest] / np.where(se[rest] > 0, se[rest], 1.0), np.inf)
    count = int(defined.sum())
    within = int(np.sum(np.abs(z[defined]) <= tolerance))
    return ComparisonReport(z, tolerance, min_fraction, within / count if count else 0.0, count)
