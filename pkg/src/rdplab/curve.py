"""Rate-distortion points, curves, lower convex envelopes and CSV export."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

import numpy as np

CURVE_HEADER = ["beta", "rate_bits", "distortion", "perception", "iterations", "converged"]
UNCONSTRAINED = "unconstrained"
SHAPE_TOL = 1e-9


@dataclass(frozen=True)
class RDPoint:
    """One (rate, distortion, perception) triple plus solver metadata.

    ``perception`` is None for points computed without a perception
    constraint; ``multiplier`` is the Lagrange multiplier (beta or lambda)
    that produced the point.
    """

    rate_bits: float
    distortion: float
    perception: Optional[float] = None
    multiplier: float = float("nan")
    iterations: int = 0
    converged: bool = True
    residual: float = 0.0


@dataclass
class Curve:
    points: list[RDPoint]
    label: str = ""
    fingerprint: str = ""
    warnings: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def distortions(self) -> np.ndarray:
        return np.array([p.distortion for p in self.points], dtype=float)

    @property
    def rates(self) -> np.ndarray:
        return np.array([p.rate_bits for p in self.points], dtype=float)

    @property
    def all_converged(self) -> bool:
        return all(p.converged for p in self.points)

    def scaled(self, factor: float, label: str = "") -> "Curve":
        """Copy with every distortion multiplied by ``factor``."""
        pts = [replace(p, distortion=p.distortion * factor) for p in self.points]
        return Curve(pts, label or self.label, self.fingerprint)


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def lower_envelope_indices(d: np.ndarray, r: np.ndarray) -> list[int]:
    """Indices of the non-increasing lower convex envelope of (d, r).

    Andrew's monotone chain on points sorted by distortion (ties by rate),
    truncated at the first point attaining the minimum rate.
    """
    d = np.asarray(d, dtype=float)
    r = np.asarray(r, dtype=float)
    if d.size == 0:
        return []
    order = sorted(range(d.size), key=lambda i: (d[i], r[i]))
    # keep the lowest rate at each distortion value
    dedup: list[int] = []
    for i in order:
        if dedup and d[dedup[-1]] == d[i]:
            continue
        dedup.append(i)
    hull: list[int] = []
    for i in dedup:
        p = (d[i], r[i])
        while len(hull) >= 2 and _cross((d[hull[-2]], r[hull[-2]]),
                                        (d[hull[-1]], r[hull[-1]]), p) <= 0:
            hull.pop()
        hull.append(i)
    best = min(range(len(hull)), key=lambda k: (r[hull[k]], k))
    return hull[: best + 1]


def lower_envelope(curve: Curve) -> Curve:
    """Drop dominated and non-convex points; result sorted by distortion."""
    idx = lower_envelope_indices(curve.distortions, curve.rates)
    dropped = len(curve.points) - len(idx)
    out = Curve([curve.points[i] for i in idx], curve.label, curve.fingerprint,
                list(curve.warnings))
    if dropped:
        out.warnings.append(f"envelope cleanup dropped {dropped} point(s)")
    return out


def check_shape(curve: Curve, tol: float = SHAPE_TOL) -> tuple[bool, float]:
    """Check non-increasing rate and convexity.

    Returns (ok, worst violation). Convexity means each interior point lies
    on or below the chord joining its neighbours.
    """
    d, r = curve.distortions, curve.rates
    worst = 0.0
    if d.size >= 2:
        if np.any(np.diff(d) < 0):
            return False, float("inf")
        worst = max(worst, float(np.max(np.diff(r), initial=0.0)))
    for k in range(1, d.size - 1):
        span = d[k + 1] - d[k - 1]
        if span <= 0:
            continue
        w = (d[k] - d[k - 1]) / span
        chord = (1 - w) * r[k - 1] + w * r[k + 1]
        worst = max(worst, r[k] - chord)
    return worst <= tol, worst


def interpolate_rate(curve: Curve, distortions) -> np.ndarray:
    """Piecewise-linear rate at the requested distortions (inside the range)."""
    return np.interp(np.asarray(distortions, dtype=float), curve.distortions, curve.rates)


def _fmt(x: float) -> str:
    return repr(float(x))


def curve_rows(curve: Curve) -> list[list[str]]:
    rows = []
    for p in curve.points:
        perception = UNCONSTRAINED if p.perception is None else _fmt(p.perception)
        rows.append([_fmt(p.multiplier), _fmt(p.rate_bits), _fmt(p.distortion),
                     perception, str(p.iterations), "true" if p.converged else "false"])
    return rows


def curve_header(curve: Curve) -> list[str]:
    """Perfect-perception curves name their multiplier ``lambda``."""
    if curve.points and all(p.perception == 0.0 for p in curve.points):
        return ["lambda"] + CURVE_HEADER[1:]
    return list(CURVE_HEADER)


def write_curve_csv(curve: Curve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(curve_header(curve))
        w.writerows(curve_rows(curve))


def parse_perception(text: str) -> Optional[float]:
    return None if text == UNCONSTRAINED else float(text)


def read_curve_csv(path, label: str = "") -> Curve:
    with open(path, newline="") as fh:
        return _read_curve(fh, label)


def _read_curve(fh: Iterable[str], label: str) -> Curve:
    reader = csv.DictReader(fh)
    names = reader.fieldnames or []
    if names[1:] != CURVE_HEADER[1:] or names[:1] not in (["beta"], ["lambda"]):
        raise ValueError(f"unexpected curve header {reader.fieldnames}")
    key = names[0]
    pts = [RDPoint(rate_bits=float(row["rate_bits"]), distortion=float(row["distortion"]),
                   perception=parse_perception(row["perception"]),
                   multiplier=float(row[key]), iterations=int(row["iterations"]),
                   converged=row["converged"] == "true")
           for row in reader]
    return Curve(pts, label)


def curve_from_csv_text(text: str, label: str = "") -> Curve:
    return _read_curve(io.StringIO(text), label)
