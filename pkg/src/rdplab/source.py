"""Discrete memoryless sources, product extensions and distortion matrices."""
from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PRODUCT_CAP = 4096


class SourceError(ValueError):
    """Raised for malformed source definitions."""


def xlogx(p: np.ndarray) -> np.ndarray:
    """Elementwise p*log(p) in nats with 0*log(0) = 0."""
    p = np.asarray(p, dtype=float)
    out = np.zeros_like(p)
    pos = p > 0
    out[pos] = p[pos] * np.log(p[pos])
    return out


def entropy_of(pmf) -> float:
    """Shannon entropy in bits of a probability vector."""
    return float(max(-xlogx(np.asarray(pmf, dtype=float)).sum() / np.log(2.0), 0.0)) + 0.0


@dataclass(frozen=True, eq=False)
class Source:
    """Finite alphabet of real vectors with a pmf.

    ``symbols`` has shape (m, N). ``length`` is the number of base letters
    each symbol represents (1 unless built by :func:`product_source`).
    """

    symbols: np.ndarray
    pmf: np.ndarray
    length: int = 1
    _fingerprint: str = field(default="", repr=False)

    @property
    def size(self) -> int:
        return self.symbols.shape[0]

    @property
    def dim(self) -> int:
        return self.symbols.shape[1]

    @property
    def fingerprint(self) -> str:
        return self._fingerprint

    def mean(self) -> np.ndarray:
        return self.pmf @ self.symbols

    def variance(self) -> float:
        """Trace of the covariance."""
        centered = self.symbols - self.mean()
        return float(self.pmf @ np.sum(centered * centered, axis=1))

    def to_dict(self) -> dict:
        return {"symbols": self.symbols.tolist(), "pmf": self.pmf.tolist()}


def _as_vectors(symbols) -> np.ndarray:
    rows = []
    for s in symbols:
        v = np.atleast_1d(np.asarray(s, dtype=float))
        if v.ndim != 1:
            raise SourceError("each symbol must be a scalar or a flat vector")
        rows.append(v)
    if not rows:
        raise SourceError("empty alphabet")
    dims = {len(r) for r in rows}
    if len(dims) != 1:
        raise SourceError(f"mismatched symbol dimensions: {sorted(dims)}")
    if 0 in dims:
        raise SourceError("symbols must have dimension >= 1")
    return np.vstack(rows)


def _fingerprint(symbols: np.ndarray, pmf: np.ndarray, length: int) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(symbols).tobytes())
    h.update(np.ascontiguousarray(pmf).tobytes())
    h.update(str(length).encode())
    return h.hexdigest()[:16]


def make_source(symbols, pmf, length: int = 1) -> Source:
    """Build a validated source.

    Zero-mass symbols are pruned, duplicate symbols are merged by summing
    their mass, and the pmf is renormalized. First-occurrence order is kept.
    """
    vecs = _as_vectors(symbols)
    p = np.asarray(pmf, dtype=float).ravel()
    if p.shape[0] != vecs.shape[0]:
        raise SourceError(f"{vecs.shape[0]} symbols but pmf has {p.shape[0]} entries")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise SourceError("pmf entries must be finite and non-negative")
    total = p.sum()
    if total <= 0:
        raise SourceError("pmf sums to 0")

    merged: dict[bytes, int] = {}
    keep_vecs: list[np.ndarray] = []
    keep_mass: list[float] = []
    for v, w in zip(vecs, p):
        if w == 0:
            continue
        key = (v + 0.0).tobytes()  # folds -0.0 into 0.0
        if key in merged:
            keep_mass[merged[key]] += w
        else:
            merged[key] = len(keep_vecs)
            keep_vecs.append(v + 0.0)
            keep_mass.append(float(w))
    if not keep_vecs:
        raise SourceError("empty alphabet after pruning")
    out_syms = np.vstack(keep_vecs)
    out_pmf = np.asarray(keep_mass)
    out_pmf = out_pmf / out_pmf.sum()
    out_syms.setflags(write=False)
    out_pmf.setflags(write=False)
    return Source(out_syms, out_pmf, int(length), _fingerprint(out_syms, out_pmf, int(length)))


def quantized_gaussian_source(mean: float, std: float, grid_points: int,
                              half_width_stds: float) -> Source:
    """Gaussian density sampled on a uniform grid of ``grid_points`` points
    spanning mean +/- half_width_stds*std, renormalized."""
    if not std > 0:
        raise SourceError("std must be positive")
    if grid_points < 2:
        raise SourceError("grid_points must be >= 2")
    if not half_width_stds > 0:
        raise SourceError("half_width_stds must be positive")
    k = half_width_stds
    grid = np.linspace(mean - k * std, mean + k * std, grid_points)
    # Symmetrize so the pmf is exactly mirror-symmetric about the mean.
    z = (grid - mean) / std
    z = 0.5 * (z - z[::-1])
    dens = np.exp(-0.5 * z * z)
    return make_source(grid[:, None], dens / dens.sum())


def product_source(src: Source, t: int, cap: int = PRODUCT_CAP) -> Source:
    """t-fold memoryless extension; symbols are concatenated vectors."""
    if t < 1:
        raise SourceError("t must be >= 1")
    if t == 1:
        return src
    m = src.size
    if m ** t > cap:
        raise SourceError(f"product alphabet {m}^{t} exceeds cap {cap}")
    idx = list(itertools.product(range(m), repeat=t))
    symbols = np.array([np.concatenate([src.symbols[i] for i in tup]) for tup in idx])
    pmf = np.array([np.prod([src.pmf[i] for i in tup]) for tup in idx])
    return make_source(symbols, pmf, length=src.length * t)


def entropy_bits(src: Source) -> float:
    return entropy_of(src.pmf)


@dataclass(frozen=True, eq=False)
class DistortionMatrix:
    values: np.ndarray
    symmetric: bool
    kind: str = "custom"

    @property
    def src_dim(self) -> int:
        return self.values.shape[0]

    @property
    def rec_dim(self) -> int:
        return self.values.shape[1]


def _alphabet(a) -> np.ndarray:
    if isinstance(a, Source):
        return a.symbols
    return _as_vectors(a)


def _wrap(values: np.ndarray, kind: str) -> DistortionMatrix:
    sym = (values.shape[0] == values.shape[1]
           and bool(np.all(np.abs(values - values.T) <= 1e-14)))
    values.setflags(write=False)
    return DistortionMatrix(values, sym, kind)


def squared_error_matrix(src_alphabet, rec_alphabet) -> DistortionMatrix:
    """values[i, j] = ||x_i - xhat_j||^2."""
    a, b = _alphabet(src_alphabet), _alphabet(rec_alphabet)
    if a.shape[1] != b.shape[1]:
        raise SourceError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    diff = a[:, None, :] - b[None, :, :]
    return _wrap(np.sum(diff * diff, axis=2), "squared_error")


def hamming_matrix(src_alphabet, rec_alphabet) -> DistortionMatrix:
    a, b = _alphabet(src_alphabet), _alphabet(rec_alphabet)
    if a.shape[1] != b.shape[1]:
        raise SourceError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    equal = np.all(a[:, None, :] == b[None, :, :], axis=2)
    return _wrap(np.where(equal, 0.0, 1.0), "hamming")


def distortion_matrix(kind: str, src_alphabet, rec_alphabet) -> DistortionMatrix:
    if kind == "squared_error":
        return squared_error_matrix(src_alphabet, rec_alphabet)
    if kind == "hamming":
        return hamming_matrix(src_alphabet, rec_alphabet)
    raise SourceError(f"unknown distortion kind {kind!r}")


def load_source(path) -> Source:
    """Read a ``{"symbols": [...], "pmf": [...]}`` JSON file."""
    with open(Path(path)) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or set(doc) != {"symbols", "pmf"}:
        raise SourceError("source file must contain exactly 'symbols' and 'pmf'")
    return make_source(doc["symbols"], doc["pmf"])


def save_source(src: Source, path) -> None:
    with open(Path(path), "w") as fh:
        json.dump(src.to_dict(), fh)
