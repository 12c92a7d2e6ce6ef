"""Tabular encoder / decoder pairs: conditional-mean decoding, posterior
sampling decoding, encoder enumeration and operational frontiers."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .curve import Curve, RDPoint, lower_envelope
from .source import Source, entropy_of

FRONTIER_HEADER = ["encoder_id", "rate_bits", "distortion", "decoder"]
ENUM_CAP = 10_000_000


class EncoderError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DeterministicEncoder:
    """Map symbol index -> code index in [0, n), every code used."""

    assignment: np.ndarray
    n: int

    @classmethod
    def from_assignment(cls, assignment) -> "DeterministicEncoder":
        """Compact and relabel codes by first occurrence."""
        a = np.asarray(assignment, dtype=int).ravel()
        if a.size == 0:
            raise EncoderError("empty assignment")
        if np.any(a < 0):
            raise EncoderError("code indices must be non-negative")
        relabel: dict[int, int] = {}
        out = np.empty_like(a)
        for i, c in enumerate(a):
            out[i] = relabel.setdefault(int(c), len(relabel))
        out.setflags(write=False)
        return cls(out, len(relabel))

    def to_json(self) -> str:
        return json.dumps(self.assignment.tolist())

    @classmethod
    def from_json(cls, text: str) -> "DeterministicEncoder":
        return cls.from_assignment(json.loads(text))

    def kernel(self) -> np.ndarray:
        """(m, n) one-hot matrix of p(z | y)."""
        k = np.zeros((self.assignment.size, self.n))
        k[np.arange(self.assignment.size), self.assignment] = 1.0
        return k


def identity_encoder(m: int) -> DeterministicEncoder:
    return DeterministicEncoder.from_assignment(np.arange(m))


def constant_encoder(m: int) -> DeterministicEncoder:
    return DeterministicEncoder.from_assignment(np.zeros(m, dtype=int))


@dataclass(frozen=True, eq=False)
class ConditionalKernel:
    """Row-stochastic matrix; ``orientation`` is "encoder" (symbol -> code)
    or "decoder" (code -> reconstruction)."""

    matrix: np.ndarray
    orientation: str

    def __post_init__(self):
        M = np.asarray(self.matrix, dtype=float)
        if M.ndim != 2 or np.any(M < 0) or np.any(np.abs(M.sum(axis=1) - 1) > 1e-12):
            raise ValueError("kernel rows must be probability vectors")


@dataclass(frozen=True, eq=False)
class Decoder:
    """Either one reconstruction vector per code ("cond_mean") or a
    stochastic code -> source-symbol kernel ("posterior" / "stochastic")."""

    kind: str
    centroids: Optional[np.ndarray] = None
    kernel: Optional[np.ndarray] = None

    @property
    def stochastic(self) -> bool:
        return self.kernel is not None


def _check(src: Source, enc: DeterministicEncoder) -> None:
    if enc.assignment.size != src.size:
        raise EncoderError(f"encoder covers {enc.assignment.size} symbols, source has {src.size}")


def code_pmf(src: Source, enc: DeterministicEncoder) -> np.ndarray:
    _check(src, enc)
    return np.bincount(enc.assignment, weights=src.pmf, minlength=enc.n)


def posterior_matrix(src: Source, enc: DeterministicEncoder) -> np.ndarray:
    """(n, m) matrix of p(y | z)."""
    h = code_pmf(src, enc)
    if np.any(h <= 0):
        raise EncoderError("every code needs positive mass")
    post = np.zeros((enc.n, src.size))
    post[enc.assignment, np.arange(src.size)] = src.pmf
    return post / h[:, None]


def encoder_rate_bits(src: Source, enc: DeterministicEncoder) -> float:
    """H(Z) / t in bits."""
    return entropy_of(code_pmf(src, enc)) / src.length


def conditional_mean_decoder(src: Source, enc: DeterministicEncoder) -> Decoder:
    post = posterior_matrix(src, enc)
    return Decoder("cond_mean", centroids=post @ src.symbols)


def posterior_sampling_decoder(src: Source, enc: DeterministicEncoder) -> Decoder:
    """Decoder whose row for code z is p(y | z): the reconstruction given z
    is an independent draw from the source posterior."""
    return Decoder("posterior", kernel=posterior_matrix(src, enc))


def stochastic_decoder(kernel) -> Decoder:
    K = np.asarray(kernel, dtype=float)
    ConditionalKernel(K, "decoder")
    return Decoder("stochastic", kernel=K)


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sum(diff * diff, axis=2)


def expected_mse(src: Source, enc: DeterministicEncoder, dec: Decoder) -> float:
    """Exact E||Y - Yhat||^2 / t.

    For stochastic decoders Y and Yhat are independent given Z, so the
    expectation is sum_z p(z) sum_y sum_yhat p(y|z) p(yhat|z) ||y - yhat||^2.
    """
    _check(src, enc)
    if dec.stochastic:
        K = dec.kernel
        if K.shape != (enc.n, src.size):
            raise EncoderError(f"decoder kernel shape {K.shape} != ({enc.n}, {src.size})")
        D = _sqdist(src.symbols, src.symbols)
        # per symbol y: expected cost of the decoder row for its code
        per_symbol = np.einsum("ik,ik->i", K[enc.assignment], D)
        total = 0.0
        for i in range(src.size):
            total += src.pmf[i] * per_symbol[i]
    else:
        C = dec.centroids
        if C.shape[0] != enc.n or C.shape[1] != src.dim:
            raise EncoderError("centroid array does not match encoder/source")
        diff = src.symbols - C[enc.assignment]
        err = np.sum(diff * diff, axis=1)
        total = 0.0
        for i in range(src.size):
            total += src.pmf[i] * err[i]
    return float(total) / src.length


def decoder_output_pmf(src: Source, enc: DeterministicEncoder, dec: Decoder) -> np.ndarray:
    """sum_z p(z) * row_z of a stochastic decoder."""
    if not dec.stochastic:
        raise EncoderError("output pmf needs a stochastic decoder")
    h = code_pmf(src, enc)
    out = np.zeros(dec.kernel.shape[1])
    for z in range(enc.n):
        out += h[z] * dec.kernel[z]
    return out


@dataclass(frozen=True)
class DoublingRecord:
    d_cond_mean: float
    d_posterior: float
    deviation: float
    passed: bool

    @property
    def ratio(self) -> float:
        return self.d_posterior / self.d_cond_mean if self.d_cond_mean > 0 else float("nan")


def verify_doubling(src: Source, enc: DeterministicEncoder, tol: float = 1e-12) -> DoublingRecord:
    d1 = expected_mse(src, enc, conditional_mean_decoder(src, enc))
    d2 = expected_mse(src, enc, posterior_sampling_decoder(src, enc))
    dev = abs(d2 - 2.0 * d1)
    return DoublingRecord(d1, d2, dev, dev <= tol)


def count_partitions(m: int, n: int) -> int:
    """Stirling number of the second kind S(m, n)."""
    S = [[0] * (n + 1) for _ in range(m + 1)]
    S[0][0] = 1
    for i in range(1, m + 1):
        for k in range(1, min(i, n) + 1):
            S[i][k] = k * S[i - 1][k] + S[i - 1][k - 1]
    return S[m][n]


def enumerate_encoders(m: int, n: int, cap: int = ENUM_CAP) -> Iterator[DeterministicEncoder]:
    """Every surjection {0..m-1} -> {0..n-1} up to code relabeling, as
    restricted growth strings in lexicographic order."""
    if n < 1 or n > m:
        raise EncoderError(f"need 1 <= n <= m, got n={n}, m={m}")
    if n ** m > cap:
        raise EncoderError(f"{n}^{m} raw assignments exceed cap {cap}")
    a = [0] * m

    def rec(i: int, used: int):
        if m - i < n - used:
            return
        if i == m:
            if used == n:
                yield DeterministicEncoder.from_assignment(a)
            return
        for c in range(min(used + 1, n)):
            a[i] = c
            yield from rec(i + 1, max(used, c + 1))

    a[0] = 0
    yield from rec(1, 1)


@dataclass(frozen=True)
class LloydConfig:
    restarts: int = 16
    max_iters: int = 1000
    seed: int = 0


def _cell_mse(src: Source, assignment: np.ndarray, n: int) -> tuple[float, np.ndarray]:
    mass = np.bincount(assignment, weights=src.pmf, minlength=n)
    sums = np.zeros((n, src.dim))
    np.add.at(sums, assignment, src.pmf[:, None] * src.symbols)
    cent = sums / np.where(mass > 0, mass, 1.0)[:, None]
    diff = src.symbols - cent[assignment]
    return float(src.pmf @ np.sum(diff * diff, axis=1)), cent


def lloyd_encoder(src: Source, n: int, cfg: LloydConfig = LloydConfig()) -> DeterministicEncoder:
    """Best of ``cfg.restarts`` seeded Lloyd runs with n cells.

    Empty cells are repaired by moving the worst-fitting symbol of the cell
    with the largest distortion into them.
    """
    m = src.size
    if not 1 <= n <= m:
        raise EncoderError(f"need 1 <= n <= m, got n={n}, m={m}")
    rng = np.random.default_rng(cfg.seed)
    best: Optional[tuple[float, np.ndarray]] = None
    for _ in range(max(cfg.restarts, 1)):
        init = rng.choice(m, size=n, replace=False)
        cent = src.symbols[np.sort(init)].copy()
        assignment = _repair(src, np.argmin(_sqdist(src.symbols, cent), axis=1), n)
        mse, cent = _cell_mse(src, assignment, n)
        for _ in range(cfg.max_iters):
            candidate = _repair(src, np.argmin(_sqdist(src.symbols, cent), axis=1), n)
            new_mse, new_cent = _cell_mse(src, candidate, n)
            if new_mse >= mse - 1e-15:
                break
            assignment, mse, cent = candidate, new_mse, new_cent
        mse, _ = _cell_mse(src, assignment, n)
        if best is None or mse < best[0] - 1e-15:
            best = (mse, assignment.copy())
    return DeterministicEncoder.from_assignment(best[1])


def _repair(src: Source, assignment: np.ndarray, n: int) -> np.ndarray:
    assignment = assignment.copy()
    while True:
        counts = np.bincount(assignment, minlength=n)
        empty = np.flatnonzero(counts == 0)
        if empty.size == 0:
            return assignment
        _, cent = _cell_mse(src, assignment, n)
        diff = src.symbols - cent[assignment]
        err = src.pmf * np.sum(diff * diff, axis=1)
        cell_err = np.bincount(assignment, weights=err, minlength=n)
        cell_err[counts < 2] = -1.0
        worst = int(np.argmax(cell_err))
        members = np.flatnonzero(assignment == worst)
        mover = members[np.argmax(err[members])]
        assignment[mover] = empty[0]


@dataclass
class FrontierPoint:
    encoder_id: int
    encoder: DeterministicEncoder
    rate_bits: float
    d_cond_mean: float
    d_posterior: float


@dataclass
class Frontier:
    unconstrained: Curve
    perception: Curve
    points: list[FrontierPoint]


def operational_frontier(src: Source, max_codewords: int, cap: int = ENUM_CAP,
                         lloyd_fallback: bool = False,
                         lloyd_cfg: LloydConfig = LloydConfig()) -> Frontier:
    """Evaluate every canonical encoder with up to ``max_codewords`` codes.

    Each encoder contributes (H(Z)/t, d1) to the unconstrained curve and
    (H(Z)/t, 2*d1) to the perfect-perception curve; the latter is attained
    by the posterior-sampling decoder. When enumeration exceeds ``cap`` and
    ``lloyd_fallback`` is set, one Lloyd encoder per code count is used.
    """
    m = src.size
    top = min(max_codewords, m)
    if top < 1:
        raise EncoderError("max_codewords must be >= 1")
    raw = sum(k ** m for k in range(1, top + 1))
    if raw > cap:
        if not lloyd_fallback:
            raise EncoderError(f"enumeration of {raw} raw assignments exceeds cap {cap}")
        encoders = (lloyd_encoder(src, k, lloyd_cfg) for k in range(1, top + 1))
    else:
        encoders = (e for k in range(1, top + 1) for e in enumerate_encoders(m, k, cap))

    points: list[FrontierPoint] = []
    for idx, enc in enumerate(encoders):
        rate = encoder_rate_bits(src, enc)
        rec = verify_doubling(src, enc)
        points.append(FrontierPoint(idx, enc, rate, rec.d_cond_mean, rec.d_posterior))

    unc = [RDPoint(fp.rate_bits, fp.d_cond_mean, None, float(fp.encoder_id))
           for fp in points]
    per = [RDPoint(fp.rate_bits, 2.0 * fp.d_cond_mean, 0.0, float(fp.encoder_id))
           for fp in points]
    return Frontier(lower_envelope(Curve(unc, "frontier cond_mean", src.fingerprint)),
                    lower_envelope(Curve(per, "frontier posterior", src.fingerprint)),
                    points)


def write_frontier_csv(curve: Curve, decoder: str, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FRONTIER_HEADER)
        for p in curve.points:
            w.writerow([int(p.multiplier), repr(float(p.rate_bits)),
                        repr(float(p.distortion)), decoder])


def coupling_payoff(L, Q, code_marginal, src: Source, tol: float = 1e-10) -> float:
    """sum_j h_j f_j(L) . f_j(Q), with f_j the mean of the symbol given code j.

    L and Q are (m, n) joint matrices p(y, z) and p(yhat, z), or
    :class:`ConditionalKernel` encoders p(z | y) that are weighted by the
    source pmf. Both must have symbol marginal ``src.pmf`` and code
    marginal ``code_marginal``.
    """
    h = np.asarray(code_marginal, dtype=float)
    mats = []
    for M in (L, Q):
        if isinstance(M, ConditionalKernel):
            M = src.pmf[:, None] * np.asarray(M.matrix, dtype=float)
        M = np.asarray(M, dtype=float)
        if M.shape != (src.size, h.size):
            raise EncoderError(f"joint matrix shape {M.shape} != ({src.size}, {h.size})")
        if (np.max(np.abs(M.sum(axis=0) - h)) > tol
                or np.max(np.abs(M.sum(axis=1) - src.pmf)) > tol):
            raise EncoderError("joint matrix marginals do not match")
        mats.append(M)
    live = h > 0
    fL = (mats[0][:, live].T @ src.symbols) / h[live][:, None]
    fQ = (mats[1][:, live].T @ src.symbols) / h[live][:, None]
    return float(np.sum(h[live] * np.sum(fL * fQ, axis=1)))


def sample_reconstruction(src: Source, enc: DeterministicEncoder, dec: Decoder,
                          seed: int, count: int) -> np.ndarray:
    """Draw ``count`` (Y, Yhat) pairs and return the Yhat vectors, shape (count, N)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    _check(src, enc)
    rng = np.random.default_rng(seed)
    ys = rng.choice(src.size, size=count, p=src.pmf)
    codes = enc.assignment[ys]
    if not dec.stochastic:
        return dec.centroids[codes]
    u = rng.random(count)
    cdf = np.cumsum(dec.kernel, axis=1)
    cdf[:, -1] = 1.0
    picks = np.sum(u[:, None] >= cdf[codes], axis=1)
    return src.symbols[np.minimum(picks, src.size - 1)]
