"""Rate-distortion under a perfect-perception constraint.

With the reconstruction law pinned to the source law, the minimizer of
I(X; Xhat) + lambda * <W, B> over joint matrices B with both marginals
equal to p has the Gibbs form b_ij = u_i exp(-lambda w_ij) v_j. The
scaling vectors are found in the log domain.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .curve import Curve, RDPoint, lower_envelope
from .source import DistortionMatrix, Source, SourceError, entropy_of, xlogx

log = logging.getLogger(__name__)

LN2 = np.log(2.0)
DEFAULT_LAMBDAS = tuple([0.0] + list(np.logspace(-3, 3, 60)))


class CouplingError(ValueError):
    pass


@dataclass(frozen=True)
class EntropicConfig:
    marginal_tol: float = 1e-10
    max_iters: int = 200_000
    scheme: str = "symmetric"  # or "alternating"


@dataclass(frozen=True, eq=False)
class Coupling:
    """Joint probability matrix of (X, Xhat) with solver metadata."""

    matrix: np.ndarray
    multiplier: float = float("nan")
    iterations: int = 0
    converged: bool = True
    residual: float = 0.0

    @property
    def rows(self) -> np.ndarray:
        return self.matrix.sum(axis=1)

    @property
    def cols(self) -> np.ndarray:
        return self.matrix.sum(axis=0)


def _marginal_error(B: np.ndarray, pmf: np.ndarray) -> float:
    return max(float(np.abs(B.sum(axis=1) - pmf).sum()),
               float(np.abs(B.sum(axis=0) - pmf).sum()))


def entropic_coupling(W: DistortionMatrix, pmf, lam: float,
                      cfg: EntropicConfig = EntropicConfig()) -> Coupling:
    """Gibbs coupling exp(f_i - lam*w_ij + g_j) with both marginals equal to pmf.

    The "symmetric" scheme keeps f = g and iterates the damped fixed point
    f <- (f + log p - lse_j(f_j - lam*w_ij)) / 2; "alternating" is plain
    two-sided Sinkhorn in the log domain and is kept as a cross-check.
    """
    w = np.asarray(W.values, dtype=float)
    p = np.asarray(pmf, dtype=float)
    if w.shape[0] != w.shape[1] or not W.symmetric:
        raise CouplingError("perfect-perception coupling needs a square symmetric distortion")
    if w.shape[0] != p.size:
        raise CouplingError(f"distortion is {w.shape} but pmf has {p.size} entries")
    if np.any(p <= 0):
        raise CouplingError("pmf must be strictly positive")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if cfg.scheme not in ("symmetric", "alternating"):
        raise ValueError(f"unknown scheme {cfg.scheme!r}")

    log_p = np.log(p)
    logK = -lam * w
    f = 0.5 * log_p
    g = f.copy()
    err = np.inf
    it = 0
    for it in range(1, cfg.max_iters + 1):
        if cfg.scheme == "symmetric":
            f = 0.5 * (f + log_p - logsumexp(logK + f[None, :], axis=1))
            g = f
        else:
            f = log_p - logsumexp(logK + g[None, :], axis=1)
            g = log_p - logsumexp(logK.T + f[None, :], axis=1)
        if it % 10 == 0 or it == 1:
            B = np.exp(f[:, None] + logK + g[None, :])
            err = _marginal_error(B, p)
            if err <= cfg.marginal_tol:
                break
    B = np.exp(f[:, None] + logK + g[None, :])
    err = _marginal_error(B, p)
    converged = err <= cfg.marginal_tol
    if not converged:
        log.warning("scaling did not converge at lambda=%g (L1 error %.3g)", lam, err)
    return Coupling(B, float(lam), it, converged, err)


def mutual_information_bits(B) -> float:
    """I(X; Xhat) in bits from a joint matrix, 0 log 0 = 0."""
    M = B.matrix if isinstance(B, Coupling) else np.asarray(B, dtype=float)
    r, c = M.sum(axis=1), M.sum(axis=0)
    outer = r[:, None] * c[None, :]
    pos = M > 0
    return float(np.sum(M[pos] * np.log(M[pos] / outer[pos]))) / LN2


def perfect_perception_objective(B, pmf) -> float:
    """2 H(X) + sum b log b, in bits: equal to I(X; Xhat) when both
    marginals of B are pmf."""
    M = B.matrix if isinstance(B, Coupling) else np.asarray(B, dtype=float)
    return 2.0 * entropy_of(pmf) + float(xlogx(M).sum()) / LN2


def rdp_point(B, pmf, W: DistortionMatrix, tol: float = 1e-8) -> RDPoint:
    """Rate/distortion of a perfect-perception coupling (a :class:`Coupling`
    or a plain joint matrix)."""
    p = np.asarray(pmf, dtype=float)
    if not isinstance(B, Coupling):
        B = Coupling(np.asarray(B, dtype=float))
    M = B.matrix
    err = _marginal_error(M, p)
    if err > tol:
        raise CouplingError(f"coupling marginals differ from pmf by {err:.3g}")
    rate = max(perfect_perception_objective(M, p), 0.0)
    return RDPoint(rate, float(np.sum(M * W.values)), 0.0, B.multiplier,
                   B.iterations, B.converged, B.residual)


def perfect_perception_sweep(src: Source, W: DistortionMatrix, lambda_schedule,
                             cfg: EntropicConfig = EntropicConfig()) -> list[tuple[Coupling, RDPoint]]:
    """Raw (coupling, point) pairs in schedule order, no envelope cleanup."""
    lams = np.asarray(list(lambda_schedule), dtype=float)
    if lams.size == 0:
        raise ValueError("empty lambda schedule")
    if np.any(lams < 0) or np.any(np.diff(lams) < 0):
        raise ValueError("lambda schedule must be non-negative and increasing")
    out = []
    for lam in lams:
        B = entropic_coupling(W, src.pmf, float(lam), cfg)
        tol = max(1e-8, B.residual * 10)
        out.append((B, rdp_point(B, src.pmf, W, tol=tol)))
    return out


def rdp_curve_perfect_perception(src: Source, W: DistortionMatrix,
                                 lambda_schedule=DEFAULT_LAMBDAS,
                                 cfg: EntropicConfig = EntropicConfig(),
                                 label: str = "R(D,0) perfect perception") -> Curve:
    if W.src_dim != src.size:
        raise SourceError("distortion matrix does not match the source")
    if src.size == 1:
        lam0 = float(next(iter(lambda_schedule)))
        return Curve([RDPoint(0.0, 0.0, 0.0, lam0, 0, True)], label, src.fingerprint)
    pts = [pt for _, pt in perfect_perception_sweep(src, W, lambda_schedule, cfg)]
    return lower_envelope(Curve(pts, label, src.fingerprint))


@dataclass(frozen=True)
class SymmetryCheck:
    max_asymmetry: float
    tol: float
    passed: bool
    objective: float
    symmetrized_objective: float

    @property
    def symmetrization_gain(self) -> float:
        """objective(B) - objective((B + B^T)/2); never negative up to rounding."""
        return self.objective - self.symmetrized_objective


def check_symmetry(B, tol: float = 1e-8, pmf=None) -> SymmetryCheck:
    """Compare B against its transpose and evaluate the perfect-perception
    objective for B and for (B + B^T)/2.

    ``pmf`` defaults to the row marginal of B.
    """
    M = B.matrix if isinstance(B, Coupling) else np.asarray(B, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise CouplingError("symmetry check needs a square coupling")
    p = M.sum(axis=1) if pmf is None else np.asarray(pmf, dtype=float)
    asym = float(np.max(np.abs(M - M.T))) if M.size else 0.0
    sym = 0.5 * (M + M.T)
    return SymmetryCheck(asym, tol, asym <= tol,
                         perfect_perception_objective(M, p),
                         perfect_perception_objective(sym, p))


def write_coupling_csv(B, path) -> None:
    """Dense matrix dump under a ``# coupling m=<m>`` header line."""
    M = B.matrix if isinstance(B, Coupling) else np.asarray(B, dtype=float)
    with open(path, "w") as fh:
        fh.write(f"# coupling m={M.shape[0]}\n")
        for row in M:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_coupling_csv(path) -> np.ndarray:
    with open(path) as fh:
        head = fh.readline().strip()
        if not head.startswith("# coupling m="):
            raise CouplingError(f"bad coupling header {head!r}")
        m = int(head.split("=", 1)[1])
        rows = [[float(v) for v in line.split(",")] for line in fh if line.strip()]
    M = np.array(rows, dtype=float)
    if M.shape != (m, m):
        raise CouplingError(f"coupling has shape {M.shape}, header says m={m}")
    return M
