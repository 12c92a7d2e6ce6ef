"""Blahut-Arimoto computation of the rate-distortion function with no
perception constraint, over a fixed (optionally refined) reconstruction
alphabet."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .curve import Curve, RDPoint, lower_envelope
from .source import DistortionMatrix, Source, SourceError, _as_vectors

log = logging.getLogger(__name__)

LN2 = np.log(2.0)


@dataclass(frozen=True)
class BAConfig:
    tol: float = 1e-10
    max_iters: int = 100_000


@dataclass
class BAResult:
    point: RDPoint
    kernel: np.ndarray  # (m, m') rows p(xhat | x)
    marginal: np.ndarray  # (m',) reconstruction marginal
    objective_trace: list[float]


def _kernel_state(pmf, shifted, q):
    """Row normalizers and kernel for the current marginal, log domain."""
    with np.errstate(divide="ignore"):
        log_q = np.log(q)
    log_z = logsumexp(-shifted + log_q[None, :], axis=1)
    log_k = -shifted + log_q[None, :] - log_z[:, None]
    return log_z, log_k


def _finish(pmf, w, wmin, beta, q, K):
    """Rate (bits), distortion and kernel for marginal q."""
    shifted = beta * (w - wmin[:, None])
    z = K @ q
    if np.all(z > 1e-250):
        log_z = np.log(z)
        kernel = K * q[None, :] / z[:, None]
    else:
        log_z, log_k = _kernel_state(pmf, shifted, q)
        kernel = np.exp(log_k)
    joint = pmf[:, None] * kernel
    # log k_ij - log q_j = -shifted_ij - log z_i wherever k_ij > 0
    rate = float(np.sum(joint * (-shifted - log_z[:, None]))) / LN2
    marginal = pmf @ kernel
    return max(rate, 0.0), float(np.sum(joint * w)), kernel, marginal


def ba_solve(src: Source, rec_alphabet, W: DistortionMatrix, beta: float,
             cfg: BAConfig = BAConfig(), init_marginal=None,
             trace: bool = False) -> BAResult:
    """One Blahut-Arimoto fixed point at slope ``beta`` (nats per unit distortion).

    The updates alternate k_i(xhat) ~ q(xhat) exp(-beta w_i(xhat)) and
    q(xhat) = sum_i p_i k_i(xhat). Stops once the max-norm change of q is
    at most ``cfg.tol``; otherwise ``converged`` is False.

    With ``trace`` the variational objective
    min_k sum_i p_i KL(k_i || q) + beta * E[w] (nats) is recorded per
    iteration; it is non-increasing.
    """
    rec = _as_vectors(rec_alphabet)
    w = np.asarray(W.values, dtype=float)
    if w.shape != (src.size, rec.shape[0]):
        raise SourceError(f"distortion matrix shape {w.shape} does not match "
                          f"({src.size}, {rec.shape[0]})")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    pmf = np.asarray(src.pmf)

    if beta == 0:
        # Rate-zero endpoint: every symbol maps to the single best reconstruction.
        j = int(np.argmin(pmf @ w))
        kernel = np.zeros_like(w)
        kernel[:, j] = 1.0
        q = np.zeros(w.shape[1])
        q[j] = 1.0
        pt = RDPoint(0.0, float(pmf @ w[:, j]), None, 0.0, 0, True, 0.0)
        return BAResult(pt, kernel, q, [])

    if init_marginal is None:
        q = np.full(w.shape[1], 1.0 / w.shape[1])
    else:
        q = np.asarray(init_marginal, dtype=float)
        q = q / q.sum()
    wmin = w.min(axis=1)
    shifted = beta * (w - wmin[:, None])
    K = np.exp(-shifted)
    offset = beta * float(pmf @ wmin)
    objective_trace: list[float] = []
    residual = np.inf
    log_domain = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        if not log_domain:
            z = K @ q
            if np.all(z > 1e-250):
                q_new = q * ((pmf / z) @ K)
                if trace:
                    objective_trace.append(offset - float(pmf @ np.log(z)))
            else:
                log_domain = True
        if log_domain:
            log_z, log_k = _kernel_state(pmf, shifted, q)
            q_new = np.exp(logsumexp(np.log(pmf)[:, None] + log_k, axis=0))
            if trace:
                objective_trace.append(offset - float(pmf @ log_z))
        q_new /= q_new.sum()
        residual = float(np.max(np.abs(q_new - q)))
        q = q_new
        if residual <= cfg.tol:
            break
    rate, dist, kernel, marginal = _finish(pmf, w, wmin, beta, q, K)
    converged = residual <= cfg.tol
    if not converged:
        log.warning("BA did not converge at beta=%g (residual %.3g)", beta, residual)
    pt = RDPoint(rate, dist, None, float(beta), it, converged, residual)
    return BAResult(pt, kernel, marginal, objective_trace)


def centroid_refine(src: Source, encoder_kernel) -> np.ndarray:
    """Conditional-mean reconstruction for every code with positive mass.

    ``encoder_kernel`` is (m, n) with rows p(code | symbol); returns an
    array of shape (n', N) with zero-mass codes dropped.
    """
    k = np.asarray(encoder_kernel, dtype=float)
    joint = src.pmf[:, None] * k
    mass = joint.sum(axis=0)
    live = mass > 0
    return (joint[:, live].T @ src.symbols) / mass[live][:, None]


def uniform_grid(src: Source, points: int, pad: float = 0.0) -> np.ndarray:
    """Uniform scalar reconstruction grid spanning the source range."""
    if src.dim != 1:
        raise SourceError("uniform reconstruction grid needs scalar symbols")
    lo, hi = float(src.symbols.min()), float(src.symbols.max())
    span = hi - lo
    return np.linspace(lo - pad * span, hi + pad * span, max(points, 1))[:, None]


def ba_solve_refined(src: Source, rec_alphabet, beta: float, rounds: int,
                     cfg: BAConfig = BAConfig(), distortion=None) -> tuple[BAResult, list[float]]:
    """Alternate BA fixed points with conditional-mean replacement of the
    reconstruction alphabet (squared error only).

    Returns the final result and the Lagrangian value R + beta*D after each
    round (nats), which is non-increasing.
    """
    from .source import squared_error_matrix

    rec = _as_vectors(rec_alphabet)
    W = distortion if distortion is not None else squared_error_matrix(src.symbols, rec)
    res = ba_solve(src, rec, W, beta, cfg)
    history = [res.point.rate_bits * LN2 + beta * res.point.distortion]
    for _ in range(rounds):
        live = res.marginal > 0
        rec = centroid_refine(src, res.kernel)
        W = squared_error_matrix(src.symbols, rec)
        res = ba_solve(src, rec, W, beta, cfg, init_marginal=res.marginal[live])
        history.append(res.point.rate_bits * LN2 + beta * res.point.distortion)
    return res, history


def rd_curve_unconstrained(src: Source, rec_alphabet, W: DistortionMatrix, beta_schedule,
                           cfg: BAConfig = BAConfig(), refine_rounds: int = 0,
                           label: str = "R(D) unconstrained") -> Curve:
    """Sweep beta and return the envelope-cleaned curve.

    With ``refine_rounds`` > 0 the reconstruction alphabet is re-centred on
    conditional means at each beta (squared error only).
    """
    betas = np.asarray(list(beta_schedule), dtype=float)
    if betas.size == 0:
        raise ValueError("empty beta schedule")
    if np.any(betas < 0) or np.any(np.diff(betas) <= 0):
        raise ValueError("beta schedule must be non-negative and strictly increasing")
    if src.size == 1:
        return Curve([RDPoint(0.0, 0.0, None, float(betas[0]), 0, True)], label, src.fingerprint)
    points = []
    warm = None
    for beta in betas:
        if refine_rounds > 0:
            res, _ = ba_solve_refined(src, rec_alphabet, float(beta), refine_rounds, cfg,
                                      distortion=W)
        else:
            res = ba_solve(src, rec_alphabet, W, float(beta), cfg, init_marginal=warm)
            warm = res.marginal if beta > 0 else None
        points.append(res.point)
    return lower_envelope(Curve(points, label, src.fingerprint))
