"""Decoder-side distortion-plus-divergence baseline at a fixed encoder.

For a deterministic encoder the decoder is a code -> source-symbol kernel
R. Its objective is E||Y - Yhat||^2 + lambda * d(p_Y, p_Yhat) where
p_Yhat = sum_z p(z) R[z]. The rate term is fixed by the encoder.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linprog, minimize
from scipy.sparse import coo_matrix, hstack, identity, vstack

from .source import Source
from .two_stage import (Decoder, DeterministicEncoder, _sqdist, code_pmf,
                        posterior_matrix)

log = logging.getLogger(__name__)

SLSQP_MAX_VARS = 4000
DAL_HEADER = ["lambda", "mse", "divergence", "objective", "iterations", "converged"]


@dataclass(frozen=True)
class DalConfig:
    lam: float = 1.0
    divergence: str = "tv"  # "tv" or "kl"
    epsilon: float = 1e-3  # KL smoothing
    method: str = "auto"  # "lp" (tv only), "slsqp" / "mirror" (kl only), or "auto"
    step_scale: float = 0.5
    max_iters: int = 20_000
    tolerance: float = 1e-9

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.divergence not in ("tv", "kl"):
            raise ValueError(f"unknown divergence {self.divergence!r}")
        if self.divergence == "kl" and not self.epsilon > 0:
            raise ValueError("KL smoothing epsilon must be positive")
        if self.method not in ("auto", "lp", "slsqp", "mirror"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.method == "lp" and self.divergence != "tv":
            raise ValueError("the LP route only handles total variation")
        if self.method in ("mirror", "slsqp") and self.divergence == "tv":
            # gradient steps stall on the kink of |p - q|
            raise ValueError(f"{self.method} needs the smooth (kl) divergence")

    def resolved_method(self, size: int = 0) -> str:
        if self.method == "auto":
            if self.divergence == "tv":
                return "lp"
            return "slsqp" if size <= SLSQP_MAX_VARS else "mirror"
        return self.method


@dataclass
class DalResult:
    decoder: Decoder
    lam: float
    mse: float
    divergence: float
    objective: float
    iterations: int
    converged: bool
    history: list[float] = field(default_factory=list)


def divergence(p, q, kind: str = "tv", epsilon: float = 1e-3) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if kind == "tv":
        return 0.5 * float(np.abs(p - q).sum())
    qe = (1.0 - epsilon) * q + epsilon / q.size
    pos = p > 0
    return max(float(np.sum(p[pos] * np.log(p[pos] / qe[pos]))), 0.0)


def _kl_grad(p, q, epsilon) -> np.ndarray:
    qe = (1.0 - epsilon) * q + epsilon / q.size
    return -(1.0 - epsilon) * p / qe


def _costs(src: Source, enc: DeterministicEncoder):
    h = code_pmf(src, enc)
    post = posterior_matrix(src, enc)
    return h, post @ _sqdist(src.symbols, src.symbols) / src.length


def _evaluate(R, h, C, p, cfg: DalConfig):
    mse = float(np.sum(h * np.sum(R * C, axis=1)))
    q = h @ R
    div = divergence(p, q, cfg.divergence, cfg.epsilon)
    return mse, div, mse + cfg.lam * div


def _solve_lp(h, C, p, cfg: DalConfig):
    n, m = C.shape
    # variables: R (n*m, row-major) then slack s (m)
    c = np.concatenate([(h[:, None] * C).ravel(), np.full(m, 0.5 * cfg.lam)])
    rows = np.repeat(np.arange(n), m)
    A_eq = hstack([coo_matrix((np.ones(n * m), (rows, np.arange(n * m))), shape=(n, n * m)),
                   coo_matrix((n, m))])
    # q - p <= s and p - q <= s, with q = H R where H[j, z*m + j] = h_z
    cols = np.arange(n * m)
    H = coo_matrix((np.repeat(h, m), (np.tile(np.arange(m), n), cols)), shape=(m, n * m))
    I = identity(m)
    A_ub = vstack([hstack([H, -I]), hstack([-H, -I])])
    b_ub = np.concatenate([p, -p])
    res = linprog(c, A_ub=A_ub.tocsr(), b_ub=b_ub, A_eq=A_eq.tocsr(), b_eq=np.ones(n),
                  bounds=(0, None), method="highs")
    if res.status != 0:
        log.warning("LP solve failed: %s", res.message)
        return np.full((n, m), 1.0 / m), 0, False
    R = np.maximum(res.x[: n * m].reshape(n, m), 0.0)
    R /= R.sum(axis=1, keepdims=True)
    return R, int(getattr(res, "nit", 0)), True


def _solve_slsqp(h, C, p, cfg: DalConfig, init=None):
    """Sequential quadratic programming on the flattened decoder rows."""
    n, m = C.shape
    x0 = (np.full((n, m), 1.0 / m) if init is None else np.asarray(init, dtype=float)).ravel()

    def fun(x):
        R = x.reshape(n, m)
        _, _, obj = _evaluate(R, h, C, p, cfg)
        grad = h[:, None] * (C + cfg.lam * _kl_grad(p, h @ R, cfg.epsilon)[None, :])
        return obj, grad.ravel()

    A = np.kron(np.eye(n), np.ones(m))
    res = minimize(fun, x0, jac=True, method="SLSQP", bounds=[(0.0, 1.0)] * (n * m),
                   constraints=[{"type": "eq", "fun": lambda x: A @ x - 1.0, "jac": lambda x: A}],
                   options={"ftol": 1e-14, "maxiter": cfg.max_iters})
    R = np.maximum(res.x.reshape(n, m), 0.0)
    R /= R.sum(axis=1, keepdims=True)
    return R, int(res.nit), bool(res.success)


def _solve_mirror(h, C, p, cfg: DalConfig, init=None):
    """Entropic mirror descent over the decoder rows with step halving.

    Each row is updated with its own gradient divided by p(z), so rows of
    rare codes move as fast as rows of common ones.
    """
    n, m = C.shape
    R = np.full((n, m), 1.0 / m) if init is None else np.array(init, dtype=float)
    cost_scale = max(float(np.ptp(C)), 1e-12)
    step0 = cfg.step_scale / max(cfg.lam / cfg.epsilon, cost_scale)
    step = step0
    _, _, obj = _evaluate(R, h, C, p, cfg)
    history = [obj]
    converged = False
    it = 0
    stall = 0
    for it in range(1, cfg.max_iters + 1):
        q = h @ R
        G = C + cfg.lam * _kl_grad(p, q, cfg.epsilon)[None, :]
        while True:
            logits = np.log(np.maximum(R, 1e-300)) - step * G
            logits -= logits.max(axis=1, keepdims=True)
            cand = np.exp(logits)
            cand /= cand.sum(axis=1, keepdims=True)
            _, _, cobj = _evaluate(cand, h, C, p, cfg)
            if cobj <= obj:
                break
            step *= 0.5
            if step < step0 * 1e-12:
                break
        if cobj > obj:
            converged = True
            break
        gain = obj - cobj
        R, obj = cand, cobj
        history.append(obj)
        step = min(step * 1.5, step0 * 1e6)
        stall = stall + 1 if gain <= cfg.tolerance * max(1.0, abs(obj)) else 0
        if stall >= 50:
            converged = True
            break
    return R, it, converged, history


def dal_optimize_decoder(src: Source, enc: DeterministicEncoder,
                         cfg: DalConfig = DalConfig(), init=None) -> DalResult:
    """Optimize a stochastic decoder for distortion + lambda * divergence."""
    h, C = _costs(src, enc)
    p = np.asarray(src.pmf)
    history: list[float] = []
    method = cfg.resolved_method(C.size)
    if method == "lp":
        R, iters, converged = _solve_lp(h, C, p, cfg)
    elif method == "slsqp":
        if init is None:
            # the posterior decoder is feasible and close to optimal for large lambda
            init = posterior_matrix(src, enc)
        R, iters, converged = _solve_slsqp(h, C, p, cfg, init)
    else:
        R, iters, converged, history = _solve_mirror(h, C, p, cfg, init)
    mse, div, obj = _evaluate(R, h, C, p, cfg)
    if not converged:
        log.warning("DAL decoder did not converge at lambda=%g", cfg.lam)
    return DalResult(Decoder("stochastic", kernel=R), cfg.lam, mse, div, obj,
                     iters, converged, history)


def dal_sweep(src: Source, enc: DeterministicEncoder, lambdas,
              cfg: DalConfig = DalConfig()) -> list[DalResult]:
    lams = [float(x) for x in lambdas]
    if any(x < 0 for x in lams) or any(b < a for a, b in zip(lams, lams[1:])):
        raise ValueError("lambdas must be non-negative and increasing")
    out = []
    for lam in lams:
        out.append(dal_optimize_decoder(src, enc, replace(cfg, lam=lam)))
    return out


def write_dal_csv(results: list[DalResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DAL_HEADER)
        for r in results:
            w.writerow([repr(r.lam), repr(r.mse), repr(r.divergence), repr(r.objective),
                        r.iterations, "true" if r.converged else "false"])
