"""Curve runs, curve comparison, the verification battery and plot data."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .blahut import BAConfig, rd_curve_unconstrained, uniform_grid
from .config import RunConfig
from .curve import Curve, check_shape, lower_envelope, interpolate_rate, write_curve_csv
from .dal import DalConfig, DalResult, dal_sweep, write_dal_csv
from .entropic import (EntropicConfig, check_symmetry, perfect_perception_sweep,
                       rdp_curve_perfect_perception)
from .source import (Source, distortion_matrix, make_source)
from .two_stage import (DeterministicEncoder, Frontier, LloydConfig, coupling_payoff,
                        decoder_output_pmf, lloyd_encoder, operational_frontier,
                        posterior_sampling_decoder, verify_doubling, write_frontier_csv)

log = logging.getLogger(__name__)

PLOT_HEADER = ["series", "multiplier", "rate_bits", "distortion"]

SYMMETRY_TOL = 1e-8
SYMMETRIZATION_SLACK = 1e-12
DOUBLING_TOL = 1e-12
PAYOFF_SLACK = 1e-12
PERCEPTION_TOL = 1e-15
SHAPE_TOL = 1e-9


class GapError(ValueError):
    pass


@dataclass(frozen=True)
class GapStats:
    """Rate difference R_perception(D) - R_unconstrained(D/2) over the
    distortions where both are defined."""

    max_gap_bits: float
    mean_gap_bits: float
    max_signed_gap_bits: float
    min_signed_gap_bits: float
    overlap: tuple[float, float]
    n_points: int


def compare_halved(curve_unconstrained: Curve, curve_perception: Curve) -> GapStats:
    """Compare R(D, 0) with R(D/2, inf).

    The unconstrained curve evaluated at D/2 is the same curve with its
    distortion axis doubled; both curves are interpolated piecewise
    linearly at the union of their breakpoints inside the overlap.
    """
    if len(curve_unconstrained) == 0 or len(curve_perception) == 0:
        raise GapError("both curves need at least one point")
    shifted = curve_unconstrained.scaled(2.0)
    d_a, d_b = shifted.distortions, curve_perception.distortions
    lo = max(d_a.min(), d_b.min())
    hi = min(d_a.max(), d_b.max())
    if lo > hi:
        raise GapError(f"curves do not overlap (lo={lo}, hi={hi})")
    grid = np.union1d(d_a, d_b)
    grid = grid[(grid >= lo) & (grid <= hi)]
    if grid.size == 0:
        grid = np.array([lo])
    gap = interpolate_rate(curve_perception, grid) - interpolate_rate(shifted, grid)
    mag = np.abs(gap)
    return GapStats(float(mag.max()), float(mag.mean()), float(gap.max()), float(gap.min()),
                    (float(lo), float(hi)), int(grid.size))


# ---------------------------------------------------------------------------
# curve runs


@dataclass
class CurveSet:
    unconstrained: Optional[Curve] = None
    perception: Optional[Curve] = None
    frontier: Optional[Frontier] = None
    dal: Optional[list[DalResult]] = None
    dal_encoder: Optional[DeterministicEncoder] = None
    files: list[str] = field(default_factory=list)

    def nonconverged(self) -> int:
        n = 0
        for c in (self.unconstrained, self.perception):
            if c is not None:
                n += sum(not p.converged for p in c.points)
        if self.dal:
            n += sum(not r.converged for r in self.dal)
        return n


def reconstruction_alphabet(src: Source, cfg: RunConfig) -> np.ndarray:
    if cfg.ba.reconstruction == "grid":
        return uniform_grid(src, cfg.ba.grid_points)
    return src.symbols


def unconstrained_curve(src: Source, cfg: RunConfig) -> Curve:
    rec = reconstruction_alphabet(src, cfg)
    W = distortion_matrix(cfg.distortion, src.symbols, rec)
    refine = cfg.ba.refine_rounds if cfg.distortion == "squared_error" else 0
    if cfg.ba.reconstruction == "grid":
        label = f"R(D) unconstrained, {cfg.ba.grid_points}-point grid"
    else:
        label = "R(D) unconstrained, source alphabet"
    if refine:
        label += f", {refine} centroid round(s)"
    return rd_curve_unconstrained(src, rec, W, cfg.ba.schedule.resolve(),
                                  BAConfig(cfg.ba.tol, cfg.ba.max_iters), refine, label)


def perception_curve(src: Source, cfg: RunConfig) -> Curve:
    W = distortion_matrix(cfg.distortion, src.symbols, src.symbols)
    return rdp_curve_perfect_perception(
        src, W, cfg.entropic.schedule.resolve(),
        EntropicConfig(cfg.entropic.marginal_tol, cfg.entropic.max_iters))


def frontier(src: Source, cfg: RunConfig) -> Frontier:
    ts = cfg.two_stage
    return operational_frontier(src, ts.max_codewords, ts.cap, ts.lloyd_fallback,
                                LloydConfig(restarts=ts.lloyd_restarts, seed=cfg.seed))


def dal_run(src: Source, cfg: RunConfig) -> tuple[DeterministicEncoder, list[DalResult]]:
    d = cfg.dal
    enc = lloyd_encoder(src, min(d.codewords, src.size),
                        LloydConfig(restarts=cfg.two_stage.lloyd_restarts, seed=cfg.seed))
    return enc, dal_sweep(src, enc, sorted(d.lambdas),
                          DalConfig(divergence=d.divergence, epsilon=d.epsilon, method=d.method))


def run_curves(src: Source, cfg: RunConfig, out_dir, which=("rd", "rdp", "two_stage")) -> CurveSet:
    """Compute the requested curves and write their CSV files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cs = CurveSet()
    if "rd" in which:
        cs.unconstrained = unconstrained_curve(src, cfg)
        write_curve_csv(cs.unconstrained, out / "rd_unconstrained.csv")
        cs.files.append("rd_unconstrained.csv")
    if "rdp" in which:
        cs.perception = perception_curve(src, cfg)
        write_curve_csv(cs.perception, out / "rdp_perfect.csv")
        cs.files.append("rdp_perfect.csv")
    if "two_stage" in which and cfg.two_stage.enabled:
        if cfg.distortion != "squared_error":
            log.warning("two-stage frontiers assume squared error; skipping")
        else:
            cs.frontier = frontier(src, cfg)
            write_frontier_csv(cs.frontier.unconstrained, "cond_mean", out / "frontier_cond_mean.csv")
            write_frontier_csv(cs.frontier.perception, "posterior", out / "frontier_posterior.csv")
            cs.files += ["frontier_cond_mean.csv", "frontier_posterior.csv"]
    if "dal" in which and cfg.dal.enabled:
        cs.dal_encoder, cs.dal = dal_run(src, cfg)
        write_dal_csv(cs.dal, out / "dal_sweep.csv")
        cs.files.append("dal_sweep.csv")
    return cs


# ---------------------------------------------------------------------------
# plot data


def emit_plot_data(unconstrained: Curve, perception: Optional[Curve], path) -> list[str]:
    """Write one CSV with a ``series`` column; returns warnings.

    Series: ``unconstrained``, ``perception`` and ``unconstrained_halved``
    (the unconstrained curve read at half the distortion, i.e. plotted with
    doubled distortion coordinates).
    """
    warnings = []
    series = [("unconstrained", unconstrained)]
    if perception is None or len(perception) == 0:
        warnings.append("perception curve is empty; emitted two series")
    else:
        series.append(("perception", perception))
    series.append(("unconstrained_halved", unconstrained.scaled(2.0)))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_HEADER)
        for name, curve in series:
            for p in curve.points:
                w.writerow([name, repr(float(p.multiplier)), repr(float(p.rate_bits)),
                            repr(float(p.distortion))])
    return warnings


def read_plot_data(path) -> dict[str, list[tuple[float, float, float]]]:
    out: dict[str, list[tuple[float, float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out.setdefault(row["series"], []).append(
                (float(row["multiplier"]), float(row["rate_bits"]), float(row["distortion"])))
    return out


# ---------------------------------------------------------------------------
# verification battery


@dataclass
class Check:
    name: str
    passed: bool
    measured: float
    threshold: float
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "status": "pass" if self.passed else "fail",
                "measured": _clean(self.measured), "threshold": _clean(self.threshold),
                "details": {k: _clean(v) for k, v in self.details.items()}}


def _clean(x):
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if np.isfinite(x) else repr(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


@dataclass
class VerificationReport:
    checks: list[Check]
    warnings: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> Check:
        return next(c for c in self.checks if c.name == name)

    def to_dict(self) -> dict:
        return {"overall": "pass" if self.passed else "fail",
                "checks": [c.to_dict() for c in self.checks],
                "warnings": list(self.warnings)}

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def battery_sources(seed: int) -> list[tuple[str, Source]]:
    """Fixed internal battery plus seeded random 8-symbol sources."""
    rng = np.random.default_rng(seed)
    out = [("binary_uniform", make_source([0, 1], [0.5, 0.5])),
           ("binary_skewed", make_source([0, 1], [0.3, 0.7])),
           ("uniform_4", make_source([0, 1, 2, 3], [0.25] * 4))]
    for k in range(3):
        out.append((f"random_8_{k}", make_source(rng.normal(size=8), rng.dirichlet(np.ones(8)))))
    return out


def random_encoders(src: Source, rng: np.random.Generator, count: int) -> list[DeterministicEncoder]:
    encs = []
    for _ in range(count):
        n = int(rng.integers(1, src.size + 1))
        encs.append(DeterministicEncoder.from_assignment(rng.integers(0, n, size=src.size)))
    return encs


def random_joint(rng: np.random.Generator, p: np.ndarray, h: np.ndarray,
                 iters: int = 5000, tol: float = 1e-14) -> np.ndarray:
    """Random positive matrix Sinkhorn-scaled to row sums p and column sums h."""
    M = rng.random((p.size, h.size)) + 1e-3
    for _ in range(iters):
        M *= (p / M.sum(axis=1))[:, None]
        M *= (h / M.sum(axis=0))[None, :]
        if np.max(np.abs(M.sum(axis=1) - p)) < tol:
            break
    return M


def random_feasible_pair(src: Source, n: int, rng: np.random.Generator):
    """Two joint (symbol, code) matrices sharing both marginals."""
    L = src.pmf[:, None] * rng.dirichlet(np.ones(n), size=src.size)
    h = L.sum(axis=0)
    Q = random_joint(rng, src.pmf, h)
    # make Q's column sums exact to rounding by final column rescale
    Q *= (h / Q.sum(axis=0))[None, :]
    return L, Q, h


def random_asymmetric_coupling(src_pmf: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Feasible coupling (both marginals = pmf) that is generally asymmetric."""
    p = np.asarray(src_pmf)
    return random_joint(rng, p, p)


def _guard(name: str, threshold: float, fn: Callable[[], Check]) -> Check:
    try:
        return fn()
    except Exception as exc:  # a failing solver marks the check, never aborts
        log.warning("check %s errored: %s", name, exc)
        return Check(name, False, float("nan"), threshold, {"error": f"{type(exc).__name__}: {exc}"})


def run_verify(src: Source, cfg: RunConfig, corrupt_coupling: bool = False) -> VerificationReport:
    """Run every check on the configured source plus the internal battery.

    ``corrupt_coupling`` perturbs one coupling before the symmetry check
    (negative control).
    """
    rng = np.random.default_rng(cfg.seed)
    sources = [("configured", src)] + battery_sources(cfg.seed)
    sq_sources = sources if cfg.distortion == "squared_error" else sources[1:]
    warnings: list[str] = []
    curves: list[tuple[str, Curve]] = []
    ecfg = EntropicConfig(cfg.entropic.marginal_tol, cfg.entropic.max_iters)
    lambdas = cfg.entropic.schedule.resolve()

    def symmetry() -> Check:
        worst_asym, worst_gain, n_couplings = 0.0, np.inf, 0
        for name, s in sources:
            kind = cfg.distortion if name == "configured" else "squared_error"
            W = distortion_matrix(kind, s.symbols, s.symbols)
            sweep = perfect_perception_sweep(s, W, lambdas, ecfg)
            curves.append((f"{name} perception", lower_envelope(
                Curve([pt for _, pt in sweep], f"{name} perception", s.fingerprint))))
            for k, (B, _) in enumerate(sweep):
                M = B.matrix
                if corrupt_coupling and name == "configured" and k == len(sweep) // 2:
                    M = M.copy()
                    if M.shape[0] >= 2:
                        M[0, 1] += 1e-3
                        M[1, 0] -= min(1e-3, M[1, 0])
                    else:
                        M = np.array([[1.0, 1e-3], [0.0, 0.0]])
                worst_asym = max(worst_asym, check_symmetry(M, SYMMETRY_TOL).max_asymmetry)
                n_couplings += 1
            for _ in range(20):
                if s.size < 2:
                    break
                rec = check_symmetry(random_asymmetric_coupling(s.pmf, rng), SYMMETRY_TOL, s.pmf)
                worst_gain = min(worst_gain, rec.symmetrization_gain)
        worst_gain = 0.0 if not np.isfinite(worst_gain) else worst_gain
        ok = worst_asym <= SYMMETRY_TOL and worst_gain >= -SYMMETRIZATION_SLACK
        return Check("coupling_symmetry", ok, worst_asym, SYMMETRY_TOL,
                     {"couplings": n_couplings, "min_symmetrization_gain_bits": worst_gain})

    pairs: list[tuple[Source, DeterministicEncoder]] = []
    for _, s in sq_sources:
        encs = random_encoders(s, rng, 20)
        if s.size <= 64:
            encs += [lloyd_encoder(s, n, LloydConfig(restarts=4, seed=cfg.seed))
                     for n in range(1, min(s.size, 4) + 1)]
        pairs += [(s, e) for e in encs]

    def doubling() -> Check:
        recs = [verify_doubling(s, e, DOUBLING_TOL) for s, e in pairs]
        dev = max(r.deviation for r in recs)
        ratios = [r.ratio for r in recs if r.d_cond_mean > 1e-9]
        return Check("mse_doubling", dev <= DOUBLING_TOL, dev, DOUBLING_TOL,
                     {"pairs": len(recs),
                      "min_ratio": min(ratios) if ratios else 2.0,
                      "max_ratio": max(ratios) if ratios else 2.0})

    def perception() -> Check:
        worst = 0.0
        for s, e in pairs:
            out = decoder_output_pmf(s, e, posterior_sampling_decoder(s, e))
            worst = max(worst, float(np.max(np.abs(out - s.pmf))))
        return Check("perception_exactness", worst <= PERCEPTION_TOL, worst, PERCEPTION_TOL,
                     {"pairs": len(pairs)})

    def payoff() -> Check:
        worst, trials = np.inf, 0
        for _, s in sq_sources:
            if s.size > 16:
                continue
            for _ in range(50):
                n = int(rng.integers(1, 5))
                L, Q, h = random_feasible_pair(s, n, rng)
                margin = (coupling_payoff(L, L, h, s) + coupling_payoff(Q, Q, h, s)
                          - 2.0 * coupling_payoff(L, Q, h, s))
                worst = min(worst, margin)
                trials += 1
        worst = 0.0 if not np.isfinite(worst) else worst
        return Check("payoff_inequality", worst >= -PAYOFF_SLACK, worst, -PAYOFF_SLACK,
                     {"trials": trials})

    def frontier_gap() -> Check:
        worst = 0.0
        for name, s in sq_sources:
            if name == "configured":
                f = frontier(s, cfg)
            else:
                f = operational_frontier(s, min(s.size, 4))
            curves.append((f"{name} frontier cond_mean", f.unconstrained))
            curves.append((f"{name} frontier posterior", f.perception))
            if len(f.unconstrained) >= 1 and len(f.perception) >= 1:
                worst = max(worst, compare_halved(f.unconstrained, f.perception).max_gap_bits)
        return Check("frontier_gap", worst == 0.0, worst, 0.0)

    checks = [_guard("coupling_symmetry", SYMMETRY_TOL, symmetry),
              _guard("mse_doubling", DOUBLING_TOL, doubling),
              _guard("payoff_inequality", -PAYOFF_SLACK, payoff),
              _guard("frontier_gap", 0.0, frontier_gap),
              _guard("perception_exactness", PERCEPTION_TOL, perception)]

    def shape() -> Check:
        try:
            curves.append(("configured unconstrained", unconstrained_curve(src, cfg)))
        except Exception as exc:
            warnings.append(f"unconstrained curve failed: {exc}")
            raise
        worst, bad = 0.0, []
        for name, c in curves:
            ok, v = check_shape(c, SHAPE_TOL)
            worst = max(worst, v)
            if not ok:
                bad.append(name)
        return Check("curve_shape", not bad, worst, SHAPE_TOL,
                     {"curves": len(curves), "failing": ", ".join(bad)})

    checks.append(_guard("curve_shape", SHAPE_TOL, shape))
    return VerificationReport(checks, warnings)


def gap_to_dict(stats: GapStats) -> dict:
    return {k: _clean(v) for k, v in asdict(stats).items()}
