"""Run configuration: a single strict JSON document."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .source import (Source, load_source, make_source, product_source,
                     quantized_gaussian_source)


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GaussianConfig(Strict):
    mean: float = 0.0
    std: float = 1.0
    grid_points: int = 65
    half_width_stds: float = 4.0


class SourceConfig(Strict):
    symbols: Optional[list] = None
    pmf: Optional[list[float]] = None
    file: Optional[str] = None
    quantized_gaussian: Optional[GaussianConfig] = None
    product_length: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _exactly_one(self):
        inline = self.symbols is not None or self.pmf is not None
        if inline and (self.symbols is None or self.pmf is None):
            raise ValueError("inline sources need both 'symbols' and 'pmf'")
        given = sum([inline, self.file is not None, self.quantized_gaussian is not None])
        if given != 1:
            raise ValueError("give exactly one of inline symbols/pmf, 'file' or 'quantized_gaussian'")
        return self

    def build(self, base_dir: Path = Path(".")) -> Source:
        if self.file is not None:
            path = Path(self.file)
            src = load_source(path if path.is_absolute() else base_dir / path)
        elif self.quantized_gaussian is not None:
            g = self.quantized_gaussian
            src = quantized_gaussian_source(g.mean, g.std, g.grid_points, g.half_width_stds)
        else:
            src = make_source(self.symbols, self.pmf)
        return product_source(src, self.product_length)


class Schedule(Strict):
    """Explicit ``values`` or ``logspace`` = [lo_exponent, hi_exponent, count]."""

    values: Optional[list[float]] = None
    logspace: Optional[tuple[float, float, int]] = None
    include_zero: bool = True

    @model_validator(mode="after")
    def _one_form(self):
        if (self.values is None) == (self.logspace is None):
            raise ValueError("give exactly one of 'values' or 'logspace'")
        if self.values is not None and not self.values:
            raise ValueError("schedule is empty")
        if self.logspace is not None and self.logspace[2] < 1:
            raise ValueError("logspace count must be >= 1")
        return self

    def resolve(self) -> list[float]:
        if self.values is not None:
            vals = sorted(set(float(v) for v in self.values))
        else:
            lo, hi, n = self.logspace
            vals = [float(v) for v in np.logspace(lo, hi, n)]
        if self.include_zero and (not vals or vals[0] > 0):
            vals = [0.0] + vals
        if any(v < 0 for v in vals):
            raise ValueError("schedule values must be non-negative")
        return vals


class BASection(Strict):
    schedule: Schedule = Schedule(logspace=(-2.0, 3.0, 50))
    tol: float = 1e-10
    max_iters: int = 100_000
    reconstruction: Literal["source", "grid"] = "source"
    grid_points: int = 257
    refine_rounds: int = Field(0, ge=0)


class EntropicSection(Strict):
    schedule: Schedule = Schedule(logspace=(-3.0, 3.0, 60))
    marginal_tol: float = 1e-10
    max_iters: int = 200_000


class TwoStageSection(Strict):
    enabled: bool = True
    max_codewords: int = Field(4, ge=1)
    cap: int = 10_000_000
    lloyd_fallback: bool = True
    lloyd_restarts: int = Field(16, ge=1)


class DalSection(Strict):
    enabled: bool = True
    lambdas: list[float] = [0.0, 0.1, 0.3, 1.0, 3.0, 10.0, 100.0, 1e4]
    divergence: Literal["tv", "kl"] = "tv"
    epsilon: float = 1e-3
    codewords: int = Field(2, ge=1)
    method: Literal["auto", "lp", "slsqp", "mirror"] = "auto"


class RunConfig(Strict):
    source: SourceConfig
    distortion: Literal["squared_error", "hamming"] = "squared_error"
    ba: BASection = BASection()
    entropic: EntropicSection = EntropicSection()
    two_stage: TwoStageSection = TwoStageSection()
    dal: DalSection = DalSection()
    out: Optional[str] = None
    seed: int = Field(0, ge=0)
    fail_on_nonconvergence: bool = False


def load_config(path) -> tuple[RunConfig, Path]:
    """Parse a config file; returns the config and its directory (used to
    resolve relative source paths)."""
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    return RunConfig.model_validate(doc), path.parent
