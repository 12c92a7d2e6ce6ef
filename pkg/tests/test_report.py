import json

import numpy as np
import pytest

from rdplab.blahut import rd_curve_unconstrained
from rdplab.config import RunConfig
from rdplab.curve import Curve, RDPoint, check_shape, read_curve_csv
from rdplab.entropic import rdp_curve_perfect_perception
from rdplab.report import (GapError, compare_halved, emit_plot_data, read_plot_data,
                           run_curves, run_verify)
from rdplab.source import hamming_matrix, make_source, squared_error_matrix
from rdplab.two_stage import operational_frontier

from conftest import hb

BINARY = {"source": {"symbols": [0, 1], "pmf": [0.5, 0.5]}}


def cfg_of(doc):
    return RunConfig.model_validate(doc)


def binary_curves():
    src = make_source([0, 1], [0.5, 0.5])
    unc = rd_curve_unconstrained(src, src.symbols, hamming_matrix(src, src), np.linspace(0, 12, 241))
    perc = rdp_curve_perfect_perception(src, squared_error_matrix(src, src))
    return unc, perc


def test_frontier_gap_is_exactly_zero(uniform4):
    f = operational_frontier(uniform4, 4)
    stats = compare_halved(f.unconstrained, f.perception)
    assert stats.max_gap_bits == 0.0 and stats.mean_gap_bits == 0.0


def test_binary_informational_gap_matches_closed_form():
    # R(D,0) = 1 - H_b(D) while R(D/2, inf) = 1 - H_b(D/2): the gap is H_b(D/2) - H_b(D)
    unc, perc = binary_curves()
    stats = compare_halved(unc, perc)
    d = np.linspace(0, 0.5, 100_001)
    closed = np.abs(hb(d / 2) - hb(d))
    assert stats.max_gap_bits == pytest.approx(closed.max(), abs=2e-3)
    assert stats.max_signed_gap_bits <= 1e-9
    assert stats.overlap[0] == pytest.approx(0.0, abs=1e-4)  # last lambda is 1e3, not infinity
    assert stats.overlap[1] == pytest.approx(0.5, abs=1e-9)


def test_empty_overlap_raises():
    a = Curve([RDPoint(1.0, 0.0), RDPoint(0.0, 0.1)])
    b = Curve([RDPoint(1.0, 5.0), RDPoint(0.0, 6.0)])
    with pytest.raises(GapError):
        compare_halved(a, b)
    with pytest.raises(GapError):
        compare_halved(Curve([]), b)


def test_plot_data_three_series_round_trip(tmp_path):
    unc, perc = binary_curves()
    warnings = emit_plot_data(unc, perc, tmp_path / "p.csv")
    assert warnings == []
    data = read_plot_data(tmp_path / "p.csv")
    assert list(data) == ["unconstrained", "perception", "unconstrained_halved"]
    assert [(r, d) for _, r, d in data["unconstrained"]] == [(p.rate_bits, p.distortion) for p in unc.points]
    assert [(r, d) for _, r, d in data["perception"]] == [(p.rate_bits, p.distortion) for p in perc.points]
    assert [d for _, _, d in data["unconstrained_halved"]] == [2 * p.distortion for p in unc.points]


def test_plot_data_without_perception(tmp_path):
    unc, _ = binary_curves()
    warnings = emit_plot_data(unc, Curve([]), tmp_path / "p.csv")
    assert warnings and "empty" in warnings[0]
    assert list(read_plot_data(tmp_path / "p.csv")) == ["unconstrained", "unconstrained_halved"]


def test_run_curves_binary(tmp_path):
    cs = run_curves(make_source([0, 1], [0.5, 0.5]), cfg_of(BINARY), tmp_path)
    assert sorted(cs.files) == ["frontier_cond_mean.csv", "frontier_posterior.csv",
                                "rd_unconstrained.csv", "rdp_perfect.csv"]
    perc = read_curve_csv(tmp_path / "rdp_perfect.csv")
    np.testing.assert_allclose(perc.rates, 1 - hb(perc.distortions), atol=1e-6)
    unc = read_curve_csv(tmp_path / "rd_unconstrained.csv")
    assert check_shape(unc)[0]


def test_run_curves_hamming_oracle(tmp_path):
    cfg = cfg_of(dict(BINARY, distortion="hamming", ba={"schedule": {"values": list(np.linspace(0.1, 12, 60))}}))
    run_curves(cfg.source.build(), cfg, tmp_path, ("rd",))
    unc = read_curve_csv(tmp_path / "rd_unconstrained.csv")
    mask = (unc.distortions >= 0.01) & (unc.distortions <= 0.49)
    np.testing.assert_allclose(unc.rates[mask], 1 - hb(unc.distortions[mask]), atol=1e-4)


def test_run_curves_deterministic_source(tmp_path):
    cfg = cfg_of({"source": {"symbols": [4.0], "pmf": [1.0]}})
    cs = run_curves(cfg.source.build(), cfg, tmp_path)
    for c in (cs.unconstrained, cs.perception, cs.frontier.unconstrained, cs.frontier.perception):
        assert [(p.rate_bits, p.distortion) for p in c.points] == [(0.0, 0.0)]


def test_run_curves_gaussian_shapes(tmp_path):
    cfg = cfg_of({"source": {"quantized_gaussian": {"grid_points": 17}},
                  "ba": {"schedule": {"logspace": [-1, 2, 12]}, "reconstruction": "grid",
                         "grid_points": 33, "max_iters": 2000},
                  "two_stage": {"max_codewords": 3}})
    cs = run_curves(cfg.source.build(), cfg, tmp_path)
    assert len(cs.files) == 4
    for name in ("rd_unconstrained.csv", "rdp_perfect.csv"):
        assert check_shape(read_curve_csv(tmp_path / name))[0]
    assert check_shape(cs.frontier.unconstrained)[0] and check_shape(cs.frontier.perception)[0]


def test_outputs_are_byte_identical(tmp_path):
    cfg = cfg_of(dict(BINARY, seed=5))
    src = cfg.source.build()
    for sub in ("a", "b"):
        run_curves(src, cfg, tmp_path / sub, ("rd", "rdp", "two_stage", "dal"))
        run_verify(src, cfg).write(tmp_path / sub / "verify.json")
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name


def test_verify_default_passes():
    cfg = cfg_of(BINARY)
    rep = run_verify(cfg.source.build(), cfg)
    assert rep.passed, rep.to_dict()
    names = [c.name for c in rep.checks]
    assert names == ["coupling_symmetry", "mse_doubling", "payoff_inequality", "frontier_gap",
                     "perception_exactness", "curve_shape"]
    d = rep.check("mse_doubling").details
    assert abs(d["min_ratio"] - 2) <= 1e-10 and abs(d["max_ratio"] - 2) <= 1e-10
    for c in rep.to_dict()["checks"]:
        assert isinstance(c["measured"], float)


def test_verify_corrupted_coupling_fails():
    cfg = cfg_of(BINARY)
    rep = run_verify(cfg.source.build(), cfg, corrupt_coupling=True)
    assert not rep.passed
    sym = rep.check("coupling_symmetry")
    assert not sym.passed and sym.measured > 1e-8
    assert all(c.passed for c in rep.checks if c.name != "coupling_symmetry")


def test_verify_deterministic_source():
    cfg = cfg_of({"source": {"symbols": [1.0], "pmf": [1.0]}})
    rep = run_verify(cfg.source.build(), cfg)
    assert rep.passed, rep.to_dict()


def test_verify_json_is_sorted(tmp_path):
    cfg = cfg_of(BINARY)
    rep = run_verify(cfg.source.build(), cfg)
    rep.write(tmp_path / "v.json")
    doc = json.loads((tmp_path / "v.json").read_text())
    assert doc["overall"] == "pass"
    assert (tmp_path / "v.json").read_text() == json.dumps(doc, indent=2, sort_keys=True) + "\n"


def test_verify_survives_solver_errors(monkeypatch):
    import rdplab.report as report

    def boom(*a, **k):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(report, "perfect_perception_sweep", boom)
    cfg = cfg_of(BINARY)
    rep = run_verify(cfg.source.build(), cfg)
    sym = rep.check("coupling_symmetry")
    assert not sym.passed and "exploded" in sym.details["error"]
    assert rep.check("mse_doubling").passed
