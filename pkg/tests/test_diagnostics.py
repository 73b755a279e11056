import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tfdyn import diagnostics as dg
from tfdyn.model import ModelParams
from tfdyn.sequences import ValidationError, build_even_pairs_dataset, build_parity_cot_dataset
from tfdyn.training import TrainConfig, Trajectory, train


def test_record_at_init():
    ds = build_even_pairs_dataset(6)
    r = dg.record(ModelParams.zeros(ds.d, 2.0), 0, ds)
    assert r.phi1_pos == r.phi1_neg == pytest.approx(1 / 3)
    assert r.loss == pytest.approx(6 * np.log(2), rel=1e-15)
    assert r.u_norm == 0.0 and r.align is None and r.w_drift is None
    assert r.loss_cot is None


def test_record_parity_fields():
    ds = build_parity_cot_dataset(4)
    r = dg.record(ModelParams.zeros(ds.d, 2.0), 0, ds)
    assert r.loss_cot == pytest.approx(4 * np.log(2))
    assert r.loss_reg == pytest.approx(3 * np.log(2))
    assert r.phi_l0 == pytest.approx(1 / 5)


def test_csv_round_trip(tmp_path):
    tr = train(TrainConfig(task="parity_cot", total_steps=120))
    path = tmp_path / "metrics.csv"
    dg.export_csv(tr, path)
    back = dg.read_csv(path)
    assert back == tr.records
    assert path.read_text().splitlines()[0] == ",".join(dg.CSV_COLUMNS)


def test_phase1_at_step_one_is_not_yet():
    tr = train(TrainConfig(task="even_pairs", total_steps=10, t0=1, snapshot_every=1))
    rep = dg.phase1_report(tr, t0=1)
    assert not rep.passed
    assert all(c.status in (dg.PASS, dg.NOT_YET) for c in rep.checks.values())
    assert any(c.status == dg.NOT_YET for c in rep.checks.values())


def test_gaps_classification():
    assert dg._gaps([(1e-3, "x")]).status == dg.PASS
    assert dg._gaps([(1e-3, "x"), (-1e-3, "y")]).witness == "y"
    assert dg._gaps([(0.0, "z")]).status == dg.NOT_YET
    assert dg._gaps([]).status == dg.PASS


def test_detect_t2():
    steps = list(range(0, 400, 10))
    norms = [0.0] * 11 + list(range(1, 30))
    assert dg.detect_t2(steps, norms, t0=100) == 300
    assert dg.detect_t2(steps, [1.0] * len(steps), t0=100) is None


def test_doubling_windows():
    assert dg.doubling_windows(300, 5000) == [300, 600, 1200, 2400, 4800]
    assert dg.doubling_windows(600, 1000) == [600]


def _synthetic(norm_of_t, total=5000):
    ds = build_even_pairs_dataset(6)
    proto = dg.record(ModelParams.zeros(ds.d, 2.0), 0, ds)
    recs = [dataclasses.replace(proto, t=t, u_norm=float(norm_of_t(t)), loss=float(np.exp(-t / 300)),
                                w_drift=1.0 if t >= 200 else None, align=min(1.0, t / 5000))
            for t in range(0, total + 1, 10)]
    return Trajectory(TrainConfig(task="even_pairs"), records=recs)


def test_frozen_u_has_no_t2():
    with pytest.raises(ValidationError, match="no run"):
        dg.phase2_report(_synthetic(lambda t: 1.0))


def test_linear_growth_fails_log_growth():
    rep = dg.phase2_report(_synthetic(lambda t: t), u_star=np.ones(12))
    assert rep.checks["log_growth"].status == dg.FAIL
    assert rep.checks["log_growth"].witness


def test_log_growth_passes_for_log():
    rep = dg.phase2_report(_synthetic(lambda t: np.log1p(t)), u_star=np.ones(12))
    assert rep.checks["log_growth"].passed
    assert rep.checks["attention_drift"].passed
    assert rep.checks["loss_decay"].passed


def test_missing_alignments_rejected():
    tr = _synthetic(lambda t: np.log1p(t))
    tr.records = [dataclasses.replace(r, align=None) for r in tr.records]
    with pytest.raises(ValidationError, match="alignment"):
        dg.phase2_report(tr, u_star=np.ones(12))


def test_short_trajectory_rejected():
    with pytest.raises(ValidationError):
        dg.phase2_report(_synthetic(lambda t: np.log1p(t), total=700))


def test_thm_bound_values():
    assert dg.thm_alignment_bound(1e9, 1e9) == pytest.approx(1.0)
    assert dg.thm_alignment_bound(1.0, 1 / 6) == 1.0


def test_separability_report_zero_checkpoint():
    ds = build_even_pairs_dataset(4)
    rep = dg.separability_report(ModelParams.zeros(ds.d, 2.0), ds, step=0)
    assert not rep.passed
    assert rep.checks["canonical_separates"].witness is not None


@given(st.floats(0.1, 100.0))
def test_symmetry_violation_scale_invariant_zero(c):
    cfg = TrainConfig(task="even_pairs")
    d = cfg.d
    p = ModelParams(c * np.repeat([1.0, -2.0, 0.5, 0.3, -0.1, 0.7], 2), np.zeros((d, d)), 2.0)
    worst, _ = dg.symmetry_violations(p, cfg)
    assert worst == 0.0


def test_symmetry_violation_found():
    cfg = TrainConfig(task="even_pairs")
    u = np.zeros(12)
    u[0] = 1.0
    worst, where = dg.symmetry_violations(ModelParams(u, np.zeros((12, 12)), 2.0), cfg)
    assert worst == 1.0 and where


def test_report_json_shape():
    rep = dg.TheoryReport("x", {"a": dg.CheckResult(dg.FAIL, 1.0, "> 2", "w")})
    js = rep.to_json()
    assert js["passed"] is False and js["checks"]["a"]["witness"] == "w"
    assert rep.failures() == ["a"]


def test_paper_config_separability(run):
    tr = run("ep")
    rep = dg.separability_report(tr.checkpoints[100], tr.config.dataset(), step=100)
    assert rep.passed, rep.to_json()
