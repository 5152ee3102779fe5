import json
from pathlib import Path

import numpy as np
import pytest
from scipy.special import expit

from app.config import SeConfig, SweepConfig
from app.exceptions import ParameterDomainError
from app.models.glm import LinearChannel, LogisticChannel
from app.models.penalties import L2Penalty
from app.models.spectra import IsoConstant
from app.models.sweeps import CSV_COLUMNS, SweepPlan
from app.services.harness import (
    apply_calibration,
    calibrate_snr,
    closed_form_prediction,
    line_fit_r2,
    mismatch_curve,
    run_sweep,
    write_rows_csv,
    write_summary_csv,
)

PLANS_DIR = Path(__file__).resolve().parent.parent / "plans"


@pytest.fixture
def se_cfg():
    return SeConfig(method="quadrature", tol=1e-10, max_iters=3000, mc_samples=20_000)


@pytest.fixture
def small_plan():
    return SweepPlan(
        name="small",
        p=20,
        n_over_p=[0.5, 2.0],
        trials=2,
        channel=LinearChannel(sigma_d2=0.1),
        f_in=L2Penalty(lam=0.1),
        seed=11,
    )


def test_rows_csv_header(small_plan, se_cfg, tmp_path):
    result = run_sweep(small_plan, se_cfg)
    path = write_rows_csv(result.rows, tmp_path / "rows.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "beta,n,p,trial,empirical_err,se_pred,closedform_pred,runtime_ms,status"
    assert tuple(lines[0].split(",")) == CSV_COLUMNS
    assert len(lines) == 1 + 2 * 2


def test_summary_has_one_row_per_grid_point(small_plan, se_cfg, tmp_path):
    result = run_sweep(small_plan, se_cfg)
    assert [s.n for s in result.summary] == [10, 40]
    assert all(s.n_ok + s.n_excluded == 2 for s in result.summary)
    path = write_summary_csv(result.summary, tmp_path / "summary.csv")
    assert path.read_text().splitlines()[0].startswith("beta,n,p,median_empirical")


def test_sweep_is_deterministic_apart_from_runtime(small_plan, se_cfg):
    first = run_sweep(small_plan, se_cfg)
    second = run_sweep(small_plan, se_cfg)
    strip = lambda rows: [r.model_dump(exclude={"runtime_ms"}) for r in rows]
    assert strip(first.rows) == strip(second.rows)


def test_state_evolution_agrees_with_closed_form(small_plan, se_cfg):
    result = run_sweep(small_plan, se_cfg)
    for row in result.summary:
        assert row.closedform_pred is not None
        assert row.se_pred == pytest.approx(row.closedform_pred, rel=1e-2)


def test_heavily_regularized_fit_predicts_zero(se_cfg):
    plan = SweepPlan(
        p=200, n_over_p=[2.0], trials=3, channel=LinearChannel(sigma_d2=0.1),
        f_in=L2Penalty(lam=1e8), solver="baseline", seed=5, closed_form=False,
    )
    result = run_sweep(plan, se_cfg, sweep_cfg=SweepConfig(test_samples=1000))
    assert all(r.status == "ok" for r in result.rows)
    assert result.summary[0].median_empirical == pytest.approx(1.1, rel=0.25)


def test_closed_form_only_for_linear_iso_plans(small_plan):
    assert closed_form_prediction(small_plan, 0.5) is not None
    logistic = small_plan.model_copy(update={"channel": LogisticChannel(), "metric": "zero_one"})
    assert closed_form_prediction(logistic, 0.5) is None


def test_snr_sets_channel_noise(small_plan):
    plan = apply_calibration(small_plan.model_copy(update={"snr_db": 10.0}))
    assert plan.channel.sigma_d2 == pytest.approx(0.1)
    assert plan.snr_db is None


def test_output_power_rescales_spectrum(small_plan):
    plan = apply_calibration(small_plan.model_copy(update={"output_power": 9.0}))
    assert plan.spectrum.sigma_tr == pytest.approx(3.0)


def test_calibration_at_chance_is_zero():
    assert calibrate_snr(IsoConstant(), LogisticChannel(), 0.5) == 0.0


def test_calibration_hits_the_target():
    A = calibrate_snr(IsoConstant(), LogisticChannel(), 0.05, seed=1)
    z = np.abs(np.random.default_rng(99).standard_normal(1_000_000))
    assert float(np.mean(expit(-z * np.sqrt(A)))) == pytest.approx(0.05, abs=0.003)


def test_calibration_is_monotone():
    easy = calibrate_snr(IsoConstant(), LogisticChannel(), 0.2, seed=1)
    hard = calibrate_snr(IsoConstant(), LogisticChannel(), 0.05, seed=1)
    assert hard > easy > 0


def test_calibration_needs_logistic_channel():
    with pytest.raises(ParameterDomainError):
        calibrate_snr(IsoConstant(), LinearChannel(), 0.1)


def test_line_fit_r2():
    assert line_fit_r2([0, 1, 2], [1, 3, 5]) == pytest.approx(1.0)
    assert line_fit_r2([0, 1, 2, 3], [0, 1, 0, 1]) < 0.5


def test_mismatch_curve_is_linear(se_cfg):
    curve = mismatch_curve([0.0, 0.25, 0.5, 0.75, 1.0], beta=0.5, lam=0.1, se_cfg=se_cfg)
    assert curve.r2_closed_form == pytest.approx(1.0, abs=1e-10)
    assert curve.r2_se == pytest.approx(1.0, abs=1e-6)
    np.testing.assert_allclose(curve.se, curve.closed_form, rtol=1e-6)


@pytest.mark.parametrize(
    "name", ["linear_iid.json", "logistic_iid.json", "logistic_correlated.json", "logistic_mismatch.json", "tanh.json"]
)
def test_bundled_plans_parse(name):
    plan = SweepPlan.model_validate(json.loads((PLANS_DIR / name).read_text()))
    assert plan.trials >= 1


@pytest.mark.slow
def test_linear_plan_tracks_prediction(se_cfg):
    plan = SweepPlan.model_validate(json.loads((PLANS_DIR / "linear_iid.json").read_text()))
    plan = plan.model_copy(update={"p": 200, "trials": 5, "n_over_p": [0.5, 2.0, 3.0]})
    result = run_sweep(plan, se_cfg)
    for row in result.summary:
        assert abs(row.median_empirical - row.se_pred) <= 1.0


@pytest.mark.slow
@pytest.mark.parametrize("name", ["logistic_iid.json", "logistic_correlated.json", "logistic_mismatch.json"])
def test_logistic_plans_track_prediction(name, se_cfg):
    plan = SweepPlan.model_validate(json.loads((PLANS_DIR / name).read_text()))
    plan = plan.model_copy(update={"trials": 10, "n_over_p": [1.0, 3.0], "se_mc_samples": 100_000})
    result = run_sweep(plan, se_cfg)
    for row in result.summary:
        assert row.n_ok == plan.trials
        assert abs(row.median_empirical - row.se_pred) <= 0.02


@pytest.mark.slow
def test_tanh_plan_tracks_prediction(se_cfg):
    plan = SweepPlan.model_validate(json.loads((PLANS_DIR / "tanh.json").read_text()))
    plan = plan.model_copy(update={"trials": 10, "n_over_p": [2.0, 5.0], "se_mc_samples": 100_000})
    result = run_sweep(plan, se_cfg)
    for row in result.summary:
        assert row.n_excluded < 0.2 * plan.trials
        assert abs(row.median_empirical - row.se_pred) <= 1.0
