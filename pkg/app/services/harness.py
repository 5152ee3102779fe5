"""Experiment sweeps: simulated fits against SE and closed-form predictions"""
import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from app.config import BaselineConfig, MlvampConfig, SeConfig, SweepConfig, settings
from app.exceptions import GlmlabError, ParameterDomainError
from app.models.glm import GaussianPrior, GlmChannel, LinearChannel, LogisticChannel, PriorLaw, TrueModel
from app.models.penalties import L2Penalty, SquaredLoss
from app.models.spectra import BernoulliMismatch, IsoConstant, SpectrumModel
from app.models.sweeps import (
    CSV_COLUMNS,
    SUMMARY_COLUMNS,
    MismatchCurve,
    SweepPlan,
    SweepResult,
    SweepRow,
    SweepSummaryRow,
)
from app.services import closedform, mlvamp
from app.services.baselines import baseline_fit
from app.services.spectra import rescale_spectrum, second_moments
from app.services.stateevo import predict, se_fixed_point
from app.services.synthdata import empirical_test_error, generate_dataset, generate_test_pairs, normalized_db

logger = logging.getLogger(__name__)

CALIBRATION_TOL = 0.002
CALIBRATION_SAMPLES = 200_000
MAX_BRACKET_STEPS = 200


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

def noise_var_for_snr(spectrum: SpectrumModel, w0_law: PriorLaw, snr_db: float) -> float:
    """sigma_d2 such that E[S_tr^2] E[W0^2] / sigma_d2 equals snr_db in dB"""
    m_tr, _ = second_moments(spectrum)
    return float(m_tr * w0_law.second_moment / 10.0 ** (snr_db / 10.0))


def scale_for_output_power(spectrum: SpectrumModel, w0_law: PriorLaw, target: float) -> float:
    """Spectrum rescale factor that brings E p^2 = E[S_tr^2] E[W0^2] to target"""
    m_tr, _ = second_moments(spectrum)
    power = m_tr * w0_law.second_moment
    if not power > 0:
        raise ParameterDomainError("Signal power is zero; it cannot be rescaled")
    return float(target / power)


def calibrate_snr(
    spectrum: SpectrumModel,
    channel: GlmChannel,
    target: float,
    w0_law: PriorLaw = GaussianPrior(),
    mc: int = CALIBRATION_SAMPLES,
    seed: Optional[int] = None,
) -> float:
    """Spectrum scale A at which the oracle classifier 1{Z > 0} errs at rate target.

    The oracle error is E rho(-|Z| sqrt(A v)) with Z ~ N(0, 1) and v the signal power;
    one set of draws is reused for every A so the bisection sees a monotone function.
    """
    if not isinstance(channel, LogisticChannel):
        raise ParameterDomainError("SNR calibration applies to the logistic channel only")
    if not 0.0 < target:
        raise ParameterDomainError(f"target must be positive, got {target}")
    if target >= 0.5:
        return 0.0

    m_tr, _ = second_moments(spectrum)
    v = m_tr * w0_law.second_moment
    rng = np.random.default_rng(settings.seed if seed is None else seed)
    z = np.abs(rng.standard_normal(mc))

    def error(A: float) -> float:
        return float(np.mean(expit(-z * np.sqrt(A * v))))

    lo, hi = 1.0, 1.0
    for _ in range(MAX_BRACKET_STEPS):
        if error(hi) <= target:
            break
        hi *= 2.0
    for _ in range(MAX_BRACKET_STEPS):
        if error(lo) >= target:
            break
        lo /= 2.0

    A = math.sqrt(lo * hi)
    for _ in range(MAX_BRACKET_STEPS):
        A = math.sqrt(lo * hi)
        err = error(A)
        if abs(err - target) <= CALIBRATION_TOL / 10.0 or hi / lo < 1.0 + 1e-12:
            break
        if err > target:
            lo = A
        else:
            hi = A
    logger.info(f"Calibrated spectrum scale A={A:.6g} for oracle error {target:.4f}")
    return A


def apply_calibration(plan: SweepPlan) -> SweepPlan:
    """Resolve the plan's calibration hooks into a concrete spectrum and channel"""
    spectrum, channel = plan.spectrum, plan.channel
    if plan.output_power is not None:
        spectrum = rescale_spectrum(spectrum, scale_for_output_power(spectrum, plan.w0_law, plan.output_power))
    if plan.snr_db is not None:
        if isinstance(channel, LogisticChannel):
            raise ParameterDomainError("snr_db needs a channel with additive noise")
        channel = channel.model_copy(update={"sigma_d2": noise_var_for_snr(spectrum, plan.w0_law, plan.snr_db)})
    if plan.target_error is not None:
        A = calibrate_snr(spectrum, channel, plan.target_error, plan.w0_law, seed=plan.seed)
        if A == 0.0:
            raise ParameterDomainError("A chance-level target leaves no signal to simulate")
        spectrum = rescale_spectrum(spectrum, A)
    return plan.model_copy(update={
        "spectrum": spectrum, "channel": channel,
        "output_power": None, "snr_db": None, "target_error": None,
    })


# ---------------------------------------------------------------------------
# Predictions per grid point
# ---------------------------------------------------------------------------

def _output_power(plan: SweepPlan) -> float:
    _, m_ts = second_moments(plan.spectrum)
    return m_ts * plan.w0_law.second_moment + getattr(plan.channel, "sigma_d2", 0.0)


def closed_form_prediction(plan: SweepPlan, beta: float) -> Optional[float]:
    """Ridge/ridgeless closed form when the plan is a linear model with iso spectrum"""
    eligible = (
        plan.closed_form
        and isinstance(plan.channel, LinearChannel)
        and isinstance(plan.f_in, L2Penalty)
        and isinstance(plan.f_out, SquaredLoss)
        and isinstance(plan.spectrum, IsoConstant)
        and isinstance(plan.w0_law, GaussianPrior)
        and plan.w0_law.mean == 0.0
        and plan.metric in ("squared", "squared_db")
    )
    if not eligible:
        return None

    spectrum = plan.spectrum
    sigma_tr2 = spectrum.sigma_tr ** 2
    var_w0 = plan.w0_law.var
    sigma_d2 = plan.channel.sigma_d2
    coef = plan.f_in.coef / plan.f_out.scale
    try:
        if coef == 0.0:
            if spectrum.sigma_ts != spectrum.sigma_tr:
                return None
            err = closedform.ridgeless_gen(beta, sigma_d2, sigma_tr2, var_w0)
        else:
            constants = closedform.ridge_constants(beta, beta * coef, sigma_tr2, var_w0, sigma_d2)
            err = closedform.squared_error_gen(constants, spectrum)
    except GlmlabError as e:
        logger.warning(f"No closed form at beta={beta:.4g}: {e}")
        return None
    if plan.metric == "squared_db":
        return normalized_db(err, _output_power(plan))
    return err


def se_prediction(plan: SweepPlan, beta: float, se_cfg: SeConfig) -> float:
    try:
        _, report = predict(plan.spectrum, plan.channel, plan.f_in, plan.f_out, beta, plan.w0_law, plan.metric, se_cfg)
    except GlmlabError as e:
        logger.error(f"SE prediction failed at beta={beta:.4g}: {e}")
        return float("nan")
    return report.e_ts_db if plan.metric == "squared_db" else report.e_ts


# ---------------------------------------------------------------------------
# Trials
# ---------------------------------------------------------------------------

def trial_rng(seed: int, grid_index: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(grid_index, trial)))


def run_trial(
    plan: SweepPlan,
    grid_index: int,
    trial: int,
    n: int,
    seed: int,
    mlvamp_cfg: MlvampConfig,
    baseline_cfg: BaselineConfig,
    sweep_cfg: SweepConfig,
) -> SweepRow:
    """Simulate one training set, fit it and score it on fresh test draws"""
    rng = trial_rng(seed, grid_index, trial)
    dataset = generate_dataset(TrueModel(w0_law=plan.w0_law, p=plan.p, N=n), plan.spectrum, plan.channel, rng)
    fit_rng = np.random.default_rng(rng.integers(0, 2 ** 63))
    test_rng = np.random.default_rng(rng.integers(0, 2 ** 63))

    status = "ok"
    objective = None
    err = float("nan")
    start = time.perf_counter()
    try:
        if plan.solver == "baseline":
            w_hat = baseline_fit(dataset, plan.f_in, plan.f_out, baseline_cfg, fit_rng)
        else:
            result = mlvamp.fit(dataset, plan.f_in, plan.f_out, mlvamp_cfg)
            w_hat = result.w_hat
            if not result.converged:
                status = "failed"
        objective = mlvamp.objective(dataset, w_hat, plan.f_in, plan.f_out)
        reference = mlvamp.objective(dataset, dataset.w0, plan.f_in, plan.f_out)
        if status == "ok" and objective > sweep_cfg.local_min_factor * reference + 1e-12:
            logger.warning(
                f"Trial {trial} at n={n} ends at objective {objective:.4g} above {sweep_cfg.local_min_factor} x {reference:.4g}"
            )
            status = "local_min"
        err = empirical_test_error(generate_test_pairs(dataset, w_hat, sweep_cfg.test_samples, test_rng), plan.metric)
    except GlmlabError as e:
        logger.warning(f"Trial {trial} at n={n} failed: {e}")
        status = "failed"
    runtime_ms = 1000.0 * (time.perf_counter() - start)

    return SweepRow(
        beta=plan.p / n, n=n, p=plan.p, trial=trial,
        empirical_err=err, se_pred=float("nan"), runtime_ms=runtime_ms,
        status=status, objective=objective,
    )


def _run_trial_args(args: Tuple) -> SweepRow:
    return run_trial(*args)


def summarize(rows: Sequence[SweepRow]) -> SweepSummaryRow:
    ok = [r.empirical_err for r in rows if r.status == "ok" and np.isfinite(r.empirical_err)]
    first = rows[0]
    return SweepSummaryRow(
        beta=first.beta, n=first.n, p=first.p,
        median_empirical=float(np.median(ok)) if ok else float("nan"),
        mean_empirical=float(np.mean(ok)) if ok else float("nan"),
        se_pred=first.se_pred, closedform_pred=first.closedform_pred,
        n_ok=len(ok), n_excluded=len(rows) - len(ok),
    )


def run_sweep(
    plan: SweepPlan,
    se_cfg: Optional[SeConfig] = None,
    mlvamp_cfg: Optional[MlvampConfig] = None,
    baseline_cfg: Optional[BaselineConfig] = None,
    sweep_cfg: Optional[SweepConfig] = None,
) -> SweepResult:
    """Trials and predictions for every grid point of the plan"""
    mlvamp_cfg = mlvamp_cfg or settings.mlvamp
    baseline_cfg = baseline_cfg or settings.baseline
    sweep_cfg = sweep_cfg or settings.sweep
    seed = plan.seed if plan.seed is not None else settings.seed

    plan = apply_calibration(plan)
    se_cfg = (se_cfg or settings.se).model_copy()
    if plan.se_method is not None:
        se_cfg.method = plan.se_method
    if plan.se_mc_samples is not None:
        se_cfg.mc_samples = plan.se_mc_samples

    grid = [max(1, int(round(r * plan.p))) for r in plan.n_over_p]
    jobs = [
        (plan, gi, trial, n, seed, mlvamp_cfg, baseline_cfg, sweep_cfg)
        for gi, n in enumerate(grid) for trial in range(plan.trials)
    ]
    logger.info(f"Sweep '{plan.name}': {len(grid)} grid points x {plan.trials} trials on {sweep_cfg.workers} workers")

    try:
        if sweep_cfg.workers > 1:
            with ProcessPoolExecutor(max_workers=sweep_cfg.workers) as pool:
                trial_rows = list(pool.map(_run_trial_args, jobs))
        else:
            trial_rows = [_run_trial_args(job) for job in jobs]
    except Exception as e:
        logger.error(f"Sweep '{plan.name}' aborted: {e}")
        raise

    rows: List[SweepRow] = []
    summary: List[SweepSummaryRow] = []
    for gi, n in enumerate(grid):
        beta = plan.p / n
        grid_seed = int(np.random.SeedSequence(seed, spawn_key=(gi,)).generate_state(1)[0])
        se_pred = se_prediction(plan, beta, se_cfg.model_copy(update={"seed": grid_seed}))
        cf_pred = closed_form_prediction(plan, beta)
        block = [
            r.model_copy(update={"se_pred": se_pred, "closedform_pred": cf_pred})
            for r in trial_rows[gi * plan.trials:(gi + 1) * plan.trials]
        ]
        rows.extend(block)
        summary.append(summarize(block))
        logger.info(f"Grid point beta={beta:.4g}: median {summary[-1].median_empirical:.4g}, SE {se_pred:.4g}")
    return SweepResult(plan=plan, rows=rows, summary=summary)


# ---------------------------------------------------------------------------
# Mismatch curve
# ---------------------------------------------------------------------------

def line_fit_r2(x: Sequence[float], y: Sequence[float]) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot


def mismatch_curve(
    epsilons: Sequence[float],
    beta: float,
    lam: float,
    var_w0: float = 1.0,
    sigma_d2: float = 0.1,
    se_cfg: Optional[SeConfig] = None,
) -> MismatchCurve:
    """Ridge test error under Bernoulli mismatch: closed form and SE pipeline"""
    se_cfg = se_cfg or settings.se
    channel = LinearChannel(sigma_d2=sigma_d2)
    f_in = L2Penalty(lam=lam, beta=beta)
    f_out = SquaredLoss()
    w0_law = GaussianPrior(var=var_w0)

    # the training law is the same for every epsilon, so one fixed point serves all
    fp = se_fixed_point(BernoulliMismatch(epsilon=0.0), channel, f_in, f_out, beta, w0_law, se_cfg)
    closed = [closedform.mismatch_gen(fp, eps) for eps in epsilons]
    se_vals = []
    for eps in epsilons:
        _, report = predict(BernoulliMismatch(epsilon=eps), channel, f_in, f_out, beta, w0_law, "squared", se_cfg)
        se_vals.append(report.e_ts)
    return MismatchCurve(
        epsilons=list(epsilons),
        closed_form=closed,
        se=se_vals,
        r2_closed_form=line_fit_r2(epsilons, closed),
        r2_se=line_fit_r2(epsilons, se_vals),
    )


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

def _csv_value(v) -> Union[str, int, float]:
    if v is None:
        return ""
    return v


def write_csv(rows: Iterable, columns: Sequence[str], path: Union[str, Path]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _csv_value(v) for k, v in row.model_dump().items()})
    logger.info(f"Wrote {path}")
    return path


def write_rows_csv(rows: Iterable[SweepRow], path: Union[str, Path]) -> Path:
    return write_csv(rows, CSV_COLUMNS, path)


def write_summary_csv(summary: Iterable[SweepSummaryRow], path: Union[str, Path]) -> Path:
    return write_csv(summary, SUMMARY_COLUMNS, path)
