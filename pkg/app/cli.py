"""Command-line entry point: python -m app <command>"""
import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence, TextIO

import numpy as np
from pydantic import ValidationError

from app.config import Settings, load_settings
from app.exceptions import GlmlabError, ParameterDomainError
from app.models.glm import TrueModel
from app.models.sweeps import SweepPlan
from app.schemas.problem import ProblemSpec
from app.services import closedform, mlvamp
from app.services.dataset_io import load_dataset, save_dataset
from app.services.harness import run_sweep, write_rows_csv, write_summary_csv
from app.services.stateevo import predict
from app.services.synthdata import generate_dataset

logger = logging.getLogger(__name__)

EXIT_ERROR = 2


def _read_problem(path: Optional[str]) -> ProblemSpec:
    if path is None:
        return ProblemSpec()
    return ProblemSpec.model_validate_json(Path(path).read_text())


def _emit(line: str, out: TextIO) -> None:
    out.write(line + "\n")


def cmd_gen(args, cfg: Settings, out: TextIO) -> None:
    problem = _read_problem(args.problem)
    N = args.N or problem.N
    p = args.p or problem.p
    if N is None or p is None:
        raise ParameterDomainError("gen needs N and p (flags or problem file)")
    rng = np.random.default_rng(cfg.seed if args.seed is None else args.seed)
    dataset = generate_dataset(TrueModel(w0_law=problem.w0_law, p=p, N=N), problem.spectrum, problem.channel, rng)
    save_dataset(dataset, args.out)
    _emit(json.dumps({"out": str(args.out), "N": N, "p": p, "beta": p / N}), out)


def cmd_fit(args, cfg: Settings, out: TextIO) -> None:
    problem = _read_problem(args.problem)
    dataset = load_dataset(args.data, problem.channel)
    result = mlvamp.fit(dataset, problem.f_in, problem.f_out, cfg.mlvamp)
    for record in result.history:
        _emit(record.model_dump_json(), out)
    _emit(json.dumps({
        "converged": result.converged,
        "iterations": result.iterations,
        "kkt_residual": result.kkt_residual,
        "objective": result.objective,
        "param_mse": float(np.mean((result.w_hat - dataset.w0) ** 2)),
        "w_hat": result.w_hat.tolist(),
    }), out)


def cmd_se(args, cfg: Settings, out: TextIO) -> None:
    problem = _read_problem(args.problem)
    if args.beta is not None:
        problem.beta = args.beta
    if problem.beta is None:
        raise ParameterDomainError("se needs beta (flag or problem file)")
    se_cfg = (problem.se or cfg.se).model_copy()
    if se_cfg.seed is None:
        se_cfg.seed = cfg.se_seed
    fp, report = predict(
        problem.spectrum, problem.channel, problem.f_in, problem.f_out,
        problem.beta, problem.w0_law, problem.metric, se_cfg, problem.mc,
    )
    payload = {"fixed_point": fp.model_dump(), "report": report.model_dump()}
    if problem.metric == "squared_db":
        payload["e_ts_db"] = report.e_ts_db
    _emit(json.dumps(payload), out)


def _closed_form_rows(args) -> List[dict]:
    if args.kind == "ridgeless":
        kwargs = dict(sigma_d2=args.sigma_d2, sigma_tr2=args.sigma_tr2, var_w0=args.var_w0)
        if args.beta == 1.0:
            below, above = closedform.one_sided_limits(closedform.ridgeless_gen, **kwargs)
            return [{"beta": 1.0 - closedform.UNIT_BETA_STEP, "e_ts": below},
                    {"beta": 1.0 + closedform.UNIT_BETA_STEP, "e_ts": above}]
        return [{"beta": args.beta, "e_ts": closedform.ridgeless_gen(args.beta, **kwargs)}]

    if args.lam is None:
        raise ParameterDomainError(f"closed-form {args.kind} needs --lam")
    constants, errors = closedform.ridge_report(args.beta, args.lam, args.sigma_tr2, args.var_w0, args.sigma_d2)
    if args.kind == "ridge":
        rows = []
        for c, e in zip(constants, errors):
            row = c.model_dump(include={"beta", "lam", "z", "G", "Gprime", "eta", "kappa",
                                        "gamma0_plus", "gamma1_minus", "k22", "tau1_minus"})
            row["e_ts"] = e
            rows.append(row)
        return rows
    return [{"epsilon": eps, "e_ts": closedform.mismatch_gen(constants[0], eps)} for eps in args.epsilon]


def cmd_closed_form(args, cfg: Settings, out: TextIO) -> None:
    rows = _closed_form_rows(args)
    columns = list(rows[0].keys())
    if args.format == "csv":
        writer = csv.DictWriter(out, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)
        return
    _emit("  ".join(f"{c:>14}" for c in columns), out)
    for row in rows:
        _emit("  ".join(f"{row[c]:>14.6g}" for c in columns), out)


def cmd_sweep(args, cfg: Settings, out: TextIO) -> None:
    plan = SweepPlan.model_validate_json(Path(args.plan).read_text())
    if plan.seed is None:
        plan = plan.model_copy(update={"seed": cfg.seed})
    sweep_cfg = cfg.sweep
    if args.workers is not None:
        sweep_cfg = sweep_cfg.model_copy(update={"workers": args.workers})
    result = run_sweep(plan, cfg.se, cfg.mlvamp, cfg.baseline, sweep_cfg)
    write_rows_csv(result.rows, args.out)
    summary_path = args.summary or str(Path(args.out).with_suffix("")) + "_summary.csv"
    write_summary_csv(result.summary, summary_path)
    _emit(json.dumps({"rows": str(args.out), "summary": summary_path}), out)


def cmd_serve(args, cfg: Settings, out: TextIO) -> None:
    import uvicorn

    uvicorn.run("app.main:app", host=args.host, port=args.port, reload=cfg.debug)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glmlab", description="ML-VAMP learning and test-error prediction for GLMs")
    parser.add_argument("--config", help="Flat key = value config file")
    parser.add_argument("--log-level", help="Overrides log_level from the config")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="Draw a dataset and write it as GLMDS1")
    p.add_argument("--problem", help="Problem spec JSON")
    p.add_argument("--N", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("fit", help="Fit a GLMDS1 dataset with ML-VAMP; JSON lines on stdout")
    p.add_argument("--data", required=True)
    p.add_argument("--problem", help="Problem spec JSON (channel and penalties)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("se", help="State-evolution fixed point and test-error report")
    p.add_argument("--problem", help="Problem spec JSON")
    p.add_argument("--beta", type=float)
    p.set_defaults(func=cmd_se)

    p = sub.add_parser("closed-form", help="Closed-form test errors as a table")
    p.add_argument("kind", choices=["ridge", "ridgeless", "mismatch"])
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--lam", type=float)
    p.add_argument("--sigma-tr2", dest="sigma_tr2", type=float, default=1.0)
    p.add_argument("--var-w0", dest="var_w0", type=float, default=1.0)
    p.add_argument("--sigma-d2", dest="sigma_d2", type=float, default=0.0)
    p.add_argument("--epsilon", type=float, nargs="+", default=[0.0, 0.25, 0.5, 0.75, 1.0])
    p.add_argument("--format", choices=["text", "csv"], default="text")
    p.set_defaults(func=cmd_closed_form)

    p = sub.add_parser("sweep", help="Run a sweep plan and write the CSVs")
    p.add_argument("--plan", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--summary")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("serve", help="Serve the HTTP API")
    p.add_argument("--host", default="0.0.0.0")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None, out: TextIO = sys.stdout) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_settings(args.config)
        logging.basicConfig(
            level=(args.log_level or cfg.log_level).upper(),
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        )
        args.func(args, cfg, out)
    except (GlmlabError, ValidationError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    return 0
