from fastapi import APIRouter, File, Form, HTTPException, UploadFile
from fastapi.concurrency import run_in_threadpool
from pydantic import ValidationError
import logging

import numpy as np

from app.exceptions import GlmlabError
from app.routers.errors import http_error
from app.schemas.problem import FitResponse, ProblemSpec
from app.services import mlvamp
from app.services.dataset_io import loads_dataset

router = APIRouter()
logger = logging.getLogger(__name__)


def fit_payload(data: bytes, problem: ProblemSpec) -> FitResponse:
    dataset = loads_dataset(data, problem.channel)
    result = mlvamp.fit(dataset, problem.f_in, problem.f_out)
    return FitResponse(
        N=dataset.N,
        p=dataset.p,
        converged=result.converged,
        iterations=result.iterations,
        kkt_residual=result.kkt_residual,
        objective=result.objective,
        w_hat=result.w_hat.tolist(),
        param_mse=float(np.mean((result.w_hat - dataset.w0) ** 2)),
        gamma_plus=[float(g) for g in result.state.gamma_plus],
        gamma_minus=[float(g) for g in result.state.gamma_minus],
    )


@router.post("/fit", response_model=FitResponse)
async def fit_dataset(file: UploadFile = File(...), problem: str = Form("{}")):
    """Fit an uploaded GLMDS1 dataset with ML-VAMP"""
    try:
        spec = ProblemSpec.model_validate_json(problem)
    except ValidationError as e:
        raise HTTPException(status_code=422, detail=str(e))

    try:
        data = await file.read()
        return await run_in_threadpool(fit_payload, data, spec)
    except GlmlabError as e:
        logger.error(f"Fit of uploaded dataset {file.filename} failed: {e}")
        raise http_error(e)
    except HTTPException:
        raise
    except Exception as e:
        logger.error(f"Error fitting uploaded dataset: {e}")
        raise HTTPException(status_code=500, detail="Internal server error")
