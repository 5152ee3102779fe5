from fastapi import APIRouter, HTTPException
from fastapi.concurrency import run_in_threadpool
import logging

from app.exceptions import GlmlabError, ParameterDomainError
from app.routers.errors import http_error
from app.schemas.problem import ProblemSpec, SeResponse
from app.services.stateevo import predict

router = APIRouter()
logger = logging.getLogger(__name__)


def run_problem(problem: ProblemSpec) -> SeResponse:
    """Fixed point and test-error report for a problem spec"""
    if problem.beta is None:
        raise ParameterDomainError("The problem needs beta or both N and p")
    fp, report = predict(
        problem.spectrum,
        problem.channel,
        problem.f_in,
        problem.f_out,
        problem.beta,
        problem.w0_law,
        problem.metric,
        problem.se,
        problem.mc,
    )
    e_ts_db = report.e_ts_db if problem.metric == "squared_db" else None
    return SeResponse(fixed_point=fp, report=report, e_ts_db=e_ts_db)


@router.post("", response_model=SeResponse)
async def state_evolution(problem: ProblemSpec):
    """Run the state evolution to its fixed point and predict the test error"""
    try:
        return await run_in_threadpool(run_problem, problem)
    except GlmlabError as e:
        logger.error(f"State evolution request failed: {e}")
        raise http_error(e)
    except HTTPException:
        raise
    except Exception as e:
        logger.error(f"Error running state evolution: {e}")
        raise HTTPException(status_code=500, detail="Internal server error")
