from fastapi import APIRouter, HTTPException
import logging

from app.exceptions import GlmlabError
from app.routers.errors import http_error
from app.schemas.problem import ClosedFormResponse, MismatchRequest, RidgelessRequest, RidgeRequest, RidgeResponse
from app.services import closedform

router = APIRouter()
logger = logging.getLogger(__name__)


@router.post("/ridge", response_model=RidgeResponse)
async def ridge(request: RidgeRequest):
    """Ridge constants and test MSE for an isotropic spectrum"""
    try:
        constants, errors = closedform.ridge_report(
            request.beta, request.lam, request.sigma_tr2, request.var_w0, request.sigma_d2, request.sigma_ts2
        )
        return RidgeResponse(constants=constants, e_ts=errors)
    except GlmlabError as e:
        logger.error(f"Ridge closed form failed: {e}")
        raise http_error(e)
    except Exception as e:
        logger.error(f"Error evaluating ridge closed form: {e}")
        raise HTTPException(status_code=500, detail="Internal server error")


@router.post("/ridgeless", response_model=ClosedFormResponse)
async def ridgeless(request: RidgelessRequest):
    """Min-norm least squares test MSE; one-sided limits at beta = 1"""
    try:
        args = dict(sigma_d2=request.sigma_d2, sigma_tr2=request.sigma_tr2, var_w0=request.var_w0)
        if request.beta == 1.0:
            below, above = closedform.one_sided_limits(closedform.ridgeless_gen, **args)
            return ClosedFormResponse(values={"beta_below": below, "beta_above": above})
        return ClosedFormResponse(values={"e_ts": closedform.ridgeless_gen(request.beta, **args)})
    except GlmlabError as e:
        logger.error(f"Ridgeless closed form failed: {e}")
        raise http_error(e)
    except Exception as e:
        logger.error(f"Error evaluating ridgeless closed form: {e}")
        raise HTTPException(status_code=500, detail="Internal server error")


@router.post("/mismatch", response_model=ClosedFormResponse)
async def mismatch(request: MismatchRequest):
    """Bernoulli mismatch test MSE over a grid of flip probabilities"""
    try:
        constants, _ = closedform.ridge_report(
            request.beta, request.lam, request.sigma_tr2, request.var_w0, request.sigma_d2
        )
        values = {f"{eps:g}": closedform.mismatch_gen(constants[0], eps) for eps in request.epsilons}
        return ClosedFormResponse(values=values)
    except GlmlabError as e:
        logger.error(f"Mismatch closed form failed: {e}")
        raise http_error(e)
    except Exception as e:
        logger.error(f"Error evaluating mismatch closed form: {e}")
        raise HTTPException(status_code=500, detail="Internal server error")
