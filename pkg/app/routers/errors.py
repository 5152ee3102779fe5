from fastapi import HTTPException

from app.exceptions import ConfigurationError, DatasetFormatError, GlmlabError, ParameterDomainError


def http_error(e: GlmlabError) -> HTTPException:
    """Map a library error onto an HTTP status"""
    if isinstance(e, (ParameterDomainError, DatasetFormatError, ConfigurationError)):
        return HTTPException(status_code=422, detail=str(e))
    return HTTPException(status_code=500, detail=f"{type(e).__name__}: {e}")
