"""
Translation of domain errors into HTTP errors.
"""

from fastapi import HTTPException, status

from services.exceptions import (
    DeformationControlError,
    NumericError,
    RankDeficientError,
    ScenarioRunError,
)


def to_http_exception(error: DeformationControlError) -> HTTPException:
    """400 for invalid input, 422 for rank deficiency, 500 for numerical failures."""
    cause = error.__cause__ if isinstance(error, ScenarioRunError) and error.__cause__ else error
    if isinstance(cause, RankDeficientError):
        code = status.HTTP_422_UNPROCESSABLE_ENTITY
    elif isinstance(cause, NumericError) or not isinstance(cause, ValueError):
        code = status.HTTP_500_INTERNAL_SERVER_ERROR
    else:
        code = status.HTTP_400_BAD_REQUEST
    detail = str(error)
    if isinstance(error, ScenarioRunError):
        detail = {"message": detail, "tick": error.tick, "diagnostics": error.diagnostics}
    return HTTPException(status_code=code, detail=detail)
