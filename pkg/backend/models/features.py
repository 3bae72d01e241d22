"""
Feature models: surface samplings and modal deformation features.
"""

from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from .arrays import FloatArray, IndexArray


class SamplingSet(BaseModel):
    """Stacked sample positions x(p_s, t) in the base-mesh frame."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    positions: FloatArray
    timestamp: float = 0.0
    ids: Optional[IndexArray] = None

    @model_validator(mode="after")
    def _check_layout(self):
        if self.positions.ndim != 1 or self.positions.size % 3:
            raise ValueError("positions must be a flat vector with length divisible by 3")
        if self.ids is not None and self.ids.size != self.positions.size // 3:
            raise ValueError("one id per sample is required")
        return self

    @property
    def n_samples(self) -> int:
        return int(self.positions.size // 3)


class FeatureVector(BaseModel):
    """Modal coefficients s (also used for s* and e_s)."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: FloatArray

    @model_validator(mode="after")
    def _check_finite(self):
        if self.values.ndim != 1:
            raise ValueError("features must be a vector")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("features must be finite")
        return self

    @property
    def m(self) -> int:
        return int(self.values.size)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))
