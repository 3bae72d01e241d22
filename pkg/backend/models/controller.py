"""
Controller models.
Manipulation projection G, adaptive controller state and the deformation Jacobian.
"""

from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .arrays import FloatArray, IndexArray


class ManipProjection(BaseModel):
    """Constant m x 3k map G = (K_tilde + I6)^-1 [Phi_n]_r^T N_r^T."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    g: FloatArray
    rest_eta_r: FloatArray
    node_ids: IndexArray

    @property
    def k(self) -> int:
        return int(self.rest_eta_r.size // 3)

    @property
    def m(self) -> int:
        return int(self.g.shape[0])


class ControllerState(BaseModel):
    """Estimated modal parameters and gains.

    The affine offset of the local modal model never enters the Jacobian, so it
    has no field here. ``theta_hat`` is the only member updated during a run.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, validate_assignment=True)

    theta_hat: FloatArray
    ks: FloatArray
    gamma: float = Field(..., gt=0)
    dt: float = Field(..., gt=0)
    speed_limit: Optional[float] = Field(default=None, gt=0)
    theta_bounds: Optional[Tuple[float, float]] = None

    @field_validator("ks")
    @classmethod
    def _gain_is_spd(cls, value: np.ndarray) -> np.ndarray:
        if value.ndim != 2 or value.shape[0] != value.shape[1]:
            raise ValueError("K_s must be square")
        if not np.allclose(value, value.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(value).max())):
            raise ValueError("K_s must be symmetric")
        try:
            np.linalg.cholesky(value)
        except np.linalg.LinAlgError:
            raise ValueError("K_s must be positive definite")
        return value

    @field_validator("theta_hat")
    @classmethod
    def _theta_is_finite(cls, value: np.ndarray) -> np.ndarray:
        if value.ndim != 1 or not np.all(np.isfinite(value)):
            raise ValueError("theta_hat must be a finite vector")
        return value

    @model_validator(mode="after")
    def _check_bounds(self):
        if self.theta_bounds is not None and self.theta_bounds[0] > self.theta_bounds[1]:
            raise ValueError("theta_bounds must be (low, high)")
        return self

    @property
    def m(self) -> int:
        return int(self.theta_hat.size)


class JacobianMatrix(BaseModel):
    """Deformation Jacobian J = diag(theta_hat) G."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    j: FloatArray


class TickTelemetry(BaseModel):
    """Per-tick controller output consumed by the harness."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    e_s: FloatArray
    e_s_norm: float
    theta_hat: FloatArray
    v: FloatArray
    lyapunov: float
    jte_norm: float


class GainPreset(BaseModel):
    """Default gains for a family of scenarios."""
    ks: float
    gamma: float
    rate_hz: float


GAIN_PRESETS = {
    "simulation": GainPreset(ks=80.0, gamma=500.0, rate_hz=50.0),
    "experiment": GainPreset(ks=0.1, gamma=0.1, rate_hz=30.0),
}


def preset_names() -> List[str]:
    return sorted(GAIN_PRESETS)
