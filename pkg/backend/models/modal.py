"""
Modal basis model.
Truncated M-orthonormal mode shapes with their modal stiffness and rectifier.
"""

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from .arrays import FloatArray

RIGID_MODE_COUNT = 6


class ModalBasis(BaseModel):
    """Frequency-ordered mode shapes Phi_n (3N x m).

    ``k_tilde`` and ``rectifier`` hold the diagonals of the normalized modal
    stiffness and of (K_tilde + I6)^-1, where I6 covers the first six modes.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    phi: FloatArray
    freqs: FloatArray
    k_tilde: FloatArray
    rectifier: FloatArray

    @model_validator(mode="after")
    def _check_shapes(self):
        if self.phi.ndim != 2:
            raise ValueError("phi must be a matrix")
        m = self.phi.shape[1]
        for name in ("freqs", "k_tilde", "rectifier"):
            if getattr(self, name).shape != (m,):
                raise ValueError(f"{name} must have {m} entries")
        return self

    @property
    def m(self) -> int:
        return int(self.phi.shape[1])

    @property
    def n_dof(self) -> int:
        return int(self.phi.shape[0])

    def stiffness_matrix(self) -> np.ndarray:
        return np.diag(self.k_tilde)

    def rectifier_matrix(self) -> np.ndarray:
        return np.diag(self.rectifier)


def rectifier_diagonal(k_tilde: np.ndarray) -> np.ndarray:
    """Diagonal of (K_tilde + I6)^-1."""
    shift = np.zeros_like(k_tilde)
    shift[:RIGID_MODE_COUNT] = 1.0
    return 1.0 / (k_tilde + shift)
