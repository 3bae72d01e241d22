"""
Object-to-base-mesh mapping models.
Radial surface projections, allocation matrices and the feature projector.
"""

from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from .arrays import FloatArray, IndexArray, SparseMatrix


class SurfaceProjection(BaseModel):
    """Where the center ray through one point leaves the base-mesh surface."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    point_index: int
    tri: int
    node_ids: IndexArray
    weights: FloatArray
    eta: FloatArray


class AllocationMap(BaseModel):
    """Sparse 3l x 3n allocating matrix N and the matching mode rows."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    projections: List[SurfaceProjection]
    n_sparse: SparseMatrix
    node_ids: IndexArray
    rest_eta: FloatArray
    phi_rows: Optional[FloatArray] = None

    @property
    def n_points(self) -> int:
        return len(self.projections)


class FeatureProjector(BaseModel):
    """Factors of the feature map s = D_Phi D_N (x - rest_eta)."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    d_n: SparseMatrix
    d_phi: FloatArray
    rest_eta: FloatArray
    node_ids: IndexArray
    sample_ids: Optional[IndexArray] = None
    singular_values: Optional[FloatArray] = None

    @property
    def m(self) -> int:
        return int(self.d_phi.shape[0])

    @property
    def n_samples(self) -> int:
        return int(self.rest_eta.shape[0] // 3)

    def dense_matrix(self) -> np.ndarray:
        """D_Phi D_N as a dense m x 3l matrix."""
        return np.asarray((self.d_n.T @ self.d_phi.T).T)
