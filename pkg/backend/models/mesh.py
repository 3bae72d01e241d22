"""
Mesh models for the Modal Deformation Control platform.
Defines the ellipsoid specification, tetrahedral meshes, materials and assembled FE systems.
"""

from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .arrays import FloatArray, IndexArray, SparseMatrix


class MeshResolution(BaseModel):
    """Latitude, longitude and radial subdivision counts of an ellipsoid mesh."""
    model_config = ConfigDict(frozen=True)

    n_lat: int = Field(default=8, ge=1, le=512)
    n_lon: int = Field(default=16, ge=1, le=1024)
    n_radial: int = Field(default=2, ge=1, le=64)


class EllipsoidSpec(BaseModel):
    """Semi-axes, pose (base frame -> world) and resolution of an ellipsoid."""
    model_config = ConfigDict(frozen=True)

    a_x: float = Field(..., gt=0)
    a_y: float = Field(..., gt=0)
    a_z: float = Field(..., gt=0)
    rotation: Tuple[Tuple[float, float, float], ...] = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
    translation: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    resolution: MeshResolution = Field(default_factory=MeshResolution)

    @field_validator("rotation")
    @classmethod
    def _rotation_is_proper(cls, value):
        matrix = np.asarray(value, dtype=float)
        if matrix.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if not np.allclose(matrix.T @ matrix, np.eye(3), atol=1e-9):
            raise ValueError("rotation must be orthonormal")
        if np.linalg.det(matrix) <= 0:
            raise ValueError("rotation must have determinant +1")
        return value

    @property
    def axes(self) -> np.ndarray:
        return np.array([self.a_x, self.a_y, self.a_z])

    @property
    def rotation_matrix(self) -> np.ndarray:
        return np.asarray(self.rotation, dtype=float)

    @property
    def translation_vector(self) -> np.ndarray:
        return np.asarray(self.translation, dtype=float)

    def base_to_world(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        return points @ self.rotation_matrix.T + self.translation_vector

    def world_to_base(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        return (points - self.translation_vector) @ self.rotation_matrix

    def rotate_to_world(self, vectors) -> np.ndarray:
        vectors = np.asarray(vectors, dtype=float).reshape(-1, 3)
        return vectors @ self.rotation_matrix.T


class SolidMesh(BaseModel):
    """Tetrahedral mesh with its outward-oriented surface triangles."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    nodes: FloatArray
    tets: IndexArray
    surface_tris: IndexArray
    center: FloatArray = Field(default_factory=lambda: np.zeros(3), validate_default=True)

    @model_validator(mode="after")
    def _check_shapes(self):
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 3:
            raise ValueError("nodes must be an (N, 3) array")
        if self.tets.ndim != 2 or self.tets.shape[1] != 4:
            raise ValueError("tets must be a (T, 4) array")
        if self.surface_tris.ndim != 2 or self.surface_tris.shape[1] != 3:
            raise ValueError("surface_tris must be an (S, 3) array")
        if self.center.shape != (3,):
            raise ValueError("center must be a 3-vector")
        n = self.nodes.shape[0]
        for name, indices in (("tets", self.tets), ("surface_tris", self.surface_tris)):
            if indices.size and (indices.min() < 0 or indices.max() >= n):
                raise ValueError(f"{name} reference nodes outside [0, {n})")
        return self

    @property
    def n_nodes(self) -> int:
        return int(self.nodes.shape[0])

    @property
    def n_dof(self) -> int:
        return 3 * self.n_nodes

    @property
    def surface_node_ids(self) -> np.ndarray:
        return np.unique(self.surface_tris)


class MaterialParams(BaseModel):
    """Young's modulus, Poisson's ratio and total mass."""
    model_config = ConfigDict(frozen=True)

    young_modulus: float = Field(..., gt=0)
    poisson_ratio: float = Field(..., gt=0, lt=0.5)
    total_mass: float = Field(..., gt=0)


class AssembledSystem(BaseModel):
    """Global stiffness and mass matrices, optionally with the mesh geometry."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    stiffness: SparseMatrix
    mass: SparseMatrix
    nodes: Optional[FloatArray] = None
    center: Optional[FloatArray] = None
    volume: Optional[float] = None

    @model_validator(mode="after")
    def _check_shapes(self):
        if self.stiffness.shape[0] != self.stiffness.shape[1]:
            raise ValueError("stiffness must be square")
        if self.mass.shape != self.stiffness.shape:
            raise ValueError("mass and stiffness shapes differ")
        if self.nodes is not None and 3 * self.nodes.shape[0] != self.stiffness.shape[0]:
            raise ValueError("node count does not match matrix size")
        return self

    @property
    def n_dof(self) -> int:
        return int(self.stiffness.shape[0])


class MeshSummary(BaseModel):
    """Counts and volume reported by the mesh endpoints."""
    n_nodes: int
    n_tets: int
    n_surface_tris: int
    volume: float
    bounding_box: List[List[float]]
