"""
Request and response models for the HTTP API.
"""

from typing import List, Optional, Tuple

from pydantic import BaseModel, Field

from .mesh import MeshResolution, MeshSummary
from .run import RunSummary, TickRow
from .scenario import Scenario


class ScenarioRunRequest(BaseModel):
    """Run a scenario given inline."""
    scenario: Scenario
    baseline: bool = False
    seed: Optional[int] = None
    include_rows: bool = True


class ShippedRunRequest(BaseModel):
    """Run a shipped scenario by name."""
    baseline: bool = False
    seed: Optional[int] = None
    include_rows: bool = False


class ScenarioRunResponse(BaseModel):
    summary: RunSummary
    s_star: List[float]
    rows: List[TickRow] = Field(default_factory=list)


class ScenarioListResponse(BaseModel):
    scenarios: List[str]


class EllipsoidMeshRequest(BaseModel):
    """Ellipsoid semi-axes, pose and resolution."""
    axes: Tuple[float, float, float]
    center: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation_deg: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    resolution: MeshResolution = Field(default_factory=MeshResolution)


class EllipsoidMeshResponse(BaseModel):
    summary: MeshSummary
    mesh_text: str


class ModesRequest(BaseModel):
    """Modal analysis of an ellipsoid base mesh."""
    mesh: EllipsoidMeshRequest
    m: int = Field(..., ge=1)
    young_modulus: float = Field(default=1e5, gt=0)
    poisson_ratio: float = Field(default=0.45, gt=0, lt=0.5)
    total_mass: float = Field(default=1000.0, gt=0)


class ModesResponse(BaseModel):
    eigenvalues: List[float]
    k_tilde: List[float]
    rectifier: List[float]
    n_dof: int
