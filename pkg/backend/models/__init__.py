"""
Models package for the Modal Deformation Control platform.
Contains the Pydantic domain models shared by services, routers and the CLI.
"""

from .mesh import (
    MeshResolution, EllipsoidSpec, SolidMesh, MaterialParams, AssembledSystem, MeshSummary
)
from .modal import ModalBasis, RIGID_MODE_COUNT, rectifier_diagonal
from .mapping import SurfaceProjection, AllocationMap, FeatureProjector
from .features import SamplingSet, FeatureVector
from .controller import (
    ManipProjection, ControllerState, JacobianMatrix, TickTelemetry, GainPreset, GAIN_PRESETS
)
from .plant import PlantShape, PlantModel, SamplingMode, PlantObservation, DesiredDeformation
from .scenario import BaseMeshMode, EventAction, SamplingEvent, Scenario
from .run import RunStatus, ControllerKind, TickRow, RunRecord, RunSummary
from .api import (
    ScenarioRunRequest, ShippedRunRequest, ScenarioRunResponse, ScenarioListResponse,
    EllipsoidMeshRequest, EllipsoidMeshResponse, ModesRequest, ModesResponse
)

__all__ = [
    # Mesh models
    "MeshResolution", "EllipsoidSpec", "SolidMesh", "MaterialParams", "AssembledSystem",
    "MeshSummary",

    # Modal models
    "ModalBasis", "RIGID_MODE_COUNT", "rectifier_diagonal",

    # Mapping and feature models
    "SurfaceProjection", "AllocationMap", "FeatureProjector", "SamplingSet", "FeatureVector",

    # Controller models
    "ManipProjection", "ControllerState", "JacobianMatrix", "TickTelemetry", "GainPreset",
    "GAIN_PRESETS",

    # Plant, scenario and run models
    "PlantShape", "PlantModel", "SamplingMode", "PlantObservation", "DesiredDeformation",
    "BaseMeshMode", "EventAction", "SamplingEvent", "Scenario",
    "RunStatus", "ControllerKind", "TickRow", "RunRecord", "RunSummary",

    # API models
    "ScenarioRunRequest", "ShippedRunRequest", "ScenarioRunResponse", "ScenarioListResponse",
    "EllipsoidMeshRequest", "EllipsoidMeshResponse", "ModesRequest", "ModesResponse",
]
