"""
Plant models: observations, desired deformations and sampling settings.
"""

from enum import Enum

from pydantic import BaseModel, ConfigDict

from .arrays import FloatArray, IndexArray


class PlantShape(str, Enum):
    """Shipped plant geometries."""
    BAR = "bar"
    ELLIPSOID = "ellipsoid"
    BLOB = "blob"
    FILE = "file"


class PlantModel(str, Enum):
    """Elasticity model of the plant."""
    LINEAR = "linear"
    COROTATIONAL = "corotational"


class SamplingMode(str, Enum):
    """How sample points are read from the plant state."""
    NODES = "nodes"
    CONTOUR_ARCLENGTH = "contour_arclength"
    CONTOUR_FIXED_LEVEL = "contour_fixed_y"


class PlantObservation(BaseModel):
    """Immutable snapshot of the plant after a step."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    sample_positions: FloatArray
    sample_ids: IndexArray
    manip_positions: FloatArray
    full_state: FloatArray


class DesiredDeformation(BaseModel):
    """Target state recorded by a desired-deformation run."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    full_state: FloatArray
    sample_positions: FloatArray
    sample_ids: IndexArray
    manip_positions: FloatArray
    manip_displacement: FloatArray
