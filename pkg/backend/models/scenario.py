"""
Scenario model for the Modal Deformation Control platform.
One scenario describes a plant, a base mesh, gains, a desired deformation and stop rules.
"""

from enum import Enum
from pathlib import Path
from typing import List, Optional, Tuple

from pydantic import BaseModel, Field, model_validator

from .controller import GAIN_PRESETS
from .plant import PlantModel, PlantShape, SamplingMode

Vector3 = Tuple[float, float, float]


class BaseMeshMode(str, Enum):
    """Where the base-mesh ellipsoid comes from."""
    GIVEN = "given"
    ESTIMATE = "estimate"
    MOMENTS = "moments"


class EventAction(str, Enum):
    """Sampling event kinds."""
    REMOVE = "remove"
    RESTORE = "restore"


class StopRule(str, Enum):
    """What ends a run early.

    ``features`` stops each controller on its own error (modal: ||e_s||, baseline:
    sample points), ``target`` stops both on the manipulation-target distance, and
    ``horizon`` runs the full tick budget.
    """
    FEATURES = "features"
    TARGET = "target"
    HORIZON = "horizon"


class SamplingEvent(BaseModel):
    """Remove or restore sample ids at a given tick."""
    tick: int = Field(..., ge=0)
    action: EventAction
    ids: List[int] = Field(..., min_length=1)


class Scenario(BaseModel):
    """Complete description of one control run."""
    name: str = Field(..., min_length=1, max_length=200)
    description: str = ""
    family: str = "default"
    unit: str = "voxel"

    # Plant
    plant_shape: PlantShape = PlantShape.BAR
    plant_mesh: Optional[Path] = None
    plant_size: Vector3 = (10.0, 3.0, 2.0)
    plant_cells: Tuple[int, int, int] = (10, 3, 2)
    plant_origin: Vector3 = (0.0, 0.0, 0.0)
    plant_blob_amplitude: float = Field(default=0.2, ge=0, lt=0.5)
    plant_young: float = Field(default=100.0, gt=0)
    plant_poisson: float = Field(default=0.49, gt=0, lt=0.5)
    plant_mass: float = Field(default=100.0, gt=0)
    plant_model: PlantModel = PlantModel.LINEAR
    fixed_nodes: List[int] = Field(..., min_length=1)
    manip_nodes: List[int] = Field(..., min_length=1)

    # Sampling
    sampling: SamplingMode = SamplingMode.NODES
    sample_nodes: List[int] = Field(default_factory=list)
    sample_surface: bool = False
    contour_nodes: List[int] = Field(default_factory=list)
    contour_samples: int = Field(default=0, ge=0)
    contour_axis: int = Field(default=1, ge=0, le=2)
    contour_jitter: float = Field(default=0.0, ge=0, lt=0.5)

    # Base mesh
    base_mesh: BaseMeshMode = BaseMeshMode.GIVEN
    base_axes: Vector3 = (5.5, 2.0, 1.5)
    base_center: Vector3 = (5.0, 1.5, 1.0)
    base_rotation_deg: Vector3 = (0.0, 0.0, 0.0)
    base_resolution: Tuple[int, int, int] = (8, 16, 2)
    base_az: float = Field(default=1.0, gt=0)
    base_min_axis: float = Field(default=0.5, gt=0)
    base_pose_rotation_deg: Vector3 = (0.0, 0.0, 0.0)
    base_pose_offset: Vector3 = (0.0, 0.0, 0.0)
    base_young: float = Field(default=1e5, gt=0)
    base_poisson: float = Field(default=0.45, gt=0, lt=0.5)
    base_mass: float = Field(default=1000.0, gt=0)
    modes: int = Field(default=30, ge=1)

    # Gains
    gain_preset: str = "simulation"
    gain_ks: Optional[float] = Field(default=None, gt=0)
    gain_gamma: Optional[float] = Field(default=None, gt=0)
    rate_hz: Optional[float] = Field(default=None, gt=0)
    speed_limit: Optional[float] = Field(default=None, gt=0)
    theta_min: Optional[float] = None
    theta_max: Optional[float] = None

    # Desired deformation
    desired_displacement: List[float] = Field(..., min_length=3)
    desired_manip_nodes: Optional[List[int]] = None
    desired_steps: int = Field(default=10, ge=1)

    # Events, stop rules and noise
    events: List[SamplingEvent] = Field(default_factory=list)
    max_ticks: int = Field(default=20000, ge=1)
    stop_ratio: float = Field(default=1e-3, gt=0, lt=1)
    stop_rule: StopRule = StopRule.FEATURES
    target_tolerance: float = Field(default=0.05, gt=0, lt=1)
    stall_window: int = Field(default=200, ge=1)
    stall_ratio: float = Field(default=1e-9, ge=0)
    noise_std: float = Field(default=0.0, ge=0)
    seed: int = 0

    # Point-based baseline
    baseline_gain: Optional[float] = Field(default=None, gt=0)
    baseline_probe: float = Field(default=0.05, gt=0)
    baseline_damping: float = Field(default=1e-6, ge=0)

    @model_validator(mode="after")
    def _check_consistency(self):
        if set(self.fixed_nodes) & set(self.manip_nodes):
            raise ValueError("fixed_nodes and manip_nodes must be disjoint")
        generating = self.desired_manip_nodes or self.manip_nodes
        if len(self.desired_displacement) != 3 * len(generating):
            raise ValueError("desired_displacement needs three values per manipulation node")
        if 3 * len(self.manip_nodes) > self.modes:
            raise ValueError("3k must not exceed the number of modes")
        if self.plant_shape == PlantShape.FILE and self.plant_mesh is None:
            raise ValueError("plant_mesh is required when plant_shape=file")
        if self.gain_preset not in GAIN_PRESETS:
            raise ValueError(f"unknown gain_preset '{self.gain_preset}'")
        if self.sampling == SamplingMode.NODES:
            if not self.sample_surface and not self.sample_nodes:
                raise ValueError("sample_nodes is required for node sampling")
        else:
            if len(self.contour_nodes) < 2 or self.contour_samples < 2:
                raise ValueError("contour sampling needs >= 2 contour_nodes and contour_samples >= 2")
        if self.contour_jitter and self.sampling != SamplingMode.CONTOUR_FIXED_LEVEL:
            raise ValueError("contour_jitter applies to contour_fixed_y sampling only")
        planned = self.planned_sample_count
        if planned is not None and self.modes > 3 * planned:
            raise ValueError("modes must not exceed 3 x sample count")
        if self.theta_min is not None and self.theta_max is not None and self.theta_min > self.theta_max:
            raise ValueError("theta_min must not exceed theta_max")
        return self

    @property
    def planned_sample_count(self) -> Optional[int]:
        """Sample count known before the plant mesh is built."""
        if self.sampling != SamplingMode.NODES:
            return self.contour_samples
        if self.sample_surface:
            return None
        return len(self.sample_nodes)

    @property
    def ks(self) -> float:
        return self.gain_ks if self.gain_ks is not None else GAIN_PRESETS[self.gain_preset].ks

    @property
    def gamma(self) -> float:
        return self.gain_gamma if self.gain_gamma is not None else GAIN_PRESETS[self.gain_preset].gamma

    @property
    def dt(self) -> float:
        rate = self.rate_hz if self.rate_hz is not None else GAIN_PRESETS[self.gain_preset].rate_hz
        return 1.0 / rate

    @property
    def theta_bounds(self) -> Optional[Tuple[float, float]]:
        if self.theta_min is None and self.theta_max is None:
            return None
        low = self.theta_min if self.theta_min is not None else float("-inf")
        high = self.theta_max if self.theta_max is not None else float("inf")
        return (low, high)
