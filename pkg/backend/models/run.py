"""
Run record models: per-tick telemetry rows, run status and summaries.
"""

from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class RunStatus(str, Enum):
    """How a run ended."""
    CONVERGED = "converged"
    STALLED = "stalled"
    MAX_TICKS = "max_ticks"


class ControllerKind(str, Enum):
    """Controller that produced a record."""
    MODAL = "modal"
    BASELINE = "baseline"


class TickRow(BaseModel):
    """One control tick."""
    tick: int
    t: float
    e_s_norm: float
    e_x: float
    e_d: List[float]
    e_d_norm: float
    v: List[float]
    theta_min: Optional[float] = None
    theta_mean: Optional[float] = None
    theta_max: Optional[float] = None
    lyapunov: Optional[float] = None
    jte_norm: Optional[float] = None
    point_error: float
    active_samples: int


class RunRecord(BaseModel):
    """All rows of a run plus the data needed to interpret them."""
    scenario: str
    controller: ControllerKind = ControllerKind.MODAL
    unit: str = "voxel"
    k: int = Field(..., ge=1)
    m: int = Field(..., ge=1)
    status: RunStatus = RunStatus.MAX_TICKS
    rows: List[TickRow] = Field(default_factory=list)
    s_star: List[float] = Field(default_factory=list)
    diagnostics: Dict[str, Any] = Field(default_factory=dict)


class RunSummary(BaseModel):
    """Headline numbers of a run."""
    scenario: str
    controller: ControllerKind
    status: RunStatus
    ticks: int
    initial_e_s_norm: Optional[float] = None
    final_e_s_norm: Optional[float] = None
    final_e_x: Optional[float] = None
    initial_e_d_norm: Optional[float] = None
    final_e_d_norm: Optional[float] = None
    steady_state_e_d_max: Optional[float] = None
    final_point_error: Optional[float] = None
    steady_state_point_error: Optional[float] = None
    ticks_to_threshold: Optional[int] = None
    jte_ratio: Optional[float] = None
    max_lyapunov: Optional[float] = None
    monotone_tail: bool = True


class ControllerComparison(BaseModel):
    """Modal and baseline summaries of one scenario run under a shared stop rule."""
    scenario: str
    stop_rule: str
    max_ticks: int
    modal: RunSummary
    baseline: RunSummary

    @property
    def modal_point_error_ratio(self) -> Optional[float]:
        """Modal over baseline steady-state point error."""
        modal, baseline = self.modal.steady_state_point_error, self.baseline.steady_state_point_error
        if modal is None or not baseline:
            return None
        return modal / baseline
