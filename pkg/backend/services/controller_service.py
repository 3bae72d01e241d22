"""
Adaptive deformation controller service.
Manipulation projection G, parameterized Jacobian diag(theta_hat) G, the
transpose control law and the online modal-parameter update.
"""

import logging
from typing import Optional, Tuple, Union

import numpy as np

from models.controller import ControllerState, JacobianMatrix, ManipProjection, TickTelemetry
from models.features import FeatureVector
from models.mesh import SolidMesh
from models.modal import ModalBasis
from services.exceptions import InvalidInputError, InvalidRequestError, NumericError
from services.mapping_service import build_allocation, project_points
from services.modal_service import rectified_projection

logger = logging.getLogger(__name__)


def build_manip_projection(basis: ModalBasis, mesh: SolidMesh, manip_rest_points) -> ManipProjection:
    """G = (K_tilde + I6)^-1 [Phi_n]_r^T N_r^T for the grasped points."""
    points = np.asarray(manip_rest_points, dtype=float).reshape(-1, 3)
    k = points.shape[0]
    if k == 0:
        raise InvalidRequestError("At least one manipulation point is required")
    if 3 * k > basis.m:
        raise InvalidRequestError(f"{k} manipulation points need at least {3 * k} modes, basis has {basis.m}")
    alloc = build_allocation(mesh, project_points(mesh, points), basis)
    d_phi = rectified_projection(basis, alloc.node_ids)
    g = np.asarray((alloc.n_sparse @ d_phi.T).T)
    return ManipProjection(g=g, rest_eta_r=alloc.rest_eta, node_ids=alloc.node_ids)


def jacobian(mp: ManipProjection, state: ControllerState) -> JacobianMatrix:
    """J = diag(theta_hat) G, row by row."""
    if state.m != mp.m:
        raise InvalidInputError(f"theta_hat has {state.m} entries, G has {mp.m} rows")
    return JacobianMatrix(j=state.theta_hat[:, None] * mp.g)


def _values(e_s: Union[FeatureVector, np.ndarray]) -> np.ndarray:
    return e_s.values if isinstance(e_s, FeatureVector) else np.asarray(e_s, dtype=float)


def control_command(J: JacobianMatrix, e_s: Union[FeatureVector, np.ndarray], state: ControllerState) -> np.ndarray:
    """v = -K_s J^T e_s, clamped per axis when a speed limit is configured."""
    e = _values(e_s)
    if not (np.all(np.isfinite(e)) and np.all(np.isfinite(J.j))):
        raise NumericError("Non-finite input to the control law", diagnostics={"e_s": e.tolist()})
    v = -state.ks @ (J.j.T @ e)
    if state.speed_limit is not None:
        v = np.clip(v, -state.speed_limit, state.speed_limit)
    return v


def regression_matrix(
    mp: ManipProjection, J: JacobianMatrix, e_s: Union[FeatureVector, np.ndarray], state: ControllerState
) -> np.ndarray:
    """Y = diag(G K_s J^T e_s), so that Y (theta_hat - theta) = (J(theta_hat) - J(theta)) K_s J^T e_s."""
    e = _values(e_s)
    return np.diag(mp.g @ (state.ks @ (J.j.T @ e)))


def update_parameters(state: ControllerState, Y: np.ndarray, e_s: Union[FeatureVector, np.ndarray]) -> np.ndarray:
    """Explicit Euler step theta_hat - dt Gamma^-1 Y^T e_s."""
    e = _values(e_s)
    theta = state.theta_hat - (state.dt / state.gamma) * (Y.T @ e)
    if not np.all(np.isfinite(theta)):
        raise NumericError(
            "Parameter update produced non-finite values",
            diagnostics={"theta_hat": state.theta_hat.tolist(), "e_s_norm": float(np.linalg.norm(e))},
        )
    if state.theta_bounds is not None:
        theta = np.clip(theta, *state.theta_bounds)
    return theta


def lyapunov_decrement(J: JacobianMatrix, e_s: Union[FeatureVector, np.ndarray], state: ControllerState) -> float:
    """-e_s^T J K_s J^T e_s, never positive."""
    jte = J.j.T @ _values(e_s)
    return float(-(jte @ (state.ks @ jte)))


def init_controller_state(
    m: int,
    k: int,
    ks: Union[float, np.ndarray],
    gamma: float,
    dt: float,
    speed_limit: Optional[float] = None,
    theta_bounds: Optional[Tuple[float, float]] = None,
) -> ControllerState:
    """theta_hat(t0) = ones; a scalar K_s means K_s * I."""
    gain = np.asarray(ks, dtype=float)
    if gain.ndim == 0:
        gain = float(gain) * np.eye(3 * k)
    if gain.shape != (3 * k, 3 * k):
        raise InvalidRequestError(f"K_s must be {3 * k}x{3 * k}, got {gain.shape}")
    return ControllerState(
        theta_hat=np.ones(m), ks=gain, gamma=gamma, dt=dt,
        speed_limit=speed_limit, theta_bounds=theta_bounds,
    )


class AdaptiveDeformationController:
    """One control tick: update theta_hat, rebuild J, emit the command."""

    def __init__(self, manip: ManipProjection, state: ControllerState):
        if state.m != manip.m or state.ks.shape[0] != 3 * manip.k:
            raise InvalidRequestError(
                f"Controller state (m={state.m}, 3k={state.ks.shape[0]}) does not match "
                f"G ({manip.m}x{3 * manip.k})"
            )
        self.manip = manip
        self.state = state

    @property
    def theta_hat(self) -> np.ndarray:
        return self.state.theta_hat

    def step(self, e_s: FeatureVector) -> TickTelemetry:
        current = jacobian(self.manip, self.state)
        Y = regression_matrix(self.manip, current, e_s, self.state)
        self.state.theta_hat = update_parameters(self.state, Y, e_s)

        J = jacobian(self.manip, self.state)
        v = control_command(J, e_s, self.state)
        jte = J.j.T @ e_s.values
        return TickTelemetry(
            e_s=e_s.values,
            e_s_norm=e_s.norm(),
            theta_hat=self.state.theta_hat,
            v=v,
            lyapunov=lyapunov_decrement(J, e_s, self.state),
            jte_norm=float(np.linalg.norm(jte)),
        )
