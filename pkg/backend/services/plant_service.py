"""
Quasi-static FEM plant service.
Ground-truth deformable object: Dirichlet-constrained linear (or co-rotational)
tetrahedral elasticity driven by prescribed manipulation-node displacements.
"""

import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg, splu

from models.mesh import MaterialParams, SolidMesh
from models.plant import DesiredDeformation, PlantModel, PlantObservation, SamplingMode
from services.exceptions import ConfigurationError, InvalidInputError, NumericError
from services.feature_service import resample_polyline, sample_at_levels
from services.fem_service import assemble_system, element_dofs, element_stiffness, scatter
from services.modal_service import node_dofs

logger = logging.getLogger(__name__)

COROTATIONAL_MAX_ITERATIONS = 20
COROTATIONAL_TOLERANCE = 1e-10
WARPED_CG_TOLERANCE = 1e-12
WARPED_CG_MAX_ITERATIONS = 50


class SampleObserver:
    """Reads sample positions from the plant state.

    In ``nodes`` mode ids are mesh node ids. In the contour modes ids are slot
    indices 0..contour_samples-1 along the ordered contour chain.

    Fixed-level contours can jitter: ``advance`` shifts every level by one seeded
    uniform offset of up to ``jitter`` level spacings, so the slot a level lands on
    drifts along the material from tick to tick.
    """

    def __init__(
        self,
        mode: SamplingMode,
        rest_nodes: np.ndarray,
        sample_ids: Optional[Sequence[int]] = None,
        contour_ids: Optional[Sequence[int]] = None,
        contour_samples: int = 16,
        axis: int = 1,
        jitter: float = 0.0,
        seed: Optional[Union[int, Sequence[int]]] = None,
    ):
        self.mode = SamplingMode(mode)
        n_nodes = rest_nodes.shape[0]
        self.axis = axis
        self.levels: Optional[np.ndarray] = None
        self.phase = 0.0
        self.spacing = 0.0
        if not 0.0 <= jitter < 0.5:
            raise ConfigurationError(f"Level jitter must lie in [0, 0.5), got {jitter}")
        self.jitter = jitter
        self.rng = np.random.default_rng(seed)

        if self.mode == SamplingMode.NODES:
            if not sample_ids:
                raise ConfigurationError("Node sampling needs sample ids")
            self.ids = np.asarray(sample_ids, dtype=np.int64)
            self._check_nodes(self.ids, n_nodes, "sample")
            if np.unique(self.ids).size != self.ids.size:
                raise ConfigurationError("Sample ids must be unique")
        else:
            if contour_ids is None or len(contour_ids) < 2:
                raise ConfigurationError("Contour sampling needs an ordered chain of at least 2 nodes")
            if contour_samples < 2:
                raise ConfigurationError(f"contour_samples must be >= 2, got {contour_samples}")
            self.contour = np.asarray(contour_ids, dtype=np.int64)
            self._check_nodes(self.contour, n_nodes, "contour")
            self.ids = np.arange(contour_samples, dtype=np.int64)
            if self.mode == SamplingMode.CONTOUR_FIXED_LEVEL:
                rest = resample_polyline(rest_nodes[self.contour], contour_samples).reshape(-1, 3)
                self.levels = rest[:, axis].copy()
                self.spacing = float(np.abs(np.diff(self.levels)).mean())
        if self.jitter and self.levels is None:
            raise ConfigurationError("Level jitter needs contour_fixed_y sampling")
        self.active = np.ones(self.ids.size, dtype=bool)

    @staticmethod
    def _check_nodes(ids: np.ndarray, n_nodes: int, role: str):
        if ids.size and (ids.min() < 0 or ids.max() >= n_nodes):
            raise ConfigurationError(f"{role} node ids must lie in [0, {n_nodes})")

    @property
    def active_ids(self) -> np.ndarray:
        return self.ids[self.active]

    def _slots(self, ids: Sequence[int]) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        missing = np.setdiff1d(ids, self.ids)
        if missing.size:
            raise ConfigurationError(f"Unknown sample ids {missing.tolist()}")
        return np.flatnonzero(np.isin(self.ids, ids))

    def remove(self, ids: Sequence[int]):
        self.active[self._slots(ids)] = False

    def restore(self, ids: Sequence[int]):
        self.active[self._slots(ids)] = True

    def reseed(self, seed: Optional[Union[int, Sequence[int]]]):
        self.rng = np.random.default_rng(seed)
        self.phase = 0.0

    def advance(self) -> float:
        """Draw the level offset for the next read; zero without jitter."""
        if self.jitter:
            self.phase = float(self.rng.uniform(-self.jitter, self.jitter)) * self.spacing
        return self.phase

    def sample_all(self, positions: np.ndarray, nominal: bool = False) -> np.ndarray:
        """(len(ids), 3) sample positions for every id, active or not.

        ``nominal`` reads fixed levels without the current jitter offset.
        """
        if self.mode == SamplingMode.NODES:
            return positions[self.ids]
        chain = positions[self.contour]
        if self.mode == SamplingMode.CONTOUR_ARCLENGTH:
            return resample_polyline(chain, self.ids.size).reshape(-1, 3)
        levels = self.levels if nominal else self.levels + self.phase
        return sample_at_levels(chain, levels, self.axis).reshape(-1, 3)

    def sample(self, positions: np.ndarray, nominal: bool = False) -> Tuple[np.ndarray, np.ndarray]:
        """Flat positions and ids of the active samples."""
        return self.sample_all(positions, nominal)[self.active].reshape(-1), self.active_ids


class QuasiStaticPlant:
    """Elastic equilibrium under fixed nodes at rest and manipulation nodes at their targets.

    The free-free block is factorized once; every linear step is a back-substitution.
    """

    def __init__(
        self,
        mesh: SolidMesh,
        material: MaterialParams,
        fixed: Sequence[int],
        manip: Sequence[int],
        observer: Optional[SampleObserver] = None,
        model: PlantModel = PlantModel.LINEAR,
    ):
        self.mesh = mesh
        self.material = material
        self.model = PlantModel(model)
        self.fixed = np.asarray(sorted(set(int(i) for i in fixed)), dtype=np.int64)
        self.manip = np.asarray(list(manip), dtype=np.int64)
        self.observer = observer
        self._validate_constraints()

        self.rest = mesh.nodes.copy()
        self.stiffness = assemble_system(mesh, material).stiffness
        self.fixed_dofs = node_dofs(self.fixed)
        self.manip_dofs = node_dofs(self.manip)
        constrained = np.zeros(mesh.n_dof, dtype=bool)
        constrained[self.fixed_dofs] = True
        constrained[self.manip_dofs] = True
        self.free_dofs = np.flatnonzero(~constrained)

        K = self.stiffness.tocsr()
        self.k_free = K[self.free_dofs][:, self.free_dofs].tocsc()
        self.k_free_manip = K[self.free_dofs][:, self.manip_dofs].tocsr()
        self.solver = self._factorize(self.k_free)

        if self.model == PlantModel.COROTATIONAL:
            coords = self.rest[mesh.tets]
            self.element_matrices = element_stiffness(coords, material)
            self.element_dofs = element_dofs(mesh.tets)
            self.rest_edges_inv = np.linalg.inv(self._edges(coords))
            self.warped_solver = None
            self.factorizations = 0

        self.displacement = np.zeros(mesh.n_dof)
        self.manip_displacement = np.zeros(self.manip_dofs.size)
        logger.info(
            f"Plant ready: {mesh.n_nodes} nodes, {self.fixed.size} fixed, {self.manip.size} manipulated, "
            f"{self.model.value} elasticity"
        )

    def _validate_constraints(self):
        n = self.mesh.n_nodes
        for role, ids in (("fixed", self.fixed), ("manipulation", self.manip)):
            if ids.size and (ids.min() < 0 or ids.max() >= n):
                raise ConfigurationError(f"{role} node ids must lie in [0, {n})")
        if self.manip.size == 0:
            raise ConfigurationError("At least one manipulation node is required")
        if np.unique(self.manip).size != self.manip.size:
            raise ConfigurationError("Manipulation node ids must be unique")
        overlap = np.intersect1d(self.fixed, self.manip)
        if overlap.size:
            raise ConfigurationError(f"Nodes {overlap.tolist()} are both fixed and manipulated")
        if self.fixed.size < 3:
            raise ConfigurationError(f"At least 3 fixed nodes are required, got {self.fixed.size}")
        anchors = self.mesh.nodes[self.fixed]
        centered = anchors - anchors.mean(axis=0)
        scale = max(float(np.abs(centered).max()), 1e-300)
        if np.linalg.matrix_rank(centered, tol=1e-9 * scale) < 2:
            raise ConfigurationError("Fixed nodes are collinear; rigid rotation about their line is unconstrained")

    @staticmethod
    def _factorize(matrix: sp.csc_matrix):
        try:
            return splu(matrix)
        except RuntimeError as e:
            raise ConfigurationError(f"Constrained stiffness is singular: {e}") from e

    @staticmethod
    def _edges(coords: np.ndarray) -> np.ndarray:
        return np.stack([coords[:, 1] - coords[:, 0], coords[:, 2] - coords[:, 0], coords[:, 3] - coords[:, 0]], axis=2)

    @property
    def k(self) -> int:
        return int(self.manip.size)

    @property
    def positions(self) -> np.ndarray:
        return self.rest + self.displacement.reshape(-1, 3)

    @property
    def full_state(self) -> np.ndarray:
        return self.positions.reshape(-1)

    @property
    def manip_positions(self) -> np.ndarray:
        return self.positions[self.manip].reshape(-1)

    def _solve_linear(self):
        u = np.zeros(self.mesh.n_dof)
        u[self.manip_dofs] = self.manip_displacement
        u[self.free_dofs] = -self.solver.solve(self.k_free_manip @ self.manip_displacement)
        self.displacement = u

    def _rotations(self, positions: np.ndarray) -> np.ndarray:
        """Per-element rotation of the polar decomposition of F = D_s D_m^-1."""
        F = self._edges(positions[self.mesh.tets]) @ self.rest_edges_inv
        U, _, Vt = np.linalg.svd(F)
        flip = np.linalg.det(U @ Vt) < 0
        U[flip, :, 2] *= -1.0
        return U @ Vt

    def _warped_solve(self, k_ff: sp.csc_matrix, b: np.ndarray, guess: np.ndarray) -> np.ndarray:
        """Free-block solve by CG preconditioned with the last factorization; refactored when CG falls short."""
        if self.warped_solver is not None:
            preconditioner = LinearOperator(k_ff.shape, matvec=self.warped_solver.solve)
            solution, info = cg(
                k_ff, b, x0=guess, rtol=WARPED_CG_TOLERANCE, atol=0.0,
                maxiter=WARPED_CG_MAX_ITERATIONS, M=preconditioner,
            )
            if info == 0:
                return solution
            logger.debug(f"Preconditioned CG stopped with info={info}; refactoring the warped stiffness")
        self.warped_solver = self._factorize(k_ff)
        self.factorizations += 1
        return self.warped_solver.solve(b)

    def _solve_corotational(self):
        n = self.mesh.n_dof
        x = self.positions.reshape(-1)
        x_c = self.rest.reshape(-1).copy()
        x_c[self.manip_dofs] += self.manip_displacement
        constrained = np.concatenate([self.fixed_dofs, self.manip_dofs])
        rest_elements = self.rest[self.mesh.tets].reshape(-1, 12)
        count = self.element_matrices.shape[0]
        blocks = self.element_matrices.reshape(count, 4, 3, 4, 3)

        for iteration in range(COROTATIONAL_MAX_ITERATIONS):
            R = self._rotations(x.reshape(-1, 3))
            warped = np.einsum("tip,tapbq,tjq->taibj", R, blocks, R).reshape(count, 12, 12)
            force = np.einsum("tij,tj->ti", self.element_matrices, rest_elements).reshape(count, 4, 3)
            force = np.einsum("tip,tap->tai", R, force).reshape(count, 12)
            K = scatter(warped, self.element_dofs, n)
            rhs = np.zeros(n)
            np.add.at(rhs, self.element_dofs.ravel(), force.ravel())

            x_new = x_c.copy()
            k_ff = K[self.free_dofs][:, self.free_dofs].tocsc()
            k_fc = K[self.free_dofs][:, constrained]
            b = rhs[self.free_dofs] - k_fc @ x_c[constrained]
            x_new[self.free_dofs] = self._warped_solve(k_ff, b, x[self.free_dofs])
            change = np.linalg.norm(x_new - x)
            x = x_new
            if change <= COROTATIONAL_TOLERANCE * (1.0 + np.linalg.norm(x)):
                break
        else:
            logger.warning(f"Co-rotational solve stopped after {COROTATIONAL_MAX_ITERATIONS} iterations")
        self.displacement = x - self.rest.reshape(-1)

    def _solve(self):
        if self.model == PlantModel.COROTATIONAL:
            self._solve_corotational()
        else:
            self._solve_linear()
        if not np.all(np.isfinite(self.displacement)):
            raise NumericError("Plant state became non-finite")

    def move_to(self, manip_displacement: np.ndarray) -> PlantObservation:
        """Place the manipulation nodes at rest + displacement and re-equilibrate."""
        target = np.asarray(manip_displacement, dtype=float).reshape(-1)
        if target.size != self.manip_dofs.size:
            raise InvalidInputError(f"Expected {self.manip_dofs.size} displacement components, got {target.size}")
        self.manip_displacement = target.copy()
        self._solve()
        return self.observe()

    def step(self, v: np.ndarray, dt: float) -> PlantObservation:
        """Advance manipulation targets by v*dt; a zero command leaves the state untouched."""
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.size != self.manip_dofs.size:
            raise InvalidInputError(f"Expected a {self.manip_dofs.size}-vector command, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise NumericError("Non-finite velocity command", diagnostics={"v": v.tolist()})
        if np.any(v != 0.0):
            self.manip_displacement = self.manip_displacement + v * dt
            self._solve()
        return self.observe()

    def observe(self) -> PlantObservation:
        positions = self.positions
        if self.observer is not None:
            samples, ids = self.observer.sample(positions)
        else:
            samples, ids = np.zeros(0), np.zeros(0, dtype=np.int64)
        return PlantObservation(
            sample_positions=samples,
            sample_ids=ids,
            manip_positions=positions[self.manip].reshape(-1),
            full_state=positions.reshape(-1),
        )

    def reset(self):
        self.displacement = np.zeros(self.mesh.n_dof)
        self.manip_displacement = np.zeros(self.manip_dofs.size)

    def probe_jacobian(self, step: float) -> np.ndarray:
        """Central-difference sensitivity of every sample position (active or not) to the manipulation targets."""
        if self.observer is None:
            raise ConfigurationError("Probing needs a sample observer")
        if step <= 0:
            raise InvalidInputError(f"Probe step must be positive, got {step}")
        saved_u, saved_target = self.displacement.copy(), self.manip_displacement.copy()
        columns: List[np.ndarray] = []
        for i in range(saved_target.size):
            offset = np.zeros_like(saved_target)
            offset[i] = step
            self.move_to(saved_target + offset)
            plus = self.observer.sample_all(self.positions, nominal=True).reshape(-1)
            self.move_to(saved_target - offset)
            minus = self.observer.sample_all(self.positions, nominal=True).reshape(-1)
            columns.append((plus - minus) / (2.0 * step))
        self.displacement, self.manip_displacement = saved_u, saved_target
        return np.column_stack(columns)

    def elastic_energy(self) -> float:
        u = self.displacement
        return float(0.5 * u @ (self.stiffness @ u))


def plant_metrics(plant: QuasiStaticPlant, desired_full_state, desired_manip) -> Tuple[float, np.ndarray]:
    """(e_x, e_d): total squared nodal error and manipulation-point error."""
    desired_full_state = np.asarray(desired_full_state, dtype=float).reshape(-1)
    desired_manip = np.asarray(desired_manip, dtype=float).reshape(-1)
    state = plant.full_state
    if desired_full_state.size != state.size or desired_manip.size != plant.manip_dofs.size:
        raise InvalidInputError(
            f"Desired state sizes ({desired_full_state.size}, {desired_manip.size}) do not match the plant "
            f"({state.size}, {plant.manip_dofs.size})"
        )
    diff = state - desired_full_state
    return float(diff @ diff), plant.manip_positions - desired_manip


def generate_desired(plant: QuasiStaticPlant, manip_displacement, steps: int = 10) -> DesiredDeformation:
    """Ramp the manipulation nodes to the target, record the result, then reset the plant."""
    target = np.asarray(manip_displacement, dtype=float).reshape(-1)
    if steps < 1:
        raise InvalidInputError(f"Ramp needs at least one step, got {steps}")
    if target.size != plant.manip_dofs.size:
        raise InvalidInputError(f"Expected {plant.manip_dofs.size} displacement components, got {target.size}")
    plant.reset()
    for s in range(1, steps + 1):
        plant.move_to(target * (s / steps))
    positions = plant.positions
    if plant.observer is not None:
        samples = plant.observer.sample_all(positions, nominal=True).reshape(-1)
        ids = plant.observer.ids
    else:
        samples, ids = np.zeros(0), np.zeros(0, dtype=np.int64)
    desired = DesiredDeformation(
        full_state=positions.reshape(-1),
        sample_positions=samples,
        sample_ids=ids,
        manip_positions=positions[plant.manip].reshape(-1),
        manip_displacement=target,
    )
    plant.reset()
    logger.info(f"Desired deformation recorded over {steps} ramp steps")
    return desired
