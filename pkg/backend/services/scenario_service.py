"""
Scenario service.
Loads scenario files, prepares plant, base mesh and projectors, and runs the
adaptive modal controller tick by tick against the quasi-static plant.
"""

import asyncio
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from dotenv import dotenv_values
from pydantic import ValidationError

from config import Settings, get_settings
from database.modal_cache import ModalCache, get_modal_cache
from models.controller import ManipProjection
from models.features import FeatureVector, SamplingSet
from models.mapping import FeatureProjector
from models.mesh import EllipsoidSpec, MaterialParams, MeshResolution, SolidMesh
from models.modal import ModalBasis
from models.plant import DesiredDeformation, PlantShape, SamplingMode
from models.run import ControllerKind, RunRecord, RunStatus, TickRow
from models.scenario import BaseMeshMode, EventAction, SamplingEvent, Scenario, StopRule
from services.controller_service import (
    AdaptiveDeformationController,
    build_manip_projection,
    init_controller_state,
)
from services.exceptions import ConfigurationError, DeformationControlError, ScenarioRunError
from services.export_service import STEADY_STATE_FRACTION, export_csv, summarize
from services.feature_service import MeasurementNoise, compute_features, feature_error
from services.mapping_service import reassemble_on_sampling_change
from services.mesh_service import (
    estimate_base_mesh_frame,
    estimate_base_mesh_moments,
    euler_rotation,
    generate_bar_mesh,
    generate_blob_mesh,
    generate_ellipsoid_mesh,
    make_ellipsoid_spec,
    perturb_pose,
    place_mesh,
    read_mesh,
)
from services.plant_service import QuasiStaticPlant, SampleObserver, generate_desired, plant_metrics

logger = logging.getLogger(__name__)

SCENARIO_SUFFIX = ".scn"
LEVEL_JITTER_STREAM = 1

LIST_KEYS = {
    "fixed_nodes", "manip_nodes", "sample_nodes", "contour_nodes", "desired_displacement",
    "desired_manip_nodes", "plant_size", "plant_cells", "plant_origin", "base_axes", "base_center",
    "base_rotation_deg", "base_resolution", "base_pose_rotation_deg", "base_pose_offset",
}


def _split_list(key: str, raw: str) -> List[str]:
    items = []
    for part in (p.strip() for p in raw.split(",")):
        if not part:
            continue
        if ".." in part:
            low, high = part.split("..", 1)
            try:
                items.extend(str(i) for i in range(int(low), int(high) + 1))
            except ValueError:
                raise ConfigurationError(f"Bad range '{part}' in {key}")
        else:
            items.append(part)
    return items


def parse_events(raw: str) -> List[SamplingEvent]:
    """``tick:action:id|id;tick:action:id`` into sampling events."""
    events = []
    for chunk in (c.strip() for c in raw.split(";")):
        if not chunk:
            continue
        try:
            tick, action, ids = chunk.split(":")
            events.append(SamplingEvent(
                tick=int(tick), action=EventAction(action.strip()),
                ids=[int(i) for i in ids.split("|") if i.strip()],
            ))
        except (ValueError, ValidationError) as e:
            raise ConfigurationError(f"Bad event '{chunk}': {e}") from e
    return sorted(events, key=lambda event: event.tick)


def parse_scenario(values: Dict[str, Optional[str]], name: str, base_dir: Optional[Path] = None) -> Scenario:
    """Validate flat key=value pairs into a Scenario."""
    data: Dict[str, Any] = {"name": name}
    for key, raw in values.items():
        key = key.strip().lower()
        if raw is None or raw.strip() == "":
            continue
        raw = raw.strip()
        if key == "events":
            data["events"] = parse_events(raw)
        elif key == "sample_nodes" and raw.lower() == "surface":
            data["sample_surface"] = True
        elif key in LIST_KEYS:
            data[key] = _split_list(key, raw)
        else:
            data[key] = raw
    if "plant_mesh" in data and base_dir is not None:
        mesh_path = Path(data["plant_mesh"])
        data["plant_mesh"] = mesh_path if mesh_path.is_absolute() else base_dir / mesh_path
    try:
        return Scenario(**data)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid scenario '{name}': {e}") from e


def load_scenario(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"Scenario file not found: {path}")
    values = dotenv_values(path, interpolate=False)
    return parse_scenario(values, name=values.get("name") or path.stem, base_dir=path.parent)


def list_scenarios(directory: Union[str, Path]) -> List[Path]:
    return sorted(Path(directory).glob(f"*{SCENARIO_SUFFIX}"))


def build_plant_mesh(scenario: Scenario) -> SolidMesh:
    """Plant geometry in the world frame."""
    if scenario.plant_shape == PlantShape.BAR:
        return generate_bar_mesh(scenario.plant_size, scenario.plant_cells, scenario.plant_origin)
    if scenario.plant_shape == PlantShape.FILE:
        return read_mesh(scenario.plant_mesh)

    size = np.asarray(scenario.plant_size, dtype=float)
    n_lat, n_lon, n_radial = scenario.plant_cells
    spec = make_ellipsoid_spec(
        size / 2.0, np.asarray(scenario.plant_origin) + size / 2.0,
        resolution=MeshResolution(n_lat=n_lat, n_lon=n_lon, n_radial=n_radial),
    )
    if scenario.plant_shape == PlantShape.BLOB:
        return place_mesh(generate_blob_mesh(spec, scenario.plant_blob_amplitude), spec)
    return place_mesh(generate_ellipsoid_mesh(spec), spec)


def build_observer(scenario: Scenario, mesh: SolidMesh) -> SampleObserver:
    if scenario.sampling == SamplingMode.NODES:
        excluded = set(scenario.fixed_nodes) | set(scenario.manip_nodes)
        if scenario.sample_surface:
            ids = [int(i) for i in mesh.surface_node_ids if int(i) not in excluded]
        else:
            ids = scenario.sample_nodes
        return SampleObserver(SamplingMode.NODES, mesh.nodes, sample_ids=ids)
    return SampleObserver(
        scenario.sampling, mesh.nodes,
        contour_ids=scenario.contour_nodes,
        contour_samples=scenario.contour_samples,
        axis=scenario.contour_axis,
        jitter=scenario.contour_jitter,
        seed=level_seed(scenario.seed),
    )


def build_base_spec(scenario: Scenario, plant: QuasiStaticPlant) -> EllipsoidSpec:
    """Base-mesh ellipsoid: given, estimated from rest samples, or from surface moments; then pose error."""
    resolution = MeshResolution(
        n_lat=scenario.base_resolution[0], n_lon=scenario.base_resolution[1], n_radial=scenario.base_resolution[2]
    )
    if scenario.base_mesh == BaseMeshMode.GIVEN:
        spec = make_ellipsoid_spec(
            scenario.base_axes, scenario.base_center, euler_rotation(scenario.base_rotation_deg), resolution
        )
    elif scenario.base_mesh == BaseMeshMode.ESTIMATE:
        rest_samples = plant.observer.sample_all(plant.rest)
        spec = estimate_base_mesh_frame(
            rest_samples, euler_rotation(scenario.base_rotation_deg), scenario.base_az, resolution
        )
    else:
        surface = plant.rest[plant.mesh.surface_node_ids]
        spec = estimate_base_mesh_moments(surface, scenario.base_min_axis, "surface", resolution)
    return perturb_pose(spec, scenario.base_pose_rotation_deg, scenario.base_pose_offset)


@dataclass
class RunContext:
    """Everything a control loop needs, in the world frame (plant) and base frame (features)."""
    scenario: Scenario
    settings: Settings
    plant: QuasiStaticPlant
    desired: DesiredDeformation
    spec: EllipsoidSpec
    base_mesh: SolidMesh
    basis: ModalBasis
    manip: ManipProjection
    projector: Optional[FeatureProjector] = None
    s_star: Optional[FeatureVector] = None
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    @property
    def observer(self) -> SampleObserver:
        return self.plant.observer

    def desired_samples(self, ids: Optional[np.ndarray] = None) -> np.ndarray:
        """Desired world positions (flat) of the given (default: active) sample ids."""
        ids = self.observer.active_ids if ids is None else ids
        table = self.desired.sample_positions.reshape(-1, 3)
        return table[np.isin(self.desired.sample_ids, ids)].reshape(-1)

    def to_base(self, flat_positions: np.ndarray) -> np.ndarray:
        return self.spec.world_to_base(flat_positions.reshape(-1, 3)).reshape(-1)

    def refresh_projector(self):
        """Re-assemble the projector for the active samples and recompute s*."""
        ids = self.observer.active_ids
        rest = self.observer.sample_all(self.plant.rest, nominal=True)[self.observer.active]
        self.projector = reassemble_on_sampling_change(
            self.basis, self.base_mesh, self.spec.world_to_base(rest), sample_ids=ids, settings=self.settings
        )
        self.s_star = compute_features(
            self.projector, SamplingSet(positions=self.to_base(self.desired_samples(ids)), ids=ids)
        )

    def apply_events(self, tick: int) -> bool:
        fired = [event for event in self.scenario.events if event.tick == tick]
        for event in fired:
            if event.action == EventAction.REMOVE:
                self.observer.remove(event.ids)
            else:
                self.observer.restore(event.ids)
            logger.info(f"Tick {tick}: {event.action.value} samples {event.ids}")
        if fired:
            self.refresh_projector()
        return bool(fired)


def _desired_for(scenario: Scenario, mesh: SolidMesh, plant: QuasiStaticPlant) -> DesiredDeformation:
    if not scenario.desired_manip_nodes or list(scenario.desired_manip_nodes) == list(scenario.manip_nodes):
        return generate_desired(plant, scenario.desired_displacement, scenario.desired_steps)
    generator = QuasiStaticPlant(
        mesh, plant.material, scenario.fixed_nodes, scenario.desired_manip_nodes,
        observer=plant.observer, model=plant.model,
    )
    desired = generate_desired(generator, scenario.desired_displacement, scenario.desired_steps)
    control_manip = desired.full_state.reshape(-1, 3)[plant.manip].reshape(-1)
    return desired.model_copy(update={"manip_positions": control_manip})


def prepare_run(
    scenario: Scenario,
    settings: Optional[Settings] = None,
    cache: Optional[ModalCache] = None,
) -> RunContext:
    """Desired deformation, base mesh, modal basis, projectors and s* for a scenario."""
    settings = settings or get_settings()
    cache = cache or get_modal_cache()

    mesh = build_plant_mesh(scenario)
    material = MaterialParams(
        young_modulus=scenario.plant_young, poisson_ratio=scenario.plant_poisson, total_mass=scenario.plant_mass
    )
    observer = build_observer(scenario, mesh)
    plant = QuasiStaticPlant(
        mesh, material, scenario.fixed_nodes, scenario.manip_nodes, observer=observer, model=scenario.plant_model
    )
    if 3 * observer.ids.size < scenario.modes:
        raise ConfigurationError(f"{observer.ids.size} samples cannot support {scenario.modes} modes")
    desired = _desired_for(scenario, mesh, plant)

    spec = build_base_spec(scenario, plant)
    base_mesh = generate_ellipsoid_mesh(spec)
    base_material = MaterialParams(
        young_modulus=scenario.base_young, poisson_ratio=scenario.base_poisson, total_mass=scenario.base_mass
    )
    hits = cache.hits
    basis = cache.get_basis(base_mesh, base_material, scenario.modes)
    manip = build_manip_projection(basis, base_mesh, spec.world_to_base(plant.rest[plant.manip]))

    ctx = RunContext(
        scenario=scenario, settings=settings, plant=plant, desired=desired, spec=spec,
        base_mesh=base_mesh, basis=basis, manip=manip,
        diagnostics={
            "cache_hit": cache.hits > hits,
            "base_axes": spec.axes.tolist(),
            "base_center": spec.translation_vector.tolist(),
            "base_nodes": base_mesh.n_nodes,
            "samples": int(observer.ids.size),
        },
    )
    ctx.refresh_projector()
    return ctx


class StallMonitor:
    """Flags a run once a progress magnitude stays at or below ratio x its first value for a window."""

    def __init__(self, window: int, ratio: float):
        self.window = window
        self.ratio = ratio
        self.reference: Optional[float] = None
        self.count = 0

    def update(self, magnitude: float) -> bool:
        if self.reference is None:
            self.reference = magnitude
        self.count = self.count + 1 if magnitude <= self.ratio * self.reference else 0
        return self.count >= self.window


def level_seed(seed: int) -> List[int]:
    """Seed of the level-jitter stream, independent of the measurement-noise stream."""
    return [seed, LEVEL_JITTER_STREAM]


def seed_run(ctx: RunContext, seed: Optional[int] = None) -> MeasurementNoise:
    """Measurement noise for a run; also restarts the level jitter from the same seed."""
    seed = ctx.scenario.seed if seed is None else seed
    ctx.observer.reseed(level_seed(seed))
    return MeasurementNoise(ctx.scenario.noise_std, seed)


def begin_tick(ctx: RunContext, tick: int) -> bool:
    """Draw the tick's level jitter and fire its sampling events; True when the sample set changed."""
    if tick > 0:
        ctx.observer.advance()
    return ctx.apply_events(tick)


def observe_features(ctx: RunContext, noise: MeasurementNoise, t: float) -> Tuple[FeatureVector, np.ndarray]:
    """One noisy read of the active samples: its features and the read itself (flat, world frame)."""
    samples, ids = ctx.observer.sample(ctx.plant.positions)
    measured = noise.apply(samples)
    s = compute_features(ctx.projector, SamplingSet(positions=ctx.to_base(measured), timestamp=t, ids=ids))
    return s, measured


def stop_reached(scenario: Scenario, error: float, initial: float, e_d_norm: float, initial_e_d: float) -> bool:
    """Whether a tick meets the scenario's stop rule; ``error`` is the controller's own error norm."""
    if scenario.stop_rule == StopRule.FEATURES:
        return error <= scenario.stop_ratio * initial
    if scenario.stop_rule == StopRule.TARGET:
        return e_d_norm <= scenario.target_tolerance * initial_e_d
    return False


def close_horizon(record: RunRecord, scenario: Scenario) -> None:
    """A full-horizon run counts as converged when its steady-state target distance is within tolerance."""
    if scenario.stop_rule != StopRule.HORIZON or not record.rows:
        return
    tail = record.rows[-max(1, math.ceil(STEADY_STATE_FRACTION * len(record.rows))):]
    steady = float(np.mean([row.e_d_norm for row in tail]))
    if steady <= scenario.target_tolerance * record.rows[0].e_d_norm:
        record.status = RunStatus.CONVERGED


def metrics_row(ctx: RunContext, tick: int, e_s_norm: float, v: np.ndarray, **extra) -> TickRow:
    """Ground-truth metrics of the current plant state; point error uses noise-free nominal samples."""
    e_x, e_d = plant_metrics(ctx.plant, ctx.desired.full_state, ctx.desired.manip_positions)
    truth, _ = ctx.observer.sample(ctx.plant.positions, nominal=True)
    point_error = float(np.linalg.norm(truth - ctx.desired_samples()))
    return TickRow(
        tick=tick, t=tick * ctx.scenario.dt, e_s_norm=e_s_norm, e_x=e_x,
        e_d=e_d.tolist(), e_d_norm=float(np.linalg.norm(e_d)), v=v.tolist(),
        point_error=point_error, active_samples=int(ctx.observer.active.sum()), **extra,
    )


def abort_run(tick: int, error: DeformationControlError, scenario: Scenario) -> ScenarioRunError:
    logger.error(f"Scenario '{scenario.name}' aborted at tick {tick}: {error}")
    diagnostics = {"error": type(error).__name__, "message": str(error)}
    diagnostics.update(getattr(error, "diagnostics", {}) or {})
    return ScenarioRunError(f"Run aborted at tick {tick}: {error}", tick=tick, diagnostics=diagnostics)


def run_scenario(
    scenario: Scenario,
    seed: Optional[int] = None,
    settings: Optional[Settings] = None,
    cache: Optional[ModalCache] = None,
) -> RunRecord:
    """Run the adaptive modal controller until convergence, stall or the tick budget."""
    ctx = prepare_run(scenario, settings, cache)
    noise = seed_run(ctx, seed)
    state = init_controller_state(
        ctx.basis.m, ctx.plant.k, scenario.ks, scenario.gamma, scenario.dt,
        speed_limit=scenario.speed_limit, theta_bounds=scenario.theta_bounds,
    )
    controller = AdaptiveDeformationController(ctx.manip, state)
    stall = StallMonitor(scenario.stall_window, scenario.stall_ratio)
    record = RunRecord(
        scenario=scenario.name, controller=ControllerKind.MODAL, unit=scenario.unit,
        k=ctx.plant.k, m=ctx.basis.m, s_star=ctx.s_star.values.tolist(),
        diagnostics={**ctx.diagnostics, "stop_ratio": scenario.stop_ratio, "stop_rule": scenario.stop_rule.value},
    )
    logger.info(f"Running '{scenario.name}': m={ctx.basis.m}, k={ctx.plant.k}, dt={scenario.dt:.4g}")

    tick = 0
    try:
        for tick in range(scenario.max_ticks):
            t = tick * scenario.dt
            begin_tick(ctx, tick)
            s, _ = observe_features(ctx, noise, t)
            e_s = feature_error(s, ctx.s_star)
            telemetry = controller.step(e_s)
            v_world = ctx.spec.rotate_to_world(telemetry.v.reshape(-1, 3)).reshape(-1)
            row = metrics_row(
                ctx, tick, telemetry.e_s_norm, v_world,
                theta_min=float(telemetry.theta_hat.min()),
                theta_mean=float(telemetry.theta_hat.mean()),
                theta_max=float(telemetry.theta_hat.max()),
                lyapunov=telemetry.lyapunov, jte_norm=telemetry.jte_norm,
            )
            record.rows.append(row)
            first = record.rows[0]
            if stop_reached(scenario, row.e_s_norm, first.e_s_norm, row.e_d_norm, first.e_d_norm):
                record.status = RunStatus.CONVERGED
                break
            if scenario.stop_rule != StopRule.HORIZON and stall.update(abs(telemetry.lyapunov)):
                logger.warning(f"'{scenario.name}' stalled at tick {tick} with ||e_s|| = {telemetry.e_s_norm:.4g}")
                record.status = RunStatus.STALLED
                break
            ctx.plant.step(v_world, scenario.dt)
    except DeformationControlError as e:
        raise abort_run(tick, e, scenario) from e

    close_horizon(record, scenario)
    record.diagnostics["final_theta_hat"] = controller.theta_hat.tolist()
    logger.info(f"'{scenario.name}' finished: {record.status.value} after {len(record.rows)} ticks")
    return record


async def run_sweep(
    directory: Union[str, Path],
    out_dir: Optional[Union[str, Path]] = None,
    settings: Optional[Settings] = None,
) -> pd.DataFrame:
    """Run every scenario in a directory on worker threads; one summary row per scenario."""
    settings = settings or get_settings()
    paths = list_scenarios(directory)
    if not paths:
        raise ConfigurationError(f"No {SCENARIO_SUFFIX} files in {directory}")
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    gate = asyncio.Semaphore(settings.max_workers)

    async def run_one(path: Path) -> Dict[str, Any]:
        async with gate:
            try:
                scenario = load_scenario(path)
                record = await asyncio.to_thread(run_scenario, scenario, None, settings)
            except DeformationControlError as e:
                logger.error(f"Sweep entry {path.name} failed: {e}")
                return {"scenario": path.stem, "status": "error", "error": str(e)}
            if out_dir is not None:
                export_csv(record, Path(out_dir) / f"{scenario.name}.csv")
            row = summarize(record).model_dump(mode="json")
            row["family"] = scenario.family
            row["cache_hit"] = record.diagnostics.get("cache_hit", False)
            return row

    rows = await asyncio.gather(*(run_one(path) for path in paths))
    return pd.DataFrame(rows)
