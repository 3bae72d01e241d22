"""
Point-based baseline controller.
Drives sample positions directly with v = -K_p J_p^+ (x - x*), where J_p is
probed at the start and refined online by Broyden rank-one updates.
"""

import logging
from typing import Optional

import numpy as np

from config import Settings
from database.modal_cache import ModalCache
from models.run import ControllerComparison, ControllerKind, RunRecord, RunStatus
from models.scenario import Scenario, StopRule
from services.controller_service import AdaptiveDeformationController, init_controller_state
from services.exceptions import DeformationControlError, InvalidRequestError
from services.export_service import summarize
from services.feature_service import MeasurementNoise, feature_error
from services.scenario_service import (
    RunContext,
    StallMonitor,
    abort_run,
    begin_tick,
    close_horizon,
    metrics_row,
    observe_features,
    prepare_run,
    run_scenario,
    seed_run,
    stop_reached,
)

logger = logging.getLogger(__name__)

# sigma_min / sigma_max below which the pseudo-inverse is damped
CONDITION_LIMIT = 1e-6
# Broyden skips steps shorter than this
MIN_BROYDEN_STEP = 1e-12


def damped_pinv(J: np.ndarray, damping: float) -> np.ndarray:
    """Moore-Penrose inverse, or (J^T J + damping sigma_max^2 I)^-1 J^T when J is near singular."""
    singular = np.linalg.svd(J, compute_uv=False)
    if singular.size == 0 or singular[0] == 0.0:
        return np.zeros(J.T.shape)
    if singular[-1] / singular[0] >= CONDITION_LIMIT:
        return np.linalg.pinv(J)
    lam = damping * singular[0] ** 2
    return np.linalg.solve(J.T @ J + lam * np.eye(J.shape[1]), J.T)


def broyden_update(J: np.ndarray, dx: np.ndarray, du: np.ndarray) -> np.ndarray:
    """J + (dx - J du) du^T / (du^T du); unchanged for a step shorter than MIN_BROYDEN_STEP or a non-finite result."""
    norm = float(du @ du)
    if norm <= MIN_BROYDEN_STEP ** 2:
        return J
    updated = J + np.outer(dx - J @ du, du) / norm
    return updated if np.all(np.isfinite(updated)) else J


def calibrate_gain(ctx: RunContext, J_p: np.ndarray, error: np.ndarray) -> float:
    """K_p making the first baseline command as large as the first modal command."""
    scenario = ctx.scenario
    state = init_controller_state(ctx.basis.m, ctx.plant.k, scenario.ks, scenario.gamma, scenario.dt)
    controller = AdaptiveDeformationController(ctx.manip, state)
    s, _ = observe_features(ctx, MeasurementNoise(), 0.0)
    modal = np.linalg.norm(controller.step(feature_error(s, ctx.s_star)).v)
    unit = np.linalg.norm(damped_pinv(J_p, scenario.baseline_damping) @ error)
    if unit == 0.0 or modal == 0.0:
        return 1.0
    return float(modal / unit)


def _active_rows(ctx: RunContext) -> np.ndarray:
    slots = np.flatnonzero(ctx.observer.active)
    return (3 * slots[:, None] + np.arange(3)).reshape(-1)


def run_baseline(
    scenario: Scenario,
    seed: Optional[int] = None,
    settings: Optional[Settings] = None,
    cache: Optional[ModalCache] = None,
) -> RunRecord:
    """Run the Broyden point-based controller; modal features are recorded for comparison only."""
    ctx = prepare_run(scenario, settings, cache)
    noise = seed_run(ctx, seed)
    J_full = ctx.plant.probe_jacobian(scenario.baseline_probe)
    ctx.apply_events(0)

    rows = _active_rows(ctx)
    samples, _ = ctx.observer.sample(ctx.plant.positions)
    gain = scenario.baseline_gain
    if gain is None:
        gain = calibrate_gain(ctx, J_full[rows], samples - ctx.desired_samples())
    logger.info(f"Baseline gain K_p = {gain:.6g}")

    stall = StallMonitor(scenario.stall_window, scenario.stall_ratio)
    record = RunRecord(
        scenario=scenario.name, controller=ControllerKind.BASELINE, unit=scenario.unit,
        k=ctx.plant.k, m=ctx.basis.m, s_star=ctx.s_star.values.tolist(),
        diagnostics={
            **ctx.diagnostics, "stop_ratio": scenario.stop_ratio, "stop_rule": scenario.stop_rule.value,
            "baseline_gain": gain,
        },
    )
    initial = None
    damped = False
    previous = None
    tick = 0
    try:
        for tick in range(scenario.max_ticks):
            changed = begin_tick(ctx, tick) if tick > 0 else False
            rows = _active_rows(ctx)
            s, measured = observe_features(ctx, noise, tick * scenario.dt)
            if previous is not None and not changed:
                J_full[rows] = broyden_update(J_full[rows], measured - previous[0], previous[1])

            error = measured - ctx.desired_samples()
            J = J_full[rows]
            if not damped and J.size:
                singular = np.linalg.svd(J, compute_uv=False)
                if singular[-1] < CONDITION_LIMIT * singular[0]:
                    damped = True
                    logger.warning(
                        f"Baseline Jacobian near singular at tick {tick}; damping {scenario.baseline_damping:g}"
                    )
            v = -gain * (damped_pinv(J, scenario.baseline_damping) @ error)
            e_s = feature_error(s, ctx.s_star)
            point_error = float(np.linalg.norm(error))
            if initial is None:
                initial = point_error
            row = metrics_row(ctx, tick, e_s.norm(), v)
            record.rows.append(row)
            if stop_reached(scenario, point_error, initial, row.e_d_norm, record.rows[0].e_d_norm):
                record.status = RunStatus.CONVERGED
                break
            if scenario.stop_rule != StopRule.HORIZON and stall.update(float(np.linalg.norm(v))):
                logger.warning(f"Baseline for '{scenario.name}' stalled at tick {tick}")
                record.status = RunStatus.STALLED
                break
            ctx.plant.step(v, scenario.dt)
            previous = (measured, v * scenario.dt)
    except DeformationControlError as e:
        raise abort_run(tick, e, scenario) from e

    close_horizon(record, scenario)
    record.diagnostics["damped"] = damped
    logger.info(f"Baseline '{scenario.name}' finished: {record.status.value} after {len(record.rows)} ticks")
    return record


def compare_controllers(
    scenario: Scenario,
    rule: StopRule = StopRule.HORIZON,
    ticks: Optional[int] = None,
    seed: Optional[int] = None,
    settings: Optional[Settings] = None,
    cache: Optional[ModalCache] = None,
) -> ControllerComparison:
    """Modal and baseline runs of one scenario under one shared stop rule and the same seed."""
    if rule == StopRule.FEATURES:
        raise InvalidRequestError("Controllers are compared under the target or horizon rule")
    shared = scenario.model_copy(update={"stop_rule": rule, "max_ticks": ticks or scenario.max_ticks})
    modal = summarize(run_scenario(shared, seed, settings, cache))
    baseline = summarize(run_baseline(shared, seed, settings, cache))
    logger.info(
        f"'{scenario.name}' under the {rule.value} rule: steady-state point error "
        f"modal {modal.steady_state_point_error:.4g}, baseline {baseline.steady_state_point_error:.4g}"
    )
    return ControllerComparison(
        scenario=scenario.name, stop_rule=rule.value, max_ticks=shared.max_ticks, modal=modal, baseline=baseline
    )
