"""
Tests for scenario parsing, run preparation, sampling events and the closed-loop harness.
"""

import asyncio

import numpy as np
import pytest

from conftest import TOP_FACE, make_scenario, write_scenario
from models.run import RunStatus
from models.scenario import BaseMeshMode, EventAction, StopRule
from services.baseline_service import compare_controllers, run_baseline
from services.exceptions import ConfigurationError, ScenarioRunError
from services.export_service import summarize
from services.scenario_service import (
    StallMonitor,
    list_scenarios,
    load_scenario,
    parse_events,
    parse_scenario,
    prepare_run,
    run_scenario,
    run_sweep,
)

OCCLUDED = [89, 90, 91, 92, 93]

FEATURE_FAMILIES = [
    "boundary_clamp", "boundary_pins_a", "boundary_pins_b",
    "sampling_front", "sampling_close", "sampling_far",
    "manip_two", "manip_three",
    "modes_3", "modes_6", "modes_30", "modes_90",
    "contour_good",
]
BASE_MESH_FAMILIES = [f"base_size_{c}" for c in "abcd"] + [f"base_pose_p{i}" for i in range(1, 7)]


def contour_scenario(**overrides):
    fields = {
        "sampling": "contour_fixed_y", "contour_nodes": list(range(88, 99)), "contour_samples": 16,
        "contour_axis": 0, "sample_nodes": [], "modes": 12,
    }
    return make_scenario(**{**fields, **overrides})


class TestParseScenario:
    """key=value files into Scenario models"""

    def test_ranges_and_defaults(self):
        scenario = parse_scenario(
            {
                "FIXED_NODES": "0,33,99",
                "manip_nodes": "76",
                "sample_nodes": "89..98, 100..104",
                "desired_displacement": "1,1,0.8",
                "modes": "12",
                "gain_ks": "",
            },
            name="parsed",
        )
        assert scenario.name == "parsed"
        assert scenario.fixed_nodes == [0, 33, 99]
        assert scenario.sample_nodes == list(range(89, 99)) + list(range(100, 105))
        assert scenario.modes == 12
        assert scenario.ks == 80.0
        assert scenario.gamma == 500.0
        assert scenario.dt == pytest.approx(0.02)

    def test_surface_sampling(self):
        scenario = parse_scenario(
            {"fixed_nodes": "0,33,99", "manip_nodes": "76", "sample_nodes": "surface", "desired_displacement": "1,1,0.8"},
            name="surface",
        )
        assert scenario.sample_surface
        assert scenario.sample_nodes == []

    def test_events_sorted(self):
        events = parse_events("30:remove:89|90;10:restore:91")
        assert [e.tick for e in events] == [10, 30]
        assert events[0].action == EventAction.RESTORE
        assert events[1].ids == [89, 90]

    @pytest.mark.parametrize("raw", ["30:hide:89", "x:remove:89", "30:remove"])
    def test_bad_events(self, raw):
        with pytest.raises(ConfigurationError):
            parse_events(raw)

    def test_bad_range(self):
        with pytest.raises(ConfigurationError):
            parse_scenario({"fixed_nodes": "a..b"}, name="bad")

    @pytest.mark.parametrize("overrides", [
        {"manip_nodes": "0"},
        {"desired_displacement": "1,1"},
        {"modes": "3", "manip_nodes": "76,87", "desired_displacement": "1,1,1,1,1,1"},
        {"gain_preset": "lab"},
        {"sample_nodes": "89..91"},
        {"contour_jitter": "0.1"},
        {"stop_rule": "never"},
        {"target_tolerance": "1.5"},
    ])
    def test_invalid_combinations(self, overrides):
        values = {
            "fixed_nodes": "0,33,99", "manip_nodes": "76", "sample_nodes": "89..98",
            "desired_displacement": "1,1,0.8", "modes": "30",
        }
        with pytest.raises(ConfigurationError):
            parse_scenario({**values, **overrides}, name="invalid")

    def test_experiment_preset(self):
        scenario = make_scenario(gain_preset="experiment")
        assert scenario.ks == 0.1
        assert scenario.dt == pytest.approx(1 / 30)
        assert make_scenario(gain_preset="experiment", rate_hz=10.0).dt == pytest.approx(0.1)


class TestLoadScenario:

    def test_every_shipped_scenario_loads(self, settings):
        paths = list_scenarios(settings.scenario_dir)
        assert len(paths) == 37
        names = {load_scenario(path).name for path in paths}
        assert {"benchmark", "occlusion", "plant_file", "contour_good"} <= names

    def test_file_round_trip(self, tmp_path):
        path = write_scenario(tmp_path, "written", max_ticks=5)
        scenario = load_scenario(path)
        assert scenario.name == "written"
        assert scenario.sample_nodes == TOP_FACE
        assert scenario.max_ticks == 5

    def test_bad_sampling_scenario(self, settings):
        scenario = load_scenario(settings.scenario_dir / "contour_bad.scn")
        assert scenario.contour_jitter == pytest.approx(0.1)
        assert scenario.stop_rule == StopRule.TARGET
        assert scenario.target_tolerance == pytest.approx(0.02)

    def test_relative_mesh_path(self, settings):
        scenario = load_scenario(settings.scenario_dir / "plant_file.scn")
        assert scenario.plant_mesh == settings.scenario_dir / "meshes" / "irregular.mesh"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_scenario(tmp_path / "absent.scn")


class TestPrepareRun:
    """Plant, base mesh, projectors and s* before the first tick"""

    def test_benchmark(self, benchmark_scenario, fresh_cache):
        ctx = prepare_run(benchmark_scenario, cache=fresh_cache)
        assert ctx.plant.k == 1
        assert ctx.basis.m == 30
        assert ctx.manip.g.shape == (30, 3)
        assert ctx.projector.n_samples == 40
        assert ctx.s_star.m == 30
        assert ctx.s_star.norm() > 0
        assert ctx.diagnostics["cache_hit"] is False
        np.testing.assert_allclose(ctx.diagnostics["base_center"], [5.0, 1.5, 1.0])

    def test_second_run_hits_cache(self, benchmark_scenario, fresh_cache):
        prepare_run(benchmark_scenario, cache=fresh_cache)
        ctx = prepare_run(make_scenario(name="again", modes=12), cache=fresh_cache)
        assert ctx.diagnostics["cache_hit"] is True
        assert fresh_cache.misses == 1
        assert ctx.basis.m == 12

    def test_estimated_base_mesh(self, settings, fresh_cache):
        scenario = load_scenario(settings.scenario_dir / "base_estimate.scn")
        assert scenario.base_mesh == BaseMeshMode.ESTIMATE
        ctx = prepare_run(scenario, cache=fresh_cache)
        np.testing.assert_allclose(ctx.diagnostics["base_axes"], [4.5, 1.5, 1.0])
        np.testing.assert_allclose(ctx.diagnostics["base_center"], [5.5, 1.5, 1.0])

    def test_file_plant(self, settings, fresh_cache):
        ctx = prepare_run(load_scenario(settings.scenario_dir / "plant_file.scn"), cache=fresh_cache)
        assert ctx.plant.mesh.n_nodes == 108
        assert ctx.basis.m == 12
        assert ctx.projector.n_samples == 28
        assert 3 * ctx.projector.n_samples >= ctx.basis.m

    def test_pose_error_moves_base_mesh(self, fresh_cache):
        ctx = prepare_run(make_scenario(base_pose_offset=(0.5, 0.0, 0.0)), cache=fresh_cache)
        np.testing.assert_allclose(ctx.diagnostics["base_center"], [5.5, 1.5, 1.0])

    def test_surface_samples_exclude_constraints(self, fresh_cache):
        scenario = make_scenario(sample_nodes=[], sample_surface=True)
        ctx = prepare_run(scenario, cache=fresh_cache)
        ids = set(ctx.observer.ids.tolist())
        assert not ids & {0, 33, 99, 76}
        assert len(ids) == ctx.plant.mesh.surface_node_ids.size - 4


class TestSamplingEvents:
    """Sample loss and recovery rebuild the projector and s*"""

    def test_remove_and_restore(self, fresh_cache):
        scenario = make_scenario(events=[
            {"tick": 2, "action": "remove", "ids": OCCLUDED},
            {"tick": 4, "action": "restore", "ids": OCCLUDED},
        ])
        ctx = prepare_run(scenario, cache=fresh_cache)
        s_star = ctx.s_star.values.copy()
        assert ctx.apply_events(0) is False

        assert ctx.apply_events(2) is True
        assert ctx.projector.n_samples == 35
        assert ctx.desired_samples().size == 105
        assert not set(OCCLUDED) & set(ctx.projector.sample_ids.tolist())

        assert ctx.apply_events(4) is True
        assert ctx.projector.n_samples == 40
        assert np.array_equal(ctx.s_star.values, s_star)

    def test_desired_features_follow_the_active_set(self, fresh_cache):
        """At the desired state the recomputed error is zero whatever samples are active"""
        scenario = make_scenario(events=[{"tick": 1, "action": "remove", "ids": OCCLUDED}])
        ctx = prepare_run(scenario, cache=fresh_cache)
        ctx.plant.move_to(ctx.desired.manip_positions - ctx.plant.rest[ctx.plant.manip].reshape(-1))
        ctx.apply_events(1)
        samples, ids = ctx.observer.sample(ctx.plant.positions)
        np.testing.assert_allclose(samples, ctx.desired_samples(ids), atol=1e-10)


class TestStallMonitor:

    def test_window(self):
        monitor = StallMonitor(window=3, ratio=0.5)
        assert [monitor.update(x) for x in (1.0, 0.4, 0.5, 0.3)] == [False, False, False, True]

    def test_reset_on_progress(self):
        monitor = StallMonitor(window=2, ratio=0.5)
        assert [monitor.update(x) for x in (1.0, 0.4, 0.9, 0.4, 0.1)] == [False, False, False, False, True]


class TestRunScenario:
    """Closed-loop harness"""

    def test_zero_displacement_converges_immediately(self, fresh_cache):
        record = run_scenario(make_scenario(desired_displacement=[0.0, 0.0, 0.0]), cache=fresh_cache)
        assert record.status == RunStatus.CONVERGED
        assert len(record.rows) == 1
        assert record.rows[0].e_s_norm == 0.0
        assert record.rows[0].v == [0.0, 0.0, 0.0]

    def test_budget_exhausted(self, fresh_cache):
        record = run_scenario(make_scenario(max_ticks=30), cache=fresh_cache)
        assert record.status == RunStatus.MAX_TICKS
        assert len(record.rows) == 30
        assert [row.tick for row in record.rows] == list(range(30))
        assert record.rows[-1].e_s_norm < record.rows[0].e_s_norm
        assert all(row.lyapunov <= 1e-12 for row in record.rows)
        assert len(record.diagnostics["final_theta_hat"]) == 30

    def test_deterministic(self, fresh_cache):
        scenario = make_scenario(max_ticks=30, noise_std=0.001, seed=5)
        first = run_scenario(scenario, cache=fresh_cache)
        second = run_scenario(scenario, cache=fresh_cache)
        assert [r.e_s_norm for r in first.rows] == [r.e_s_norm for r in second.rows]
        assert [r.v for r in first.rows] == [r.v for r in second.rows]

    def test_seed_override(self, fresh_cache):
        scenario = make_scenario(max_ticks=5, noise_std=0.001, seed=5)
        first = run_scenario(scenario, cache=fresh_cache)
        other = run_scenario(scenario, seed=6, cache=fresh_cache)
        assert [r.e_s_norm for r in first.rows] != [r.e_s_norm for r in other.rows]

    def test_stall_rule(self, fresh_cache):
        scenario = make_scenario(max_ticks=50, stall_window=5, stall_ratio=2.0)
        record = run_scenario(scenario, cache=fresh_cache)
        assert record.status == RunStatus.STALLED
        assert len(record.rows) == 5

    def test_level_jitter_moves_reads_not_truth(self, fresh_cache):
        scenario = contour_scenario(
            desired_displacement=[0.0, 0.0, 0.0], contour_jitter=0.1, stop_rule="horizon", max_ticks=3
        )
        record = run_scenario(scenario, cache=fresh_cache)
        first, second = record.rows[0], record.rows[1]
        assert first.e_s_norm == pytest.approx(0.0, abs=1e-12)
        assert second.e_s_norm > 1e-6
        assert first.point_error == pytest.approx(0.0, abs=1e-12)
        assert second.point_error == pytest.approx(0.0, abs=1e-12)

    def test_level_jitter_is_seeded(self, fresh_cache):
        scenario = contour_scenario(contour_jitter=0.1, stop_rule="horizon", max_ticks=5)
        first = run_scenario(scenario, cache=fresh_cache)
        again = run_scenario(scenario, cache=fresh_cache)
        other = run_scenario(scenario, seed=1, cache=fresh_cache)
        assert [r.e_s_norm for r in first.rows] == [r.e_s_norm for r in again.rows]
        assert [r.e_s_norm for r in first.rows] != [r.e_s_norm for r in other.rows]

    def test_target_rule(self, fresh_cache):
        record = run_scenario(make_scenario(stop_rule="target", target_tolerance=0.9, max_ticks=3000), cache=fresh_cache)
        assert record.status == RunStatus.CONVERGED
        e_d = [row.e_d_norm for row in record.rows]
        assert e_d[-1] <= 0.9 * e_d[0]
        assert all(value > 0.9 * e_d[0] for value in e_d[:-1])

    def test_horizon_rule_runs_the_budget(self, fresh_cache):
        record = run_scenario(make_scenario(stop_rule="horizon", max_ticks=4, stall_window=2), cache=fresh_cache)
        assert len(record.rows) == 4
        assert record.status == RunStatus.MAX_TICKS
        assert record.diagnostics["stop_rule"] == "horizon"

    def test_abort_carries_tick(self, fresh_cache):
        scenario = make_scenario(max_ticks=20, events=[{"tick": 3, "action": "remove", "ids": TOP_FACE[:35]}])
        with pytest.raises(ScenarioRunError) as excinfo:
            run_scenario(scenario, cache=fresh_cache)
        assert excinfo.value.tick == 3
        assert excinfo.value.diagnostics["error"] == "InvalidRequestError"


class TestRunSweep:

    def test_sweep_directory(self, tmp_path):
        scenarios = tmp_path / "scenarios"
        scenarios.mkdir()
        write_scenario(scenarios, "flat", desired_displacement=[0, 0, 0])
        write_scenario(scenarios, "short", max_ticks=3)
        write_scenario(scenarios, "broken", fixed_nodes=[0, 1, 2])
        table = asyncio.run(run_sweep(scenarios, tmp_path / "out"))
        status = dict(zip(table["scenario"], table["status"]))
        assert status == {"broken": "error", "flat": "converged", "short": "max_ticks"}
        assert (tmp_path / "out" / "flat.csv").is_file()
        assert (tmp_path / "out" / "short.csv").is_file()

    def test_empty_directory(self, tmp_path):
        with pytest.raises(ConfigurationError):
            asyncio.run(run_sweep(tmp_path))


@pytest.mark.slow
class TestConvergence:
    """Closed-loop convergence on the shipped scenarios"""

    def test_benchmark(self, settings):
        scenario = load_scenario(settings.scenario_dir / "benchmark.scn").model_copy(update={"stop_ratio": 1e-5})
        record = run_scenario(scenario)
        assert record.status == RunStatus.CONVERGED
        first, last = record.rows[0], record.rows[-1]
        assert last.e_s_norm <= 0.05 * first.e_s_norm
        assert last.jte_norm <= 1e-3 * first.jte_norm
        assert all(row.lyapunov <= 1e-12 for row in record.rows)
        assert summarize(record).monotone_tail

    @pytest.mark.parametrize("name", ["material_e100", "material_e1000", "material_e5000", "material_e50000"])
    def test_material_sweep(self, settings, name):
        record = run_scenario(load_scenario(settings.scenario_dir / f"{name}.scn"))
        assert record.status == RunStatus.CONVERGED
        assert summarize(record).monotone_tail

    @pytest.mark.parametrize("name", FEATURE_FAMILIES)
    def test_feature_families(self, settings, name):
        summary = summarize(run_scenario(load_scenario(settings.scenario_dir / f"{name}.scn")))
        assert summary.status == RunStatus.CONVERGED
        assert summary.final_e_s_norm <= 0.05 * summary.initial_e_s_norm
        assert summary.monotone_tail

    @pytest.mark.parametrize("name", BASE_MESH_FAMILIES)
    def test_base_mesh_families(self, settings, name):
        summary = summarize(run_scenario(load_scenario(settings.scenario_dir / f"{name}.scn")))
        assert summary.status == RunStatus.CONVERGED
        assert summary.final_e_d_norm <= 0.05 * summary.initial_e_d_norm
        assert summary.monotone_tail

    def test_file_plant_converges(self, settings):
        summary = summarize(run_scenario(load_scenario(settings.scenario_dir / "plant_file.scn")))
        assert summary.status == RunStatus.CONVERGED
        assert summary.final_e_s_norm <= 0.05 * summary.initial_e_s_norm
        assert summary.final_e_d_norm <= 0.05 * summary.initial_e_d_norm
        assert summary.monotone_tail

    def test_occlusion(self, settings):
        record = run_scenario(load_scenario(settings.scenario_dir / "occlusion.scn"))
        assert record.rows[-1].e_s_norm <= 0.05 * record.rows[0].e_s_norm
        assert min(row.active_samples for row in record.rows) < 40


@pytest.mark.slow
class TestComparativeStudy:
    """Modal and baseline controllers on the same plant, reads and stop rule"""

    def test_sliding_contour_samples(self, settings):
        scenario = load_scenario(settings.scenario_dir / "contour_bad.scn")
        modal = summarize(run_scenario(scenario))
        baseline = summarize(run_baseline(scenario))
        assert modal.final_e_d_norm <= 0.05 * modal.initial_e_d_norm
        assert baseline.status == RunStatus.STALLED or baseline.final_e_d_norm > 0.20 * baseline.initial_e_d_norm

    def test_shared_target_rule(self, settings):
        scenario = load_scenario(settings.scenario_dir / "contour_good.scn")
        comparison = compare_controllers(scenario, rule=StopRule.TARGET)
        assert comparison.stop_rule == "target"
        assert comparison.modal.status == RunStatus.CONVERGED
        assert comparison.baseline.status == RunStatus.CONVERGED

    def test_noisy_reads_over_a_shared_horizon(self, settings):
        scenario = load_scenario(settings.scenario_dir / "contour_good.scn").model_copy(update={"noise_std": 0.01})
        comparison = compare_controllers(scenario, rule=StopRule.HORIZON, ticks=6000, seed=3)
        assert comparison.max_ticks == 6000
        assert comparison.modal.ticks == comparison.baseline.ticks == 6000
        assert comparison.modal.status == RunStatus.CONVERGED
        assert comparison.modal.steady_state_point_error <= comparison.baseline.steady_state_point_error
