"""
Tests for the quasi-static FEM plant, the sample observer and desired-deformation generation.
"""

import numpy as np
import pytest

from conftest import TOP_FACE
from models.mesh import MaterialParams, SolidMesh
from models.plant import PlantModel, SamplingMode
from services.exceptions import ConfigurationError, InvalidInputError, NumericError
from services.fem_service import assemble_system
from services.mesh_service import extract_surface, generate_bar_mesh
from services.modal_service import node_dofs
from services.plant_service import QuasiStaticPlant, SampleObserver, generate_desired, plant_metrics

SILICONE = MaterialParams(young_modulus=100.0, poisson_ratio=0.49, total_mass=100.0)
TWO_TET_NODES = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0], [0.0, 0, 1], [1.0, 1, 1]])
TWO_TETS = np.array([[0, 1, 2, 3], [1, 2, 3, 4]])


@pytest.fixture(scope="module")
def two_tet_mesh():
    return SolidMesh(nodes=TWO_TET_NODES, tets=TWO_TETS, surface_tris=extract_surface(TWO_TET_NODES, TWO_TETS))


@pytest.fixture(scope="module")
def bar():
    return generate_bar_mesh((10.0, 3.0, 2.0), (10, 3, 2))


def bar_plant(bar, model=PlantModel.LINEAR, observer=None):
    return QuasiStaticPlant(bar, SILICONE, fixed=[0, 33, 99], manip=[76], observer=observer, model=model)


class TestLinearPlant:
    """Dirichlet-constrained linear elasticity"""

    def test_two_tets_against_dense_solve(self, two_tet_mesh):
        plant = QuasiStaticPlant(two_tet_mesh, SILICONE, fixed=[0, 1, 2], manip=[3])
        target = np.array([0.1, -0.05, 0.2])
        plant.move_to(target)

        K = assemble_system(two_tet_mesh, SILICONE).stiffness.toarray()
        free, manip = node_dofs([4]), node_dofs([3])
        expected = -np.linalg.solve(K[np.ix_(free, free)], K[np.ix_(free, manip)] @ target)
        np.testing.assert_allclose(plant.displacement[free], expected, atol=1e-12)
        np.testing.assert_allclose(plant.displacement[manip], target)
        assert np.all(plant.displacement[node_dofs([0, 1, 2])] == 0.0)

    def test_zero_command_keeps_state(self, bar):
        plant = bar_plant(bar)
        plant.move_to([0.3, 0.1, 0.2])
        before = plant.displacement
        plant.step(np.zeros(3), 0.02)
        assert plant.displacement is before

    def test_step_integrates_command(self, bar):
        plant = bar_plant(bar)
        plant.step(np.array([1.0, 0.0, -0.5]), 0.1)
        np.testing.assert_allclose(plant.manip_displacement, [0.1, 0.0, -0.05])
        np.testing.assert_allclose(plant.manip_positions, bar.nodes[76] + [0.1, 0.0, -0.05])

    def test_superposition(self, bar):
        plant = bar_plant(bar)
        a, b = np.array([0.2, 0.0, 0.1]), np.array([-0.1, 0.3, 0.0])
        u_a = plant.move_to(a).full_state - bar.nodes.reshape(-1)
        u_b = plant.move_to(b).full_state - bar.nodes.reshape(-1)
        u_ab = plant.move_to(a + b).full_state - bar.nodes.reshape(-1)
        np.testing.assert_allclose(u_ab, u_a + u_b, atol=1e-12)

    def test_energy(self, bar):
        plant = bar_plant(bar)
        assert plant.elastic_energy() == 0.0
        plant.move_to([0.5, 0.5, 0.4])
        assert plant.elastic_energy() > 0.0
        plant.reset()
        assert plant.elastic_energy() == 0.0

    def test_finite_difference_jacobian_matches_dense_sensitivity(self, bar):
        observer = SampleObserver(SamplingMode.NODES, bar.nodes, sample_ids=TOP_FACE)
        plant = bar_plant(bar, observer=observer)
        plant.move_to([0.2, 0.1, 0.0])
        before = plant.displacement.copy()
        probed = plant.probe_jacobian(0.05)

        K = plant.stiffness.toarray()
        sensitivity = np.zeros((bar.n_dof, 3))
        sensitivity[plant.manip_dofs] = np.eye(3)
        free = plant.free_dofs
        sensitivity[free] = -np.linalg.solve(K[np.ix_(free, free)], K[np.ix_(free, plant.manip_dofs)])
        np.testing.assert_allclose(probed, sensitivity[node_dofs(TOP_FACE)], atol=1e-9)
        assert np.array_equal(plant.displacement, before)

    def test_input_checks(self, bar):
        plant = bar_plant(bar)
        with pytest.raises(InvalidInputError):
            plant.move_to([0.1, 0.2])
        with pytest.raises(NumericError):
            plant.step(np.array([np.inf, 0.0, 0.0]), 0.02)
        with pytest.raises(ConfigurationError):
            plant.probe_jacobian(0.05)


class TestConstraints:

    @pytest.mark.parametrize("fixed, manip", [
        ([0, 1, 2], [76]),
        ([0, 33], [76]),
        ([0, 33, 99], [33]),
        ([0, 33, 99], []),
        ([0, 33, 99], [76, 76]),
        ([0, 33, 500], [76]),
    ])
    def test_rejected(self, bar, fixed, manip):
        with pytest.raises(ConfigurationError):
            QuasiStaticPlant(bar, SILICONE, fixed=fixed, manip=manip)


class TestCorotationalPlant:

    def test_small_displacement_matches_linear(self, bar):
        target = np.array([1e-4, 1e-4, 8e-5])
        linear = bar_plant(bar)
        corot = bar_plant(bar, model=PlantModel.COROTATIONAL)
        linear.move_to(target)
        corot.move_to(target)
        diff = np.linalg.norm(corot.displacement - linear.displacement)
        assert diff <= 1e-3 * np.linalg.norm(linear.displacement)

    def test_zero_target_stays_at_rest(self, bar):
        corot = bar_plant(bar, model=PlantModel.COROTATIONAL)
        corot.move_to(np.zeros(3))
        np.testing.assert_allclose(corot.displacement, 0.0, atol=1e-10)

    def test_factorization_reused_across_moves(self, bar):
        corot = bar_plant(bar, model=PlantModel.COROTATIONAL)
        for scale in np.linspace(0.1, 0.5, 5):
            corot.move_to(scale * np.array([1.0, 1.0, 0.8]))
        assert corot.factorizations <= 2

    def test_reused_factorization_reaches_the_same_equilibrium(self, bar):
        target = np.array([0.5, 0.5, 0.4])
        stepped = bar_plant(bar, model=PlantModel.COROTATIONAL)
        for scale in (0.25, 0.5, 0.75, 1.0):
            stepped.move_to(scale * target)
        direct = bar_plant(bar, model=PlantModel.COROTATIONAL)
        direct.move_to(target)
        np.testing.assert_allclose(stepped.displacement, direct.displacement, atol=1e-6 * np.abs(direct.displacement).max())


class TestSampleObserver:
    """Sample loss and recovery"""

    def test_remove_and_restore(self, bar):
        observer = SampleObserver(SamplingMode.NODES, bar.nodes, sample_ids=TOP_FACE)
        observer.remove([89, 90, 91])
        samples, ids = observer.sample(bar.nodes)
        assert ids.tolist() == TOP_FACE[3:]
        np.testing.assert_allclose(samples, bar.nodes[TOP_FACE[3:]].reshape(-1))
        observer.restore([90])
        assert 90 in observer.active_ids
        assert observer.sample_all(bar.nodes).shape == (40, 3)

    def test_unknown_ids(self, bar):
        observer = SampleObserver(SamplingMode.NODES, bar.nodes, sample_ids=TOP_FACE)
        with pytest.raises(ConfigurationError):
            observer.remove([0])

    def test_configuration_errors(self, bar):
        with pytest.raises(ConfigurationError):
            SampleObserver(SamplingMode.NODES, bar.nodes, sample_ids=[])
        with pytest.raises(ConfigurationError):
            SampleObserver(SamplingMode.NODES, bar.nodes, sample_ids=[1, 1])
        with pytest.raises(ConfigurationError):
            SampleObserver(SamplingMode.CONTOUR_ARCLENGTH, bar.nodes, contour_ids=[88])

    def test_contour_modes(self, bar):
        chain = list(range(88, 99))
        arclength = SampleObserver(SamplingMode.CONTOUR_ARCLENGTH, bar.nodes, contour_ids=chain, contour_samples=6)
        samples = arclength.sample_all(bar.nodes)
        np.testing.assert_allclose(samples[:, 0], [0, 2, 4, 6, 8, 10])
        np.testing.assert_allclose(samples[:, 2], 2.0)
        assert arclength.ids.tolist() == list(range(6))

        levels = SampleObserver(
            SamplingMode.CONTOUR_FIXED_LEVEL, bar.nodes, contour_ids=chain, contour_samples=6, axis=0
        )
        np.testing.assert_allclose(levels.levels, [0, 2, 4, 6, 8, 10])
        np.testing.assert_allclose(levels.sample_all(bar.nodes), samples)

    def test_level_jitter_slides_samples(self, bar):
        """Each advance moves every level by one shared offset within jitter x spacing"""
        chain = list(range(88, 99))
        observer = SampleObserver(
            SamplingMode.CONTOUR_FIXED_LEVEL, bar.nodes, contour_ids=chain, contour_samples=6, axis=0,
            jitter=0.2, seed=3,
        )
        np.testing.assert_allclose(observer.sample_all(bar.nodes)[:, 0], [0, 2, 4, 6, 8, 10])
        phases = [observer.advance() for _ in range(20)]
        assert all(abs(p) <= 0.2 * 2.0 for p in phases)
        assert len(set(phases)) == 20
        jittered = observer.sample_all(bar.nodes)
        np.testing.assert_allclose(jittered[1:-1, 0], np.array([2, 4, 6, 8]) + phases[-1])
        np.testing.assert_allclose(observer.sample_all(bar.nodes, nominal=True)[:, 0], [0, 2, 4, 6, 8, 10])
        # levels past the chain ends snap to the end nodes
        assert 0.0 <= jittered[0, 0] and jittered[-1, 0] <= 10.0

    def test_level_jitter_is_seeded(self, bar):
        chain = list(range(88, 99))
        def make(seed):
            return SampleObserver(
                SamplingMode.CONTOUR_FIXED_LEVEL, bar.nodes, contour_ids=chain, contour_samples=6, axis=0,
                jitter=0.1, seed=seed,
            )

        first, second, other = make(5), make(5), make(6)
        assert [first.advance() for _ in range(5)] == [second.advance() for _ in range(5)]
        first.reseed(6)
        assert first.phase == 0.0
        assert [first.advance() for _ in range(5)] == [other.advance() for _ in range(5)]

    def test_level_jitter_needs_fixed_levels(self, bar):
        with pytest.raises(ConfigurationError):
            SampleObserver(SamplingMode.NODES, bar.nodes, sample_ids=TOP_FACE, jitter=0.1)
        with pytest.raises(ConfigurationError):
            SampleObserver(
                SamplingMode.CONTOUR_FIXED_LEVEL, bar.nodes, contour_ids=list(range(88, 99)), axis=0, jitter=0.5
            )

    def test_no_jitter_keeps_levels(self, bar):
        observer = SampleObserver(SamplingMode.NODES, bar.nodes, sample_ids=TOP_FACE)
        assert observer.advance() == 0.0


class TestDesiredDeformation:

    def test_ramp_is_path_independent(self, bar):
        observer = SampleObserver(SamplingMode.NODES, bar.nodes, sample_ids=TOP_FACE)
        plant = bar_plant(bar, observer=observer)
        one = generate_desired(plant, [1.0, 1.0, 0.8], steps=1)
        many = generate_desired(plant, [1.0, 1.0, 0.8], steps=100)
        np.testing.assert_allclose(many.full_state, one.full_state, atol=1e-12)
        np.testing.assert_allclose(one.manip_positions, bar.nodes[76] + [1.0, 1.0, 0.8])
        assert one.sample_positions.shape == (120,)
        assert one.sample_ids.tolist() == TOP_FACE
        assert plant.elastic_energy() == 0.0

    def test_metrics(self, bar):
        plant = bar_plant(bar)
        desired = generate_desired(plant, [0.5, 0.0, 0.3])
        e_x, e_d = plant_metrics(plant, desired.full_state, desired.manip_positions)
        assert e_x > 0
        np.testing.assert_allclose(e_d, [-0.5, 0.0, -0.3])
        plant.move_to([0.5, 0.0, 0.3])
        e_x, e_d = plant_metrics(plant, desired.full_state, desired.manip_positions)
        assert e_x == pytest.approx(0.0, abs=1e-20)
        np.testing.assert_allclose(e_d, 0.0, atol=1e-12)

    def test_bad_inputs(self, bar):
        plant = bar_plant(bar)
        with pytest.raises(InvalidInputError):
            generate_desired(plant, [0.5, 0.0, 0.3], steps=0)
        with pytest.raises(InvalidInputError):
            plant_metrics(plant, np.zeros(3), np.zeros(3))
