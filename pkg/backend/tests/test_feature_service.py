"""
Tests for arc-length resampling, level sampling and modal deformation features.
"""

import numpy as np
import pytest

from conftest import TOP_FACE
from models.features import FeatureVector, SamplingSet
from services.exceptions import DegenerateInputError, InvalidInputError
from services.feature_service import (
    MeasurementNoise,
    compute_features,
    feature_error,
    resample_polyline,
    sample_at_levels,
)
from services.mapping_service import reassemble_on_sampling_change
from services.mesh_service import euler_rotation, generate_bar_mesh, make_ellipsoid_spec


class TestResamplePolyline:
    """Equal arc-length spacing"""

    def test_straight_line(self):
        samples = resample_polyline([[0, 0, 0], [3, 0, 0]], 4).reshape(-1, 3)
        np.testing.assert_allclose(samples[:, 0], [0, 1, 2, 3])
        np.testing.assert_allclose(samples[:, 1:], 0.0)

    def test_corner(self):
        samples = resample_polyline([[0, 0, 0], [1, 0, 0], [1, 1, 0]], 3).reshape(-1, 3)
        np.testing.assert_allclose(samples, [[0, 0, 0], [1, 0, 0], [1, 1, 0]], atol=1e-15)

    def test_closed_square(self):
        square = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]]
        samples = resample_polyline(square, 8, closed=True).reshape(-1, 3)
        np.testing.assert_allclose(samples[::2], square, atol=1e-15)
        np.testing.assert_allclose(samples[1], [0.5, 0, 0])

    def test_repeated_vertices_ignored(self):
        line = resample_polyline([[0, 0, 0], [1, 0, 0], [1, 0, 0], [2, 0, 0]], 5)
        np.testing.assert_allclose(line.reshape(-1, 3)[:, 0], [0, 0.5, 1, 1.5, 2])

    def test_degenerate(self):
        with pytest.raises(DegenerateInputError):
            resample_polyline([[1, 1, 1], [1, 1, 1]], 3)
        with pytest.raises(InvalidInputError):
            resample_polyline([[0, 0, 0], [1, 0, 0]], 1)
        with pytest.raises(InvalidInputError):
            resample_polyline([[0, 0, 0]], 3)


class TestSampleAtLevels:

    def test_interpolates_crossings(self):
        line = [[0, 0, 0], [0, 4, 2]]
        samples = sample_at_levels(line, [1.0, 3.0], axis=1).reshape(-1, 3)
        np.testing.assert_allclose(samples, [[0, 1, 0.5], [0, 3, 1.5]])

    def test_out_of_range_snaps(self):
        line = [[0, 0, 0], [0, 1, 0], [0, 2, 1]]
        samples = sample_at_levels(line, [-1.0, 5.0], axis=1).reshape(-1, 3)
        np.testing.assert_allclose(samples, [[0, 0, 0], [0, 2, 1]])

    def test_first_crossing_wins(self):
        zigzag = [[0, 0, 0], [1, 2, 0], [2, 0, 0]]
        samples = sample_at_levels(zigzag, [1.0], axis=1).reshape(-1, 3)
        np.testing.assert_allclose(samples, [[0.5, 1.0, 0.0]])


@pytest.fixture(scope="module")
def top_face_projector(stock_basis, stock_mesh):
    """Benchmark top-face samples in the stock base-mesh frame"""
    bar = generate_bar_mesh((10.0, 3.0, 2.0), (10, 3, 2))
    rest = bar.nodes[TOP_FACE] - np.array([5.0, 1.5, 1.0])
    return reassemble_on_sampling_change(stock_basis, stock_mesh, rest, sample_ids=TOP_FACE)


class TestComputeFeatures:
    """s = D_Phi D_N (x - rest_eta)"""

    def test_zero_at_rest(self, top_face_projector):
        s = compute_features(top_face_projector, top_face_projector.rest_eta)
        assert s.m == 30
        assert s.norm() == 0.0

    def test_linear(self, top_face_projector, rng):
        eta = top_face_projector.rest_eta
        a, b = 0.01 * rng.normal(size=eta.size), 0.01 * rng.normal(size=eta.size)
        s_a = compute_features(top_face_projector, eta + a).values
        s_b = compute_features(top_face_projector, eta + b).values
        s_ab = compute_features(top_face_projector, eta + 2 * a - b).values
        np.testing.assert_allclose(s_ab, 2 * s_a - s_b, atol=1e-12)

    def test_translation_lands_in_rigid_modes(self, top_face_projector):
        shifted = top_face_projector.rest_eta.reshape(-1, 3) + np.array([0.1, -0.05, 0.02])
        s = compute_features(top_face_projector, shifted.reshape(-1)).values
        assert np.sum(s[6:] ** 2) <= 0.05 * np.sum(s ** 2)

    def test_sampling_set_ids(self, top_face_projector):
        positions = top_face_projector.rest_eta
        s = compute_features(top_face_projector, SamplingSet(positions=positions, ids=TOP_FACE))
        assert s.norm() == 0.0
        with pytest.raises(InvalidInputError):
            compute_features(top_face_projector, SamplingSet(positions=positions, ids=TOP_FACE[::-1]))

    def test_size_mismatch(self, top_face_projector):
        with pytest.raises(InvalidInputError):
            compute_features(top_face_projector, np.zeros(3))

    def test_frame_equivalence(self, stock_basis, stock_mesh, rng):
        """Features do not depend on where the object sits once samples are taken to the base frame"""
        bar = generate_bar_mesh((10.0, 3.0, 2.0), (10, 3, 2))
        spec = make_ellipsoid_spec((5.5, 2.0, 1.5), (3.0, -2.0, 7.0), euler_rotation((10.0, -20.0, 35.0)))
        local_rest = bar.nodes[TOP_FACE] - np.array([5.0, 1.5, 1.0])
        world_rest = spec.base_to_world(local_rest)
        displacement = 0.05 * rng.normal(size=local_rest.shape)

        local_proj = reassemble_on_sampling_change(stock_basis, stock_mesh, local_rest)
        world_proj = reassemble_on_sampling_change(stock_basis, stock_mesh, spec.world_to_base(world_rest))
        s_local = compute_features(local_proj, (local_rest + displacement).reshape(-1))
        moved = world_rest + spec.rotate_to_world(displacement)
        s_world = compute_features(world_proj, spec.world_to_base(moved).reshape(-1))
        np.testing.assert_allclose(s_world.values, s_local.values, atol=1e-10)


class TestFeatureError:

    def test_difference(self):
        e = feature_error(FeatureVector(values=[1.0, 2.0]), FeatureVector(values=[0.5, 3.0]))
        np.testing.assert_allclose(e.values, [0.5, -1.0])

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInputError):
            feature_error(FeatureVector(values=[1.0]), FeatureVector(values=[1.0, 2.0]))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            FeatureVector(values=[np.nan])


class TestMeasurementNoise:

    def test_zero_std_is_identity(self):
        x = np.arange(6.0)
        assert MeasurementNoise(0.0, seed=3).apply(x) is x

    def test_seeded(self):
        x = np.zeros(30)
        first = MeasurementNoise(0.01, seed=7).apply(x)
        second = MeasurementNoise(0.01, seed=7).apply(x)
        assert np.array_equal(first, second)
        assert 0.0 < first.std() < 0.05

    def test_negative_std(self):
        with pytest.raises(InvalidInputError):
            MeasurementNoise(-1.0)
