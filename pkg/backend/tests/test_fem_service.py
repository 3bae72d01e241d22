"""
Tests for linear tetrahedral stiffness and lumped mass assembly.
"""

import numpy as np
import pytest

from models.mesh import MaterialParams, SolidMesh
from services.exceptions import InvalidMeshError
from services.fem_service import (
    assemble_system,
    elastic_energy,
    elasticity_matrix,
    element_stiffness,
    rigid_motions,
)
from services.mesh_service import generate_bar_mesh

REFERENCE_TET = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
UNIT = MaterialParams(young_modulus=1.0, poisson_ratio=0.3, total_mass=1.0)
LAM = 0.3 / (1.3 * 0.4)
MU = 1.0 / 2.6


class TestElementStiffness:
    """Closed-form entries of the reference tetrahedron"""

    def test_reference_entries(self):
        ke = element_stiffness(REFERENCE_TET, UNIT)
        assert ke.shape == (12, 12)
        assert ke[0, 0] == pytest.approx((LAM + 4 * MU) / 6)
        assert ke[3, 3] == pytest.approx((LAM + 2 * MU) / 6)
        assert ke[0, 4] == pytest.approx(-MU / 6)
        assert ke[3, 1] == pytest.approx(-LAM / 6)

    def test_symmetric_and_rigid_free(self):
        ke = element_stiffness(REFERENCE_TET, UNIT)
        np.testing.assert_allclose(ke, ke.T, atol=1e-14)
        motions = rigid_motions(REFERENCE_TET, REFERENCE_TET.mean(axis=0))
        np.testing.assert_allclose(ke @ motions, 0.0, atol=1e-14)

    def test_elasticity_matrix(self):
        D = elasticity_matrix(UNIT)
        assert D[0, 0] == pytest.approx(LAM + 2 * MU)
        assert D[0, 1] == pytest.approx(LAM)
        assert D[3, 3] == pytest.approx(MU)
        assert D[0, 3] == 0.0


class TestAssembleSystem:
    """Global K and M"""

    def test_shapes_and_symmetry(self, stock_system, stock_mesh):
        K = stock_system.stiffness
        assert K.shape == (stock_mesh.n_dof, stock_mesh.n_dof)
        assert abs(K - K.T).max() == 0.0

    def test_rigid_nullspace(self, stock_system, stock_mesh):
        motions = rigid_motions(stock_mesh.nodes, stock_mesh.center)
        residual = np.linalg.norm(stock_system.stiffness @ motions)
        scale = np.linalg.norm(stock_system.stiffness.toarray()) * np.linalg.norm(motions)
        assert residual <= 1e-10 * scale

    def test_lumped_mass(self, stock_system, stock_mesh):
        diagonal = stock_system.mass.diagonal().reshape(-1, 3)
        np.testing.assert_allclose(diagonal.sum(axis=0), 1000.0)
        assert np.all(diagonal[:, 0] == diagonal[:, 1])
        assert stock_system.mass.nnz == stock_mesh.n_dof

    def test_linear_in_young_modulus(self, small_mesh, small_material):
        doubled = small_material.model_copy(update={"young_modulus": 2 * small_material.young_modulus})
        K1 = assemble_system(small_mesh, small_material).stiffness
        K2 = assemble_system(small_mesh, doubled).stiffness
        np.testing.assert_allclose(K2.toarray(), 2 * K1.toarray(), rtol=1e-12, atol=1e-12)

    def test_uniform_strain_energy(self):
        """Uniaxial strain on a bar is reproduced exactly by linear elements"""
        bar = generate_bar_mesh((10.0, 3.0, 2.0), (10, 3, 2))
        system = assemble_system(bar, UNIT)
        u = np.zeros_like(bar.nodes)
        u[:, 0] = 0.01 * bar.nodes[:, 0]
        expected = 0.5 * 60.0 * (LAM + 2 * MU) * 1e-4
        assert elastic_energy(system.stiffness, u) == pytest.approx(expected, rel=1e-10)
        assert system.volume == pytest.approx(60.0)

    def test_inverted_tet(self):
        mesh = SolidMesh(nodes=REFERENCE_TET, tets=[[0, 2, 1, 3]], surface_tris=[[0, 1, 2]])
        with pytest.raises(InvalidMeshError):
            assemble_system(mesh, UNIT)


class TestElasticEnergy:

    def test_quadratic(self, small_mesh, small_material, rng):
        system = assemble_system(small_mesh, small_material)
        u = rng.normal(size=small_mesh.n_dof)
        energy = elastic_energy(system.stiffness, u)
        assert energy > 0
        assert elastic_energy(system.stiffness, 2 * u) == pytest.approx(4 * energy)

    def test_rigid_motion_is_free(self, small_mesh, small_material):
        system = assemble_system(small_mesh, small_material)
        rotation = rigid_motions(small_mesh.nodes, small_mesh.center)[:, 4]
        stretch = np.zeros(small_mesh.n_dof)
        stretch[0::3] = 0.01 * small_mesh.nodes[:, 0]
        assert elastic_energy(system.stiffness, rotation) <= 1e-8 * elastic_energy(system.stiffness, stretch)
