"""
Finite element service.
Assembles linear (constant-strain) tetrahedral stiffness and lumped mass matrices.
"""

import logging
from typing import Tuple

import numpy as np
import scipy.sparse as sp

from models.mesh import AssembledSystem, MaterialParams, SolidMesh
from services.exceptions import InvalidMeshError
from services.mesh_service import tet_volumes

logger = logging.getLogger(__name__)

STOCK_BASE_MATERIAL = MaterialParams(young_modulus=1e5, poisson_ratio=0.45, total_mass=1000.0)


def elasticity_matrix(material: MaterialParams) -> np.ndarray:
    """Isotropic 6x6 constitutive matrix with engineering shear strains."""
    E = material.young_modulus
    nu = material.poisson_ratio
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    mu = E / (2 * (1 + nu))
    D = np.zeros((6, 6))
    D[:3, :3] = lam
    D[0, 0] = D[1, 1] = D[2, 2] = lam + 2 * mu
    D[3, 3] = D[4, 4] = D[5, 5] = mu
    return D


def shape_gradients(coords: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Shape-function gradients (T, 4, 3) and signed volumes of (T, 4, 3) tets."""
    edges = np.stack([coords[:, 1] - coords[:, 0], coords[:, 2] - coords[:, 0], coords[:, 3] - coords[:, 0]], axis=2)
    volumes = np.linalg.det(edges) / 6.0
    inverse = np.linalg.inv(edges)
    grads = np.empty((coords.shape[0], 4, 3))
    grads[:, 1:, :] = inverse
    grads[:, 0, :] = -inverse.sum(axis=1)
    return grads, volumes


def strain_displacement(grads: np.ndarray) -> np.ndarray:
    """B matrices (T, 6, 12) ordered xx, yy, zz, xy, yz, zx."""
    count = grads.shape[0]
    B = np.zeros((count, 6, 12))
    for a in range(4):
        bx, by, bz = grads[:, a, 0], grads[:, a, 1], grads[:, a, 2]
        c = 3 * a
        B[:, 0, c] = bx
        B[:, 1, c + 1] = by
        B[:, 2, c + 2] = bz
        B[:, 3, c] = by
        B[:, 3, c + 1] = bx
        B[:, 4, c + 1] = bz
        B[:, 4, c + 2] = by
        B[:, 5, c] = bz
        B[:, 5, c + 2] = bx
    return B


def element_stiffness(coords: np.ndarray, material: MaterialParams) -> np.ndarray:
    """Element stiffness V B^T D B for (T, 4, 3) or (4, 3) coordinates."""
    coords = np.asarray(coords, dtype=float)
    single = coords.ndim == 2
    if single:
        coords = coords[None]
    grads, volumes = shape_gradients(coords)
    B = strain_displacement(grads)
    D = elasticity_matrix(material)
    ke = volumes[:, None, None] * np.einsum("tki,kl,tlj->tij", B, D, B)
    return ke[0] if single else ke


def element_dofs(tets: np.ndarray) -> np.ndarray:
    """Global DOF indices (T, 12) of every element."""
    return (3 * tets[:, :, None] + np.arange(3)[None, None, :]).reshape(-1, 12)


def scatter(values: np.ndarray, dofs: np.ndarray, n_dof: int) -> sp.csr_matrix:
    """Sum (T, 12, 12) element blocks into a symmetric global matrix."""
    rows = np.repeat(dofs, 12, axis=1).ravel()
    cols = np.tile(dofs, (1, 12)).ravel()
    matrix = sp.coo_matrix((values.ravel(), (rows, cols)), shape=(n_dof, n_dof)).tocsr()
    return ((matrix + matrix.T) * 0.5).tocsr()


def lumped_mass(mesh: SolidMesh, volumes: np.ndarray, total_mass: float) -> np.ndarray:
    """Nodal masses distributing total_mass by a quarter of each tet volume."""
    share = np.zeros(mesh.n_nodes)
    np.add.at(share, mesh.tets.ravel(), np.repeat(volumes / 4.0, 4))
    return total_mass * share / volumes.sum()


def assemble_system(mesh: SolidMesh, material: MaterialParams) -> AssembledSystem:
    """Global K and lumped M of an unconstrained mesh."""
    volumes = tet_volumes(mesh.nodes, mesh.tets)
    bad = np.flatnonzero(volumes <= 0)
    if bad.size:
        raise InvalidMeshError(
            f"Cannot assemble: {bad.size} tetrahedra have non-positive volume (first: tet {int(bad[0])})"
        )
    ke = element_stiffness(mesh.nodes[mesh.tets], material)
    K = scatter(ke, element_dofs(mesh.tets), mesh.n_dof)
    masses = lumped_mass(mesh, volumes, material.total_mass)
    M = sp.diags(np.repeat(masses, 3)).tocsr()
    logger.info(f"Assembled system: {mesh.n_dof} DOFs, {K.nnz} stiffness entries")
    return AssembledSystem(
        stiffness=K, mass=M, nodes=mesh.nodes, center=mesh.center, volume=float(volumes.sum())
    )


def rigid_motions(nodes: np.ndarray, center: np.ndarray) -> np.ndarray:
    """(3N, 6) translations x, y, z then rotations about x, y, z through center."""
    r = np.asarray(nodes, dtype=float) - np.asarray(center, dtype=float)
    n = r.shape[0]
    motions = np.zeros((n, 3, 6))
    for axis in range(3):
        motions[:, axis, axis] = 1.0
        omega = np.zeros(3)
        omega[axis] = 1.0
        motions[:, :, 3 + axis] = np.cross(omega, r)
    return motions.reshape(3 * n, 6)


def elastic_energy(stiffness: sp.spmatrix, displacement: np.ndarray) -> float:
    """Strain energy 0.5 u^T K u."""
    u = np.asarray(displacement, dtype=float).ravel()
    return float(0.5 * u @ (stiffness @ u))
