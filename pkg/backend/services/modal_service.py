"""
Modal analysis service.
Solves K phi = w^2 M phi on the base mesh, fixes a deterministic basis
(canonical rigid modes, tie order, sign) and truncates to the m lowest modes.
"""

import logging
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from config import Settings, get_settings
from models.mesh import AssembledSystem
from models.modal import RIGID_MODE_COUNT, ModalBasis, rectifier_diagonal
from services.exceptions import InvalidRequestError, NumericError
from services.fem_service import rigid_motions

logger = logging.getLogger(__name__)

DUMP_HEADER = "# modal-basis v1"


def node_dofs(node_ids: Sequence[int]) -> np.ndarray:
    """Flattened x, y, z DOF indices of the given nodes."""
    ids = np.asarray(node_ids, dtype=np.int64).reshape(-1)
    return (3 * ids[:, None] + np.arange(3)[None, :]).reshape(-1)


def _reference_eigenvalue(system: AssembledSystem) -> float:
    return float(system.stiffness.diagonal().sum() / system.mass.diagonal().sum())


def _dense_eigenpairs(system: AssembledSystem) -> Tuple[np.ndarray, np.ndarray]:
    try:
        return la.eigh(system.stiffness.toarray(), system.mass.toarray())
    except la.LinAlgError as e:
        raise NumericError(f"Dense eigensolver failed: {e}", diagnostics={"n_dof": system.n_dof}) from e


def _sparse_eigenpairs(system: AssembledSystem, k: int, settings: Settings) -> Tuple[np.ndarray, np.ndarray]:
    sigma = settings.eigen_shift * _reference_eigenvalue(system)
    try:
        vals, vecs = eigsh(
            system.stiffness.tocsc(), k=k, M=system.mass.tocsc(), sigma=sigma, which="LM",
            v0=np.ones(system.n_dof), maxiter=settings.eigen_max_iterations,
        )
    except ArpackNoConvergence as e:
        raise NumericError(
            f"Shift-invert Lanczos did not converge for {k} modes",
            diagnostics={
                "requested": k,
                "converged": len(e.eigenvalues),
                "maxiter": settings.eigen_max_iterations,
                "sigma": sigma,
            },
        ) from e
    norms = np.sqrt(np.einsum("ij,ij->j", vecs, system.mass @ vecs))
    return vals, vecs / norms


def m_orthonormalize(vectors: np.ndarray, mass: sp.spmatrix) -> np.ndarray:
    """Modified Gram-Schmidt (two passes) in the M inner product."""
    basis = []
    for v in np.asarray(vectors, dtype=float).T:
        w = v.copy()
        for _ in range(2):
            for b in basis:
                w -= (b @ (mass @ w)) * b
        w /= np.sqrt(w @ (mass @ w))
        basis.append(w)
    return np.column_stack(basis)


def _canonical_rigid_block(
    vals: np.ndarray, vecs: np.ndarray, system: AssembledSystem, settings: Settings
) -> int:
    """Replace the zero-frequency block by canonical rigid motions; return its size."""
    if system.nodes is None or vals.size < RIGID_MODE_COUNT:
        return 0
    threshold = settings.rigid_mode_tolerance * _reference_eigenvalue(system)
    zero = int(np.count_nonzero(vals <= threshold))
    if zero != RIGID_MODE_COUNT:
        logger.debug(f"Found {zero} near-zero eigenvalues; keeping solver rigid modes")
        return 0
    center = system.center if system.center is not None else system.nodes.mean(axis=0)
    vecs[:, :RIGID_MODE_COUNT] = m_orthonormalize(rigid_motions(system.nodes, center), system.mass)
    vals[:RIGID_MODE_COUNT] = 0.0
    return RIGID_MODE_COUNT


def _order_ties(vals: np.ndarray, vecs: np.ndarray, start: int, tolerance: float) -> None:
    """Within clusters of repeated eigenvalues, order modes by dominant-entry index."""
    i = start
    while i < vals.size:
        j = i + 1
        while j < vals.size and abs(vals[j] - vals[i]) <= tolerance * max(abs(vals[i]), abs(vals[j])):
            j += 1
        if j - i > 1:
            dominant = np.argmax(np.abs(vecs[:, i:j]), axis=0)
            order = np.argsort(dominant, kind="stable")
            vecs[:, i:j] = vecs[:, i:j][:, order]
            vals[i:j] = np.sort(vals[i:j])
        i = j


def _fix_signs(vecs: np.ndarray) -> None:
    dominant = np.argmax(np.abs(vecs), axis=0)
    signs = np.where(vecs[dominant, np.arange(vecs.shape[1])] < 0, -1.0, 1.0)
    vecs *= signs


def _build_basis(vals: np.ndarray, phi: np.ndarray, system: AssembledSystem, rigid: int) -> ModalBasis:
    k_phi = system.stiffness @ phi
    k_tilde = np.array([np.dot(phi[:, j], k_phi[:, j]) for j in range(phi.shape[1])])
    full = phi.T @ k_phi
    leak = np.abs(full - np.diag(np.diag(full))).max() if full.size > 1 else 0.0
    scale = max(np.abs(np.diag(full)).max(), _reference_eigenvalue(system))
    if leak > 1e-6 * scale:
        raise NumericError(
            "Modal stiffness is not diagonal",
            diagnostics={"leak": float(leak), "scale": float(scale)},
        )
    k_tilde = np.clip(k_tilde, 0.0, None)
    k_tilde[:rigid] = 0.0
    elastic_zero = np.flatnonzero(k_tilde[RIGID_MODE_COUNT:] == 0.0)
    if elastic_zero.size:
        raise NumericError(
            "Zero modal stiffness beyond the rigid modes; the rectifier is undefined",
            diagnostics={"modes": (elastic_zero + RIGID_MODE_COUNT).tolist()},
        )
    return ModalBasis(phi=phi, freqs=vals, k_tilde=k_tilde, rectifier=rectifier_diagonal(k_tilde))


def solve_modes(system: AssembledSystem, m: int, settings: Optional[Settings] = None) -> ModalBasis:
    """The m lowest-frequency M-orthonormal modes of an assembled system."""
    settings = settings or get_settings()
    n = system.n_dof
    if m < 1 or m > n:
        raise InvalidRequestError(f"Requested {m} modes from a system with {n} DOFs")

    k = min(max(m, RIGID_MODE_COUNT), n)
    if n <= settings.dense_eigen_limit or k >= n - 1:
        vals, vecs = _dense_eigenpairs(system)
        path = "dense"
    else:
        vals, vecs = _sparse_eigenpairs(system, k, settings)
        path = "shift-invert"
    order = np.argsort(vals, kind="stable")
    vals = np.array(vals[order], dtype=float)
    vecs = np.array(vecs[:, order], dtype=float)

    rigid = _canonical_rigid_block(vals, vecs, system, settings)
    _order_ties(vals, vecs, rigid, settings.degenerate_tolerance)
    _fix_signs(vecs)
    basis = _build_basis(vals[:m].copy(), vecs[:, :m].copy(), system, min(rigid, m))
    logger.info(f"Solved {m} modes ({path}, {n} DOFs, {rigid} canonical rigid modes)")
    return basis


def truncate_basis(basis: ModalBasis, m: int) -> ModalBasis:
    """Leading m modes of an existing basis."""
    if m < 1 or m > basis.m:
        raise InvalidRequestError(f"Cannot truncate a {basis.m}-mode basis to {m} modes")
    return ModalBasis(
        phi=basis.phi[:, :m], freqs=basis.freqs[:m],
        k_tilde=basis.k_tilde[:m], rectifier=basis.rectifier[:m],
    )


def rectified_projection(basis: ModalBasis, rows: Sequence[int]) -> np.ndarray:
    """(K_tilde + I6)^-1 [Phi_n]_rows^T, an m x 3|rows| matrix."""
    ids = np.asarray(rows, dtype=np.int64).reshape(-1)
    if ids.size == 0:
        raise InvalidRequestError("Rectified projection needs at least one node")
    n_nodes = basis.n_dof // 3
    if ids.min() < 0 or ids.max() >= n_nodes:
        raise InvalidRequestError(f"Node ids must lie in [0, {n_nodes})")
    return basis.rectifier[:, None] * basis.phi[node_dofs(ids)].T


def format_basis(basis: ModalBasis) -> str:
    """Text dump: header, dimensions, eigenvalues, K_tilde diagonal, then Phi row by row."""
    rows, cols = basis.phi.shape
    lines = [DUMP_HEADER, f"{rows} {cols}"]
    lines.append(" ".join("%.17g" % v for v in basis.freqs))
    lines.append(" ".join("%.17g" % v for v in basis.k_tilde))
    lines.extend(" ".join("%.17g" % v for v in row) for row in basis.phi)
    return "\n".join(lines) + "\n"


def parse_basis(text: str) -> ModalBasis:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or lines[0].strip() != DUMP_HEADER:
        raise InvalidRequestError("Not a modal-basis dump")
    try:
        rows, cols = (int(v) for v in lines[1].split())
        freqs = np.array([float(v) for v in lines[2].split()])
        k_tilde = np.array([float(v) for v in lines[3].split()])
        phi = np.array([[float(v) for v in line.split()] for line in lines[4:4 + rows]]).reshape(rows, cols)
    except (IndexError, ValueError) as e:
        raise InvalidRequestError(f"Malformed modal-basis dump: {e}") from e
    return ModalBasis(phi=phi, freqs=freqs, k_tilde=k_tilde, rectifier=rectifier_diagonal(k_tilde))


def dump_basis(basis: ModalBasis, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(format_basis(basis))
    return path


def load_basis(path: Union[str, Path]) -> ModalBasis:
    return parse_basis(Path(path).read_text())
