"""
Modal basis cache.
Keeps solved bases per (base mesh, material) so runs sharing a base mesh reuse one eigensolve.
"""

import hashlib
import logging
import threading
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from config import Settings, get_settings
from models.mesh import MaterialParams, SolidMesh
from models.modal import ModalBasis
from services.fem_service import assemble_system
from services.modal_service import load_basis, dump_basis, solve_modes, truncate_basis

logger = logging.getLogger(__name__)


def basis_key(mesh: SolidMesh, material: MaterialParams) -> str:
    """SHA-256 of the base-frame mesh arrays and the material."""
    digest = hashlib.sha256()
    for array in (mesh.nodes, mesh.tets, mesh.surface_tris, mesh.center):
        digest.update(np.ascontiguousarray(array).tobytes())
    digest.update(material.model_dump_json().encode("utf-8"))
    return digest.hexdigest()


class ModalCache:
    """Thread-safe store of modal bases.

    The basis with the most modes is kept per key; smaller requests are served
    by truncation and count as hits. Dense-sized systems are solved in full so
    every later request for the same base mesh hits.
    """

    def __init__(self, settings: Optional[Settings] = None):
        self.settings = settings or get_settings()
        self.store: Dict[str, ModalBasis] = {}
        self.hits = 0
        self.misses = 0
        self.lock = threading.Lock()
        self.directory: Optional[Path] = self.settings.modal_cache_dir

    def initialize(self, directory: Optional[Path] = None):
        """Set (and create) the optional on-disk mirror."""
        if directory is not None:
            self.directory = Path(directory)
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)
            logger.info(f"Modal cache mirrored to {self.directory}")

    def _disk_path(self, key: str) -> Optional[Path]:
        return None if self.directory is None else self.directory / f"{key}.basis"

    def _lookup(self, key: str, m: int) -> Optional[ModalBasis]:
        stored = self.store.get(key)
        if stored is None:
            path = self._disk_path(key)
            if path is not None and path.exists():
                stored = load_basis(path)
                self.store[key] = stored
        if stored is not None and stored.m >= m:
            return stored
        return None

    def get_basis(self, mesh: SolidMesh, material: MaterialParams, m: int) -> ModalBasis:
        """Return the m-mode basis of a base mesh, solving only on a miss."""
        key = basis_key(mesh, material)
        with self.lock:
            stored = self._lookup(key, m)
            if stored is not None:
                self.hits += 1
                return stored if stored.m == m else truncate_basis(stored, m)

            self.misses += 1
            system = assemble_system(mesh, material)
            solve_count = system.n_dof if system.n_dof <= self.settings.dense_eigen_limit else m
            basis = solve_modes(system, max(m, solve_count), self.settings)
            self.store[key] = basis
            path = self._disk_path(key)
            if path is not None:
                dump_basis(basis, path)
            logger.info(f"Modal cache miss for {key[:12]}: stored {basis.m} modes")
            return basis if basis.m == m else truncate_basis(basis, m)

    def clear(self):
        with self.lock:
            self.store.clear()
            self.hits = 0
            self.misses = 0


# Global modal cache instance
modal_cache = ModalCache()


def get_modal_cache() -> ModalCache:
    """Get the process-wide modal cache."""
    return modal_cache
