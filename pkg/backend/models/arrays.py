"""
Array field types for the pydantic domain models.
Arrays are copied on validation and made read-only so models stay immutable.
"""

from typing import Annotated, Any

import numpy as np
import scipy.sparse as sp
from pydantic import BeforeValidator


def readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def _as_float_array(value: Any) -> np.ndarray:
    return readonly(np.array(value, dtype=float, copy=True))


def _as_index_array(value: Any) -> np.ndarray:
    array = np.array(value, copy=True)
    if array.size and not np.issubdtype(array.dtype, np.integer):
        if not np.all(np.equal(np.mod(array, 1), 0)):
            raise ValueError("index arrays must hold integers")
    return readonly(array.astype(np.int64))


def _as_csr(value: Any) -> sp.csr_matrix:
    return sp.csr_matrix(value, dtype=float, copy=True)


FloatArray = Annotated[np.ndarray, BeforeValidator(_as_float_array)]
IndexArray = Annotated[np.ndarray, BeforeValidator(_as_index_array)]
SparseMatrix = Annotated[sp.csr_matrix, BeforeValidator(_as_csr)]
