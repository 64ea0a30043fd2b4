"""
Column-major vectorisation and Kronecker bases.

All identities in the project use vec(A X B) = (Bᵀ ⊗ A) vec(X), where
vec stacks the columns of X.
"""

import numpy as np


def vec(matrix) -> np.ndarray:
    return np.asarray(matrix, dtype=np.float64).reshape(-1, order="F")


def unvec(vector, shape: tuple[int, int]) -> np.ndarray:
    return np.asarray(vector, dtype=np.float64).reshape(shape, order="F")


def kron_basis(left_basis, right_basis) -> np.ndarray:
    """Q_R ⊗ Q_L, so that (Q_R ⊗ Q_L)ᵀ vec(G) = vec(Q_Lᵀ G Q_R)."""
    return np.kron(right_basis, left_basis)
