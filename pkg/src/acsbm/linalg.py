"""Dense and sparse symmetric linear algebra used by the fitting pipeline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment
from scipy.sparse.linalg import eigsh

DENSE_EIG_MAX_N = 2048
LANCZOS_TOL = 1e-8
LANCZOS_MAXITER = 5000
SYMMETRY_TOL = 1e-12


@dataclass(frozen=True)
class SymmetricEigen:
    values: np.ndarray
    vectors: np.ndarray


@dataclass(frozen=True)
class Assignment:
    """Permutation ``sigma`` of ``1..K`` with ``cost = sum_k C[sigma(k), k]``."""

    permutation: tuple[int, ...]
    cost: float


def _check_square(A, name="matrix"):
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be square, got shape {A.shape}")


def _check_symmetric(A, tol=SYMMETRY_TOL):
    _check_square(A)
    if sp.issparse(A):
        diff = abs(A - A.T)
        err = diff.max() if diff.nnz else 0.0
        scale = abs(A).max() if A.nnz else 0.0
    else:
        err = np.max(np.abs(A - A.T)) if A.size else 0.0
        scale = np.max(np.abs(A)) if A.size else 0.0
    if err > tol * max(1.0, scale):
        raise ValueError(f"matrix is not symmetric (max asymmetry {err:.3g})")


def fix_signs(vectors):
    """Flip columns so the first non-negligible coordinate of each is positive."""
    vectors = np.array(vectors, dtype=float, copy=True)
    if vectors.size == 0:
        return vectors
    thresh = 1e-10 * np.max(np.abs(vectors), axis=0, keepdims=True)
    nonzero = np.abs(vectors) > thresh
    first = np.argmax(nonzero, axis=0)
    signs = np.sign(vectors[first, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def sym_eig(A) -> SymmetricEigen:
    """Full eigendecomposition with eigenvalues in descending signed order."""
    A = np.asarray(A, dtype=float)
    _check_symmetric(A)
    values, vectors = np.linalg.eigh((A + A.T) / 2)
    order = np.argsort(-values, kind="stable")
    return SymmetricEigen(values[order], fix_signs(vectors[:, order]))


def _top_abs_eigenpairs(Y, d):
    n = Y.shape[0]
    if n <= DENSE_EIG_MAX_N or d >= n - 1:
        dense = Y.toarray() if sp.issparse(Y) else np.asarray(Y, dtype=float)
        eig = sym_eig(dense)
        keep = np.argsort(-np.abs(eig.values), kind="stable")[:d]
        return eig.values[keep], eig.vectors[:, keep]
    # deterministic start vector keeps embeddings reproducible
    v0 = np.random.default_rng(0).uniform(0.5, 1.5, size=n)
    op = Y.astype(float) if sp.issparse(Y) else np.asarray(Y, dtype=float)
    values, vectors = eigsh(op, k=d, which="LM", v0=v0, tol=LANCZOS_TOL,
                            maxiter=LANCZOS_MAXITER)
    return values, fix_signs(vectors)


def truncated_embedding(Y, d: int, return_values: bool = False):
    """Adjacency spectral embedding ``U |Lambda|^{1/2}`` of dimension ``d``.

    The ``d`` eigenpairs of largest magnitude are kept and the columns are
    ordered by descending signed eigenvalue. With ``return_values`` the kept
    eigenvalues are returned alongside the embedding.
    """
    _check_square(Y, "adjacency")
    n = Y.shape[0]
    if not 1 <= d <= n:
        raise ValueError(f"embedding dimension d={d} must lie in [1, {n}]")
    _check_symmetric(Y)
    values, vectors = _top_abs_eigenpairs(Y, d)
    order = np.argsort(-values, kind="stable")
    values, vectors = values[order], vectors[:, order]
    X = vectors * np.sqrt(np.abs(values))
    if return_values:
        return X, values
    return X


def matrix_abs(A) -> np.ndarray:
    """Matrix absolute value ``|A| = (A^T A)^{1/2}`` of a symmetric matrix."""
    eig = sym_eig(A)
    return (eig.vectors * np.abs(eig.values)) @ eig.vectors.T


def kron(A, B) -> np.ndarray:
    return np.kron(np.asarray(A, dtype=float), np.asarray(B, dtype=float))


def _lsa_cost(C, rows, cols):
    if len(rows) == 0:
        return 0.0
    sub = C[np.ix_(rows, cols)]
    r, c = linear_sum_assignment(sub)
    return float(sub[r, c].sum())


def solve_assignment(C) -> Assignment:
    """Minimise ``sum_k C[sigma(k), k]`` over permutations ``sigma``.

    Among optimal permutations the lexicographically smallest one (as the
    tuple ``(sigma(1), ..., sigma(K))``) is returned.
    """
    C = np.asarray(C, dtype=float)
    _check_square(C, "cost matrix")
    if np.isnan(C).any():
        raise ValueError("cost matrix contains NaN")
    if not np.isfinite(C).all():
        raise ValueError("cost matrix contains infinite entries")
    K = C.shape[0]
    if K == 0:
        return Assignment((), 0.0)
    best = _lsa_cost(C, list(range(K)), list(range(K)))
    tol = 1e-10 * max(1.0, float(np.abs(C).max()) * K)

    sigma = []
    fixed = 0.0
    free_rows = list(range(K))
    for k in range(K):
        rest_cols = list(range(k + 1, K))
        for r in free_rows:
            rows = [x for x in free_rows if x != r]
            total = fixed + C[r, k] + _lsa_cost(C, rows, rest_cols)
            if total <= best + tol:
                sigma.append(r)
                fixed += C[r, k]
                free_rows = rows
                break
        else:  # pragma: no cover - guarded by tolerance
            raise RuntimeError("assignment tie-breaking failed")
    cost = float(sum(C[sigma[k], k] for k in range(K)))
    return Assignment(tuple(r + 1 for r in sigma), cost)
