"""Block estimation, label reconciliation and the end-to-end ``fit`` driver."""

from __future__ import annotations

import itertools
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .clustering import cluster_by_covariate, partition_by_covariates
from .linalg import Assignment, solve_assignment, truncated_embedding
from .model import (CanonicalPositions, LinkFunction, SubcommunityIndex,
                    canonical_positions, subcommunity_unindex)
from .sampler import Network, empirical_block_density, make_rng

log = logging.getLogger(__name__)

GAP_BRUTE_FORCE_MAX_K = 7


class FitStageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


class IdentifiabilityError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BlockEstimate:
    matrix: np.ndarray
    index: SubcommunityIndex


@dataclass(frozen=True, eq=False)
class FitResult:
    """Estimated communities plus the intermediate quantities of the fit.

    ``sigma_hat[z]`` is the minimiser of the matching objective written as a
    tuple ``(sigma(1), ..., sigma(K))``: reference cluster ``k`` is paired with
    cluster ``sigma(k)`` of configuration ``z``. A node labelled ``a`` within
    ``z`` therefore receives the final label ``sigma^{-1}(a)``.
    """

    theta_hat: np.ndarray
    sigma_hat: dict
    block_estimate: BlockEstimate
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self, misclassification: float | None = None) -> dict:
        return {
            "theta_hat": [int(v) for v in self.theta_hat],
            "sigma_hat": {config_key(z): list(s) for z, s in sorted(self.sigma_hat.items())},
            "misclassification": None if misclassification is None else float(misclassification),
            "B_tilde_hat": self.block_estimate.matrix.tolist(),
            "timings_ms": dict(self.diagnostics.get("timings_ms", {})),
        }


def config_key(z) -> str:
    return ",".join(str(int(v)) for v in z)


def subcommunity_labels(net: Network, labels: dict, idx: SubcommunityIndex) -> np.ndarray:
    """Subcommunity of every node given per-configuration cluster labels."""
    partition = partition_by_covariates(net.attributes)
    sub = np.zeros(net.n, dtype=np.int64)
    for z, nodes in partition.items():
        if z not in labels:
            raise ValueError(f"no labels for covariate configuration {z}")
        lab = np.asarray(labels[z], dtype=np.int64)
        if lab.shape != nodes.shape:
            raise ValueError(f"labels for {z} do not cover its {nodes.size} nodes")
        sub[nodes] = idx.index(lab, np.broadcast_to(z, (nodes.size, len(z))))
    return sub


def estimate_block_matrix(net: Network, labels: dict, idx: SubcommunityIndex) -> BlockEstimate:
    sub = subcommunity_labels(net, labels, idx)
    return BlockEstimate(empirical_block_density(net, sub, idx.size), idx)


def estimated_positions(est: BlockEstimate) -> CanonicalPositions:
    return canonical_positions(est.matrix)


def matching_costs(pos: CanonicalPositions, idx: SubcommunityIndex, z) -> np.ndarray:
    """``C[a, k] = ||X(a, z) - X(k, 1_M)||^2`` over community labels ``a, k``."""
    X = pos.X
    if np.isnan(X).any():
        raise ValueError("latent positions contain NaN")
    ks = np.arange(1, idx.K + 1)
    rows_z = idx.index(ks, np.broadcast_to(tuple(z), (idx.K, idx.M))) - 1
    rows_ref = idx.index(ks, np.ones((idx.K, idx.M), dtype=np.int64)) - 1
    diff = X[rows_z][:, None, :] - X[rows_ref][None, :, :]
    return (diff ** 2).sum(-1)


def match_to_reference(pos: CanonicalPositions, idx: SubcommunityIndex, z) -> Assignment:
    """Permutation pairing each reference cluster with a cluster of ``z``."""
    return solve_assignment(matching_costs(pos, idx, z))


def _second_best_gap(C, best_cost):
    K = C.shape[0]
    if K < 2 or K > GAP_BRUTE_FORCE_MAX_K:
        return None
    cols = np.arange(K)
    costs = sorted(float(C[list(p), cols].sum()) for p in itertools.permutations(range(K)))
    return costs[1] - best_cost


def reconcile_labels(pos: CanonicalPositions, idx: SubcommunityIndex, labels: dict, partition: dict):
    """Align every configuration's labels with the reference ``z = (1, ..., 1)``.

    Returns ``(theta_hat, sigma, costs, gaps)``; ``costs`` and ``gaps`` are keyed
    by :func:`config_key` and hold the optimal and second-best-minus-optimal cost.
    """
    K = idx.K
    n = sum(v.size for v in partition.values())
    sigma, costs, gaps = {}, {}, {}
    theta_hat = np.zeros(n, dtype=np.int64)
    for z in idx.configurations():
        C = matching_costs(pos, idx, z)
        a = solve_assignment(C)
        sigma[z] = a.permutation
        costs[config_key(z)] = a.cost
        gaps[config_key(z)] = _second_best_gap(C, a.cost)
        inverse = np.empty(K, dtype=np.int64)
        inverse[np.asarray(a.permutation) - 1] = np.arange(1, K + 1)
        theta_hat[partition[z]] = inverse[np.asarray(labels[z]) - 1]
    return theta_hat, sigma, costs, gaps


def fit(net: Network, K: int, d: int | None = None, method: str = "gmm", seed=0,
        levels=None) -> FitResult:
    """Spectral recovery of latent communities from a network with covariates.

    ``levels`` defaults to the largest observed value of each covariate.
    The embedding dimension defaults to ``K * Ltilde``.
    """
    attrs = net.attributes
    levels = tuple(levels) if levels is not None else attrs.levels()
    idx = SubcommunityIndex(K, levels)
    timings = {}

    def stage(name, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            out = fn(*args, **kwargs)
        except Exception as exc:
            raise FitStageError(name, exc) from exc
        timings[name] = (time.perf_counter() - t0) * 1e3
        return out

    partition = stage("partition", partition_by_covariates, attrs)
    configs = idx.configurations()
    unknown = set(partition) - set(configs)
    if unknown:
        raise FitStageError("partition", ValueError(f"covariates {sorted(unknown)[0]} exceed levels {levels}"))
    missing = [z for z in configs if z not in partition]
    if missing:
        raise FitStageError("partition", ValueError(f"covariate configuration {missing[0]} has no nodes"))

    min_block = min(v.size for v in partition.values())
    d_used = idx.size if d is None else int(d)
    if d is None and d_used > max(1, min_block - 1):
        log.warning("embedding dimension %d capped at %d (smallest covariate block has %d nodes)",
                    d_used, max(1, min_block - 1), min_block)
        d_used = max(1, min_block - 1)
    d_used = min(d_used, net.n)

    A = net.adjacency()
    X_hat, eigvals = stage("embed", truncated_embedding, A, d_used, return_values=True)
    labels = stage("cluster", cluster_by_covariate, X_hat, partition, K, method,
                   seed=int(make_rng(seed, 7).integers(2**63)))
    est = stage("estimate", estimate_block_matrix, net, labels, idx)
    pos = stage("positions", estimated_positions, est)

    theta_hat, sigma, costs, gaps = stage("match", reconcile_labels, pos, idx, labels, partition)
    diagnostics = {
        "timings_ms": timings,
        "embedding_dim": d_used,
        "embedding_eigenvalues": eigvals.tolist(),
        "signature": pos.signature,
        "matching_cost": costs,
        "matching_gap": gaps,
    }
    return FitResult(theta_hat, sigma, est, diagnostics)


@dataclass(frozen=True, eq=False)
class Coefficients:
    B: np.ndarray
    beta: np.ndarray
    residual_norm: float
    equations: int


def recover_coefficients(est: BlockEstimate, link) -> Coefficients:
    """Least-squares ``(B, beta)`` from an estimated subcommunity matrix.

    Solves ``g(est) ~ B boxplus beta_1 I boxplus ... boxplus beta_M I`` over
    the upper triangle of ``est``. For links other than the identity, entries
    equal to 0 or 1 have no finite link value and are skipped.
    """
    link = link if isinstance(link, LinkFunction) else LinkFunction.from_name(link)
    idx = est.index
    K, M = idx.K, idx.M
    pair_col = {}
    for k1 in range(1, K + 1):
        for k2 in range(k1, K + 1):
            pair_col[k1, k2] = len(pair_col)
    n_par = len(pair_col) + M
    cells = [subcommunity_unindex(r, idx) for r in range(1, idx.size + 1)]
    rows, y = [], []
    for r in range(idx.size):
        for s in range(r, idx.size):
            p = float(est.matrix[r, s])
            if link.kind != "identity" and not 0.0 < p < 1.0:
                continue
            (k1, z1), (k2, z2) = cells[r], cells[s]
            row = np.zeros(n_par)
            row[pair_col[min(k1, k2), max(k1, k2)]] = 1.0
            row[len(pair_col):] = [float(a == b) for a, b in zip(z1, z2)]
            rows.append(row)
            y.append(float(link.forward(p)))
    D = np.array(rows).reshape(-1, n_par)
    if D.shape[0] == 0 or np.linalg.matrix_rank(D) < n_par:
        raise IdentifiabilityError(
            f"design has rank {np.linalg.matrix_rank(D) if D.size else 0} < {n_par} parameters")
    y = np.array(y)
    coef, *_ = np.linalg.lstsq(D, y, rcond=None)
    B = np.zeros((K, K))
    for (k1, k2), c in pair_col.items():
        B[k1 - 1, k2 - 1] = B[k2 - 1, k1 - 1] = coef[c]
    return Coefficients(B, coef[len(pair_col):], float(np.linalg.norm(D @ coef - y)), D.shape[0])
