"""Cluster embedded nodes separately within each covariate block."""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from .sampler import NodeAttributes, make_rng

N_RESTARTS = 10
KMEANS_MAX_ITER = 300
EM_MAX_ITER = 300
EM_TOL = 1e-6
RIDGE = 1e-6
# tolerated relative log-likelihood decrease caused by the covariance ridge
EM_MONOTONE_RTOL = 1e-7


class UndersizedBlockError(ValueError):
    pass


class EMDivergenceError(RuntimeError):
    pass


def partition_by_covariates(attrs: NodeAttributes) -> dict[tuple[int, ...], np.ndarray]:
    """Map each observed covariate vector to the sorted 0-based node ids bearing it."""
    if attrs.n == 0:
        return {}
    configs, inverse = np.unique(attrs.Z, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(len(configs) + 1))
    return {tuple(int(v) for v in configs[c]): order[bounds[c]:bounds[c + 1]]
            for c in range(len(configs))}


def _canonical_labels(labels):
    # relabel clusters 1..K in order of first appearance
    _, first = np.unique(labels, return_index=True)
    mapping = np.empty(labels.max() + 1, dtype=np.int64)
    mapping[labels[np.sort(first)]] = np.arange(1, first.size + 1)
    return mapping[labels]


def _sq_dists(X, C):
    d = (X * X).sum(1)[:, None] - 2 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeans_pp(X, K, rng):
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    closest = ((X - centers[0]) ** 2).sum(1)
    for _ in range(1, K):
        total = closest.sum()
        if total > 0:
            i = rng.choice(n, p=closest / total)
        else:
            i = rng.integers(n)
        centers.append(X[i])
        closest = np.minimum(closest, ((X - X[i]) ** 2).sum(1))
    return np.array(centers)


def _lloyd(X, centers, max_iter=KMEANS_MAX_ITER):
    K = centers.shape[0]
    labels = None
    for _ in range(max_iter):
        D = _sq_dists(X, centers)
        new = D.argmin(1)
        counts = np.bincount(new, minlength=K)
        for k in np.flatnonzero(counts == 0):
            # re-seed an empty cluster at the point farthest from its center
            far = D[np.arange(len(X)), new].argmax()
            new[far] = k
            D[far] = 0.0
            counts = np.bincount(new, minlength=K)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        centers = np.array([X[labels == k].mean(0) for k in range(K)])
    wcss = float(((X - centers[labels]) ** 2).sum())
    return labels, centers, wcss


def _check_points(points, K):
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if K < 1:
        raise ValueError("K must be positive")
    if X.shape[0] < K:
        raise ValueError(f"need at least K={K} points, got {X.shape[0]}")
    return X


def kmeans(points, K: int, seed=0, n_init: int = N_RESTARTS) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding, best of ``n_init`` restarts.

    Returns labels in ``1..K`` numbered by first appearance.
    """
    X = _check_points(points, K)
    best = None
    for r in range(n_init):
        rng = make_rng(seed, r)
        labels, _, wcss = _lloyd(X, _kmeans_pp(X, K, rng))
        if best is None or wcss < best[1] - 1e-12 * max(1.0, abs(best[1])):
            best = (labels, wcss)
    return _canonical_labels(best[0])


def _estep(X, weights, means, covs):
    n, d = X.shape
    K = means.shape[0]
    logp = np.empty((n, K))
    for k in range(K):
        L = np.linalg.cholesky(covs[k])
        sol = np.linalg.solve(L, (X - means[k]).T)
        logdet = 2 * np.log(np.diag(L)).sum()
        logp[:, k] = -0.5 * ((sol ** 2).sum(0) + logdet + d * np.log(2 * np.pi))
    logp += np.log(weights)
    norm = logsumexp(logp, axis=1)
    return np.exp(logp - norm[:, None]), float(norm.sum())


def _mstep(X, resp, floor):
    n, d = X.shape
    Nk = resp.sum(0) + 1e-12
    weights = Nk / n
    means = (resp.T @ X) / Nk[:, None]
    covs = np.empty((means.shape[0], d, d))
    for k in range(means.shape[0]):
        diff = X - means[k]
        S = (resp[:, k, None] * diff).T @ diff / Nk[k]
        ridge = max(RIDGE * np.trace(S) / d, floor)
        covs[k] = S + ridge * np.eye(d)
    return weights, means, covs


def gmm_em(points, K: int, seed=0, n_init: int = N_RESTARTS, max_iter: int = EM_MAX_ITER,
           tol: float = EM_TOL, return_trace: bool = False):
    """Full-covariance Gaussian mixture fitted by EM; hard labels in ``1..K``.

    Each restart is initialised from a single k-means++/Lloyd run. The
    log-likelihood is checked to be nondecreasing at every iteration up to a
    small slack for the covariance ridge. With ``return_trace`` the
    log-likelihood sequence of the winning restart is returned as well.
    """
    X = _check_points(points, K)
    n, d = X.shape
    if K == 1:
        labels = np.ones(n, dtype=np.int64)
        return (labels, [0.0]) if return_trace else labels
    scale = float(np.trace(np.atleast_2d(np.cov(X.T, bias=True)))) / d
    floor = 1e-12 * scale if scale > 0 else 1e-12

    best = None
    for r in range(n_init):
        rng = make_rng(seed, r)
        init, _, _ = _lloyd(X, _kmeans_pp(X, K, rng))
        resp = np.zeros((n, K))
        resp[np.arange(n), init] = 1.0
        params = _mstep(X, resp, floor)
        trace = []
        for _ in range(max_iter):
            resp, ll = _estep(X, *params)
            if trace:
                prev = trace[-1]
                if ll < prev - EM_MONOTONE_RTOL * max(1.0, abs(prev)):
                    raise EMDivergenceError(f"EM log-likelihood decreased from {prev} to {ll}")
                trace.append(ll)
                if ll - prev <= tol * max(1.0, abs(prev)):
                    break
            else:
                trace.append(ll)
            params = _mstep(X, resp, floor)
        if best is None or trace[-1] > best[1]:
            best = (resp.argmax(1), trace[-1], trace)
    labels = _canonical_labels(best[0])
    if return_trace:
        return labels, best[2]
    return labels


METHODS = {"gmm": gmm_em, "kmeans": kmeans}


def cluster_by_covariate(embedding, partition: dict, K: int, method: str = "gmm",
                         seed=0) -> dict[tuple[int, ...], np.ndarray]:
    """Cluster the embedding rows of each covariate block independently.

    Returns, for every configuration ``z``, labels in ``1..K`` aligned with
    ``partition[z]``.
    """
    try:
        fn = METHODS[method]
    except KeyError:
        raise ValueError(f"unknown clustering method {method!r}") from None
    X = np.asarray(embedding, dtype=float)
    out = {}
    for z, nodes in sorted(partition.items()):
        if len(nodes) < K:
            raise UndersizedBlockError(
                f"covariate configuration {z} has {len(nodes)} nodes, fewer than K={K}")
        out[z] = fn(X[nodes], K, seed=int(make_rng(seed, *z).integers(2**63)))
    return out
