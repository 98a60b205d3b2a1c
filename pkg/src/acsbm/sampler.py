"""Seeded sampling of node attributes and ACSBM networks, plus file I/O."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .model import (ModelSpec, ModelValidityError, SparsitySchedule,
                    build_tilde_B, subcommunity_unindex)

DENSE_MAX_N = 4096


def make_rng(seed, *stream) -> np.random.Generator:
    """Counter-based generator keyed by ``seed`` and an optional stream path."""
    entropy = [int(seed)] + [int(s) for s in stream]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def child_seed(seed, *stream) -> int:
    """Derive an independent 63-bit integer seed from ``(seed, *stream)``."""
    state = np.random.SeedSequence([int(seed)] + [int(s) for s in stream]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


@dataclass(frozen=True, eq=False)
class NodeAttributes:
    theta: np.ndarray | None  # (n,) labels in 1..K, None when unknown
    Z: np.ndarray             # (n, M) levels in 1..L_m

    def __post_init__(self):
        Z = np.asarray(self.Z, dtype=np.int64)
        if Z.ndim == 1:
            Z = Z[:, None]
        object.__setattr__(self, "Z", Z)
        if (Z < 1).any():
            raise ValueError("covariate levels are 1-indexed")
        if self.theta is not None:
            theta = np.asarray(self.theta, dtype=np.int64)
            if theta.shape != (Z.shape[0],):
                raise ValueError("theta and Z disagree on node count")
            if (theta < 1).any():
                raise ValueError("community labels are 1-indexed")
            object.__setattr__(self, "theta", theta)

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def M(self) -> int:
        return self.Z.shape[1]

    def levels(self) -> tuple[int, ...]:
        return tuple(int(v) for v in self.Z.max(axis=0)) if self.n else ()


@dataclass(frozen=True, eq=False)
class Network:
    """Undirected simple graph; ``edges`` is an (m, 2) array with u < v, sorted."""

    n: int
    edges: np.ndarray
    attributes: NodeAttributes

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if e.size:
            e = np.sort(e, axis=1)
            if (e[:, 0] == e[:, 1]).any():
                raise ValueError("self-loops are not allowed")
            if e.min() < 0 or e.max() >= self.n:
                raise ValueError("edge endpoint out of range")
            keys = np.unique(e[:, 0] * np.int64(self.n) + e[:, 1])
            e = np.column_stack([keys // self.n, keys % self.n])
        object.__setattr__(self, "edges", e)
        if self.attributes.n != self.n:
            raise ValueError("attributes do not match node count")

    @property
    def truth(self):
        return self.attributes.theta

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    def adjacency(self) -> sp.csr_matrix:
        u, v = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * u.size)
        A = sp.csr_matrix((data, (np.r_[u, v], np.r_[v, u])), shape=(self.n, self.n))
        A.sort_indices()
        return A

    def dense_adjacency(self) -> np.ndarray:
        if self.n > DENSE_MAX_N:
            raise MemoryError(f"refusing to materialise a dense {self.n}x{self.n} adjacency")
        return self.adjacency().toarray()

    def neighbors(self, i: int) -> np.ndarray:
        A = self.adjacency()
        return A.indices[A.indptr[i]:A.indptr[i + 1]]

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n)


# -- sampling -------------------------------------------------------------------


def sample_attributes(spec: ModelSpec, n: int, seed) -> NodeAttributes:
    if n < 1:
        raise ValueError("n must be >= 1")
    pmf = spec.attribute_pmf
    if (pmf < 0).any() or abs(pmf.sum() - 1) > 1e-12:
        raise ValueError("invalid attribute pmf")
    rng = make_rng(seed, 0)
    cells = rng.choice(pmf.size, size=n, p=pmf) + 1
    idx = spec.index
    table = np.array([[k, *z] for k, z in (subcommunity_unindex(r, idx) for r in range(1, idx.size + 1))])
    rows = table[cells - 1]
    return NodeAttributes(theta=rows[:, 0], Z=rows[:, 1:])


def _unrank_upper(k, size):
    """Map ranks in ``0..size*(size-1)/2`` to pairs i < j (ordered by j, then i)."""
    k = np.asarray(k, dtype=np.int64)
    j = ((1 + np.sqrt(1 + 8 * k.astype(float))) / 2).astype(np.int64)
    # float rounding may be off by one in either direction
    j = np.where(j * (j - 1) // 2 > k, j - 1, j)
    j = np.where((j + 1) * j // 2 <= k, j + 1, j)
    i = k - j * (j - 1) // 2
    return i, j


def _sample_block(rng, nodes_a, nodes_b, p, same):
    na, nb = nodes_a.size, nodes_b.size
    total = na * (na - 1) // 2 if same else na * nb
    if total == 0 or p <= 0:
        return np.empty((0, 2), dtype=np.int64)
    if p >= 1:
        count = total
        picks = np.arange(total, dtype=np.int64)
    else:
        count = int(rng.binomial(total, p))
        if count == 0:
            return np.empty((0, 2), dtype=np.int64)
        picks = rng.choice(total, size=count, replace=False)
    if same:
        i, j = _unrank_upper(picks, na)
        u, v = nodes_a[i], nodes_a[j]
    else:
        u, v = nodes_a[picks // nb], nodes_b[picks % nb]
    return np.column_stack([u, v])


def sample_network(spec: ModelSpec, attrs: NodeAttributes, sched: SparsitySchedule, seed) -> Network:
    """Sample an ACSBM network by drawing each subcommunity block in bulk.

    For each block pair the number of edges is binomial and their positions
    are uniform over the block's node pairs, which is equivalent to
    independent Bernoulli trials per pair.
    """
    n = attrs.n
    P = build_tilde_B(spec, n, sched)
    idx = spec.index
    if attrs.theta is None:
        raise ValueError("sampling requires community labels")
    if attrs.theta.max(initial=1) > spec.K or attrs.M != spec.M or (attrs.Z.max(axis=0) > np.array(spec.levels)).any():
        raise ValueError("attributes fall outside the model's label ranges")
    groups_of = idx.index(attrs.theta, attrs.Z)
    order = np.argsort(groups_of, kind="stable")
    bounds = np.searchsorted(groups_of[order], np.arange(1, idx.size + 2))
    members = [order[bounds[r]:bounds[r + 1]] for r in range(idx.size)]

    rng = make_rng(seed, 1)
    chunks = []
    for a in range(idx.size):
        for b in range(a, idx.size):
            p = float(P[a, b])
            if not 0.0 <= p <= 1.0:
                raise ModelValidityError(f"probability {p} outside [0,1] for block ({a + 1}, {b + 1})")
            chunks.append(_sample_block(rng, members[a], members[b], p, a == b))
    edges = np.concatenate(chunks) if chunks else np.empty((0, 2), dtype=np.int64)
    return Network(n, edges, attrs)


def empirical_block_density(net: Network, labels, size: int | None = None) -> np.ndarray:
    """Edge counts over ordered distinct node pairs, per pair of groups.

    ``labels`` assigns each node a group in ``1..size``. Entry ``(a, b)`` is the
    number of ordered pairs ``(i, j)``, ``i != j``, joined by an edge with
    ``i`` in ``a`` and ``j`` in ``b``, divided by ``max(1, #such pairs)``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (net.n,):
        raise ValueError("one label per node is required")
    size = int(labels.max(initial=0)) if size is None else int(size)
    if labels.size and (labels.min() < 1 or labels.max() > size):
        raise ValueError(f"group labels must lie in 1..{size}")
    counts = np.bincount(labels - 1, minlength=size).astype(float)
    E = np.zeros((size, size))
    if net.num_edges:
        a = labels[net.edges[:, 0]] - 1
        b = labels[net.edges[:, 1]] - 1
        np.add.at(E, (a, b), 1.0)
        np.add.at(E, (b, a), 1.0)
    pairs = np.outer(counts, counts) - np.diag(counts)
    return E / np.maximum(1.0, pairs)


# -- file formats -----------------------------------------------------------------


def write_edge_list(path, net: Network) -> None:
    with open(path, "w") as fh:
        for u, v in net.edges:
            fh.write(f"{u} {v}\n")


def read_edge_list(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'u v'")
            rows.append((int(parts[0]), int(parts[1])))
    return np.array(rows, dtype=np.int64).reshape(-1, 2)


def write_attributes(path, attrs: NodeAttributes) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["node", "theta"] + [f"z{m + 1}" for m in range(attrs.M)])
        for i in range(attrs.n):
            theta = "NA" if attrs.theta is None else int(attrs.theta[i])
            w.writerow([i, theta, *(int(v) for v in attrs.Z[i])])


def read_attributes(path) -> NodeAttributes:
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader)
        if header[:2] != ["node", "theta"] or len(header) < 3:
            raise ValueError(f"{path}: header must be 'node theta z1 ... zM'")
        rows = [r for r in reader if r]
    nodes = np.array([int(r[0]) for r in rows], dtype=np.int64)
    if not np.array_equal(np.sort(nodes), np.arange(len(rows))):
        raise ValueError(f"{path}: node ids must be 0..n-1")
    order = np.argsort(nodes)
    rows = [rows[i] for i in order]
    raw_theta = [r[1] for r in rows]
    theta = None if any(t in ("", "NA") for t in raw_theta) else np.array(raw_theta, dtype=np.int64)
    Z = np.array([[int(v) for v in r[2:]] for r in rows], dtype=np.int64).reshape(len(rows), len(header) - 2)
    return NodeAttributes(theta=theta, Z=Z)


def save_network(directory, net: Network) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    edges_path, attrs_path = directory / "edges.txt", directory / "attributes.tsv"
    write_edge_list(edges_path, net)
    write_attributes(attrs_path, net.attributes)
    return edges_path, attrs_path


def load_network(edges_path, attrs_path) -> Network:
    attrs = read_attributes(attrs_path)
    return Network(attrs.n, read_edge_list(edges_path), attrs)

