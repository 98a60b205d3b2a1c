"""ACSBM parameterisation, its block-model representation and latent positions.

Community labels and covariate levels are 1-indexed throughout, so a node in
community ``k`` with covariates ``z`` belongs to subcommunity
``subcommunity_index(k, z)`` in ``1..K*Ltilde``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .linalg import sym_eig

ZERO_EIG_RTOL = 1e-10
PMF_TOL = 1e-12


class ModelValidityError(ValueError):
    """An induced edge probability falls outside [0, 1]."""


# -- link functions ---------------------------------------------------------


def _identity(x):
    return np.asarray(x, dtype=float)


@dataclass(frozen=True)
class LinkFunction:
    kind: str
    forward: Callable = field(repr=False, compare=False)
    inverse: Callable = field(repr=False, compare=False)

    @classmethod
    def from_name(cls, kind: str) -> "LinkFunction":
        try:
            forward, inverse = _LINKS[kind]
        except KeyError:
            raise ValueError(f"unknown link {kind!r}; expected one of {sorted(_LINKS)}") from None
        return cls(kind, forward, inverse)


_LINKS = {
    "identity": (_identity, _identity),
    "log": (np.log, np.exp),
    "logit": (special.logit, special.expit),
    "probit": (special.ndtri, special.ndtr),
}


# -- indexing -----------------------------------------------------------------


@dataclass(frozen=True)
class SubcommunityIndex:
    K: int
    levels: tuple[int, ...]

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be positive")
        if any(L < 1 for L in self.levels):
            raise ValueError("covariate levels must be positive")

    @property
    def M(self) -> int:
        return len(self.levels)

    @property
    def L_tilde(self) -> int:
        return math.prod(self.levels)

    @property
    def size(self) -> int:
        return self.K * self.L_tilde

    @cached_property
    def _strides(self) -> np.ndarray:
        # stride of z_m is the product of the later levels
        out = np.ones(self.M, dtype=np.int64)
        for m in range(self.M - 2, -1, -1):
            out[m] = out[m + 1] * self.levels[m + 1]
        return out

    def configurations(self) -> list[tuple[int, ...]]:
        """All covariate vectors in index order (last coordinate fastest)."""
        return list(itertools.product(*(range(1, L + 1) for L in self.levels)))

    def config_offset(self, z) -> int:
        """0-based position of ``z`` among ``configurations()``."""
        z = np.asarray(z, dtype=np.int64)
        return int(np.dot(self._strides, z - 1))

    def index(self, k, z):
        """Vectorised subcommunity index; ``k`` shape (n,), ``z`` shape (n, M)."""
        k = np.asarray(k, dtype=np.int64)
        z = np.asarray(z, dtype=np.int64).reshape(k.shape + (self.M,))
        return self.L_tilde * (k - 1) + (z - 1) @ self._strides + 1


def subcommunity_index(k: int, z: Sequence[int], idx: SubcommunityIndex) -> int:
    z = tuple(int(v) for v in z)
    if len(z) != idx.M:
        raise ValueError(f"covariate vector has length {len(z)}, expected {idx.M}")
    if not 1 <= k <= idx.K:
        raise ValueError(f"community label {k} outside 1..{idx.K}")
    for m, (v, L) in enumerate(zip(z, idx.levels), start=1):
        if not 1 <= v <= L:
            raise ValueError(f"covariate z{m}={v} outside 1..{L}")
    return idx.L_tilde * (k - 1) + idx.config_offset(z) + 1


def subcommunity_unindex(r: int, idx: SubcommunityIndex) -> tuple[int, tuple[int, ...]]:
    if not 1 <= r <= idx.size:
        raise ValueError(f"subcommunity {r} outside 1..{idx.size}")
    k, rem = divmod(r - 1, idx.L_tilde)
    z = []
    for stride in idx._strides:
        v, rem = divmod(rem, int(stride))
        z.append(v + 1)
    return k + 1, tuple(z)


# -- model ----------------------------------------------------------------------


@dataclass(frozen=True)
class SparsitySchedule:
    """``alpha_n = n ** exponent``; exponent 0 is the dense regime."""

    exponent: float = 0.0

    def __post_init__(self):
        if self.exponent > 0:
            raise ValueError("sparsity exponent must be <= 0")

    def alpha(self, n: int) -> float:
        if n < 1:
            raise ValueError("n must be >= 1")
        return float(n) ** self.exponent


@dataclass(frozen=True, eq=False)
class ModelSpec:
    K: int
    levels: tuple[int, ...]
    B: np.ndarray
    beta: np.ndarray
    link: LinkFunction
    attribute_pmf: np.ndarray  # flat, in subcommunity-index order

    def __post_init__(self):
        B = np.array(self.B, dtype=float)
        beta = np.array(self.beta, dtype=float).reshape(-1)
        levels = tuple(int(L) for L in self.levels)
        link = self.link if isinstance(self.link, LinkFunction) else LinkFunction.from_name(self.link)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "link", link)
        if self.K < 1:
            raise ValueError("K must be a positive integer")
        if B.shape != (self.K, self.K):
            raise ValueError(f"B must be {self.K}x{self.K}, got {B.shape}")
        if not np.allclose(B, B.T, rtol=0, atol=1e-12):
            raise ValueError("B must be symmetric")
        if len(levels) == 0 or any(L < 2 for L in levels):
            raise ValueError("covariate levels must all be >= 2")
        if beta.shape != (len(levels),):
            raise ValueError(f"beta must have length {len(levels)}")
        pmf = _normalise_pmf(self.attribute_pmf, self.K * math.prod(levels))
        object.__setattr__(self, "attribute_pmf", pmf)
        # the upper bound depends on alpha_n and is enforced by build_tilde_B
        with np.errstate(all="ignore"):
            P = self.link.inverse(link_scale_matrix(self))
        if not (np.isfinite(P) & (P >= 0)).all():
            raise ModelValidityError("link inverse yields negative or non-finite probabilities")

    @property
    def M(self) -> int:
        return len(self.levels)

    @property
    def index(self) -> SubcommunityIndex:
        return SubcommunityIndex(self.K, self.levels)


def _normalise_pmf(pmf, size):
    if isinstance(pmf, str):
        if pmf != "uniform":
            raise ValueError(f"unknown pmf keyword {pmf!r}")
        return np.full(size, 1.0 / size)
    arr = np.asarray(pmf, dtype=float).reshape(-1)
    if arr.shape != (size,):
        raise ValueError(f"attribute pmf must have {size} entries, got {arr.size}")
    if (arr < 0).any() or abs(arr.sum() - 1.0) > PMF_TOL:
        raise ValueError("attribute pmf must be nonnegative and sum to 1")
    return arr


def boxplus(A1, A2) -> np.ndarray:
    """``(A1 kron 11^T) + (11^T kron A2)`` for square matrices."""
    A1 = np.atleast_2d(np.asarray(A1, dtype=float))
    A2 = np.atleast_2d(np.asarray(A2, dtype=float))
    for name, A in (("A1", A1), ("A2", A2)):
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"{name} must be square, got shape {A.shape}")
    d1, d2 = A1.shape[0], A2.shape[0]
    return np.kron(A1, np.ones((d2, d2))) + np.kron(np.ones((d1, d1)), A2)


def link_scale_matrix(spec: ModelSpec) -> np.ndarray:
    """``B boxplus beta_1 I boxplus ... boxplus beta_M I`` (before the link)."""
    out = spec.B
    for b, L in zip(spec.beta, spec.levels):
        out = boxplus(out, b * np.eye(L))
    return out


def _apply_link(spec, eta, alpha):
    if spec.link.kind == "log":
        return spec.link.inverse(eta + math.log(alpha))
    return alpha * spec.link.inverse(eta)


def build_tilde_B(spec: ModelSpec, n: int, sched: SparsitySchedule) -> np.ndarray:
    """Subcommunity edge-probability matrix of size ``K*Ltilde``.

    Under the log link the sparsity factor is added on the link scale as
    ``log(alpha_n)``; for the other links probabilities are scaled by it.
    """
    P = _apply_link(spec, link_scale_matrix(spec), sched.alpha(n))
    P = (P + P.T) / 2
    bad = np.argwhere(~((P >= 0) & (P <= 1)))
    if bad.size:
        r, s = (int(v) + 1 for v in bad[0])
        idx = spec.index
        raise ModelValidityError(
            f"edge probability {P[r - 1, s - 1]:.6g} outside [0, 1] for subcommunities "
            f"{r}={subcommunity_unindex(r, idx)} and {s}={subcommunity_unindex(s, idx)}")
    return P


def pair_probability(spec: ModelSpec, k1, z1, k2, z2, n: int = 1,
                     sched: SparsitySchedule | None = None) -> float:
    """Edge probability between two nodes computed directly from the model."""
    sched = sched or SparsitySchedule()
    eta = spec.B[k1 - 1, k2 - 1] + sum(
        b for b, a, c in zip(spec.beta, z1, z2) if a == c)
    return float(_apply_link(spec, np.float64(eta), sched.alpha(n)))


@dataclass(frozen=True, eq=False)
class CanonicalPositions:
    X: np.ndarray
    signature: tuple[int, int]
    eigenvalues: np.ndarray

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def I_pq(self) -> np.ndarray:
        p, q = self.signature
        return np.diag(np.r_[np.ones(p), -np.ones(q)])

    def gram(self) -> np.ndarray:
        p, q = self.signature
        signs = np.r_[np.ones(p), -np.ones(q)]
        return (self.X * signs) @ self.X.T


def canonical_positions(tilde_B) -> CanonicalPositions:
    """Latent positions ``U |Lambda|^{1/2}`` with near-zero eigenvalues dropped."""
    eig = sym_eig(np.asarray(tilde_B, dtype=float))
    scale = np.max(np.abs(eig.values)) if eig.values.size else 0.0
    tol = ZERO_EIG_RTOL * scale
    keep = np.abs(eig.values) > tol
    values = eig.values[keep]
    X = eig.vectors[:, keep] * np.sqrt(np.abs(values))
    p = int((values > 0).sum())
    return CanonicalPositions(X, (p, values.size - p), values)


# -- validation ---------------------------------------------------------------


@dataclass
class ValidationReport:
    range_violations: list[tuple[int, int, float]] = field(default_factory=list)
    exp_B_rank: int | None = None
    exp_B_full_rank: bool | None = None
    pmf_gaps: list[tuple[int, tuple[int, ...]]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.range_violations

    def warnings(self) -> list[str]:
        out = [f"probability {p:.6g} outside [0,1] at subcommunities ({r}, {s})"
               for r, s, p in self.range_violations]
        if self.exp_B_full_rank is False:
            out.append(f"exp(B) is rank deficient (rank {self.exp_B_rank})")
        out.extend(f"pmf assigns zero mass to community {k}, covariates {z}"
                   for k, z in self.pmf_gaps)
        return out


def validate_spec(spec_or_params, n: int = 1, sched: SparsitySchedule | None = None) -> ValidationReport:
    """Report range, rank and pmf-support problems without raising.

    Accepts either a ``ModelSpec`` or a raw parameter dict (as produced by
    :func:`model_to_dict`), so that invalid parameterisations can be examined
    before construction.
    """
    sched = sched or SparsitySchedule()
    if isinstance(spec_or_params, ModelSpec):
        K, levels, B, beta = spec_or_params.K, spec_or_params.levels, spec_or_params.B, spec_or_params.beta
        link, pmf = spec_or_params.link, spec_or_params.attribute_pmf
    else:
        d = spec_or_params
        K, levels = int(d["K"]), tuple(d["levels"])
        B, beta = np.asarray(d["B"], float), np.asarray(d["beta"], float)
        link = LinkFunction.from_name(d.get("link", "log"))
        pmf = _normalise_pmf(d.get("pmf", "uniform"), K * math.prod(levels))
    idx = SubcommunityIndex(K, levels)
    eta = B
    for b, L in zip(beta, levels):
        eta = boxplus(eta, b * np.eye(L))
    alpha = sched.alpha(n)
    with np.errstate(all="ignore"):
        P = np.log(alpha) + eta if link.kind == "log" else eta
        P = link.inverse(P) if link.kind == "log" else alpha * link.inverse(P)
    report = ValidationReport()
    for r, s in np.argwhere(~((P >= 0) & (P <= 1))):
        if r <= s:
            report.range_violations.append((int(r) + 1, int(s) + 1, float(P[r, s])))
    if link.kind == "log":
        rank = int(np.linalg.matrix_rank(np.exp(B)))
        report.exp_B_rank = rank
        report.exp_B_full_rank = rank == K
    for r in np.flatnonzero(pmf <= 0):
        report.pmf_gaps.append(subcommunity_unindex(int(r) + 1, idx))
    return report


# -- serialisation ------------------------------------------------------------


def model_from_dict(doc: dict) -> tuple[ModelSpec, SparsitySchedule]:
    K = int(doc["K"])
    levels = tuple(int(L) for L in doc["levels"])
    pmf = doc.get("pmf", "uniform")
    spec = ModelSpec(K=K, levels=levels, B=np.asarray(doc["B"], float),
                     beta=np.asarray(doc["beta"], float),
                     link=LinkFunction.from_name(doc.get("link", "log")),
                     attribute_pmf=pmf)
    return spec, SparsitySchedule(float(doc.get("alpha_exponent", 0.0)))


def model_to_dict(spec: ModelSpec, sched: SparsitySchedule | None = None) -> dict:
    sched = sched or SparsitySchedule()
    uniform = np.allclose(spec.attribute_pmf, spec.attribute_pmf[0], rtol=0, atol=0)
    return {
        "K": spec.K,
        "levels": list(spec.levels),
        "B": spec.B.tolist(),
        "beta": spec.beta.tolist(),
        "link": spec.link.kind,
        "alpha_exponent": sched.exponent,
        "pmf": "uniform" if uniform else spec.attribute_pmf.tolist(),
    }


def load_model(path) -> tuple[ModelSpec, SparsitySchedule]:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def save_model(path, spec: ModelSpec, sched: SparsitySchedule | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(spec, sched), fh, indent=2)
        fh.write("\n")
