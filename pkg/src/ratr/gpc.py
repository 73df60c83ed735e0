"""Generalized polynomial chaos on ``[-1, 1]^d`` with tensor Gauss quadrature.

Univariate polynomials follow the monic three-term recurrence

    phi_{j+1}(x) = (x - zeta_j) phi_j(x) - tau_j phi_{j-1}(x),   phi_0 = 0, phi_1 = 1,

so ``phi_{j+1}`` has degree ``j``.  Everything public is indexed by degree:
``family.evaluate(x)[..., k]`` is the *orthonormal* polynomial of degree
``k`` (the monic one divided by its norm under the density).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import CapacityError, DimensionError, DomainError, MembershipError
from .tensor_core import CPTensor

#: Largest multi-index set :func:`build_multi_index_set` will enumerate.
MULTI_INDEX_BUDGET = 10**7


def legendre_recurrence(m: int) -> tuple[np.ndarray, np.ndarray]:
    """Monic recurrence coefficients for the uniform density 1/2 on [-1, 1].

    Returns ``(zeta, tau)`` of length ``m`` indexed by degree: ``zeta[k]`` and
    ``tau[k]`` enter the step from degree ``k`` to ``k + 1``.  ``tau[0]`` is the
    total mass of the density (1).
    """
    k = np.arange(m, dtype=float)
    tau = np.ones(m)
    tau[1:] = k[1:] ** 2 / (4.0 * k[1:] ** 2 - 1.0)
    return np.zeros(m), tau


def stieltjes(nodes, weights, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Discretized Stieltjes procedure for the discrete measure ``sum_j w_j delta(x_j)``.

    Generic counterpart of :func:`legendre_recurrence`; with a fine enough
    discretization of a continuous density it reproduces that density's
    monic recurrence.
    """
    x = np.asarray(nodes, dtype=float)
    w = np.asarray(weights, dtype=float)
    zeta = np.zeros(m)
    tau = np.zeros(m)
    prev = np.zeros_like(x)
    cur = np.ones_like(x)
    norm_prev = 1.0
    for k in range(m):
        norm = float(np.sum(w * cur * cur))
        if norm <= 0:
            raise DomainError(f"measure supports fewer than {k + 1} orthogonal polynomials")
        zeta[k] = float(np.sum(w * x * cur * cur)) / norm
        tau[k] = norm if k == 0 else norm / norm_prev
        prev, cur = cur, (x - zeta[k]) * cur - (tau[k] if k else 0.0) * prev
        norm_prev = norm
    return zeta, tau


@dataclass(frozen=True)
class OrthoPolyFamily:
    """Polynomials orthonormal under the uniform density 1/2 on [-1, 1]."""

    max_degree: int
    density: str = "uniform"

    def __post_init__(self):
        if self.max_degree < 0:
            raise DomainError("max_degree must be >= 0")
        if self.density != "uniform":
            raise DomainError(f"unsupported density {self.density!r}")

    def recurrence(self, m: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """``(zeta, tau)`` for degrees ``0..m-1`` (default ``max_degree + 1``)."""
        return legendre_recurrence(self.max_degree + 1 if m is None else m)

    @property
    def zeta(self) -> np.ndarray:
        return self.recurrence()[0]

    @property
    def tau(self) -> np.ndarray:
        return self.recurrence()[1]

    def monic(self, x, max_degree: int | None = None) -> np.ndarray:
        """Monic polynomials ``phi_1..phi_{p+1}`` (degrees ``0..p``) at ``x``; shape ``x.shape + (p+1,)``."""
        p = self.max_degree if max_degree is None else max_degree
        zeta, tau = self.recurrence(p + 1)
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape + (p + 1,))
        prev = np.zeros_like(x)
        cur = np.ones_like(x)
        out[..., 0] = cur
        for k in range(p):
            prev, cur = cur, (x - zeta[k]) * cur - (tau[k] if k else 0.0) * prev
            out[..., k + 1] = cur
        return out

    def norms(self, max_degree: int | None = None) -> np.ndarray:
        """L2 norms of the monic polynomials, degrees ``0..p``."""
        p = self.max_degree if max_degree is None else max_degree
        _, tau = self.recurrence(p + 1)
        return np.sqrt(np.cumprod(tau))

    def evaluate(self, x, max_degree: int | None = None) -> np.ndarray:
        """Orthonormal polynomials of degrees ``0..p`` at ``x``; shape ``x.shape + (p+1,)``."""
        return self.monic(x, max_degree) / self.norms(max_degree)

    def to_json(self) -> dict:
        return {"max_degree": self.max_degree, "density": self.density}


def build_ortho_family(p: int) -> OrthoPolyFamily:
    return OrthoPolyFamily(int(p))


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def n(self) -> int:
        return self.nodes.size

    def to_json(self) -> dict:
        return {"nodes": self.nodes.tolist(), "weights": self.weights.tolist()}


def gauss_rule(family: OrthoPolyFamily, n: int) -> QuadratureRule:
    """``n``-point Gauss rule for the family's density (Golub-Welsch).

    Weights are normalised to the density, so they sum to one.
    """
    if n < 1:
        raise DomainError("a Gauss rule needs n >= 1 nodes")
    zeta, tau = family.recurrence(n)
    jacobi = np.diag(zeta) + np.diag(np.sqrt(tau[1:]), 1) + np.diag(np.sqrt(tau[1:]), -1)
    nodes, vecs = np.linalg.eigh(jacobi)
    weights = tau[0] * vecs[0, :] ** 2
    # exact symmetry of the density: clean the middle node
    if n % 2 == 1:
        nodes[n // 2] = 0.0
    return QuadratureRule(nodes, weights)


class MultiIndexSet:
    """Total-degree set ``{i in N^d : |i|_1 <= p}``.

    Ordered by ascending total degree, lexicographically within a degree.
    """

    def __init__(self, d: int, p: int, indices: np.ndarray | None = None):
        if d < 1 or p < 0:
            raise DomainError("need d >= 1 and p >= 0")
        self.d = int(d)
        self.p = int(p)
        if indices is None:
            size = math.comb(p + d, d)
            if size > MULTI_INDEX_BUDGET:
                raise CapacityError(f"multi-index set of size {size} exceeds budget")
            indices = np.array(
                [i for t in range(p + 1) for i in _compositions(t, d)], dtype=np.int64
            ).reshape(-1, d)
        indices = np.asarray(indices, dtype=np.int64)
        indices.setflags(write=False)
        self.indices = indices

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return (tuple(int(v) for v in row) for row in self.indices)

    @cached_property
    def _lookup(self) -> dict:
        return {tuple(int(v) for v in row): pos for pos, row in enumerate(self.indices, 1)}

    def position(self, i: Sequence[int]) -> int:
        """1-based position of ``i`` in the set's order."""
        try:
            return self._lookup[tuple(int(v) for v in i)]
        except KeyError:
            raise MembershipError(f"multi-index {list(i)} not in the set") from None

    def to_json(self) -> dict:
        return {"d": self.d, "p": self.p, "indices": self.indices.tolist()}


def _compositions(total: int, parts: int):
    """All ``parts``-vectors of non-negative ints summing to ``total``, lexicographic."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def build_multi_index_set(d: int, p: int) -> MultiIndexSet:
    return MultiIndexSet(d, p)


@dataclass(frozen=True, eq=False)
class WeightVectors:
    """``values[k, i, j] = phi_i(xi_j) * w_j`` for mode ``k`` (0-based), degree ``i``, node ``j``."""

    values: np.ndarray

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1] - 1

    @property
    def n(self) -> int:
        return self.values.shape[2]

    def vector(self, k: int, degree: int) -> np.ndarray:
        """Weight vector of mode ``k`` (1-based) for univariate degree ``degree``."""
        return self.values[k - 1, degree]

    def for_index(self, i: Sequence[int]) -> list[np.ndarray]:
        """Vectors ``[w_1^(i_1), ..., w_d^(i_d)]`` whose outer product is the weight tensor."""
        return [self.values[k, int(ik)] for k, ik in enumerate(i)]


def build_weight_vectors(family: OrthoPolyFamily, rule: QuadratureRule, p: int, d: int = 1) -> WeightVectors:
    if p > family.max_degree:
        raise DomainError(f"degree {p} exceeds family max_degree {family.max_degree}")
    table = family.evaluate(rule.nodes, p).T * rule.weights  # (p+1, n)
    return WeightVectors(np.broadcast_to(table, (d,) + table.shape).copy())


@dataclass(frozen=True, eq=False)
class GPCExpansion:
    index_set: MultiIndexSet
    coefficients: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float).ravel()
        if c.size != len(self.index_set):
            raise DimensionError(f"{c.size} coefficients for {len(self.index_set)} multi-indices")
        if not np.all(np.isfinite(c)):
            raise DomainError("gPC coefficients must be finite")
        object.__setattr__(self, "coefficients", c)

    def __add__(self, other: "GPCExpansion") -> "GPCExpansion":
        if not np.array_equal(self.index_set.indices, other.index_set.indices):
            raise DimensionError("expansions use different multi-index sets")
        return GPCExpansion(self.index_set, self.coefficients + other.coefficients)

    def to_json(self) -> dict:
        return {
            "d": self.index_set.d,
            "p": self.index_set.p,
            "indices": self.index_set.indices.tolist(),
            "coefficients": self.coefficients.tolist(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "GPCExpansion":
        iset = MultiIndexSet(int(data["d"]), int(data["p"]), np.asarray(data["indices"], dtype=np.int64))
        return cls(iset, np.asarray(data["coefficients"], dtype=float))


def coefficient_vector(factors: Sequence[np.ndarray], wv: WeightVectors, upsilon: MultiIndexSet) -> np.ndarray:
    """``c_i = <[[A_1..A_d]], W_i>`` for every ``i`` in ``upsilon``, in its order."""
    if len(factors) != upsilon.d or wv.d != upsilon.d:
        raise DimensionError("factor count, weight vectors and multi-index set disagree on d")
    if factors[0].shape[0] != wv.n:
        raise DimensionError(f"mode size {factors[0].shape[0]} vs {wv.n} quadrature nodes")
    if upsilon.p > wv.p:
        raise DimensionError("multi-index degree exceeds weight-vector degree")
    idx = upsilon.indices
    prod = np.ones((len(idx), factors[0].shape[1]))
    for k, a in enumerate(factors):
        inner = wv.values[k] @ a  # (p+1, R): <A_k(:, r), w_k^(deg)>
        prod *= inner[idx[:, k], :]
    return prod.sum(axis=1)


def compute_coefficients(x: CPTensor, wv: WeightVectors, upsilon: MultiIndexSet) -> GPCExpansion:
    return GPCExpansion(upsilon, coefficient_vector(x.factors, wv, upsilon))


def eval_basis(family: OrthoPolyFamily, i: Sequence[int], xi: Sequence[float]) -> float:
    """Product basis ``Phi_i(xi) = prod_k phi_{i_k}(xi_k)`` (degrees, orthonormal)."""
    i = np.asarray(i, dtype=np.int64)
    xi = np.asarray(xi, dtype=float)
    if i.shape != xi.shape:
        raise DimensionError("multi-index and point have different lengths")
    if np.any(i < 0) or np.any(i > family.max_degree):
        raise DomainError(f"degrees must lie in [0, {family.max_degree}]")
    table = family.evaluate(xi)
    return float(np.prod(table[np.arange(i.size), i]))


def basis_matrix(family: OrthoPolyFamily, upsilon: MultiIndexSet, xi) -> np.ndarray:
    """``Phi_i(xi_s)`` for points ``xi`` of shape ``(N, d)``; returns ``(N, |upsilon|)``."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    if xi.shape[1] != upsilon.d:
        raise DimensionError(f"points have {xi.shape[1]} components, expected {upsilon.d}")
    table = family.evaluate(xi, upsilon.p)  # (N, d, p+1)
    out = np.ones((xi.shape[0], len(upsilon)))
    for k in range(upsilon.d):
        out *= table[:, k, :][:, upsilon.indices[:, k]]
    return out


def eval_surrogate(g: GPCExpansion, family: OrthoPolyFamily, xi) -> float | np.ndarray:
    """``sum_i c_i Phi_i(xi)``; a scalar for one point, an array for a batch ``(N, d)``."""
    xi_arr = np.asarray(xi, dtype=float)
    vals = basis_matrix(family, g.index_set, xi_arr) @ g.coefficients
    return float(vals[0]) if xi_arr.ndim == 1 else vals


@dataclass(frozen=True, eq=False)
class GPCBasis:
    """Everything needed to turn a recovered data tensor into a gPC expansion."""

    d: int
    n: int
    p: int
    family: OrthoPolyFamily = field(init=False)
    rule: QuadratureRule = field(init=False)
    upsilon: MultiIndexSet = field(init=False)
    weights: WeightVectors = field(init=False)

    def __post_init__(self):
        family = build_ortho_family(self.p)
        rule = gauss_rule(family, self.n)
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "rule", rule)
        object.__setattr__(self, "upsilon", build_multi_index_set(self.d, self.p))
        object.__setattr__(self, "weights", build_weight_vectors(family, rule, self.p, self.d))

    def node(self, j: Sequence[int]) -> np.ndarray:
        """Quadrature point ``xi_{j_1..j_d}`` for a 1-based grid multi-index."""
        return self.rule.nodes[np.asarray(j, dtype=np.int64) - 1]

    def nodes_for(self, indices: np.ndarray) -> np.ndarray:
        return self.rule.nodes[np.asarray(indices, dtype=np.int64) - 1]
