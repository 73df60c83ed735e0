"""Dense and CP tensors, sorted multi-index sets, projections and inner products.

All multi-indices exposed through the public interface are 1-based
(components in ``1..n``).  Dense tensors are stored as numpy arrays of shape
``(n,) * d`` so that their flattened (row-major) layout follows the
lexicographic order of the indices.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, reduce
from typing import Sequence

import numpy as np

from .errors import CapacityError, DimensionError, DomainError, MembershipError

#: Largest number of dense entries :func:`cp_to_dense` will materialise.
DENSE_BUDGET = 10**7


@dataclass(frozen=True, eq=False)
class DenseTensor:
    """Order-``d`` tensor with ``n`` entries per mode."""

    entries: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.entries, dtype=float)
        if arr.ndim == 0:
            raise DimensionError("a dense tensor needs order >= 1")
        if len(set(arr.shape)) != 1:
            raise DimensionError(f"all modes must have equal size, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DomainError("dense tensor entries must be finite")
        object.__setattr__(self, "entries", arr)

    @property
    def order(self) -> int:
        return self.entries.ndim

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def from_flat(cls, order: int, dim: int, entries) -> "DenseTensor":
        flat = np.asarray(entries, dtype=float).ravel()
        if flat.size != dim**order:
            raise DimensionError(f"expected {dim}**{order} entries, got {flat.size}")
        return cls(flat.reshape((dim,) * order))

    def to_json(self) -> dict:
        return {"order": self.order, "dim": self.dim, "entries": self.entries.ravel().tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "DenseTensor":
        return cls.from_flat(int(data["order"]), int(data["dim"]), data["entries"])

    def __add__(self, other: "DenseTensor") -> "DenseTensor":
        _check_same_shape(self, other)
        return DenseTensor(self.entries + other.entries)


@dataclass(frozen=True, eq=False)
class CPTensor:
    """Tensor in canonical polyadic form, ``sum_r a_1^(r) o ... o a_d^(r)``.

    ``factors[k]`` is the ``n x R`` factor matrix of mode ``k`` (0-based in
    the tuple, mode ``k + 1`` in the notation used elsewhere).
    """

    factors: tuple

    def __post_init__(self):
        mats = tuple(np.array(a, dtype=float, ndmin=2) for a in self.factors)
        if not mats:
            raise DimensionError("a CP tensor needs at least one factor")
        shape = mats[0].shape
        for a in mats:
            if a.ndim != 2 or a.shape != shape:
                raise DimensionError(
                    f"all factors must share shape n x R, got {[m.shape for m in mats]}"
                )
            if not np.all(np.isfinite(a)):
                raise DomainError("CP factors must be finite")
        if shape[1] < 1:
            raise DimensionError("CP rank must be >= 1")
        for a in mats:
            a.setflags(write=False)
        object.__setattr__(self, "factors", mats)

    @property
    def order(self) -> int:
        return len(self.factors)

    @property
    def dim(self) -> int:
        return self.factors[0].shape[0]

    @property
    def rank(self) -> int:
        return self.factors[0].shape[1]

    def to_json(self) -> dict:
        return {
            "order": self.order,
            "dim": self.dim,
            "rank": self.rank,
            "factors": [a.tolist() for a in self.factors],
        }

    @classmethod
    def from_json(cls, data: dict) -> "CPTensor":
        return cls(tuple(np.asarray(a, dtype=float) for a in data["factors"]))


class IndexSet:
    """Set of distinct 1-based multi-indices kept in lexicographic order.

    Position ``s(j)`` of an index ``j`` is its 1-based rank in that order.
    """

    def __init__(self, indices, dim: int, order: int | None = None):
        arr = np.array(indices, dtype=np.int64, ndmin=2)
        if arr.size == 0:
            if order is None:
                raise DimensionError("order is required for an empty index set")
            arr = arr.reshape(0, order)
        if order is not None and arr.shape[1] != order:
            raise DimensionError(f"indices have {arr.shape[1]} components, expected {order}")
        if dim < 1:
            raise DomainError("dim must be positive")
        if arr.size and (arr.min() < 1 or arr.max() > dim):
            raise DomainError(f"index components must lie in [1, {dim}]")
        # lexsort sorts by the last key first
        perm = np.lexsort(arr.T[::-1]) if len(arr) else np.arange(0)
        arr = arr[perm]
        if len(arr) > 1 and np.any(np.all(arr[1:] == arr[:-1], axis=1)):
            raise DomainError("index set contains duplicates")
        arr.setflags(write=False)
        self._indices = arr
        self.dim = int(dim)
        self.order = int(arr.shape[1])

    @property
    def indices(self) -> np.ndarray:
        return self._indices

    def __len__(self) -> int:
        return len(self._indices)

    def __iter__(self):
        return (tuple(int(v) for v in row) for row in self._indices)

    def __contains__(self, j) -> bool:
        return tuple(int(v) for v in j) in self._lookup

    def __eq__(self, other) -> bool:
        if not isinstance(other, IndexSet):
            return NotImplemented
        return (
            self.dim == other.dim
            and self._indices.shape == other._indices.shape
            and bool(np.all(self._indices == other._indices))
        )

    def __repr__(self) -> str:
        return f"IndexSet(size={len(self)}, order={self.order}, dim={self.dim})"

    @cached_property
    def _lookup(self) -> dict:
        return {tuple(int(v) for v in row): pos for pos, row in enumerate(self._indices, 1)}

    def position(self, j: Sequence[int]) -> int:
        try:
            return self._lookup[tuple(int(v) for v in j)]
        except KeyError:
            raise MembershipError(f"index {list(j)} is not in the set") from None

    def positions(self, js) -> np.ndarray:
        """1-based positions of every row of ``js``."""
        return np.array([self.position(j) for j in np.atleast_2d(js)], dtype=np.int64)

    def union(self, other: "IndexSet") -> "IndexSet":
        _check_compatible_sets(self, other)
        merged = {tuple(r) for r in self._indices.tolist()} | {tuple(r) for r in other._indices.tolist()}
        return IndexSet(sorted(merged), self.dim, self.order)

    def isdisjoint(self, other: "IndexSet") -> bool:
        _check_compatible_sets(self, other)
        return not (set(self._lookup) & set(other._lookup))

    def to_json(self) -> dict:
        return {"order": self.order, "dim": self.dim, "indices": self._indices.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "IndexSet":
        return cls(data["indices"], int(data["dim"]), int(data["order"]))

    @classmethod
    def full(cls, order: int, dim: int) -> "IndexSet":
        if dim**order > DENSE_BUDGET:
            raise CapacityError(f"full index set of size {dim}**{order} exceeds budget")
        grids = np.indices((dim,) * order).reshape(order, -1).T + 1
        return cls(grids, dim, order)


@dataclass(frozen=True, eq=False)
class ObservationVector:
    """Values aligned position-by-position with the sorted order of ``index_set``."""

    index_set: IndexSet
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).ravel()
        if vals.size != len(self.index_set):
            raise DimensionError(
                f"{vals.size} values for an index set of size {len(self.index_set)}"
            )
        object.__setattr__(self, "values", vals)

    def to_json(self) -> dict:
        return {"indices": self.index_set.indices.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_json(cls, data: dict, dim: int) -> "ObservationVector":
        idx = np.asarray(data["indices"], dtype=np.int64)
        vals = np.asarray(data["values"], dtype=float)
        iset = IndexSet(idx, dim, idx.shape[1] if idx.ndim == 2 else None)
        # stored order may differ from the canonical one; realign
        pos = iset.positions(idx) - 1
        aligned = np.empty_like(vals)
        aligned[pos] = vals
        return cls(iset, aligned)


def sort_position(index_set: IndexSet, j: Sequence[int]) -> int:
    """Return the 1-based lexicographic rank of ``j`` within ``index_set``."""
    return index_set.position(j)


def project(x: DenseTensor | CPTensor, index_set: IndexSet) -> ObservationVector:
    """Gather the entries of ``x`` at the indices of ``index_set``, in sorted order."""
    _check_tensor_vs_set(x, index_set)
    idx = index_set.indices - 1
    if isinstance(x, DenseTensor):
        values = x.entries[tuple(idx.T)] if len(idx) else np.zeros(0)
    else:
        values = cp_entries(x.factors, idx)
    return ObservationVector(index_set, values)


def cp_entries(factors: Sequence[np.ndarray], idx0: np.ndarray) -> np.ndarray:
    """Entries ``sum_r prod_k A_k[j_k, r]`` for 0-based index rows ``idx0``."""
    idx0 = np.atleast_2d(idx0)
    prod = np.ones((len(idx0), factors[0].shape[1]))
    for k, a in enumerate(factors):
        prod *= a[idx0[:, k], :]
    return prod.sum(axis=1)


def cp_to_dense(x: CPTensor) -> DenseTensor:
    """Materialise a CP tensor; refuses tensors with more than ``DENSE_BUDGET`` entries."""
    if x.dim**x.order > DENSE_BUDGET:
        raise CapacityError(f"{x.dim}**{x.order} entries exceed the dense budget {DENSE_BUDGET}")
    out = np.zeros((x.dim,) * x.order)
    for r in range(x.rank):
        out += reduce(np.multiply.outer, [a[:, r] for a in x.factors])
    return DenseTensor(out)


def rank_one_dense(vectors: Sequence[np.ndarray]) -> DenseTensor:
    """Dense outer product ``w_1 o w_2 o ... o w_d``."""
    vecs = [np.asarray(v, dtype=float).ravel() for v in vectors]
    if len({v.size for v in vecs}) != 1:
        raise DimensionError("all vectors of a rank-one tensor must share a length")
    if vecs[0].size**len(vecs) > DENSE_BUDGET:
        raise CapacityError("rank-one tensor exceeds the dense budget")
    return DenseTensor(reduce(np.multiply.outer, vecs))


def cp_rank1_inner(x: CPTensor, w: Sequence[np.ndarray]) -> float:
    """Inner product of ``x`` with the rank-one tensor ``w_1 o ... o w_d`` in O(dnR)."""
    if len(w) != x.order:
        raise DimensionError(f"need {x.order} vectors, got {len(w)}")
    prod = np.ones(x.rank)
    for a, wk in zip(x.factors, w):
        wk = np.asarray(wk, dtype=float).ravel()
        if wk.size != x.dim:
            raise DimensionError(f"vector of length {wk.size} for mode size {x.dim}")
        prod *= wk @ a
    return float(prod.sum())


def dense_inner(x: DenseTensor, y: DenseTensor) -> float:
    """Sum of elementwise products of two equally shaped tensors."""
    _check_same_shape(x, y)
    return float(np.dot(x.entries.ravel(), y.entries.ravel()))


def dense_norm(x: DenseTensor) -> float:
    return float(np.sqrt(dense_inner(x, x)))


def _check_same_shape(x: DenseTensor, y: DenseTensor) -> None:
    if x.entries.shape != y.entries.shape:
        raise DimensionError(f"shape mismatch {x.entries.shape} vs {y.entries.shape}")


def _check_tensor_vs_set(x, index_set: IndexSet) -> None:
    if x.order != index_set.order or x.dim != index_set.dim:
        raise DimensionError(
            f"tensor (order={x.order}, dim={x.dim}) does not match index set "
            f"(order={index_set.order}, dim={index_set.dim})"
        )


def _check_compatible_sets(a: IndexSet, b: IndexSet) -> None:
    if a.order != b.order or a.dim != b.dim:
        raise DimensionError("index sets have different order or dim")
