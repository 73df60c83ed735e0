"""Stochastic diffusion test problem on the unit square.

The coefficient is a truncated Karhunen-Loeve expansion of a random field with
separable exponential covariance; each realisation is solved with a
five-point finite-difference scheme.  Grid functions are ``(m, m)`` arrays
indexed ``[i1, i2]`` at ``(x[i1], x[i2])`` with ``x = linspace(0, 1, m)``;
snapshot vectors are their row-major flattening (length ``m**2``).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .errors import DimensionError, DomainError, NumericalFailure, SolverError
from .manifold import SnapshotMatrix


class CoercivityWarning(UserWarning):
    """A realised diffusion coefficient is not strictly positive."""


@dataclass(frozen=True)
class RandomFieldSpec:
    """``a(x, xi) = mean + sum_i sqrt(lambda_i) a_i(x) xi_i`` with covariance
    ``variance * exp(-|x1 - y1| / l_c - |x2 - y2| / l_c)``."""

    corr_length: float
    d: int
    m: int = 17
    mean: float = 1.0
    variance: float = 0.25

    def __post_init__(self):
        if self.variance <= 0 or self.corr_length <= 0:
            raise DomainError("variance and correlation length must be positive")
        if self.m < 3:
            raise DomainError("grid needs m >= 3 points per side")
        if not 1 <= self.d <= self.m**2:
            raise DomainError(f"KL mode count must lie in [1, {self.m**2}]")

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.m)


@dataclass(frozen=True, eq=False)
class KLExpansion:
    eigenvalues: np.ndarray
    #: ``(d, m, m)`` eigenfunctions, orthonormal under the trapezoid rule
    modes: np.ndarray
    captured: float

    @property
    def d(self) -> int:
        return self.eigenvalues.size


def trapezoid_weights(m: int) -> np.ndarray:
    w = np.full(m, 1.0 / (m - 1))
    w[[0, -1]] *= 0.5
    return w


def _exp_kernel_1d(x: np.ndarray, corr_length: float) -> np.ndarray:
    return np.exp(-np.abs(x[:, None] - x[None, :]) / corr_length)


def kl_expand(spec: RandomFieldSpec) -> KLExpansion:
    """Leading ``d`` KL eigenpairs by Nystrom discretisation on the grid.

    The covariance is a product of two 1-D kernels, so the discrete
    eigenpairs are products of 1-D ones.
    """
    x = spec.grid
    w = trapezoid_weights(spec.m)
    sw = np.sqrt(w)
    mu, v = np.linalg.eigh(sw[:, None] * _exp_kernel_1d(x, spec.corr_length) * sw[None, :])
    if mu[0] < -1e-10 * mu[-1]:
        raise NumericalFailure("discretised covariance is indefinite", context={"min_eigenvalue": mu[0]})
    mu = np.clip(mu, 0.0, None)
    lam = spec.variance * np.outer(mu, mu).ravel()
    order = np.argsort(-lam, kind="stable")[: spec.d]
    a, b = np.unravel_index(order, (spec.m, spec.m))
    phi = v / sw[:, None]  # 1-D eigenfunctions, orthonormal under w
    modes = phi[:, a].T[:, :, None] * phi[:, b].T[:, None, :]
    # fix sign: first clearly nonzero grid value positive
    for i in range(spec.d):
        flat = modes[i].ravel()
        first = flat[np.flatnonzero(np.abs(flat) > 1e-12 * np.abs(flat).max())[0]]
        if first < 0:
            modes[i] = -modes[i]
    lam = lam[order]
    return KLExpansion(lam, modes, float(lam.sum() / spec.variance))  # |D| = 1


def eval_field(kl: KLExpansion, spec: RandomFieldSpec, xi) -> np.ndarray:
    """Coefficient field on the grid for one parameter vector ``xi`` in ``[-1, 1]^d``.

    Issues :class:`CoercivityWarning` if the field is not strictly positive.
    """
    xi = np.asarray(xi, dtype=float).ravel()
    if xi.size != kl.d:
        raise DimensionError(f"xi has {xi.size} entries, expansion has {kl.d} modes")
    if np.any(np.abs(xi) > 1 + 1e-12):
        raise DomainError("xi must lie in [-1, 1]^d")
    field = spec.mean + np.tensordot(np.sqrt(kl.eigenvalues) * xi, kl.modes, axes=1)
    if np.any(field <= 0):
        warnings.warn(f"diffusion coefficient reaches {field.min():.3g}", CoercivityWarning, stacklevel=2)
    return field


@dataclass(frozen=True)
class DiffusionProblem:
    """``-div(a grad u) = 1`` with ``u = 0`` at ``x1 in {0, 1}`` and zero flux at ``x2 in {0, 1}``."""

    m: int = 17

    def __post_init__(self):
        if self.m < 3:
            raise DomainError("grid needs m >= 3 points per side")

    @property
    def n_h(self) -> int:
        return self.m**2


def _harmonic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 2.0 * a * b / (a + b)


def assemble_diffusion(problem: DiffusionProblem, field: np.ndarray) -> sp.csr_matrix:
    """Five-point operator on the unknowns (interior columns ``i1 = 1..m-2``, all ``i2``)."""
    m = problem.m
    h2 = (1.0 / (m - 1)) ** 2
    ax = _harmonic(field[:-1, :], field[1:, :])  # faces between i1 and i1+1
    ay = _harmonic(field[:, :-1], field[:, 1:])  # faces between i2 and i2+1
    n1 = m - 2
    idx = np.arange(n1 * m).reshape(n1, m)
    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(np.broadcast_to(v, r.shape).ravel())

    i1 = np.arange(1, m - 1)[:, None]
    west = ax[i1 - 1, np.arange(m)[None, :]]
    east = ax[i1, np.arange(m)[None, :]]
    # mirror ghost at the Neumann sides doubles the one inward face
    south = np.zeros((n1, m))
    north = np.zeros((n1, m))
    south[:, 1:] = ay[1:-1, :]
    north[:, :-1] = ay[1:-1, :]
    south_c = south.copy()
    north_c = north.copy()
    north_c[:, 0] += ay[1:-1, 0]
    south_c[:, -1] += ay[1:-1, -1]
    add(idx, idx, (west + east + south_c + north_c) / h2)
    add(idx[1:, :], idx[:-1, :], -west[1:, :] / h2)
    add(idx[:-1, :], idx[1:, :], -east[:-1, :] / h2)
    add(idx[:, 1:], idx[:, :-1], -south_c[:, 1:] / h2)
    add(idx[:, :-1], idx[:, 1:], -north_c[:, :-1] / h2)
    n = n1 * m
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def solve_diffusion(problem: DiffusionProblem, field) -> np.ndarray:
    """Snapshot vector (length ``m**2``, row-major over ``[i1, i2]``) for one coefficient field."""
    m = problem.m
    field = np.asarray(field, dtype=float)
    if field.shape != (m, m):
        raise DimensionError(f"field of shape {field.shape}, expected {(m, m)}")
    if not np.all(np.isfinite(field)) or np.any(field <= 0):
        raise SolverError("diffusion coefficient must be finite and strictly positive")
    A = assemble_diffusion(problem, field)
    u_int = spsolve(A.tocsc(), np.ones(A.shape[0]))
    if not np.all(np.isfinite(u_int)):
        cond = float(np.linalg.cond(A.toarray())) if A.shape[0] <= 5000 else None
        raise SolverError("linear solve produced non-finite values", condition=cond)
    u = np.zeros((m, m))
    u[1:-1, :] = u_int.reshape(m - 2, m)
    return u.ravel()


def generate_snapshots(
    problem: DiffusionProblem,
    kl: KLExpansion,
    spec: RandomFieldSpec,
    nodes: Sequence[Sequence[float]],
) -> SnapshotMatrix:
    """One solve per parameter vector; column ``s`` corresponds to ``nodes[s]``."""
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    cols = []
    for s, xi in enumerate(nodes):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", CoercivityWarning)
                field = eval_field(kl, spec, xi)
            cols.append(solve_diffusion(problem, field))
        except SolverError as exc:
            exc.context["sample"] = s
            raise
    return SnapshotMatrix(np.column_stack(cols))


def relative_error(y, y_ratr) -> float:
    """``||y - y_ratr|| / ||y||``."""
    y = np.asarray(y, dtype=float).ravel()
    y_ratr = np.asarray(y_ratr, dtype=float).ravel()
    if y.shape != y_ratr.shape:
        raise DimensionError("vectors have different lengths")
    norm = np.linalg.norm(y)
    if norm == 0:
        raise ZeroDivisionError("reference vector has zero norm")
    return float(np.linalg.norm(y - y_ratr) / norm)
