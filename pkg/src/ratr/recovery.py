"""L1-regularised CP tensor recovery from a sparse set of observed entries.

The unknown is a CP tensor ``[[A_1, ..., A_d]]`` with ``n x R`` factors.  It is
fitted by alternating over modes; with every other factor frozen the mode-``k``
subproblem is a generalized lasso in ``s = vec(A_k)``,

    min_s  1/2 ||B s - b||^2 + beta ||F s||_1,

where ``B`` maps ``vec(A_k)`` to the observed entries and ``F`` maps it to the
gPC coefficients.  ``vec`` stacks the columns of ``A_k`` (column-major), so
column ``r * n + j`` of ``B`` and ``F`` belongs to ``A_k[j, r]`` (0-based).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg

from .distributions import DistributionSpec, make_rng
from .errors import DimensionError, DomainError, NumericalFailure, ValidationError
from .gpc import MultiIndexSet, WeightVectors, coefficient_vector
from .tensor_core import CPTensor, IndexSet, ObservationVector, cp_entries

#: Relative eigenvalue cutoff of the pseudo-inverse in the ADMM s-update.
PINV_RTOL = 1e-12


@dataclass(frozen=True)
class RecoveryConfig:
    """Parameters of the ADMM solver, the alternating loop and the rank search."""

    beta: float = 1e-3
    delta: float = 1e-5
    rho0: float = 1.0
    nu: float = 1.05
    max_outer_iters: int = 500
    max_admm_iters: int = 200
    rank_max: int = 10
    init_distribution: DistributionSpec = field(default_factory=lambda: DistributionSpec("uniform", 1.0, 2.0))
    delta_a: str = "uniform"
    error_floor: float = 2e-3
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.init_distribution, str):
            object.__setattr__(self, "init_distribution", DistributionSpec.parse(self.init_distribution))
        checks = [
            (self.beta >= 0, "beta must be >= 0"),
            (self.delta > 0, "delta must be > 0"),
            (self.rho0 > 0, "rho0 must be > 0"),
            (self.nu >= 1, "nu must be >= 1"),
            (self.max_outer_iters >= 1, "max_outer_iters must be >= 1"),
            (self.max_admm_iters >= 1, "max_admm_iters must be >= 1"),
            (self.rank_max >= 1, "rank_max must be >= 1"),
            (self.error_floor >= 0, "error_floor must be >= 0"),
            (self.delta_a in ("uniform", "ones"), "delta_a must be 'uniform' or 'ones'"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValidationError(msg)

    def to_json(self) -> dict:
        out = asdict(self)
        out["init_distribution"] = str(self.init_distribution)
        return out


@dataclass(frozen=True)
class StoppingMetrics:
    """Relative changes between two outer iterates.

    ``substituted`` names the metrics whose denominator was zero and was
    replaced by one (so that metric is an absolute change).
    """

    eps_factor: float
    eps_J: float
    eps_c: float
    substituted: tuple = ()

    def below(self, tol: float) -> bool:
        return self.eps_factor < tol and self.eps_J < tol and self.eps_c < tol

    def to_json(self) -> dict:
        return {
            "eps_factor": self.eps_factor,
            "eps_J": self.eps_J,
            "eps_c": self.eps_c,
            "substituted": list(self.substituted),
        }


class AdmmResult(NamedTuple):
    s: np.ndarray
    iterations: int
    converged: bool


class FixedRankResult(NamedTuple):
    factors: tuple
    metrics: StoppingMetrics
    objective: float
    outer_iterations: int
    admm_iterations: int
    converged: bool


@dataclass(frozen=True)
class RankRecord:
    rank: int
    validation_error: float
    admm_iterations: int
    outer_iterations: int
    objective: float

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class RecoveryResult:
    x: CPTensor
    rank: int
    validation_error: float
    per_rank_history: list
    rank_capped: bool = False

    def to_json(self) -> dict:
        return {
            "rank": self.rank,
            "validation_error": self.validation_error,
            "rank_capped": self.rank_capped,
            "per_rank_history": [h.to_json() for h in self.per_rank_history],
            "x": self.x.to_json(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json())


# ---------------------------------------------------------------------------
# assembly


def vec(a: np.ndarray) -> np.ndarray:
    """Column-major vectorisation of a factor matrix."""
    return np.asarray(a, dtype=float).ravel(order="F")


def unvec(s: np.ndarray, n: int) -> np.ndarray:
    """Inverse of :func:`vec` for an ``n``-row matrix."""
    return np.asarray(s, dtype=float).reshape((n, -1), order="F")


def _check_factors(factors: Sequence[np.ndarray], k: int) -> tuple[int, int, int]:
    d = len(factors)
    if d == 0:
        raise DimensionError("need at least one factor matrix")
    shape = np.shape(factors[0])
    if len(shape) != 2 or any(np.shape(a) != shape for a in factors):
        raise DimensionError("factor matrices must share one n x R shape")
    if not 1 <= k <= d:
        raise DomainError(f"mode index k={k} outside 1..{d}")
    return d, shape[0], shape[1]


def assemble_B(factors: Sequence[np.ndarray], theta: IndexSet, k: int) -> np.ndarray:
    """Matrix ``B`` with ``B @ vec(A_k) == P_theta([[A_1..A_d]])``; ``k`` is 1-based."""
    d, n, R = _check_factors(factors, k)
    if theta.order != d or theta.dim != n:
        raise DimensionError("index set does not match the factors")
    idx = theta.indices - 1
    m = len(idx)
    prod = np.ones((m, R))
    for kk, a in enumerate(factors):
        if kk != k - 1:
            prod *= a[idx[:, kk], :]
    B = np.zeros((m, R, n))
    B[np.arange(m)[:, None], np.arange(R)[None, :], idx[:, k - 1][:, None]] = prod
    return B.reshape(m, R * n)


def assemble_F(factors: Sequence[np.ndarray], upsilon: MultiIndexSet, wv: WeightVectors, k: int) -> np.ndarray:
    """Matrix ``F`` with ``F @ vec(A_k)`` equal to the gPC coefficients in ``upsilon`` order."""
    d, n, R = _check_factors(factors, k)
    if upsilon.d != d or wv.d != d or wv.n != n:
        raise DimensionError("multi-index set or weight vectors do not match the factors")
    idx = upsilon.indices
    prod = np.ones((len(idx), R))
    for kk, a in enumerate(factors):
        if kk != k - 1:
            inner = wv.values[kk] @ a
            prod *= inner[idx[:, kk], :]
    w = wv.values[k - 1][idx[:, k - 1], :]  # (|upsilon|, n)
    return (prod[:, :, None] * w[:, None, :]).reshape(len(idx), R * n)


# ---------------------------------------------------------------------------
# generalized lasso


def soft_threshold(h, kappa: float):
    """Elementwise ``sign(h) * max(|h| - kappa, 0)``."""
    if kappa < 0:
        raise DomainError("threshold must be non-negative")
    h = np.asarray(h, dtype=float)
    out = np.sign(h) * np.maximum(np.abs(h) - kappa, 0.0)
    return float(out) if out.ndim == 0 else out


def _pinv_solve(H: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    lam, V = np.linalg.eigh(H)
    top = lam[-1] if lam.size else 0.0
    if top <= 0:
        return np.zeros_like(rhs)
    keep = lam > PINV_RTOL * top
    Vk = V[:, keep]
    return Vk @ ((Vk.T @ rhs) / lam[keep])


#: Largest condition number of ``B^T B + F^T F`` for which the s-update
#: reuses one simultaneous diagonalisation across all penalty values.
PENCIL_MAX_COND = 1e10


class _SUpdate:
    """Solves ``(B^T B + rho F^T F) s = rhs`` for a changing ``rho``.

    With ``M = B^T B + F^T F`` well conditioned, the pencil ``(F^T F, M)`` is
    diagonalised once: ``V^T M V = I`` and ``V^T F^T F V = diag(mu)`` with
    ``mu`` in ``[0, 1]``.  Then ``B^T B + rho F^T F = V^-T diag(1 - mu + rho mu) V^-1``,
    which is non-singular, so its inverse is the pseudo-inverse.  Otherwise
    every call falls back to a truncated eigendecomposition.
    """

    def __init__(self, BtB: np.ndarray, FtF: np.ndarray):
        self.BtB = BtB
        self.FtF = FtF
        self.pencil = None
        M = BtB + FtF
        if M.size:
            ev = np.linalg.eigvalsh(M)
            if ev[0] > ev[-1] / PENCIL_MAX_COND:
                mu, V = scipy.linalg.eigh(FtF, M)
                self.pencil = (np.clip(mu, 0.0, 1.0), V)

    def __call__(self, rho: float, rhs: np.ndarray) -> np.ndarray:
        if self.pencil is None:
            return _pinv_solve(self.BtB + rho * self.FtF, rhs)
        mu, V = self.pencil
        return V @ ((V.T @ rhs) / (1.0 - mu + rho * mu))


def admm_lasso(
    B: np.ndarray,
    F: np.ndarray,
    b: np.ndarray,
    config: RecoveryConfig | None = None,
    *,
    s0: np.ndarray | None = None,
) -> AdmmResult:
    """Minimise ``1/2 ||B s - b||^2 + beta ||F s||_1`` by ADMM on the split ``t = F s``.

    Stops once ``||s_new - s|| / max(||s||, 1) < delta`` or after
    ``max_admm_iters`` iterations.
    """
    cfg = config or RecoveryConfig()
    B = np.asarray(B, dtype=float)
    F = np.asarray(F, dtype=float)
    b = np.asarray(b, dtype=float).ravel()
    if B.ndim != 2 or F.ndim != 2 or B.shape[1] != F.shape[1] or B.shape[0] != b.size:
        raise DimensionError(f"incompatible shapes B{B.shape}, F{F.shape}, b({b.size},)")
    solve = _SUpdate(B.T @ B, F.T @ F)
    Btb = B.T @ b
    s = np.zeros(B.shape[1]) if s0 is None else np.asarray(s0, dtype=float).ravel().copy()
    t = F @ s
    z = np.zeros(F.shape[0])
    rho = cfg.rho0
    converged = False
    it = 0
    for it in range(1, cfg.max_admm_iters + 1):
        s_new = solve(rho, Btb + F.T @ (rho * t - z))
        Fs = F @ s_new
        h = Fs + z / rho
        t = np.sign(h) * np.maximum(np.abs(h) - cfg.beta / rho, 0.0)
        z = z + rho * (Fs - t)
        rho *= cfg.nu
        if not (np.isfinite(s_new).all() and np.isfinite(z).all()):
            raise NumericalFailure("non-finite ADMM iterate", iteration=it)
        change = np.linalg.norm(s_new - s) / max(np.linalg.norm(s), 1.0)
        s = s_new
        if change < cfg.delta:
            converged = True
            break
    return AdmmResult(s, it, converged)


# ---------------------------------------------------------------------------
# fixed-rank alternating minimisation


def compute_objective(
    factors: Sequence[np.ndarray],
    theta: IndexSet,
    b,
    upsilon: MultiIndexSet,
    wv: WeightVectors,
    beta: float,
) -> float:
    """``1/2 ||P_theta(X) - b||^2 + beta * sum_i |<X, W_i>|``."""
    b = _values(b)
    resid = cp_entries(factors, theta.indices - 1) - b
    c = coefficient_vector(factors, wv, upsilon)
    return float(0.5 * resid @ resid + beta * np.abs(c).sum())


def stopping_metrics(prev_factors, next_factors, J_prev: float, J_next: float, c_prev, c_next) -> StoppingMetrics:
    if len(prev_factors) != len(next_factors):
        raise DimensionError("factor lists differ in length")
    num = sum(float(np.sum((np.asarray(a) - np.asarray(b)) ** 2)) for a, b in zip(prev_factors, next_factors))
    den = sum(float(np.sum(np.asarray(a) ** 2)) for a in prev_factors)
    c_prev = np.asarray(c_prev, dtype=float)
    c_next = np.asarray(c_next, dtype=float)
    substituted = []

    def ratio(name, top, bottom):
        if bottom == 0:
            substituted.append(name)
            bottom = 1.0
        return float(top / bottom)

    eps_factor = ratio("eps_factor", np.sqrt(num), np.sqrt(den))
    eps_J = ratio("eps_J", abs(J_next - J_prev), abs(J_prev))
    eps_c = ratio("eps_c", np.abs(c_next - c_prev).sum(), np.abs(c_prev).sum())
    return StoppingMetrics(eps_factor, eps_J, eps_c, tuple(substituted))


def fixed_rank_recover(
    R: int,
    init_factors: Sequence[np.ndarray],
    theta: IndexSet,
    b,
    upsilon: MultiIndexSet,
    wv: WeightVectors,
    config: RecoveryConfig | None = None,
) -> FixedRankResult:
    """Alternating ADMM sweeps over the modes at fixed CP rank ``R``."""
    cfg = config or RecoveryConfig()
    factors = [np.array(a, dtype=float) for a in init_factors]
    d, n, rank = _check_factors(factors, 1)
    if rank != R:
        raise DimensionError(f"initial factors have rank {rank}, expected {R}")
    b = _values(b)
    if b.size != len(theta):
        raise DimensionError(f"{b.size} observations for an index set of size {len(theta)}")

    J = compute_objective(factors, theta, b, upsilon, wv, cfg.beta)
    c = coefficient_vector(factors, wv, upsilon)
    metrics = StoppingMetrics(np.inf, np.inf, np.inf)
    admm_total = 0
    outer = 0
    for outer in range(1, cfg.max_outer_iters + 1):
        prev = [a.copy() for a in factors]
        for k in range(1, d + 1):
            B = assemble_B(factors, theta, k)
            F = assemble_F(factors, upsilon, wv, k)
            try:
                res = admm_lasso(B, F, b, cfg, s0=vec(factors[k - 1]))
            except NumericalFailure as exc:
                exc.context.update(mode=k, outer_iteration=outer, rank=R)
                exc.partial = tuple(prev)
                raise
            admm_total += res.iterations
            factors[k - 1] = unvec(res.s, n)
        J_new = compute_objective(factors, theta, b, upsilon, wv, cfg.beta)
        c_new = coefficient_vector(factors, wv, upsilon)
        metrics = stopping_metrics(prev, factors, J, J_new, c, c_new)
        J, c = J_new, c_new
        if metrics.below(cfg.delta):
            return FixedRankResult(tuple(factors), metrics, J, outer, admm_total, True)
    return FixedRankResult(tuple(factors), metrics, J, outer, admm_total, False)


# ---------------------------------------------------------------------------
# rank-adaptive search


def validation_error(x: CPTensor, theta_v: IndexSet, exact) -> float:
    """``||P_theta'(x) - b'|| / ||b'||``."""
    b = _values(exact)
    norm = np.linalg.norm(b)
    if norm == 0:
        raise ZeroDivisionError("validation values have zero norm")
    pred = cp_entries(x.factors, theta_v.indices - 1)
    return float(np.linalg.norm(pred - b) / norm)


def rank_one_update(factors: Sequence[np.ndarray], delta_a) -> tuple:
    """Append the same column ``delta_a`` to every factor matrix."""
    da = np.asarray(delta_a, dtype=float).ravel()
    n = np.shape(factors[0])[0]
    if da.size != n:
        raise DimensionError(f"perturbation of length {da.size} for mode size {n}")
    return tuple(np.column_stack([np.asarray(a, dtype=float), da]) for a in factors)


def ratr(
    theta: IndexSet,
    b,
    theta_v: IndexSet,
    b_v,
    upsilon: MultiIndexSet,
    wv: WeightVectors,
    config: RecoveryConfig | None = None,
) -> RecoveryResult:
    """Grow the CP rank one component at a time until the validation error rises.

    A validation error at or below ``config.error_floor`` is treated as
    already resolved: once the previous rank reached it, the next rank
    cannot show a meaningful improvement and the search stops there.
    """
    cfg = config or RecoveryConfig()
    if theta.order != theta_v.order or theta.dim != theta_v.dim:
        raise DimensionError("observation and validation sets differ in order or dim")
    if not theta.isdisjoint(theta_v):
        raise ValidationError("observation and validation index sets must be disjoint")
    b = _values(b)
    b_v = _values(b_v)
    d, n = theta.order, theta.dim
    rng = make_rng(cfg.seed)

    def draw_delta_a():
        return np.ones(n) if cfg.delta_a == "ones" else rng.uniform(1.0, 2.0, n)

    factors = tuple(cfg.init_distribution.sample(rng, (n, 1)) for _ in range(d))
    history: list[RankRecord] = []
    best: CPTensor | None = None
    best_err = np.inf
    R = 1
    while True:
        try:
            fit = fixed_rank_recover(R, factors, theta, b, upsilon, wv, cfg)
        except NumericalFailure as exc:
            exc.context.setdefault("rank", R)
            if best is not None:
                exc.partial = RecoveryResult(best, best.rank, best_err, list(history))
            raise
        x = CPTensor(fit.factors)
        err = validation_error(x, theta_v, b_v)
        history.append(RankRecord(R, err, fit.admm_iterations, fit.outer_iterations, fit.objective))
        if best is not None and (err > best_err or best_err <= cfg.error_floor):
            return RecoveryResult(best, best.rank, best_err, history)
        best, best_err = x, err
        if R >= cfg.rank_max:
            return RecoveryResult(best, R, err, history, rank_capped=True)
        factors = rank_one_update(fit.factors, draw_delta_a())
        R += 1


def _values(b) -> np.ndarray:
    if isinstance(b, ObservationVector):
        return b.values
    return np.asarray(b, dtype=float).ravel()
