"""Monte-Carlo checks of how the factor initialisation conditions the recovery.

Covers the order ratio of a sampling distribution, the condition number of
the rank-one ``B`` matrix over uniform observation sets, and the effect of a
rank-one factor update on that condition number.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .distributions import DistributionSpec, make_rng
from .errors import CapacityError, DegenerateDataError, DomainError
from .recovery import assemble_B, rank_one_update
from .tensor_core import IndexSet

#: Default distributions, in the order of the published comparison table.
TABLE_DISTRIBUTIONS = (
    "uniform(1,2)",
    "normal(9,0.1)",
    "uniform(1,3)",
    "normal(9,0.5)",
    "uniform(0,1)",
    "normal(0,1)",
)

_CHUNK = 4000


def generate_uniform_index_set(d: int, n: int, per_level: int, seed=0, max_retries: int = 1000) -> IndexSet:
    """Index set of size ``per_level * n`` in which every level appears ``per_level`` times per mode.

    Built from layers of ``n`` rows, each layer a random permutation of
    ``1..n`` in every mode; layers that would repeat an index are redrawn.
    """
    if d < 1 or n < 1 or per_level < 1:
        raise DomainError("d, n and per_level must be positive")
    if per_level * n > n**d:
        raise CapacityError(f"{per_level * n} distinct indices requested from a grid of {n ** d}")
    rng = make_rng(seed)
    seen: set = set()
    layers = []
    retries = 0
    while len(layers) < per_level:
        layer = np.stack([rng.permutation(n) for _ in range(d)], axis=1) + 1
        rows = {tuple(r) for r in layer.tolist()}
        if len(rows) < n or rows & seen:
            retries += 1
            if retries > max_retries:
                raise CapacityError(f"no duplicate-free layer after {max_retries} retries")
            continue
        seen |= rows
        layers.append(layer)
    return IndexSet(np.concatenate(layers), n, d)


def is_uniform(theta: IndexSet) -> bool:
    """True if every level occurs equally often in every mode."""
    if len(theta) == 0 or len(theta) % theta.dim:
        return False
    target = len(theta) // theta.dim
    for k in range(theta.order):
        counts = np.bincount(theta.indices[:, k] - 1, minlength=theta.dim)
        if np.any(counts != target):
            return False
    return True


@dataclass(frozen=True)
class OrderRatioReport:
    distribution: str
    d: int
    m: int
    samples: int
    mu: float = float("nan")
    xi_mean: float = float("nan")
    xi_var: float = float("nan")
    cond_mean: float = float("nan")
    cond_std: float = float("nan")
    cond_trials: int = 0
    cond_infinite: int = 0

    def to_json(self) -> dict:
        return asdict(self)


def _as_dist(dist) -> DistributionSpec:
    return dist if isinstance(dist, DistributionSpec) else DistributionSpec.parse(dist)


def estimate_order_ratio(dist, d: int, m: int, samples: int = 100_000, seed=0) -> OrderRatioReport:
    """Coefficient of variation of ``Xi = sum_{k<=m} (prod_{j<d} psi_kj)^2`` with ``psi ~ dist``."""
    dist = _as_dist(dist)
    if d < 2 or m < 1:
        raise DomainError("need d >= 2 and m >= 1")
    if samples < 2:
        raise DomainError("need at least two samples")
    rng = make_rng(seed)
    xi = np.empty(samples)
    for start in range(0, samples, _CHUNK):
        stop = min(start + _CHUNK, samples)
        psi = dist.sample(rng, (stop - start, m, d - 1))
        xi[start:stop] = np.square(np.prod(psi, axis=2)).sum(axis=1)
    mean = xi.mean()
    if mean == 0:
        raise DegenerateDataError("sample mean of Xi is zero")
    var = xi.var(ddof=1)
    return OrderRatioReport(dist.label(), d, m, samples, float(np.sqrt(var) / mean), float(mean), float(var))


def rank_one_cond(diag: np.ndarray) -> np.ndarray:
    """``sqrt(max/min)`` of the diagonal of ``B^T B`` (rows of ``diag``); ``inf`` for a zero entry."""
    lo = diag.min(axis=-1)
    hi = diag.max(axis=-1)
    with np.errstate(divide="ignore"):
        return np.where(lo > 0, np.sqrt(hi / np.where(lo > 0, lo, 1.0)), np.inf)


def sample_cond_B(dist, d: int, n: int, theta: IndexSet, trials: int = 10_000, seed=0, k: int = 1) -> OrderRatioReport:
    """Mean condition number of the mode-``k`` ``B`` for rank-one factors drawn from ``dist``.

    For rank one every row of ``B`` has a single nonzero, so ``B^T B`` is
    diagonal and the condition number follows from its diagonal.
    """
    dist = _as_dist(dist)
    if theta.order != d or theta.dim != n:
        raise DomainError("index set does not match d and n")
    if not 1 <= k <= d:
        raise DomainError(f"mode index k={k} outside 1..{d}")
    rng = make_rng(seed)
    idx = theta.indices - 1
    others = [kk for kk in range(d) if kk != k - 1]
    level = idx[:, k - 1]
    conds = np.empty(trials)
    for start in range(0, trials, _CHUNK):
        stop = min(start + _CHUNK, trials)
        A = dist.sample(rng, (stop - start, d, n))
        vals = np.ones((stop - start, len(idx)))
        for kk in others:
            vals *= A[:, kk, idx[:, kk]]
        diag = np.stack([np.square(vals[:, level == i]).sum(axis=1) for i in range(n)], axis=1)
        conds[start:stop] = rank_one_cond(diag)
    finite = conds[np.isfinite(conds)]
    m = len(theta) // n
    return OrderRatioReport(
        dist.label(),
        d,
        m,
        0,
        cond_mean=float(finite.mean()) if finite.size else float("inf"),
        cond_std=float(finite.std(ddof=1)) if finite.size > 1 else float("nan"),
        cond_trials=trials,
        cond_infinite=int(trials - finite.size),
    )


def table_report(
    distributions: Sequence = TABLE_DISTRIBUTIONS,
    d: int = 48,
    m: int = 33,
    n: int = 3,
    samples: int = 100_000,
    trials: int = 10_000,
    seed: int = 0,
) -> list[OrderRatioReport]:
    """Order ratio and mean ``cond(B)`` for each distribution over one shared uniform index set."""
    theta = generate_uniform_index_set(d, n, m, seed=seed)
    out = []
    for i, dist in enumerate(distributions):
        mu = estimate_order_ratio(dist, d, m, samples, seed=[seed, i, 0])
        cond = sample_cond_B(dist, d, n, theta, trials, seed=[seed, i, 1])
        out.append(
            OrderRatioReport(
                mu.distribution, d, m, samples, mu.mu, mu.xi_mean, mu.xi_var,
                cond.cond_mean, cond.cond_std, cond.cond_trials, cond.cond_infinite,
            )
        )
    return out


def reports_to_csv(reports: Sequence[OrderRatioReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["distribution", "mu", "cond_B_mean"])
    for r in reports:
        writer.writerow([r.distribution, f"{r.mu:.6g}", f"{r.cond_mean:.6g}"])
    return buf.getvalue()


def reports_to_json(reports: Sequence[OrderRatioReport]) -> str:
    return json.dumps([r.to_json() for r in reports], indent=2)


@dataclass(frozen=True)
class UpdateBoundReport:
    cond_B: float
    cond_B_delta: float
    c2: float
    c3: float
    #: whether ``cond(B_delta)^2 <= c2 + c3``; ``None`` when ``B`` is singular
    holds: bool | None
    #: ``B_delta`` equals ``[B, B(delta_a)]`` entrywise
    concatenation_exact: bool

    def to_json(self) -> dict:
        return asdict(self)


def _cond(M: np.ndarray) -> tuple[float, float]:
    s = np.linalg.svd(M, compute_uv=False)
    smin = float(s[-1]) if M.shape[0] >= M.shape[1] else 0.0
    return (float(s[0] / smin) if smin > 0 else float("inf")), smin


def check_rank_one_update_bound(factors, theta: IndexSet, delta_a=None, k: int = 1) -> UpdateBoundReport:
    """Condition numbers of ``B`` before and after appending ``delta_a`` (default all-ones) to every factor."""
    factors = [np.asarray(a, dtype=float) for a in factors]
    n = factors[0].shape[0]
    da = np.ones(n) if delta_a is None else np.asarray(delta_a, dtype=float).ravel()
    B = assemble_B(factors, theta, k)
    B_delta = assemble_B(rank_one_update(factors, da), theta, k)
    dB = assemble_B([da[:, None]] * len(factors), theta, k)
    R = factors[0].shape[1]
    # B_delta columns are grouped by component, so the new block is the last n
    exact = bool(np.array_equal(B_delta[:, : R * n], B) and np.array_equal(B_delta[:, R * n :], dB))
    cond_B, smin = _cond(B)
    cond_Bd, _ = _cond(B_delta)
    if smin > 0:
        c2 = cond_B**2
        c3 = len(theta) / (n * smin**2)
        holds = bool(cond_Bd**2 <= c2 + c3)
    else:
        c2, c3, holds = float("inf"), float("inf"), None
    return UpdateBoundReport(cond_B, cond_Bd, c2, c3, holds, exact)
