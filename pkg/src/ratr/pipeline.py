"""End-to-end surrogate construction: snapshots, kPCA, per-mode recovery, gPC.

The observation and validation sets are drawn from one seeded stream of
distinct grid indices: the first ``validation_size`` indices form the
validation set and the next ``theta_size`` the observation set.  Fits with
the same seed and growing ``theta_size`` therefore share their validation set
and have nested observation sets.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .distributions import derive_seed, make_rng
from .errors import CapacityError, DomainError, NumericalFailure, ValidationError
from .gpc import GPCBasis, GPCExpansion, compute_coefficients, eval_surrogate
from .manifold import KPCAModel, SnapshotMatrix, fit_kpca, inverse_map
from .models import (
    CoercivityWarning,
    DiffusionProblem,
    RandomFieldSpec,
    eval_field,
    kl_expand,
    relative_error,
    solve_diffusion,
)
from .recovery import RankRecord, RecoveryConfig, RecoveryResult, ratr
from .stability import generate_uniform_index_set
from .tensor_core import CPTensor, IndexSet

log = logging.getLogger(__name__)

SnapshotFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PipelineConfig:
    """All parameters of a fit; doubles as the schema of the key-value config file."""

    d: int = 8
    n: int = 3
    p: int = 2
    theta_size: int = 100
    validation_size: int = 20
    seed: int = 0
    uniform_theta: bool = False
    # random field and solver
    corr_length: float = 0.8
    grid_m: int = 17
    field_mean: float = 1.0
    field_variance: float = 0.25
    # recovery
    beta: float = 0.01
    delta: float = 1e-5
    rho0: float = 1.0
    nu: float = 1.05
    max_outer_iters: int = 500
    max_admm_iters: int = 200
    rank_max: int = 10
    init_distribution: str = "uniform(1,2)"
    delta_a: str = "uniform"
    error_floor: float = 2e-3
    # kPCA and pre-image
    sigma_g: float = 1.31
    tol_pca: float = 0.9
    n_neighbours: int = 8
    inverse_mode: str = "projected"
    # evaluation
    test_samples: int = 100
    output_dir: str = "ratr_out"

    def __post_init__(self):
        checks = [
            (self.d >= 1 and self.n >= 1 and self.p >= 0, "need d >= 1, n >= 1, p >= 0"),
            (self.theta_size >= 1, "theta_size must be positive"),
            (self.validation_size >= 0, "validation_size must be non-negative"),
            (self.sigma_g > 0, "sigma_g must be positive"),
            (0 < self.tol_pca <= 1, "tol_pca must lie in (0, 1]"),
            (self.n_neighbours >= 1, "n_neighbours must be positive"),
            (self.inverse_mode in ("projected", "feature"), "inverse_mode must be 'projected' or 'feature'"),
            (self.test_samples >= 1, "test_samples must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValidationError(msg)

    def recovery_config(self, seed: int | None = None) -> RecoveryConfig:
        return RecoveryConfig(
            beta=self.beta,
            delta=self.delta,
            rho0=self.rho0,
            nu=self.nu,
            max_outer_iters=self.max_outer_iters,
            max_admm_iters=self.max_admm_iters,
            rank_max=self.rank_max,
            init_distribution=self.init_distribution,
            delta_a=self.delta_a,
            error_floor=self.error_floor,
            seed=self.seed if seed is None else seed,
        )

    def field_spec(self) -> RandomFieldSpec:
        return RandomFieldSpec(self.corr_length, self.d, self.grid_m, self.field_mean, self.field_variance)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, data: dict) -> "PipelineConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: _coerce(known[k].type, v) for k, v in data.items()})

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        return cls.from_mapping(parse_config_text(Path(path).read_text(encoding="utf-8")))

    def with_overrides(self, **kwargs) -> "PipelineConfig":
        kwargs = {k: v for k, v in kwargs.items() if v is not None}
        known = {f.name: f for f in fields(self)}
        return replace(self, **{k: _coerce(known[k].type, v) for k, v in kwargs.items()})


def parse_config_text(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment; blank lines are ignored."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValidationError(f"line {lineno}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


def _coerce(type_name, value):
    name = type_name if isinstance(type_name, str) else type_name.__name__
    if not isinstance(value, str):
        return value
    try:
        if name == "bool":
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if name == "int":
            return int(value)
        if name == "float":
            return float(value)
    except ValueError:
        raise ValidationError(f"cannot read {value!r} as {name}") from None
    return value


# ---------------------------------------------------------------------------
# index sets and snapshots


def sample_index_sets(config: PipelineConfig) -> tuple[IndexSet, IndexSet]:
    """Disjoint observation and validation sets, deterministic in ``config.seed``."""
    d, n = config.d, config.n
    total = config.theta_size + config.validation_size
    if total > n**d:
        raise CapacityError(f"{total} distinct indices requested from a grid of {n ** d}")
    if config.uniform_theta:
        if config.theta_size % n:
            raise ValidationError("a uniform observation set needs theta_size divisible by n")
        theta = generate_uniform_index_set(d, n, config.theta_size // n, seed=config.seed)
        taken = {tuple(r) for r in theta.indices.tolist()}
        val = _distinct_indices(d, n, config.validation_size, derive_seed(config.seed, 1), taken)
        return theta, IndexSet(val, n, d)
    rows = _distinct_indices(d, n, total, config.seed, set())
    val = rows[: config.validation_size]
    obs = rows[config.validation_size :]
    return IndexSet(obs, n, d), IndexSet(val, n, d)


def _distinct_indices(d: int, n: int, count: int, seed, exclude: set) -> np.ndarray:
    rng = make_rng(seed)
    if n**d <= 4 * (count + len(exclude)):
        # small grid: permute it outright
        grid = np.indices((n,) * d).reshape(d, -1).T + 1
        grid = grid[rng.permutation(len(grid))]
        rows = [r for r in grid.tolist() if tuple(r) not in exclude][:count]
        return np.array(rows, dtype=np.int64).reshape(-1, d)
    seen = set(exclude)
    rows = []
    while len(rows) < count:
        # fixed batch size keeps the stream, and so every prefix, independent of count
        for r in rng.integers(1, n + 1, size=(256, d)).tolist():
            t = tuple(r)
            if t not in seen:
                seen.add(t)
                rows.append(r)
                if len(rows) == count:
                    break
    return np.array(rows, dtype=np.int64).reshape(-1, d)


class SnapshotCache:
    """Memo of diffusion solves keyed by grid, field parameters and grid index."""

    def __init__(self):
        self._store: dict = {}
        self._fields: dict = {}

    def __len__(self) -> int:
        return len(self._store)

    def _expansion(self, spec: RandomFieldSpec):
        if spec not in self._fields:
            self._fields[spec] = kl_expand(spec)
        return self._fields[spec]

    def solve(self, spec: RandomFieldSpec, basis: GPCBasis, index: Sequence[int]) -> np.ndarray:
        key = (spec, basis.n, tuple(int(v) for v in index))
        if key not in self._store:
            self._store[key] = solve_point(spec, self._expansion(spec), basis.node(index))
            self._store[key].setflags(write=False)
        return self._store[key]

    def reference(self, spec: RandomFieldSpec) -> SnapshotFn:
        kl = self._expansion(spec)
        return lambda xi: solve_point(spec, kl, xi)


_CACHE = SnapshotCache()


def solve_point(spec: RandomFieldSpec, kl, xi) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CoercivityWarning)
        field = eval_field(kl, spec, xi)
    return solve_diffusion(DiffusionProblem(spec.m), field)


def generate_training_data(
    config: PipelineConfig,
    snapshot_fn: SnapshotFn | None = None,
    cache: SnapshotCache | None = None,
) -> tuple[IndexSet, IndexSet, IndexSet, SnapshotMatrix]:
    """Index sets and snapshots; column ``s`` belongs to the ``s``-th index of the sorted union."""
    theta, theta_v = sample_index_sets(config)
    union = theta.union(theta_v)
    basis = GPCBasis(config.d, config.n, config.p)
    cols = []
    for s, j in enumerate(union.indices):
        try:
            if snapshot_fn is None:
                cols.append((_CACHE if cache is None else cache).solve(config.field_spec(), basis, j))
            else:
                cols.append(np.asarray(snapshot_fn(basis.node(j)), dtype=float).ravel())
        except NumericalFailure as exc:
            exc.context.update(stage="snapshots", sample=s, index=list(map(int, j)))
            raise
    return theta, theta_v, union, SnapshotMatrix(np.column_stack(cols))


# ---------------------------------------------------------------------------
# surrogate


@dataclass(frozen=True, eq=False)
class SurrogateModel:
    config: PipelineConfig
    basis: GPCBasis
    kpca: KPCAModel
    expansions: tuple
    recoveries: tuple
    theta: IndexSet
    theta_v: IndexSet
    #: modes whose recovery failed and fell back to an earlier rank
    downgraded: tuple = field(default=())

    @property
    def n_r(self) -> int:
        return len(self.expansions)

    def reduced(self, xi) -> np.ndarray:
        """Surrogate reduced coordinates at ``xi`` (one point) or each row of ``xi``."""
        xi = np.asarray(xi, dtype=float)
        cols = [np.atleast_1d(eval_surrogate(g, self.basis.family, np.atleast_2d(xi))) for g in self.expansions]
        out = np.column_stack(cols)
        return out[0] if xi.ndim == 1 else out

    def to_json(self) -> dict:
        return {
            "config": self.config.to_json(),
            "kpca": self.kpca.to_json("snapshots.bin"),
            "expansions": [g.to_json() for g in self.expansions],
            "recoveries": [r.to_json() for r in self.recoveries],
            "theta": self.theta.to_json(),
            "theta_v": self.theta_v.to_json(),
            "downgraded": list(self.downgraded),
        }

    def save(self, directory) -> Path:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        self.kpca.snapshots.save(out / "snapshots.bin")
        (out / "model.json").write_text(json.dumps(self.to_json()))
        return out

    @classmethod
    def load(cls, directory) -> "SurrogateModel":
        src = Path(directory)
        data = json.loads((src / "model.json").read_text())
        snaps = SnapshotMatrix.load(src / (data["kpca"]["snapshots"] or "snapshots.bin"))
        config = PipelineConfig.from_mapping(data["config"])
        recs = tuple(
            RecoveryResult(
                CPTensor.from_json(r["x"]),
                int(r["rank"]),
                float(r["validation_error"]),
                [RankRecord(**h) for h in r["per_rank_history"]],
                bool(r["rank_capped"]),
            )
            for r in data["recoveries"]
        )
        return cls(
            config,
            GPCBasis(config.d, config.n, config.p),
            KPCAModel.from_json(data["kpca"], snaps),
            tuple(GPCExpansion.from_json(g) for g in data["expansions"]),
            recs,
            IndexSet.from_json(data["theta"]),
            IndexSet.from_json(data["theta_v"]),
            tuple(data.get("downgraded", ())),
        )


def fit(
    config: PipelineConfig,
    snapshot_fn: SnapshotFn | None = None,
    cache: SnapshotCache | None = None,
) -> SurrogateModel:
    """Build a surrogate: snapshots on the sampled grid indices, kPCA, one RATR fit per reduced mode.

    ``snapshot_fn`` replaces the diffusion solver (it maps a parameter point
    to a snapshot vector).
    """
    theta, theta_v, union, Y = generate_training_data(config, snapshot_fn, cache)
    try:
        kpca = fit_kpca(Y, config.sigma_g, config.tol_pca)
    except NumericalFailure as exc:
        exc.context["stage"] = "kpca"
        raise
    basis = GPCBasis(config.d, config.n, config.p)
    pos = union.positions(theta.indices) - 1
    pos_v = union.positions(theta_v.indices) - 1
    expansions, recoveries, downgraded = [], [], []
    for e in range(kpca.n_r):
        gamma = kpca.train_coords[:, e]
        cfg = config.recovery_config(derive_seed(config.seed, 100 + e))
        try:
            res = ratr(theta, gamma[pos], theta_v, gamma[pos_v], basis.upsilon, basis.weights, cfg)
        except NumericalFailure as exc:
            exc.context.update(stage="recovery", mode=e + 1)
            if not isinstance(exc.partial, RecoveryResult):
                raise
            log.warning("mode %d: recovery failed (%s); keeping rank %d", e + 1, exc, exc.partial.rank)
            res = exc.partial
            downgraded.append(e + 1)
        recoveries.append(res)
        expansions.append(compute_coefficients(res.x, basis.weights, basis.upsilon))
    return SurrogateModel(config, basis, kpca, tuple(expansions), tuple(recoveries), theta, theta_v, tuple(downgraded))


def predict(model: SurrogateModel, xi) -> np.ndarray:
    """Snapshot prediction at a parameter point ``xi`` in ``[-1, 1]^d``."""
    xi = np.asarray(xi, dtype=float).ravel()
    if xi.size != model.config.d:
        raise ValidationError(f"xi has {xi.size} entries, model expects {model.config.d}")
    if np.any(np.abs(xi) > 1):
        raise DomainError("xi must lie in [-1, 1]^d")
    gamma = model.reduced(xi)
    return inverse_map(model.kpca, gamma, min(model.config.n_neighbours, model.kpca.n_t), model.config.inverse_mode)


def sample_test_points(config: PipelineConfig, count: int | None = None, seed=None) -> np.ndarray:
    rng = make_rng(derive_seed(config.seed, 7) if seed is None else seed)
    return rng.uniform(-1.0, 1.0, (count or config.test_samples, config.d))


@dataclass(frozen=True)
class EvaluationReport:
    #: per-point relative error; ``nan`` where the reference solve failed
    errors: np.ndarray
    median: float
    q1: float
    q3: float
    outliers: int
    failures: int

    def to_json(self) -> dict:
        return {
            "median": self.median,
            "q1": self.q1,
            "q3": self.q3,
            "outliers": self.outliers,
            "failures": self.failures,
            "errors": [None if math.isnan(e) else e for e in self.errors.tolist()],
        }

    def to_csv(self) -> str:
        lines = ["sample,relative_error"]
        lines += [f"{i},{'' if math.isnan(e) else repr(e)}" for i, e in enumerate(self.errors.tolist())]
        return "\n".join(lines) + "\n"


def summarize_errors(errors) -> EvaluationReport:
    """Median, quartiles and the 1.5 IQR outlier count of the finite errors."""
    errs = np.asarray(errors, dtype=float)
    ok = errs[np.isfinite(errs)]
    if ok.size == 0:
        nan = float("nan")
        return EvaluationReport(errs, nan, nan, nan, 0, int(errs.size))
    q1, med, q3 = np.percentile(ok, [25, 50, 75])
    iqr = q3 - q1
    outliers = int(np.count_nonzero((ok < q1 - 1.5 * iqr) | (ok > q3 + 1.5 * iqr)))
    return EvaluationReport(errs, float(med), float(q1), float(q3), outliers, int(errs.size - ok.size))


def evaluate(model: SurrogateModel, test_points, reference: SnapshotFn | None = None) -> EvaluationReport:
    """Relative errors of :func:`predict` against fresh reference solves."""
    if reference is None:
        reference = _CACHE.reference(model.config.field_spec())
    errors = []
    for xi in np.atleast_2d(test_points):
        try:
            truth = reference(xi)
        except NumericalFailure as exc:
            log.warning("reference solve failed at %s: %s", np.round(xi, 3).tolist(), exc)
            errors.append(float("nan"))
            continue
        errors.append(relative_error(truth, predict(model, xi)))
    return summarize_errors(errors)
