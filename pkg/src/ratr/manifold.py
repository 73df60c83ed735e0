"""Kernel PCA reduction of snapshot data and interpolating pre-images.

Snapshots are the columns of an ``N_h x N_t`` matrix.  A Gaussian kernel PCA
maps each snapshot to ``N_r`` reduced coordinates; :func:`inverse_map` goes
back by inverse-distance interpolation of the nearest training snapshots.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DegenerateDataError, DimensionError, DomainError, ReconstructionError

#: Distances below this are treated as an exact hit on a training snapshot.
ZERO_DISTANCE = 1e-12

_HEADER = struct.Struct("<qq")


@dataclass(frozen=True, eq=False)
class SnapshotMatrix:
    """Columns are snapshots ``y^(j)`` of length ``N_h``."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=float, ndmin=2)
        if arr.ndim != 2:
            raise DimensionError("snapshot matrix must be two-dimensional")
        if arr.shape[1] < 2:
            raise DimensionError("need at least two snapshots")
        if not np.all(np.isfinite(arr)):
            raise DomainError("snapshot entries must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def n_h(self) -> int:
        return self.values.shape[0]

    @property
    def n_t(self) -> int:
        return self.values.shape[1]

    def column(self, j: int) -> np.ndarray:
        return self.values[:, j]

    def save(self, path) -> None:
        """Write as CSV (``.csv``) or little-endian binary with an ``{N_h, N_t}`` header."""
        path = Path(path)
        if path.suffix.lower() == ".csv":
            with path.open("w", newline="") as fh:
                csv.writer(fh).writerows(self.values.tolist())
        else:
            with path.open("wb") as fh:
                fh.write(_HEADER.pack(self.n_h, self.n_t))
                fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "SnapshotMatrix":
        path = Path(path)
        if path.suffix.lower() == ".csv":
            return cls(np.loadtxt(path, delimiter=",", ndmin=2))
        raw = path.read_bytes()
        if len(raw) < _HEADER.size:
            raise DimensionError(f"{path} is too short for a snapshot header")
        n_h, n_t = _HEADER.unpack_from(raw)
        body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
        if body.size != n_h * n_t:
            raise DimensionError(f"header says {n_h}x{n_t} but file holds {body.size} values")
        return cls(body.reshape(n_h, n_t))


def gaussian_kernel(a, b, sigma: float) -> float:
    """``exp(-||a - b||^2 / (2 sigma^2))``."""
    if sigma <= 0:
        raise DomainError("bandwidth must be positive")
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise DimensionError("vectors have different lengths")
    diff = a - b
    return float(np.exp(-(diff @ diff) / (2.0 * sigma**2)))


def kernel_matrix(X, Y, sigma: float) -> np.ndarray:
    """Gaussian kernel between the columns of ``X`` and the columns of ``Y``."""
    if sigma <= 0:
        raise DomainError("bandwidth must be positive")
    sq = cdist(np.atleast_2d(X).T, np.atleast_2d(Y).T, "sqeuclidean")
    return np.exp(-sq / (2.0 * sigma**2))


def center_kernel(K) -> np.ndarray:
    """Double-centred kernel ``K - 1K - K1 + 1K1`` with ``1`` the all-``1/N`` matrix."""
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise DimensionError("kernel matrix must be square")
    row = K.mean(axis=0, keepdims=True)
    col = K.mean(axis=1, keepdims=True)
    return K - row - col + K.mean()


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    """Flip columns so the first entry that is not ~0 is positive."""
    out = vecs.copy()
    for e in range(out.shape[1]):
        v = out[:, e]
        nz = np.flatnonzero(np.abs(v) > 1e-12 * max(np.abs(v).max(), 1e-300))
        if nz.size and v[nz[0]] < 0:
            out[:, e] = -v
    return out


@dataclass(frozen=True, eq=False)
class KPCAModel:
    """Fitted kernel PCA.

    ``alpha_tilde[:, e]`` is the ``e``-th eigenvector of the centred kernel
    divided by the square root of its eigenvalue; ``train_coords[j]`` holds the
    reduced coordinates of training snapshot ``j``.
    """

    sigma: float
    tol_pca: float
    eigenvalues: np.ndarray
    alpha_tilde: np.ndarray
    snapshots: SnapshotMatrix
    kernel: np.ndarray
    train_coords: np.ndarray

    @property
    def n_r(self) -> int:
        return self.alpha_tilde.shape[1]

    @property
    def n_t(self) -> int:
        return self.snapshots.n_t

    def to_json(self, snapshot_ref: str | None = None) -> dict:
        return {
            "sigma": self.sigma,
            "tol_pca": self.tol_pca,
            "n_r": self.n_r,
            "eigenvalues": self.eigenvalues.tolist(),
            "alpha_tilde": self.alpha_tilde.tolist(),
            "snapshots": snapshot_ref,
        }

    @classmethod
    def from_json(cls, data: dict, snapshots: SnapshotMatrix) -> "KPCAModel":
        alpha = np.asarray(data["alpha_tilde"], dtype=float).reshape(snapshots.n_t, -1)
        K = kernel_matrix(snapshots.values, snapshots.values, float(data["sigma"]))
        return cls(
            float(data["sigma"]),
            float(data["tol_pca"]),
            np.asarray(data["eigenvalues"], dtype=float),
            alpha,
            snapshots,
            K,
            center_kernel(K) @ alpha,
        )


def fit_kpca(Y, sigma: float, tol_pca: float) -> KPCAModel:
    """Gaussian kernel PCA keeping the fewest modes whose variance fraction exceeds ``tol_pca``."""
    if sigma <= 0:
        raise DomainError("bandwidth must be positive")
    if not 0 < tol_pca <= 1:
        raise DomainError("tol_pca must lie in (0, 1]")
    snaps = Y if isinstance(Y, SnapshotMatrix) else SnapshotMatrix(Y)
    K = kernel_matrix(snaps.values, snaps.values, sigma)
    Kc = center_kernel(K)
    lam, vecs = np.linalg.eigh((Kc + Kc.T) / 2)
    lam, vecs = lam[::-1], vecs[:, ::-1]
    pos = np.clip(lam, 0.0, None)
    total = pos.sum()
    if total <= 0 or lam[0] <= 0:
        raise DegenerateDataError("centred kernel has no positive eigenvalue")
    frac = np.cumsum(pos) / total
    # tol_pca = 1 (or rounding) may leave frac never strictly above tol
    n_r = int(min(np.searchsorted(frac, tol_pca, side="right") + 1, np.count_nonzero(lam > 0)))
    vecs = _fix_signs(vecs[:, :n_r])
    alpha = vecs / np.sqrt(lam[:n_r])
    return KPCAModel(float(sigma), float(tol_pca), lam, alpha, snaps, K, Kc @ alpha)


def centered_cross_kernel(model: KPCAModel, y) -> np.ndarray:
    """Centred kernel vector between the training snapshots and new points ``y`` (columns)."""
    y = np.asarray(y, dtype=float)
    cols = y.reshape(-1, 1) if y.ndim == 1 else y
    if cols.shape[0] != model.snapshots.n_h:
        raise DimensionError(f"point of length {cols.shape[0]}, model expects {model.snapshots.n_h}")
    k = kernel_matrix(model.snapshots.values, cols, model.sigma)  # (N_t, M)
    K = model.kernel
    return k - k.mean(axis=0, keepdims=True) - K.mean(axis=1, keepdims=True) + K.mean()


def reduce(model: KPCAModel, y) -> np.ndarray:
    """Reduced coordinates of a snapshot (length ``N_r``), or of each column of a matrix."""
    kt = centered_cross_kernel(model, y)
    coords = (model.alpha_tilde.T @ kt).T
    return coords[0] if np.ndim(y) == 1 else coords


@dataclass(frozen=True)
class PreImage:
    y: np.ndarray
    neighbours: np.ndarray
    weights: np.ndarray
    distances: np.ndarray


def feature_distances(model: KPCAModel, gamma, mode: str = "projected") -> np.ndarray:
    """Squared feature-space distances between the point with coordinates ``gamma`` and each training image.

    ``"projected"`` compares inside the retained kPCA subspace; ``"feature"``
    uses the full distance from the projected point to ``phi(y^(j))``,
    which adds each training point's out-of-subspace residual.
    """
    gamma = np.asarray(gamma, dtype=float).ravel()
    if gamma.size != model.n_r:
        raise DimensionError(f"{gamma.size} coordinates, model keeps {model.n_r}")
    diff = model.train_coords - gamma
    if mode == "projected":
        return np.einsum("je,je->j", diff, diff)
    if mode == "feature":
        eta = model.alpha_tilde @ gamma
        beta = eta + (1.0 - eta.sum()) / model.n_t
        Kb = model.kernel @ beta
        return 1.0 + beta @ Kb - 2.0 * Kb
    raise DomainError(f"unknown distance mode {mode!r}")


def input_distances(model: KPCAModel, sq_feature: np.ndarray) -> np.ndarray:
    """Invert the Gaussian kernel: feature distance to input-space distance, ``inf`` when out of range."""
    arg = 1.0 - 0.5 * np.clip(sq_feature, 0.0, None)
    out = np.full(arg.shape, np.inf)
    ok = arg > 0
    out[ok] = np.sqrt(np.clip(-2.0 * model.sigma**2 * np.log(arg[ok]), 0.0, None))
    return out


def inverse_map_detail(model: KPCAModel, gamma, n_n: int, mode: str = "projected") -> PreImage:
    if not 1 <= n_n <= model.n_t:
        raise DomainError(f"neighbour count must lie in [1, {model.n_t}]")
    d = input_distances(model, feature_distances(model, gamma, mode))
    order = np.argsort(d, kind="stable")
    chosen = order[:n_n]
    chosen = chosen[np.isfinite(d[chosen])]
    if chosen.size == 0:
        raise ReconstructionError("no training snapshot lies within the kernel's range")
    if d[chosen[0]] < ZERO_DISTANCE:
        hit = chosen[:1]
        return PreImage(model.snapshots.column(hit[0]).copy(), hit, np.ones(1), d[hit])
    inv = 1.0 / d[chosen]
    w = inv / inv.sum()
    y = model.snapshots.values[:, chosen] @ w
    if not np.all(np.isfinite(y)):
        raise ReconstructionError("non-finite pre-image")
    return PreImage(y, chosen, w, d[chosen])


def inverse_map(model: KPCAModel, gamma, n_n: int, mode: str = "projected") -> np.ndarray:
    """Pre-image as an inverse-distance weighted mean of the ``n_n`` nearest training snapshots."""
    return inverse_map_detail(model, gamma, n_n, mode).y
