import numpy as np
import pytest

from ratr.errors import DegenerateDataError, DimensionError, DomainError
from ratr.manifold import (
    KPCAModel,
    SnapshotMatrix,
    center_kernel,
    feature_distances,
    fit_kpca,
    gaussian_kernel,
    input_distances,
    inverse_map,
    inverse_map_detail,
    kernel_matrix,
    reduce,
)


@pytest.fixture
def snapshots(rng):
    # smooth one-parameter family in 30 dimensions
    t = np.linspace(0, 1, 25)
    x = np.linspace(0, 1, 30)[:, None]
    return SnapshotMatrix(np.sin(np.pi * x * (1 + t)) + 0.01 * rng.normal(size=(30, 25)))


class TestSnapshotMatrix:
    def test_validation(self):
        with pytest.raises(DimensionError):
            SnapshotMatrix(np.ones((3, 1)))
        with pytest.raises(DomainError):
            SnapshotMatrix(np.array([[1.0, np.nan]]))

    @pytest.mark.parametrize("name", ["y.bin", "y.csv"])
    def test_round_trip(self, tmp_path, snapshots, name):
        snapshots.save(tmp_path / name)
        back = SnapshotMatrix.load(tmp_path / name)
        np.testing.assert_array_equal(back.values, snapshots.values)

    def test_truncated_binary(self, tmp_path, snapshots):
        snapshots.save(tmp_path / "y.bin")
        raw = (tmp_path / "y.bin").read_bytes()
        (tmp_path / "y.bin").write_bytes(raw[:-8])
        with pytest.raises(DimensionError):
            SnapshotMatrix.load(tmp_path / "y.bin")


class TestKernel:
    def test_matrix_matches_pairwise(self, rng):
        X = rng.normal(size=(4, 5))
        K = kernel_matrix(X, X, 0.7)
        for i in range(5):
            for j in range(5):
                assert K[i, j] == pytest.approx(gaussian_kernel(X[:, i], X[:, j], 0.7), rel=1e-14)

    def test_centering_is_projection(self, rng):
        X = rng.normal(size=(3, 6))
        K = kernel_matrix(X, X, 1.0)
        H = np.eye(6) - 1 / 6
        Kc = center_kernel(K)
        np.testing.assert_allclose(Kc, H @ K @ H, atol=1e-15)
        np.testing.assert_allclose(center_kernel(Kc), Kc, atol=1e-15)
        np.testing.assert_allclose(Kc.sum(axis=0), 0, atol=1e-14)

    def test_bad_bandwidth(self):
        with pytest.raises(DomainError):
            gaussian_kernel([0.0], [1.0], 0.0)


class TestKPCA:
    def test_variance_fraction_rule(self, snapshots):
        m = fit_kpca(snapshots, 1.0, 0.9)
        frac = np.cumsum(np.clip(m.eigenvalues, 0, None)) / np.clip(m.eigenvalues, 0, None).sum()
        assert frac[m.n_r - 1] > 0.9
        assert m.n_r == 1 or frac[m.n_r - 2] <= 0.9

    def test_training_coordinates_match_reduce(self, snapshots):
        m = fit_kpca(snapshots, 1.0, 0.95)
        np.testing.assert_allclose(reduce(m, snapshots.values), m.train_coords, atol=1e-12)
        np.testing.assert_allclose(reduce(m, snapshots.column(3)), m.train_coords[3], atol=1e-12)

    def test_reduce_matches_brute_force(self, snapshots, rng):
        m = fit_kpca(snapshots, 1.0, 0.95)
        y = snapshots.column(0) + 0.05 * rng.normal(size=30)
        N = m.n_t
        k = np.array([gaussian_kernel(snapshots.column(j), y, 1.0) for j in range(N)])
        K = m.kernel
        kt = k - k.mean() - K.mean(axis=1) + K.mean()
        np.testing.assert_allclose(reduce(m, y), m.alpha_tilde.T @ kt, rtol=1e-12)

    def test_unit_feature_norm_eigenvectors(self, snapshots):
        m = fit_kpca(snapshots, 1.0, 0.95)
        # alpha_tilde^T Kc alpha_tilde = I
        Kc = center_kernel(m.kernel)
        np.testing.assert_allclose(m.alpha_tilde.T @ Kc @ m.alpha_tilde, np.eye(m.n_r), atol=1e-10)

    def test_identical_snapshots_degenerate(self):
        with pytest.raises(DegenerateDataError):
            fit_kpca(np.ones((5, 4)), 1.0, 0.9)

    def test_json_round_trip(self, snapshots):
        m = fit_kpca(snapshots, 1.0, 0.9)
        back = KPCAModel.from_json(m.to_json(), snapshots)
        np.testing.assert_allclose(back.train_coords, m.train_coords, atol=1e-13)


class TestInverseMap:
    @pytest.mark.parametrize("mode", ["projected", "feature"])
    def test_round_trip_training_snapshots(self, snapshots, mode):
        m = fit_kpca(snapshots, 1.0, 0.9)
        for j in range(m.n_t):
            y = inverse_map(m, reduce(m, snapshots.column(j)), 5, mode)
            if mode == "projected":
                np.testing.assert_array_equal(y, snapshots.column(j))
            else:
                assert np.all(np.isfinite(y))

    def test_weights_are_convex(self, snapshots, rng):
        m = fit_kpca(snapshots, 1.0, 0.9)
        for _ in range(10):
            gamma = m.train_coords[rng.integers(m.n_t)] + 0.05 * rng.normal(size=m.n_r)
            pre = inverse_map_detail(m, gamma, 6)
            assert np.all(pre.weights >= 0)
            assert abs(pre.weights.sum() - 1) <= 1e-12
            np.testing.assert_allclose(pre.y, snapshots.values[:, pre.neighbours] @ pre.weights)

    def test_weights_are_inverse_distances(self, snapshots):
        m = fit_kpca(snapshots, 1.0, 0.9)
        gamma = 0.5 * (m.train_coords[2] + m.train_coords[3])
        pre = inverse_map_detail(m, gamma, 3)
        inv = 1 / pre.distances
        np.testing.assert_allclose(pre.weights, inv / inv.sum())
        assert np.all(np.diff(pre.distances) >= 0)

    def test_distance_inversion(self, snapshots):
        m = fit_kpca(snapshots, 1.0, 0.9)
        a, b = snapshots.column(0), snapshots.column(1)
        sq = np.array([2 - 2 * gaussian_kernel(a, b, 1.0)])
        np.testing.assert_allclose(input_distances(m, sq), np.linalg.norm(a - b), rtol=1e-10)
        assert input_distances(m, np.array([2.5]))[0] == np.inf

    def test_bad_arguments(self, snapshots):
        m = fit_kpca(snapshots, 1.0, 0.9)
        with pytest.raises(DomainError):
            inverse_map(m, m.train_coords[0], 0)
        with pytest.raises(DimensionError):
            feature_distances(m, np.zeros(m.n_r + 1))
        with pytest.raises(DomainError):
            feature_distances(m, m.train_coords[0], "bogus")
