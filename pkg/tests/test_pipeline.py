import json

import numpy as np
import pytest

from ratr.errors import CapacityError, DomainError, ValidationError
from ratr.pipeline import (
    PipelineConfig,
    SnapshotCache,
    SurrogateModel,
    evaluate,
    fit,
    generate_training_data,
    parse_config_text,
    predict,
    sample_index_sets,
    sample_test_points,
    summarize_errors,
)

SMALL = dict(d=3, n=3, p=2, theta_size=12, validation_size=5, grid_m=7, max_outer_iters=30, rank_max=3, test_samples=5)


@pytest.fixture(scope="module")
def small_model():
    return fit(PipelineConfig(**SMALL), cache=SnapshotCache())


class TestConfig:
    def test_parse_text(self):
        text = "# comment\ntheta_size = 50\n\nbeta = 1e-3  # inline\nuniform_theta = yes\n"
        cfg = PipelineConfig.from_mapping(parse_config_text(text))
        assert cfg.theta_size == 50 and cfg.beta == 1e-3 and cfg.uniform_theta is True

    def test_rejects_bad_input(self):
        with pytest.raises(ValidationError):
            parse_config_text("no equals sign")
        with pytest.raises(ValidationError):
            PipelineConfig.from_mapping({"thetasize": "5"})
        with pytest.raises(ValidationError):
            PipelineConfig.from_mapping({"theta_size": "many"})
        with pytest.raises(ValidationError):
            PipelineConfig(tol_pca=0)

    def test_overrides_and_recovery_config(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("seed = 4\n")
        cfg = PipelineConfig.from_file(path).with_overrides(beta="0.5", d=None)
        assert cfg.seed == 4 and cfg.beta == 0.5 and cfg.d == 8
        rc = cfg.recovery_config()
        assert rc.seed == 4 and rc.beta == 0.5
        assert PipelineConfig.from_mapping(json.loads(json.dumps(cfg.to_json()))) == cfg


class TestIndexSets:
    def test_disjoint_and_sized(self):
        cfg = PipelineConfig(theta_size=40, validation_size=10)
        theta, theta_v = sample_index_sets(cfg)
        assert len(theta) == 40 and len(theta_v) == 10
        assert theta.isdisjoint(theta_v)

    def test_nested_across_sizes(self):
        small = sample_index_sets(PipelineConfig(theta_size=50))
        large = sample_index_sets(PipelineConfig(theta_size=200))
        assert small[1] == large[1]
        assert {tuple(r) for r in small[0].indices.tolist()} <= {tuple(r) for r in large[0].indices.tolist()}

    def test_uniform_option(self):
        theta, theta_v = sample_index_sets(PipelineConfig(theta_size=30, uniform_theta=True))
        counts = [np.bincount(theta.indices[:, k], minlength=4)[1:] for k in range(8)]
        assert all(np.all(c == 10) for c in counts)
        assert theta.isdisjoint(theta_v)
        with pytest.raises(ValidationError):
            sample_index_sets(PipelineConfig(theta_size=31, uniform_theta=True))

    def test_capacity(self):
        with pytest.raises(CapacityError):
            sample_index_sets(PipelineConfig(d=2, n=3, theta_size=8, validation_size=2))


class TestTrainingData:
    def test_columns_follow_sorted_union(self):
        cfg = PipelineConfig(**SMALL)
        seen = []

        def fake(xi):
            seen.append(np.array(xi))
            return np.array([1.0, *xi])

        theta, theta_v, union, Y = generate_training_data(cfg, snapshot_fn=fake)
        assert Y.n_t == len(union) == 17
        nodes = -np.sqrt(0.6) * np.array([1, 0, -1])
        for s, j in enumerate(union.indices):
            np.testing.assert_allclose(Y.column(s)[1:], nodes[j - 1])

    def test_cache_reuses_solves(self):
        cfg = PipelineConfig(**SMALL)
        cache = SnapshotCache()
        _, _, _, Y1 = generate_training_data(cfg, cache=cache)
        n = len(cache)
        _, _, _, Y2 = generate_training_data(cfg, cache=cache)
        assert len(cache) == n == 17
        np.testing.assert_array_equal(Y1.values, Y2.values)


class TestSurrogate:
    def test_structure(self, small_model):
        m = small_model
        assert m.n_r == m.kpca.n_r == len(m.recoveries)
        assert all(1 <= r.rank <= 3 for r in m.recoveries)
        assert m.reduced(np.zeros(3)).shape == (m.n_r,)
        assert m.reduced(np.zeros((4, 3))).shape == (4, m.n_r)

    def test_predict(self, small_model):
        y = predict(small_model, np.zeros(3))
        assert y.shape == (49,)
        with pytest.raises(DomainError):
            predict(small_model, [2, 0, 0])
        with pytest.raises(ValidationError):
            predict(small_model, [0, 0])

    def test_save_load_is_exact(self, small_model, tmp_path):
        small_model.save(tmp_path)
        back = SurrogateModel.load(tmp_path)
        pts = sample_test_points(small_model.config)
        for xi in pts:
            np.testing.assert_array_equal(predict(back, xi), predict(small_model, xi))
        assert back.to_json() == json.loads(json.dumps(small_model.to_json()))

    def test_fit_is_deterministic(self, small_model):
        again = fit(PipelineConfig(**SMALL), cache=SnapshotCache())
        assert json.dumps(again.to_json()) == json.dumps(small_model.to_json())

    def test_evaluate(self, small_model):
        rep = evaluate(small_model, sample_test_points(small_model.config))
        assert rep.errors.shape == (5,) and rep.failures == 0
        assert 0 <= rep.q1 <= rep.median <= rep.q3
        assert rep.to_csv().splitlines()[0] == "sample,relative_error"


class TestSummary:
    def test_quartiles_and_outliers(self):
        rep = summarize_errors([0.1, 0.2, 0.3, 0.4, 5.0, float("nan")])
        assert rep.median == pytest.approx(0.3)
        assert rep.outliers == 1 and rep.failures == 1
        assert rep.to_json()["errors"][-1] is None

    def test_all_failed(self):
        rep = summarize_errors([float("nan")])
        assert np.isnan(rep.median) and rep.failures == 1

    def test_test_points_in_box(self):
        pts = sample_test_points(PipelineConfig(), 50)
        assert pts.shape == (50, 8) and np.all(np.abs(pts) <= 1)
