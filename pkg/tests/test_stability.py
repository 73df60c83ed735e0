import csv
import io

import numpy as np
import pytest

from ratr.distributions import DistributionSpec, derive_seed, make_rng
from ratr.errors import CapacityError, DomainError, ValidationError
from ratr.recovery import assemble_B
from ratr.stability import (
    check_rank_one_update_bound,
    estimate_order_ratio,
    generate_uniform_index_set,
    is_uniform,
    rank_one_cond,
    reports_to_csv,
    reports_to_json,
    sample_cond_B,
    table_report,
)
from ratr.tensor_core import IndexSet


class TestDistributions:
    def test_parse(self):
        assert DistributionSpec.parse("U(1,2)") == DistributionSpec("uniform", 1.0, 2.0)
        assert DistributionSpec.parse("normal(9, 0.1)").label() == "N(9,0.1)"
        assert str(DistributionSpec.parse("u(0,1)")) == "uniform(0,1)"
        with pytest.raises(ValidationError):
            DistributionSpec.parse("beta(1,2)")

    def test_rng_is_reproducible(self):
        assert make_rng(3).random() == make_rng(3).random()
        assert derive_seed(0, 1) != derive_seed(0, 2)


class TestUniformIndexSet:
    @pytest.mark.parametrize("d,n,m", [(4, 3, 5), (48, 3, 33), (6, 4, 10)])
    def test_counts(self, d, n, m):
        theta = generate_uniform_index_set(d, n, m, seed=1)
        assert len(theta) == n * m
        assert is_uniform(theta)

    def test_not_uniform(self):
        assert not is_uniform(IndexSet([[1, 1], [1, 2]], dim=2))

    def test_capacity(self):
        with pytest.raises(CapacityError):
            generate_uniform_index_set(2, 2, 3)


class TestOrderRatio:
    def test_constant_distribution_has_small_ratio(self):
        r = estimate_order_ratio("U(1,1.0001)", 4, 5, samples=2000)
        assert r.mu < 1e-3

    def test_analytic_single_term(self):
        # m = 1, d = 2: Xi = psi^2 with psi ~ U(0,1): E = 1/3, Var = 1/5 - 1/9
        r = estimate_order_ratio("U(0,1)", 2, 1, samples=200_000, seed=4)
        assert r.mu == pytest.approx(np.sqrt(4 / 45) * 3, rel=0.02)

    def test_needs_two_samples(self):
        with pytest.raises(DomainError):
            estimate_order_ratio("U(0,1)", 3, 2, samples=1)


class TestCondB:
    def test_rank_one_cond_matches_svd(self, rng):
        d, n = 5, 3
        theta = generate_uniform_index_set(d, n, 6, seed=2)
        for seed in range(5):
            A = make_rng(seed).uniform(1, 2, (d, n, 1))
            B = assemble_B(list(A), theta, 1)
            s = np.linalg.svd(B, compute_uv=False)
            diag = np.diag(B.T @ B)
            assert rank_one_cond(diag[None, :])[0] == pytest.approx(s[0] / s[-1], rel=1e-12)

    def test_sampler_agrees_with_direct(self):
        d, n = 4, 3
        theta = generate_uniform_index_set(d, n, 5, seed=0)
        r = sample_cond_B("U(1,2)", d, n, theta, trials=50, seed=9)
        rng = make_rng(9)
        A = DistributionSpec.parse("U(1,2)").sample(rng, (50, d, n))
        conds = []
        for t in range(50):
            B = assemble_B([a[:, None] for a in A[t]], theta, 1)
            s = np.linalg.svd(B, compute_uv=False)
            conds.append(s[0] / s[-1])
        assert r.cond_mean == pytest.approx(np.mean(conds), rel=1e-10)

    def test_report_serialization(self):
        reps = table_report(["U(1,2)", "N(0,1)"], d=6, m=4, samples=500, trials=100)
        rows = list(csv.reader(io.StringIO(reports_to_csv(reps))))
        assert rows[0] == ["distribution", "mu", "cond_B_mean"]
        assert rows[1][0] == "U(1,2)"
        assert float(rows[1][1]) == pytest.approx(reps[0].mu, rel=1e-5)
        assert '"distribution": "N(0,1)"' in reports_to_json(reps)


class TestUpdateBound:
    def test_concatenation_and_bound(self, rng):
        theta = generate_uniform_index_set(5, 3, 8, seed=3)
        f = [rng.uniform(1, 2, (3, 2)) for _ in range(5)]
        rep = check_rank_one_update_bound(f, theta)
        assert rep.concatenation_exact
        assert np.isfinite(rep.c2) and np.isfinite(rep.c3)
        assert rep.cond_B_delta >= 1

    def test_singular_B(self):
        theta = IndexSet([[1, 1], [1, 2]], dim=2)
        rep = check_rank_one_update_bound([np.ones((2, 1)), np.ones((2, 1))], theta)
        assert rep.holds is None and rep.c2 == np.inf
