from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fusionbma.inference import (
    ExactPosterior,
    PosteriorSummary,
    RateConfig,
    bf_rate_experiment,
    exact_posterior,
    metrics,
    posterior_table_csv,
    structure_labels,
    summarize,
    total_variation,
)
from fusionbma.marginal import MCConfig, ModelHyper, standardize
from fusionbma.sampler import ChainOutput, SamplerConfig, run_chain

from oracles import fixture


def fake_chain(deltas, thetas, x_scale=None):
    deltas = np.asarray(deltas, dtype=np.int8)
    thetas = np.asarray(thetas, dtype=float)
    counts = Counter(tuple(int(v) for v in d) for d in deltas)
    return ChainOutput(deltas=deltas, theta_full=thetas, sigma2=np.ones(len(deltas)),
                       iterations=np.arange(len(deltas)), model_counts=counts, x_scale=x_scale)


class TestSummarize:
    def test_stuck_chain(self):
        ch = fake_chain([(-1, 0)] * 5, [[1.0, 0.0]] * 5)
        s = summarize(ch)
        assert s.model_probs == {(-1, 0): 1.0}
        assert s.map_model == (-1, 0)

    def test_bma_identity(self):
        rng = np.random.default_rng(0)
        deltas = [(-1, 0)] * 3 + [(-1, 1)] * 5 + [(0, -1)] * 2
        thetas = []
        for d in deltas:
            a = rng.normal()
            thetas.append({(-1, 0): [a, 0.0], (-1, 1): [a, a], (0, -1): [0.0, a]}[d])
        ch = fake_chain(deltas, thetas)
        s = summarize(ch)
        thetas = np.array(thetas)
        parts = []
        for d, pr in s.model_probs.items():
            rows = [i for i, dd in enumerate(deltas) if dd == d]
            parts.append(pr * thetas[rows].mean(axis=0))
        np.testing.assert_allclose(s.theta_mean, np.sum(parts, axis=0), rtol=1e-14)
        assert s.map_model == (-1, 1)

    def test_map_tie_break(self):
        ch = fake_chain([(0, -1), (-1, 0)], [[0.0, 1.0], [1.0, 0.0]])
        assert summarize(ch).map_model == (-1, 0)

    def test_raw_scale(self):
        ch = fake_chain([(-1, 1)] * 2, [[1.0, 1.0], [3.0, 3.0]], x_scale=np.array([2.0, 0.5]))
        np.testing.assert_allclose(summarize(ch).theta_mean, [4.0, 1.0])
        np.testing.assert_allclose(summarize(ch, raw_scale=False).theta_mean, [2.0, 2.0])

    def test_empty(self):
        with pytest.raises(ValueError, match="no stored draws"):
            summarize(fake_chain(np.zeros((0, 2)), np.zeros((0, 2))))

    def test_ci(self):
        rng = np.random.default_rng(1)
        th = rng.standard_normal((4000, 1))
        s = summarize(fake_chain([(-1,)] * 4000, th), ci_level=0.9)
        assert s.theta_ci.shape == (1, 2)
        assert s.theta_ci[0, 0] == pytest.approx(-1.645, abs=0.1)


class TestExactPosterior:
    def test_sums_to_one(self):
        ep = exact_posterior(fixture(12, 3, 0, theta=[1.0, 1.0, 0.0]), mc=MCConfig(500))
        assert isinstance(ep, ExactPosterior)
        assert sum(ep.model_probs.values()) == pytest.approx(1.0, abs=1e-12)
        assert len(ep.models) == 13

    def test_null_preferred_under_independence(self):
        rng = np.random.default_rng(3)
        wins = 0
        for rep in range(20):
            x = rng.standard_normal(40)
            y = rng.standard_normal(40)
            ep = exact_posterior(standardize(y, x[:, None]), mc=MCConfig(1000, seed=rep))
            wins += ep.model_probs[(0,)] > ep.model_probs[(-1,)]
        assert wins >= 18

    def test_normal_slab(self):
        ep = exact_posterior(fixture(12, 2, 1, theta=[1.0, 0.0]), slab="normal")
        assert sum(ep.model_probs.values()) == pytest.approx(1.0)

    def test_cap(self):
        with pytest.raises(ValueError):
            exact_posterior(fixture(30, 4, 0), cap=3)

    def test_csv(self):
        ep = exact_posterior(fixture(10, 2, 2), mc=MCConfig(200))
        lines = posterior_table_csv(ep).strip().split("\n")
        assert lines[0] == "model_index,delta,log_marginal,log_prior,posterior_prob"
        assert len(lines) == 6
        assert lines[1].startswith('0,"-1,-1",')

    @pytest.mark.parametrize("seed,theta", [(0, [0.0, 0.0, 0.0]), (1, [1.0, 0.0, 0.8]), (2, [0.9, 0.9, 0.9])])
    def test_agrees_with_chain(self, seed, theta):
        d = fixture(30, 3, seed, theta=theta, sigma=1.0)
        mc = MCConfig(512, seed=seed)
        ep = exact_posterior(d, mc=mc)
        ch = run_chain(d, SamplerConfig(iterations=12_000, burn_in=1000, seed=seed, mc=mc))
        s = summarize(ch)
        assert total_variation(s.model_probs, ep.model_probs) < 0.05


class TestMetrics:
    def test_perfect(self):
        s = PosteriorSummary({(-1, 1, 0): 1.0}, np.array([2.0, 2.0, 0.0]), (-1, 1, 0))
        r = metrics(s, [2.0, 2.0, 0.0])
        assert r.mse == 0.0 and r.pse == 0.0
        assert r.p_b == 1.0

    def test_identity_sigma(self):
        s = PosteriorSummary({}, np.array([1.0, 2.5, 0.3]), (-1, -1, -1))
        r = metrics(s, [1.2, 2.0, 0.0])
        assert r.pse == r.mse

    def test_correlated_pse(self):
        s = PosteriorSummary({}, np.array([1.0, 0.0]), (-1, 0))
        S = np.array([[1.0, 0.5], [0.5, 1.0]])
        r = metrics(s, [0.0, 1.0], S)
        e = np.array([1.0, -1.0])
        assert r.pse == pytest.approx(e @ S @ e)

    def test_worked_example(self):
        s = PosteriorSummary({}, np.zeros(4), (0, -1, 1, -1))
        r = metrics(s, [0.0, 2.0, 2.0, 0.0])
        assert (r.n_selection, r.n_fusion) == (1, 1)
        assert r.p_b_over_p == 2 / 4
        assert r.p_b_denominator == 3
        assert r.p_b == pytest.approx(2 / 3)

    def test_no_opportunities(self):
        s = PosteriorSummary({}, np.array([1.0, 2.0]), (-1, -1))
        r = metrics(s, [1.0, 2.0])
        assert r.p_b == 1.0 and r.p_b_over_p == 0.0

    def test_dimension_mismatch(self):
        s = PosteriorSummary({}, np.zeros(3), (-1, -1, -1))
        with pytest.raises(ValueError, match="dimension"):
            metrics(s, [1.0, 2.0])

    def test_labels(self):
        assert structure_labels((-1, 1, 0, -1, -1)).tolist() == [1, 1, 0, 2, 3]

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31), st.integers(2, 10))
    def test_pb_over_p_never_exceeds_normalized(self, seed, p):
        rng = np.random.default_rng(seed)
        theta = rng.choice([0.0, 1.0, 2.0], size=p)
        d = [int(rng.choice([-1, 0]))]
        for _ in range(p - 1):
            d.append(int(rng.choice([-1, 0] if d[-1] == 0 else [-1, 0, 1])))
        s = PosteriorSummary({}, rng.standard_normal(p), tuple(d))
        r = metrics(s, theta)
        assert r.p_b_over_p <= r.p_b + 1e-15
        if r.p_b_denominator == p:
            assert r.p_b_over_p == r.p_b

    def test_draw_order_invariance(self):
        rng = np.random.default_rng(0)
        deltas = [(-1, 1, 0)] * 6 + [(-1, -1, 0)] * 4
        thetas = [[a, a, 0.0] if d == (-1, 1, 0) else [a, -a, 0.0] for d, a in zip(deltas, rng.normal(size=10))]
        perm = rng.permutation(10)
        r1 = metrics(summarize(fake_chain(deltas, thetas)), [1.0, 1.0, 0.0])
        r2 = metrics(summarize(fake_chain([deltas[i] for i in perm], [thetas[i] for i in perm])), [1.0, 1.0, 0.0])
        assert r1.p_b == r2.p_b and r1.mse == pytest.approx(r2.mse, rel=1e-14)


def test_total_variation():
    assert total_variation({"a": 1.0}, {"b": 1.0}) == 1.0
    assert total_variation({"a": 0.5, "b": 0.5}, {"a": 0.5, "b": 0.5}) == 0.0


class TestRates:
    def test_small_run(self):
        cfg = RateConfig(replications=8, bootstrap=200, mc=MCConfig(1024))
        res = bf_rate_experiment(cfg)
        assert res.log_bf.shape == (8, 5)
        assert -2.0 <= res.slopes["log_bf"] <= -1.0
        assert res.slopes["log_bf_normal"] > res.slopes["log_bf"]
        # underfit log BF falls roughly linearly in n, far faster than log n
        under = res.log_bf_underfit.mean(axis=0)
        assert under[-1] < 8 * under[0] < 0
        assert res.slopes["log_bf_underfit_vs_n"] < 0

    def test_reproducible(self):
        cfg = RateConfig(n_grid=(20, 40, 80, 160), replications=3, bootstrap=50, mc=MCConfig(256))
        a, b = bf_rate_experiment(cfg), bf_rate_experiment(cfg)
        assert a.slopes == b.slopes
        assert a.bootstrap_fraction == b.bootstrap_fraction
        rows = a.table_rows()
        assert len(rows) == 4 and rows[0]["n"] == 20

    def test_validation(self):
        with pytest.raises(ValueError):
            RateConfig(n_grid=(10, 20, 40))
        with pytest.raises(ValueError):
            RateConfig(overfit_delta=(-1, 1, -1, -1))
        with pytest.raises(ValueError):
            RateConfig(overfit_delta=(0, -1, -1, 0))


def test_hyper_default_is_unit():
    h = ModelHyper()
    assert (h.alpha, h.psi, h.tau) == (1.0, 1.0, 1.0)
