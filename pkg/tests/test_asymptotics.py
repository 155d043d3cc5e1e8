import math

import numpy as np
import pytest

from netfail.asymptotics import (
    ld_rate,
    probability_sandwich,
    rate_report_to_csv,
    rate_sweep,
)
from netfail.estimators import EstimatorConfig
from netfail.network import NetworkSpec, ThresholdRule, scale_instance
from netfail.presets import preset
from netfail.stochastic import GaussianModel, normal_sf


class TestLdRate:
    def test_example1(self, example1):
        rate = ld_rate(example1.spec)
        assert rate.t_star == 1  # ratios (3, 1, 13): middle node dominates
        assert rate.ratio == pytest.approx(1.0)
        assert rate.rate == pytest.approx(0.5)

    def test_example3_tie_breaks_low(self):
        spec = preset("example3").spec
        rate = ld_rate(spec)
        assert rate.t_star == 0  # all ratios equal: lowest index wins
        assert rate.rate == pytest.approx(2.0)

    def test_rate_scales_quadratically_in_gamma(self, example1):
        spec = example1.spec
        scaled = NetworkSpec(
            H=spec.H, A=spec.A, gamma=3.0 * spec.gamma, mu=spec.mu,
            sigma=spec.sigma, beta=spec.beta,
        )
        assert ld_rate(scaled).rate == pytest.approx(9.0 * ld_rate(spec).rate)

    def test_permutation_invariance(self, example1, rng):
        spec = example1.spec
        perm = rng.permutation(3)
        permuted = NetworkSpec(
            H=spec.H[np.ix_(perm, perm)],
            A=spec.A[np.ix_(perm, perm)],
            gamma=spec.gamma[perm],
            mu=spec.mu[perm],
            sigma=spec.sigma[np.ix_(perm, perm)],
            beta=spec.beta,
        )
        base = ld_rate(spec)
        relabeled = ld_rate(permuted)
        assert relabeled.rate == pytest.approx(base.rate)
        assert perm[relabeled.t_star] == base.t_star


class TestSandwich:
    def test_example1_values(self, example1_model, example1_instance):
        lower, upper = probability_sandwich(example1_model, example1_instance)
        assert lower == pytest.approx(normal_sf(1.5), rel=1e-12)
        assert lower == pytest.approx(0.0668, abs=1e-4)
        assert upper == pytest.approx(0.3088, abs=1e-4)

    def test_zero_threshold_ordering(self, example1):
        inst = scale_instance(example1.spec, 1.5, 0.0)
        model = GaussianModel.from_spec(example1.spec)
        lower, upper = probability_sandwich(model, inst)
        assert lower <= upper

    def test_bounds_vanish_with_supply(self, example1):
        model = GaussianModel.from_spec(example1.spec)
        inst = scale_instance(example1.spec, 50.0, 1.0)
        lower, upper = probability_sandwich(model, inst)
        assert lower < 1e-200 and upper < 1e-200


def scaled_log(alpha, n, beta=1.0):
    return math.log(alpha) / n ** (2 * beta)


class TestRateSweep:
    def test_table_arithmetic_is_monotone(self):
        # reference IS estimates for the 3-node benchmark feed the formula:
        # |n^-2 log(alpha) + rate| must decrease along the grid
        reference = {
            1.5: 6.76e-2, 2.5: 6.19e-3, 3.2: 6.92e-4,
            3.9: 4.82e-5, 4.5: 3.39e-6, 4.9: 4.80e-7,
        }
        rate = 0.5
        gaps = [abs(scaled_log(a, n) + rate) for n, a in reference.items()]
        assert all(b < a for a, b in zip(gaps, gaps[1:]))
        assert scaled_log(4.80e-7, 4.9) == pytest.approx(-0.606, abs=1e-3)

    def test_sweep_rows_and_flags(self, example1):
        model = GaussianModel.from_spec(example1.spec)
        cfg = EstimatorConfig(method="is", n_replications=4000, seed=21)
        report = rate_sweep(
            model, example1.spec, [1.5, 2.5], example1.k_rule, cfg
        )
        assert report.header.rate == pytest.approx(0.5)
        assert len(report.rows) == 2
        for row, n in zip(report.rows, (1.5, 2.5)):
            assert row.n == n
            assert not row.degenerate
            assert row.scaled_log == pytest.approx(
                scaled_log(row.estimate, n), rel=1e-12
            )

    def test_degenerate_rows_flagged(self, example1):
        model = GaussianModel.from_spec(example1.spec)
        cfg = EstimatorConfig(method="naive", n_replications=100, seed=4)
        report = rate_sweep(model, example1.spec, [6.0], example1.k_rule, cfg)
        assert report.rows[0].degenerate
        assert math.isnan(report.rows[0].scaled_log)

    def test_constant_and_power_rules_accepted(self, example1):
        model = GaussianModel.from_spec(example1.spec)
        cfg = EstimatorConfig(method="is", n_replications=500, seed=4)
        rate_sweep(model, example1.spec, [1.5], ThresholdRule.constant(1.0), cfg)
        rate_sweep(model, example1.spec, [1.5], ThresholdRule(0.5, 0.5), cfg)

    def test_nonincreasing_grid_rejected(self, example1):
        model = GaussianModel.from_spec(example1.spec)
        cfg = EstimatorConfig(method="is", n_replications=100, seed=4)
        with pytest.raises(ValueError, match="increasing"):
            rate_sweep(model, example1.spec, [2.0, 1.5], example1.k_rule, cfg)

    def test_csv_schema(self, example1):
        model = GaussianModel.from_spec(example1.spec)
        cfg = EstimatorConfig(method="is", n_replications=500, seed=4)
        report = rate_sweep(model, example1.spec, [1.5], example1.k_rule, cfg)
        text = rate_report_to_csv(report)
        header, row = text.strip().split("\n")
        assert header == "n,alpha_hat,scaled_log,neg_rate"
        assert row.split(",")[3] == repr(-0.5)
