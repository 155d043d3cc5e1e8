import math

import numpy as np
import pytest

from netfail.estimators import (
    EstimatorConfig,
    ExperimentRow,
    TailUnderflowError,
    cmc_replication,
    compare_methods,
    failure_indicator,
    failure_radius_intervals,
    find_radial_root,
    is_replication,
    mixture_weights,
    naive_replication,
    rows_to_csv,
    run_estimator,
)
from netfail.lp import DualSolver, enumerate_dual_vertices, shortfall_cost
from netfail.network import NetworkSpec, default_routing, scale_instance
from netfail.stochastic import GaussianModel, chi_survival, stream

from oracles import cmc_radius_formula, normal_sf_cf, random_network


def two_node_instance(mu=(0.0, 0.0), s_scale=1.0, k=0.0, sigma=None):
    H = np.array([[0, 1], [1, 0]], dtype=float)
    spec = NetworkSpec(
        H=H,
        A=default_routing(H),
        gamma=np.array([1.0, 1.0]),
        mu=np.asarray(mu, dtype=float),
        sigma=np.eye(2) if sigma is None else np.asarray(sigma, dtype=float),
        beta=1.0,
    )
    model = GaussianModel.from_spec(spec)
    return model, scale_instance(spec, s_scale, float(k))


class TestMixtureWeights:
    def test_symmetric_two_nodes(self):
        model, inst = two_node_instance()
        w = mixture_weights(model, inst)
        assert np.allclose(w.p, [0.5, 0.5], atol=1e-15)
        assert abs(w.p.sum() - 1.0) <= 1e-15

    def test_example1_values(self, example1_model, example1_instance):
        # standardized margins (3.5, 0.5, 17.5) on the printed parameters
        w = mixture_weights(example1_model, example1_instance)
        tails = [normal_sf_cf(3.5), normal_sf_cf(0.5), normal_sf_cf(17.5)]
        tau = sum(tails)
        assert w.tau == pytest.approx(tau, rel=1e-10)
        assert w.tau == pytest.approx(0.3087, abs=1e-4)
        assert w.p[0] == pytest.approx(7.534e-4, rel=1e-3)
        assert w.p[1] == pytest.approx(0.99925, abs=1e-5)
        assert w.p[2] < 1e-60

    def test_underflow_error(self):
        model, _ = two_node_instance()
        _, deep = two_node_instance(s_scale=60.0)
        with pytest.raises(TailUnderflowError):
            mixture_weights(model, deep)

    def test_node_draw_follows_weights(self, rng):
        model, inst = two_node_instance(mu=(0.5, -0.5), s_scale=1.0)
        w = mixture_weights(model, inst)
        draws = np.array([w.draw_node(rng) for _ in range(20000)])
        freq = np.bincount(draws, minlength=2) / draws.size
        assert np.max(np.abs(freq - w.p)) <= 4 * math.sqrt(0.25 / draws.size)


class TestFailureIndicator:
    def test_mean_demand_never_fails(self, example1_model, example1_instance):
        solver = DualSolver(example1_instance)
        assert not failure_indicator(
            example1_instance, example1_instance.spec.mu, solver
        )

    def test_matches_shortfall_exceeds(self, rng):
        for _ in range(30):
            d = int(rng.integers(2, 6))
            spec = random_network(rng, d)
            inst = scale_instance(spec, float(rng.uniform(0.9, 1.5)), 0.3)
            solver = DualSolver(inst)
            W = np.linalg.cholesky(spec.sigma)
            for _ in range(40):
                D = spec.mu + 1.5 * (W @ rng.standard_normal(d))
                via_indicator = failure_indicator(inst, D, solver)
                via_cost = shortfall_cost(inst, D, solver).exceeds(inst.k)
                assert via_indicator == via_cost


class TestNaive:
    def test_values_are_binary(self, example1_model, example1_instance):
        solver = DualSolver(example1_instance)
        values = {
            naive_replication(
                example1_model, example1_instance, stream(3, 0, i), solver
            )
            for i in range(300)
        }
        assert values <= {0.0, 1.0}


class TestImportanceSampling:
    def test_values_in_discrete_ladder(self, example1_model, example1_instance):
        # Z is either 0 or tau / (number of overflowing nodes)
        w = mixture_weights(example1_model, example1_instance)
        solver = DualSolver(example1_instance)
        d = example1_instance.d
        allowed = {0.0} | {w.tau / m for m in range(1, d + 1)}
        for i in range(400):
            z = is_replication(
                example1_model, example1_instance, w, stream(5, 1, i), solver
            )
            assert any(abs(z - a) <= 1e-12 for a in allowed)
            assert z <= w.tau + 1e-15

    def test_weight_never_exceeds_tau(self, rng):
        for _ in range(10):
            d = int(rng.integers(2, 6))
            spec = random_network(rng, d, mean_within_supply=True)
            inst = scale_instance(spec, 1.0, 0.1)
            model = GaussianModel.from_spec(spec)
            w = mixture_weights(model, inst)
            solver = DualSolver(inst)
            for i in range(100):
                z = is_replication(model, inst, w, stream(7, 1, i), solver)
                assert 0.0 <= z <= w.tau + 1e-15


class TestRadialRoot:
    def test_unit_direction_root(self):
        model, inst = two_node_instance()
        # vertex (1,0) fails beyond R=1; infeasibility ray beyond R=2
        assert find_radial_root(model, inst, np.array([1.0, 0.0])) == pytest.approx(
            1.0, abs=1e-8
        )

    def test_negative_direction_never_fails(self):
        model, inst = two_node_instance()
        psi = np.array([-1.0, -1.0]) / math.sqrt(2.0)
        assert find_radial_root(model, inst, psi) == math.inf

    def test_infeasibility_jump_root(self):
        # demand grows only through the aggregate constraint: along (1,1)/sqrt2
        # each node hits its own bound at sqrt(2), the aggregate at sqrt(2) too;
        # with k large the vertex rays are irrelevant and the root is the jump
        model, inst = two_node_instance(k=10.0)
        psi = np.array([1.0, 1.0]) / math.sqrt(2.0)
        root = find_radial_root(model, inst, psi)
        assert root == pytest.approx(math.sqrt(2.0), rel=1e-9)

    def test_root_is_threshold_crossing(self, rng):
        # |L(mu + r* W psi) - k| small whenever the crossing is not the jump
        model, inst = two_node_instance(k=0.25)
        solver = DualSolver(inst)
        checked = 0
        while checked < 50:
            z = rng.standard_normal(2)
            psi = z / np.linalg.norm(z)
            root = find_radial_root(model, inst, psi, solver)
            if not math.isfinite(root):
                continue
            D = model.mu + root * (model.W @ psi)
            if np.sum(D) > np.sum(inst.s) - 1e-6:
                continue  # crossing at the infeasibility jump
            cost = shortfall_cost(inst, D, solver)
            assert abs(cost.value - inst.k) <= 1e-6
            checked += 1

    def test_matches_vertex_formula(self, rng):
        for trial in range(25):
            d = int(rng.integers(2, 5))
            spec = random_network(rng, d, mean_within_supply=True)
            inst = scale_instance(spec, float(rng.uniform(1.0, 1.5)), 0.4)
            model = GaussianModel.from_spec(spec)
            verts = enumerate_dual_vertices(inst)
            solver = DualSolver(inst)
            for _ in range(40):
                z = rng.standard_normal(d)
                psi = z / np.linalg.norm(z)
                root = find_radial_root(model, inst, psi, solver)
                ref = cmc_radius_formula(
                    verts, model.W, spec.mu, inst.s, inst.k, psi
                )
                mine = chi_survival(d, root)
                theirs = chi_survival(d, ref)
                assert abs(mine - theirs) <= 1e-8


class TestCmc:
    def test_pinned_angle_value(self):
        model, inst = two_node_instance()
        solver = DualSolver(inst)
        ivs = failure_radius_intervals(model, inst, np.array([1.0, 0.0]), solver)
        assert len(ivs) == 1 and ivs[0][1] == math.inf
        value = chi_survival(2, ivs[0][0])
        assert value == pytest.approx(math.exp(-0.5), rel=1e-9)

    def test_values_in_unit_interval(self, example1_model, example1_instance):
        solver = DualSolver(example1_instance)
        for i in range(300):
            t = cmc_replication(
                example1_model, example1_instance, stream(9, 2, i), solver
            )
            assert 0.0 <= t <= 1.0

    def test_scan_path_initial_interval(self):
        # mean above supply at node 0: the failure set along -e1 starts at 0
        model, inst = two_node_instance(mu=(2.0, 0.0), k=0.5)
        assert not inst.mean_within_supply
        psi = np.array([-1.0, 0.0])
        ivs = failure_radius_intervals(model, inst, psi)
        # L(mu + R*W*psi) = max(0, 1 - R) here: failure for R < 0.5 only
        assert len(ivs) == 1
        lo, hi = ivs[0]
        assert lo == 0.0 and hi == pytest.approx(0.5, abs=1e-8)
        t = cmc_replication(model, inst, stream(1, 2, 0))
        assert 0.0 <= t <= 1.0

    def test_scan_matches_brute_force_probability(self, rng):
        # union-of-intervals mass equals a direct radial Monte Carlo
        model, inst = two_node_instance(mu=(2.0, 0.0), k=0.5)
        psi = np.array([-1.0, 0.0])
        ivs = failure_radius_intervals(model, inst, psi)
        mass = sum(
            chi_survival(2, lo) - (0.0 if math.isinf(hi) else chi_survival(2, hi))
            for lo, hi in ivs
        )
        radii = np.sqrt(rng.chisquare(2, size=200_000))
        solver = DualSolver(inst)
        hits = 0
        for r in radii[:20_000]:
            D = model.mu + r * (model.W @ psi)
            if shortfall_cost(inst, D, solver).exceeds(inst.k):
                hits += 1
        mc = hits / 20_000
        assert abs(mass - mc) <= 4 * math.sqrt(mass * (1 - mass) / 20_000) + 1e-3


class TestRunEstimator:
    def test_constant_values_give_zero_rse(self):
        # demand means far above supply: every naive draw is a failure
        model, inst = two_node_instance(mu=(10.0, 10.0), k=0.0)
        cfg = EstimatorConfig(method="naive", n_replications=500, seed=1)
        stats = run_estimator(model, inst, cfg)
        assert stats.estimate == 1.0
        assert stats.variance == 0.0
        assert stats.rse == 0.0
        assert stats.hits == 500

    def test_degenerate_flagged_not_crashed(self):
        model, inst = two_node_instance(s_scale=20.0, k=0.0)
        cfg = EstimatorConfig(method="naive", n_replications=200, seed=1)
        stats = run_estimator(model, inst, cfg)
        assert stats.estimate == 0.0
        assert stats.degenerate
        assert math.isnan(stats.rse)

    def test_ci_halfwidth_formula(self, example1_model, example1_instance):
        cfg = EstimatorConfig(
            method="naive", n_replications=4000, seed=3, level=0.9
        )
        stats = run_estimator(example1_model, example1_instance, cfg)
        from scipy.special import ndtri

        manual = ndtri(0.95) * math.sqrt(stats.variance / stats.n_replications)
        assert stats.ci_halfwidth == pytest.approx(manual, rel=1e-12)

    def test_thread_count_invariance(self, example1_model, example1_instance):
        for method in ("naive", "is", "cmc"):
            runs = [
                run_estimator(
                    example1_model,
                    example1_instance,
                    EstimatorConfig(
                        method=method, n_replications=4096, seed=13, threads=t
                    ),
                )
                for t in (1, 2, 4)
            ]
            assert len({r.estimate for r in runs}) == 1
            assert len({r.variance for r in runs}) == 1
            assert len({r.hits for r in runs}) == 1

    def test_timing_can_be_disabled(self, example1_model, example1_instance):
        cfg = EstimatorConfig(
            method="naive", n_replications=256, seed=2, measure_time=False
        )
        stats = run_estimator(example1_model, example1_instance, cfg)
        assert stats.ct_seconds is None and stats.rse2_ct is None

    def test_replication_count_guard(self):
        with pytest.raises(ValueError):
            EstimatorConfig(method="naive", n_replications=1, seed=0)

    def test_unknown_method_guard(self):
        with pytest.raises(ValueError, match="valid methods"):
            EstimatorConfig(method="antithetic", n_replications=10, seed=0)


class TestCompareMethods:
    def test_rows_and_cross_method_consistency(self, example1_model, example1_instance):
        configs = [
            EstimatorConfig(method=m, n_replications=20_000, seed=99)
            for m in ("naive", "is", "cmc")
        ]
        rows = compare_methods(example1_model, example1_instance, configs)
        assert [r.method for r in rows] == ["naive", "is", "cmc"]
        by = {r.method: r.stats for r in rows}
        for a, b in (("naive", "is"), ("naive", "cmc"), ("is", "cmc")):
            sa, sb = by[a], by[b]
            se = math.sqrt(
                sa.variance / sa.n_replications + sb.variance / sb.n_replications
            )
            assert abs(sa.estimate - sb.estimate) <= 3 * se

    def test_method_runs_do_not_perturb_each_other(
        self, example1_model, example1_instance
    ):
        cfg = EstimatorConfig(method="is", n_replications=2048, seed=7)
        alone = run_estimator(example1_model, example1_instance, cfg)
        rows = compare_methods(
            example1_model,
            example1_instance,
            [
                EstimatorConfig(method="naive", n_replications=2048, seed=7),
                cfg,
            ],
        )
        assert rows[1].stats.estimate == alone.estimate

    def test_empty_configs_rejected(self, example1_model, example1_instance):
        with pytest.raises(ValueError):
            compare_methods(example1_model, example1_instance, [])


class TestCsv:
    def test_schema_and_nan_presentation(self):
        model, inst = two_node_instance(s_scale=20.0, k=0.0)
        cfg = EstimatorConfig(
            method="naive", n_replications=64, seed=1, measure_time=False
        )
        row = ExperimentRow(
            method="naive", n=inst.n, k=inst.k, stats=run_estimator(model, inst, cfg)
        )
        text = rows_to_csv([row])
        header, line = text.strip().split("\n")
        assert header == "method,n,k,N,alpha_hat,rse,ci_halfwidth,ct_seconds,rse2ct,hits"
        fields = line.split(",")
        assert fields[0] == "naive"
        assert fields[5] == "NaN"  # degenerate RSE mirrors the tables
        assert fields[7] == "" and fields[8] == ""  # timing disabled

    def test_full_precision_round_trip(self, example1_model, example1_instance):
        cfg = EstimatorConfig(
            method="is", n_replications=1024, seed=5, measure_time=False
        )
        stats = run_estimator(example1_model, example1_instance, cfg)
        row = ExperimentRow(method="is", n=1.5, k=1.0, stats=stats)
        line = rows_to_csv([row]).strip().split("\n")[1]
        assert float(line.split(",")[4]) == stats.estimate
