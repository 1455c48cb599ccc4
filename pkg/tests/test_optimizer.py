import itertools

import numpy as np
import pytest

from conftest import cone_target, small_config
from oamradcom.analysis import channel_matrix, fisher_matrix, pcrb, rate_report
from oamradcom.forward import complex_normal
from oamradcom.optimizer import (InfeasibleError, OptimizerError, _better, build_problem,
                                 optimize_weights, weight_grid)

TIMES = np.linspace(0.0, 0.5, 11)


def targets():
    return [cone_target(), cone_target(r=170.0, theta_deg=80.0, phi_deg=20.0, omega=10 * np.pi,
                                       phase=1.3)]


@pytest.fixture(scope="module")
def small():
    cfg = small_config(snr_db=15.0, n_modes=4, n_sub=4, comm_gain=3.6e3)
    return cfg, build_problem(cfg, targets(), 0, TIMES)


def brute_force(problem, n_levels, r_min):
    """Every level vector, proportional duplicates included."""
    best = None
    for levels in itertools.product(range(1, n_levels + 1), repeat=problem.n_modes):
        w = np.array(levels, float) / np.linalg.norm(levels)
        obj, rate = problem.objective(w)[0], problem.rate(w)[0]
        if rate >= r_min and (best is None or obj < best[0]):
            best = (obj, rate, w)
    return best


class TestGrid:
    def test_two_modes_two_levels(self):
        pts = np.array(list(weight_grid(2, 2)))
        s = 1 / np.sqrt(5)
        np.testing.assert_allclose(pts, [[np.sqrt(0.5), np.sqrt(0.5)], [s, 2 * s], [2 * s, s]])

    def test_unit_power_and_unique(self):
        pts = np.array(list(weight_grid(3, 4)))
        np.testing.assert_allclose(np.sum(pts ** 2, axis=1), 1.0)
        assert len(np.unique(np.round(pts, 12), axis=0)) == len(pts)

    def test_budget(self):
        with pytest.raises(OptimizerError, match="coordinate sweep"):
            next(weight_grid(16, 10))
        with pytest.raises(OptimizerError):
            next(weight_grid(4, 1))


class TestProblem:
    def test_objective_matches_pcrb(self, small, rng):
        cfg, problem = small
        for _ in range(3):
            w = rng.random(cfg.n_modes) + 0.1
            w /= np.linalg.norm(w)
            direct = np.sum(pcrb(fisher_matrix(cfg.replace(weights=w), targets(), TIMES)).values)
            assert problem.objective(w)[0] == pytest.approx(direct, rel=1e-6)

    def test_rate_matches_link_analysis(self, rng):
        cfg = small_config(snr_db=15.0, n_modes=4, n_sub=4, comm_gain=3.6e3)
        h = channel_matrix(cfg, targets()[0])
        est = h + complex_normal(rng, h.shape, 0.02 ** 2 * np.mean(np.abs(h) ** 2))
        problem = build_problem(cfg, targets(), 0, TIMES, estimate=est)
        w = np.array([0.2, 0.4, 0.6, 0.8])
        w /= np.linalg.norm(w)
        assert problem.rate(w)[0] == pytest.approx(rate_report(cfg, h, est, w).rate, rel=1e-9)

    def test_singular_objective(self, small):
        cfg, _ = small
        problem = build_problem(cfg, targets(), 0, np.zeros(3))
        assert np.isinf(problem.objective(cfg.weights)[0])

    def test_comm_target_range(self, small):
        with pytest.raises(OptimizerError):
            build_problem(small[0], targets(), 5, TIMES)


class TestOptimize:
    def test_exhaustive_matches_brute_force(self, small):
        cfg, problem = small
        for r_min in (0.0, 3.0, 3.9, 4.1):
            res = optimize_weights(cfg, targets(), 0, r_min, 5, problem=problem)
            obj, rate, w = brute_force(problem, 5, r_min)
            assert res.objective == pytest.approx(obj, rel=1e-12)
            np.testing.assert_allclose(res.weights, w, atol=1e-12)
            assert res.rate >= r_min and res.method == "exhaustive"

    def test_monotone_in_rate_constraint(self, small):
        cfg, problem = small
        objs = [optimize_weights(cfg, targets(), 0, r, 6, problem=problem).objective
                for r in (0.0, 2.0, 3.0, 3.5, 4.0)]
        assert all(a <= b for a, b in zip(objs, objs[1:]))

    def test_equal_weights_on_grid(self, small):
        cfg, problem = small
        res = optimize_weights(cfg, targets(), 0, 0.0, 6, problem=problem, record=True)
        assert any(np.allclose(h[1], cfg.weights) for h in res.history)
        assert res.objective <= problem.objective(cfg.weights)[0]
        assert res.evaluated == len(res.history)

    def test_infeasible(self, small):
        cfg, problem = small
        with pytest.raises(InfeasibleError) as info:
            optimize_weights(cfg, targets(), 0, 50.0, 4, problem=problem)
        err = info.value
        assert err.gap == pytest.approx(50.0 - err.best_rate)
        assert err.best_rate == pytest.approx(problem.rate(err.best_weights)[0])

    def test_sweep_no_worse_than_equal_weights(self, small):
        cfg, problem = small
        res = optimize_weights(cfg, targets(), 0, 3.5, 6, problem=problem, method="sweep")
        assert res.method == "sweep" and res.rate >= 3.5
        assert res.objective <= problem.objective(cfg.weights)[0]
        again = optimize_weights(cfg, targets(), 0, 3.5, 6, problem=problem, method="sweep")
        np.testing.assert_array_equal(res.weights, again.weights)

    def test_sweep_close_to_exhaustive(self, small):
        cfg, problem = small
        sweep = optimize_weights(cfg, targets(), 0, 3.5, 6, problem=problem, method="sweep")
        full = optimize_weights(cfg, targets(), 0, 3.5, 6, problem=problem)
        assert full.objective <= sweep.objective <= 1.05 * full.objective

    def test_argument_errors(self, small):
        cfg, problem = small
        with pytest.raises(OptimizerError):
            optimize_weights(cfg, targets(), 0, -1.0, 4, problem=problem)
        with pytest.raises(OptimizerError):
            optimize_weights(cfg, targets(), 0, 1.0, 4, problem=problem, method="anneal")
        with pytest.raises(OptimizerError):
            optimize_weights(cfg, targets(), 0, 1.0, 4)

    def test_tie_break(self):
        a = (1.0, 2.0, (0.6, 0.8))
        assert _better((0.5, 0.0, (1.0, 0.0)), a)
        assert _better((1.0, 3.0, (1.0, 0.0)), a)
        assert _better((1.0, 2.0, (0.0, 1.0)), a)
        assert not _better(a, a)
