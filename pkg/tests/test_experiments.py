import numpy as np
import pytest

from conftest import random_game
from rspo.config import SolverConfig
from rspo.errors import ConfigError
from rspo.experiments import (SADDLE_COLUMNS, Diversity2DSpec, ring_reward, run_diversity2d,
                              run_oracle, run_saddle, run_sweep, set_config_value, sweep_seeds,
                              write_saddle, write_sweep)
from rspo.game import make_game
from rspo.metrics import SaddleSpec, policy_entropy
from rspo.outputs import read_csv
from rspo.solvers import run_solver


class TestSaddle:
    def test_reference_columns(self, tmp_path):
        res = run_saddle(SaddleSpec(alpha_true=2.0, alpha_surrogate=1.0, iters=3))
        write_saddle(res, tmp_path / "s.csv")
        header, rows = read_csv(tmp_path / "s.csv")
        assert header == SADDLE_COLUMNS
        assert len(rows) == 4
        col = {name: i for i, name in enumerate(header)}
        for r in rows:
            assert float(r[col["true_eq_y"]]) == pytest.approx(-0.2, abs=1e-15)
            assert float(r[col["true_eq_yprime"]]) == pytest.approx(0.6, abs=1e-15)
            assert float(r[col["surrogate_eq_y"]]) == pytest.approx(0.0, abs=1e-15)
            assert float(r[col["surrogate_eq_yprime"]]) == pytest.approx(1.0, abs=1e-15)

    def test_tau_zero_equals_mwu(self):
        res = run_saddle(SaddleSpec(tau=0.0))
        assert np.array_equal(res.mwu_means, res.reg_means)

    def test_both_arms_start_at_reference(self):
        res = run_saddle(SaddleSpec())
        assert np.array_equal(res.mwu_means[0], res.reg_means[0])

    def test_regularization_helps(self):
        mwu = run_saddle(SaddleSpec(tau=0.1)).distances("mwu")[-1]
        best = min(run_saddle(SaddleSpec(tau=t)).distances("reg")[-1] for t in (0.1, 0.3, 1.0))
        assert best < mwu

    def test_pinned_distances(self):
        # regression pins for the default settings
        res = run_saddle(SaddleSpec(tau=0.1))
        assert res.distances("mwu")[-1] == pytest.approx(0.2303, abs=1e-4)
        assert res.distances("reg")[-1] == pytest.approx(0.1325, abs=1e-4)

    def test_discretization_error_within_a_bin(self):
        # the grid equilibrium of the surrogate game is within a bin of the continuous one
        spec = SaddleSpec()
        grid = spec.grid()
        from rspo.metrics import saddle_payoff
        A = saddle_payoff(grid[:, None], grid[None, :], 2.0)
        i = int(np.argmax(A.min(axis=1)))
        j = int(np.argmin(A.max(axis=0)))
        assert abs(grid[i] + 0.2) <= 0.02 and abs(grid[j] - 0.6) <= 0.02


class TestDiversity:
    def test_ring_reward_shape(self):
        spec = Diversity2DSpec(grid=16, reward_jitter=0.0)
        r = ring_reward(spec).reshape(16, 16)
        assert np.allclose(r, r.T, atol=1e-15) and np.allclose(r, r[::-1], atol=1e-15)
        assert 0 < r.max() <= 1.0

    def test_jitter_seeded(self):
        spec = Diversity2DSpec(grid=8)
        assert np.array_equal(ring_reward(spec, 3), ring_reward(spec, 3))
        assert not np.array_equal(ring_reward(spec, 3), ring_reward(spec, 4))

    def test_huge_lambda_stays_uniform(self):
        spec = Diversity2DSpec(grid=8, mwu_iters=5, rspo_iters=5, forward_kl_lambda=1e6,
                               inner_tolerance=1e-10)
        res = run_diversity2d(spec)
        assert np.max(np.abs(res.rspo.final - 1 / 64)) <= 1e-4

    def test_small_grid_contrast(self):
        spec = Diversity2DSpec(grid=12, mwu_iters=100, rspo_iters=60)
        res = run_diversity2d(spec)
        assert res.mwu_mode_mass[-1] >= 0.9
        assert policy_entropy(res.rspo.final) > policy_entropy(res.mwu.final)

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            Diversity2DSpec(grid=4)
        with pytest.raises(ConfigError):
            Diversity2DSpec(ring_width=0.0)
        with pytest.raises(ConfigError):
            Diversity2DSpec.from_dict({"radius": 1.0})


class TestSweep:
    def test_kl_nonincreasing_in_tau(self):
        rng = np.random.default_rng(8)
        g = random_game(rng, 6, tau=0.5)
        cfg = SolverConfig("gmmd", eta=0.01, outer_iters=2000)
        rows = run_sweep(g, cfg, "tau", [0.01, 0.1, 1.0])
        assert [r.status for r in rows] == ["ok"] * 3
        kl = [r.reverse_kl_to_ref for r in rows]
        assert kl[0] >= kl[1] >= kl[2]

    def test_single_value_equals_solve(self, rng):
        g = random_game(rng, 5, tau=0.2)
        cfg = SolverConfig("gmmd", eta=0.1, outer_iters=30)
        (row,) = run_sweep(g, cfg, "eta", [0.05], seed=3)
        direct = run_solver(g, SolverConfig("gmmd", eta=0.05, outer_iters=30), row.seed)
        assert row.final_gap == float(direct.duality_gap[-1])
        assert row.entropy == float(direct.entropy[-1])
        assert np.array_equal(row.trajectory.iterates, direct.iterates)

    def test_failures_recorded(self, tmp_path, demo_game):
        cfg = SolverConfig("nash_md", eta=0.5, outer_iters=3)
        rows = run_sweep(demo_game, cfg, "eta", [0.5, 5.0])
        assert [r.status for r in rows] == ["ok", "error"]
        assert "iteration" in rows[1].message
        write_sweep(rows, tmp_path, demo_game)
        header, table = read_csv(tmp_path / "sweep_summary.csv")
        assert [t[header.index("status")] for t in table] == ["ok", "error"]
        assert (tmp_path / "run_000" / "trajectory.csv").exists()
        assert not (tmp_path / "run_001").exists()

    def test_validation(self, demo_game):
        cfg = SolverConfig("mwu", eta=0.5, outer_iters=3)
        with pytest.raises(ConfigError):
            run_sweep(demo_game, cfg, "eta", [])
        with pytest.raises(ConfigError):
            run_sweep(demo_game, cfg, "solver", [1.0])
        with pytest.raises(ConfigError):
            run_sweep(demo_game, cfg, "no.such.field", [1.0])

    def test_set_config_value(self):
        doc = SolverConfig("rspo", eta=0.5).to_dict()
        new = set_config_value(doc, "inner.tolerance", 1e-6)
        assert new["inner"]["tolerance"] == 1e-6 and doc["inner"]["tolerance"] != 1e-6

    def test_seeds_distinct(self):
        s = sweep_seeds(0, 5)
        assert len(set(s)) == 5 and s == sweep_seeds(0, 5)


class TestOracleRunner:
    def test_gap_bound_on_random_game(self):
        rng = np.random.default_rng(10)
        g = random_game(rng, 10, tau=0.1)
        pi, report, residual = run_oracle(g, tol=1e-10)
        assert report.gap <= 1e-9 and residual <= 1e-10

    def test_indifferent_and_huge_tau(self, rng):
        g = make_game(np.full((3, 3), 0.5), [0.2, 0.3, 0.5], tau=0.7)
        pi, _, _ = run_oracle(g)
        assert np.max(np.abs(pi - g.reference)) <= 1e-12
        g = random_game(rng, 5, tau=1e6)
        pi, _, _ = run_oracle(g)
        assert np.max(np.abs(pi - g.reference)) <= 1e-6
