"""RSPO from sampled responses instead of exact expectations.

Each outer iteration draws K = 5 responses from the current policy,
estimates their win rates against each other and fits the next policy to
the batch loss.  The noise keeps the last iterate near, but not at, the
exact solution; more samples per round bring it closer.
"""
import numpy as np

from rspo.config import EstimationConfig, InnerConfig, SolverConfig
from rspo.divergences import RegularizerSpec
from rspo.game import make_game, random_preference
from rspo.solvers import run_solver

rng = np.random.default_rng(3)
n = 5
game = make_game(random_preference(n, rng), np.full(n, 1 / n), 0.0)
reg = RegularizerSpec.single("reverse_kl", 0.5, estimator="monte_carlo_is")
inner = InnerConfig(max_iters=500, tolerance=1e-8)

exact = run_solver(game, SolverConfig("rspo", eta=0.5, outer_iters=60, regularizer=reg,
                                      inner=inner), compute_gap=False).final
print("exact tabular RSPO:", np.round(exact, 3))
for k in (5, 50, 500):
    cfg = SolverConfig("rspo", eta=0.5, outer_iters=60, regularizer=reg, inner=inner,
                       sampling=EstimationConfig(k_samples=k))
    final = run_solver(game, cfg, seed=1, compute_gap=False).final
    print(f"K={k:<4d} sampled:   {np.round(final, 3)}  L-inf {np.max(np.abs(final - exact)):.3f}")
