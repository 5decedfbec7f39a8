"""Tabular self-play solvers on a small random preference game.

Runs MWU, Nash-MD, OMD, GMMD and RSPO from the reference policy and
compares each last iterate with the fixed-point oracle of the
regularized game.  MWU ignores the regularizer, so it is expected to
cycle rather than settle.
"""
import numpy as np

from rspo.config import SolverConfig
from rspo.divergences import RegularizerSpec
from rspo.game import make_game, random_preference
from rspo.metrics import oracle_fixed_point
from rspo.solvers import rspo_lambda_for_gmmd, run_solver

rng = np.random.default_rng(0)
n, tau, eta = 6, 0.2, 0.1
game = make_game(random_preference(n, rng), rng.dirichlet(np.ones(n)), tau)
target = oracle_fixed_point(game)
print("regularized equilibrium:", np.round(target, 4))

configs = {
    "mwu": SolverConfig("mwu", eta=eta, outer_iters=400),
    "nash_md": SolverConfig("nash_md", eta=eta, outer_iters=400),
    "omd": SolverConfig("omd", eta=eta, outer_iters=400),
    "gmmd": SolverConfig("gmmd", eta=eta, outer_iters=400),
    # the RSPO loss weight that reproduces a GMMD step at (eta, tau)
    "rspo": SolverConfig("rspo", eta=eta, outer_iters=400,
                         regularizer=RegularizerSpec.single("reverse_kl",
                                                            rspo_lambda_for_gmmd(eta, tau))),
}
# the RSPO diagnostics are measured in the game its loss weight implies
game_rspo = make_game(game.preference, game.reference, 0.0)

print(f"{'solver':8s} {'final gap':>12s} {'L-inf to oracle':>16s}")
for name, cfg in configs.items():
    traj = run_solver(game_rspo if name == "rspo" else game, cfg)
    dist = np.max(np.abs(traj.final - target))
    print(f"{name:8s} {traj.duality_gap[-1]:12.3e} {dist:16.3e}")
