"""Experiment runners: single solves, the oracle, the misspecified saddle,
the 2D ring diversity game and parameter sweeps.

Every runner returns plain arrays/records and has a matching ``write_*``
helper that emits the fixed-schema CSV files documented in the README.
"""
from __future__ import annotations

import concurrent.futures as cf
import copy
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .config import InnerConfig, SolverConfig
from .divergences import REVERSE_KL, Divergence, RegularizerSpec, divergence_value
from .errors import ConfigError, RangeError, RSPOError
from .game import make_game, make_sigmoid_preference, uniform_policy
from .metrics import (SaddleSpec, duality_gap, mode_mass, oracle_fixed_point, policy_entropy,
                      saddle_payoff, saddle_true_equilibrium)
from .outputs import write_csv
from .simplex import log_softmax
from .solvers import run_solver

TRAJECTORY_BASE_COLUMNS = ["iter", "gap", "gap_max_side", "gap_min_side", "reverse_kl_to_ref",
                           "entropy", "step_linf", "inner_loss"]
SADDLE_COLUMNS = ["iter",
                  "mwu_mean_y", "mwu_mean_yprime", "mwu_dist_true", "mwu_dist_surrogate",
                  "reg_mean_y", "reg_mean_yprime", "reg_dist_true", "reg_dist_surrogate",
                  "true_eq_y", "true_eq_yprime", "surrogate_eq_y", "surrogate_eq_yprime"]
DIVERSITY_COLUMNS = ["iter", "mwu_entropy", "mwu_mode_mass", "rspo_entropy", "rspo_mode_mass"]
DIVERSITY_POLICY_COLUMNS = ["row", "col", "x", "y", "reward", "mwu_prob", "rspo_prob"]
SWEEP_COLUMNS = ["index", "parameter", "value", "seed", "status", "final_gap",
                 "reverse_kl_to_ref", "entropy", "message"]
GAP_COLUMNS = ["max_side", "min_side", "gap", "fixed_point_residual"]
POLICY_COLUMNS = ["action", "label", "prob"]


def trajectory_columns(n):
    return TRAJECTORY_BASE_COLUMNS + [f"pi_{i}" for i in range(n)]


def write_trajectory(traj, path):
    rows = []
    for t in range(len(traj)):
        rows.append([t, traj.duality_gap[t], traj.gap_max_side[t], traj.gap_min_side[t],
                     traj.reverse_kl_to_ref[t], traj.entropy[t], traj.step_linf[t],
                     traj.inner_loss[t], *traj.iterates[t]])
    return write_csv(path, trajectory_columns(traj.iterates.shape[1]), rows)


def write_policy(pi, game, path):
    rows = [[i, game.actions.label(i), float(p)] for i, p in enumerate(pi)]
    return write_csv(path, POLICY_COLUMNS, rows)


def write_gap_report(report, residual, path):
    return write_csv(path, GAP_COLUMNS, [[report.max_side, report.min_side, report.gap, residual]])


# -- oracle --------------------------------------------------------------------------

def run_oracle(game, reg=REVERSE_KL, tol=1e-10, max_rounds=100_000,
               inner: Optional[InnerConfig] = None):
    """Fixed-point oracle plus its gap report and final residual."""
    from .metrics import best_response

    pi = oracle_fixed_point(game, reg, tol, max_rounds, inner)
    report = duality_gap(pi, game, reg, inner)
    residual = float(np.max(np.abs(best_response(pi, game, reg, inner) - pi)))
    return pi, report, residual


# -- saddle ----------------------------------------------------------------------------

def discretized_gaussian(grid, center, std):
    logw = -0.5 * ((grid - center) / std) ** 2
    return np.exp(log_softmax(logw))


@dataclass
class SaddleResult:
    spec: SaddleSpec
    mwu_means: np.ndarray
    reg_means: np.ndarray
    true_eq: tuple
    surrogate_eq: tuple

    def distances(self, arm, which="true"):
        means = self.mwu_means if arm == "mwu" else self.reg_means
        target = np.array(self.true_eq if which == "true" else self.surrogate_eq)
        return np.linalg.norm(means - target, axis=1)


def _saddle_arm(A, grid, ref_x, ref_p, eta, tau, iters):
    """Simultaneous updates: y ascends ``f``, y' descends it.

    With ``tau > 0`` each player's direction carries the penalty
    ``-tau log(pi/ref)`` toward its own discretized reference.
    """
    lx, lp = np.log(ref_x), np.log(ref_p)
    log_rx, log_rp = lx.copy(), lp.copy()
    means = np.empty((iters + 1, 2))
    x, p = ref_x, ref_p
    means[0] = x @ grid, p @ grid
    for t in range(1, iters + 1):
        gx = A @ p
        gp = -(A.T @ x)
        if tau != 0.0:
            gx = gx - tau * (lx - log_rx)
            gp = gp - tau * (lp - log_rp)
        lx = log_softmax(lx + eta * gx)
        lp = log_softmax(lp + eta * gp)
        x, p = np.exp(lx), np.exp(lp)
        means[t] = x @ grid, p @ grid
    return means


def run_saddle(spec: SaddleSpec = SaddleSpec()):
    """Unregularized vs reference-regularized MWU on a misspecified saddle.

    Both players act on the ``bins``-atom grid of ``spec.domain`` and start
    at their reference, a discretized Gaussian of standard deviation
    ``reference_width`` grid cells around ``reference_center``.  Payoffs use
    ``alpha_surrogate``; distances are reported to the equilibria of both
    ``alpha_true`` and ``alpha_surrogate``.
    """
    grid = spec.grid()
    h = grid[1] - grid[0]
    A = saddle_payoff(grid[:, None], grid[None, :], spec.alpha_surrogate)
    std = spec.reference_width * h
    ref_x = discretized_gaussian(grid, spec.reference_center[0], std)
    ref_p = discretized_gaussian(grid, spec.reference_center[1], std)
    mwu = _saddle_arm(A, grid, ref_x, ref_p, spec.eta, 0.0, int(spec.iters))
    reg = _saddle_arm(A, grid, ref_x, ref_p, spec.eta, spec.tau, int(spec.iters))
    return SaddleResult(spec, mwu, reg, saddle_true_equilibrium(spec.alpha_true),
                        saddle_true_equilibrium(spec.alpha_surrogate))


def write_saddle(result: SaddleResult, path):
    dm_t, dm_s = result.distances("mwu", "true"), result.distances("mwu", "surrogate")
    dr_t, dr_s = result.distances("reg", "true"), result.distances("reg", "surrogate")
    rows = []
    for t in range(len(result.mwu_means)):
        rows.append([t, *result.mwu_means[t], dm_t[t], dm_s[t], *result.reg_means[t], dr_t[t],
                     dr_s[t], *result.true_eq, *result.surrogate_eq])
    return write_csv(path, SADDLE_COLUMNS, rows)


# -- 2D diversity --------------------------------------------------------------------

@dataclass(frozen=True)
class Diversity2DSpec:
    """Ring-reward grid game and the settings of its two arms.

    ``reward_jitter`` adds seeded Gaussian noise of that scale to the ring
    reward, which breaks the exact symmetry between equally good cells so
    that the unregularized arm has a unique mode to collapse onto.
    """

    grid: int = 32
    ring_radius: float = 0.6
    ring_width: float = 0.1
    pref_beta: float = 0.1
    reward_jitter: float = 0.01
    mwu_eta: float = 10.0
    mwu_iters: int = 300
    rspo_eta: float = 10.0
    rspo_iters: int = 300
    forward_kl_lambda: float = 1.0
    inner_tolerance: float = 1e-6
    inner_max_iters: int = 10_000

    def __post_init__(self):
        if int(self.grid) != self.grid or self.grid < 8:
            raise ConfigError("grid must be an integer >= 8", field="grid")
        for name in ("ring_width", "pref_beta", "mwu_eta", "rspo_eta"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive", field=name)
        for name in ("reward_jitter", "forward_kl_lambda"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be >= 0", field=name)
        for name in ("mwu_iters", "rspo_iters"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be an integer >= 1", field=name)

    @classmethod
    def from_dict(cls, doc):
        fields = set(cls.__dataclass_fields__)
        unknown = sorted(set(doc) - fields)
        if unknown:
            raise ConfigError(f"unknown diversity key {unknown[0]!r}", field=unknown[0])
        return cls(**doc)


def ring_grid(spec: Diversity2DSpec):
    c = (np.arange(spec.grid) + 0.5) / spec.grid * 2.0 - 1.0
    X, Y = np.meshgrid(c, c, indexing="ij")
    return X, Y


def ring_reward(spec: Diversity2DSpec, seed=0):
    X, Y = ring_grid(spec)
    r = np.exp(-(np.hypot(X, Y) - spec.ring_radius) ** 2 / (2 * spec.ring_width ** 2)).ravel()
    if spec.reward_jitter > 0:
        rng = np.random.default_rng(seed)
        r = r + spec.reward_jitter * rng.standard_normal(r.size)
    return r


@dataclass
class DiversityResult:
    spec: Diversity2DSpec
    reward: np.ndarray
    mwu: object
    rspo: object
    mwu_mode_mass: np.ndarray = field(repr=False)
    rspo_mode_mass: np.ndarray = field(repr=False)


def diversity_configs(spec: Diversity2DSpec):
    mwu = SolverConfig("mwu", eta=spec.mwu_eta, outer_iters=int(spec.mwu_iters))
    rspo = SolverConfig(
        "rspo", eta=spec.rspo_eta, outer_iters=int(spec.rspo_iters),
        regularizer=RegularizerSpec.single(Divergence.FORWARD_KL, spec.forward_kl_lambda),
        inner=InnerConfig(max_iters=spec.inner_max_iters, tolerance=spec.inner_tolerance,
                          step_size=1.0, preconditioner="diagonal"))
    return mwu, rspo


def run_diversity2d(spec: Diversity2DSpec = Diversity2DSpec(), seed=0):
    """Unregularized MWU vs forward-KL regularized RSPO on the ring game."""
    reward = ring_reward(spec, seed)
    n = spec.grid * spec.grid
    game = make_game(make_sigmoid_preference(reward, spec.pref_beta), uniform_policy(n), 0.0)
    mwu_cfg, rspo_cfg = diversity_configs(spec)
    mwu = run_solver(game, mwu_cfg, seed, compute_gap=False)
    rspo = run_solver(game, rspo_cfg, seed, compute_gap=False)
    shape = (spec.grid, spec.grid)
    mm = np.array([mode_mass(p, shape, 1) for p in mwu.iterates])
    rm = np.array([mode_mass(p, shape, 1) for p in rspo.iterates])
    return DiversityResult(spec, reward, mwu, rspo, mm, rm)


def write_diversity(result: DiversityResult, out_dir):
    out_dir = Path(out_dir)
    T = max(len(result.mwu), len(result.rspo))
    rows = []
    for t in range(T):
        a = t < len(result.mwu)
        b = t < len(result.rspo)
        rows.append([t,
                     result.mwu.entropy[t] if a else float("nan"),
                     result.mwu_mode_mass[t] if a else float("nan"),
                     result.rspo.entropy[t] if b else float("nan"),
                     result.rspo_mode_mass[t] if b else float("nan")])
    write_csv(out_dir / "diversity_trajectory.csv", DIVERSITY_COLUMNS, rows)
    X, Y = ring_grid(result.spec)
    g = result.spec.grid
    prow = []
    for k in range(g * g):
        i, j = divmod(k, g)
        prow.append([i, j, X[i, j], Y[i, j], result.reward[k], result.mwu.final[k],
                     result.rspo.final[k]])
    write_csv(out_dir / "diversity_policy.csv", DIVERSITY_POLICY_COLUMNS, prow)


# -- sweeps ------------------------------------------------------------------------------

def _parse_path(path):
    return [int(p) if p.isdigit() else p for p in path.split(".")]


def set_config_value(doc, path, value):
    """Return a copy of a config dict with the numeric field at ``path`` replaced."""
    doc = copy.deepcopy(doc)
    keys = _parse_path(path)
    node = doc
    try:
        for k in keys[:-1]:
            node = node[k]
        current = node[keys[-1]]
    except (KeyError, IndexError, TypeError):
        raise ConfigError(f"sweep parameter {path!r} is not a config field", field=path) from None
    numeric = current is None or (isinstance(current, (int, float)) and not isinstance(current, bool))
    if not numeric:
        raise ConfigError(f"sweep parameter {path!r} is not numeric", field=path)
    node[keys[-1]] = value
    return doc


def sweep_seeds(seed, count):
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [int(c.generate_state(1)[0]) for c in children]


@dataclass
class SweepRow:
    index: int
    parameter: str
    value: float
    seed: int
    status: str
    final_gap: float = float("nan")
    reverse_kl_to_ref: float = float("nan")
    entropy: float = float("nan")
    message: str = ""
    trajectory: object = field(default=None, repr=False)


def _sweep_one(game, doc, parameter, index, value, seed):
    try:
        cfg = SolverConfig.from_dict(set_config_value(doc, parameter, value))
        traj = run_solver(game, cfg, seed)
    except RSPOError as exc:
        return SweepRow(index, parameter, value, seed, "error", message=str(exc))
    return SweepRow(index, parameter, value, seed, "ok", float(traj.duality_gap[-1]),
                    float(traj.reverse_kl_to_ref[-1]), float(traj.entropy[-1]),
                    trajectory=traj)


def run_sweep(game, base_config: SolverConfig, parameter, values, seed=0, max_workers=None):
    """One solve per value of a numeric config field, run concurrently.

    Each value gets its own seed spawned from ``seed``.  Failures are
    recorded per row rather than raised.
    """
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value", field="values")
    doc = base_config.to_dict()
    set_config_value(doc, parameter, values[0])  # validates the path up front
    seeds = sweep_seeds(seed, len(values))
    with cf.ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = [pool.submit(_sweep_one, game, doc, parameter, i, v, s)
                   for i, (v, s) in enumerate(zip(values, seeds))]
        rows = [f.result() for f in futures]
    return rows


def write_sweep(rows, out_dir, game):
    out_dir = Path(out_dir)
    table = []
    for r in rows:
        table.append([r.index, r.parameter, r.value, r.seed, r.status, r.final_gap,
                      r.reverse_kl_to_ref, r.entropy, r.message])
        if r.trajectory is not None:
            sub = out_dir / f"run_{r.index:03d}"
            write_trajectory(r.trajectory, sub / "trajectory.csv")
            write_policy(r.trajectory.final, game, sub / "final_policy.csv")
    write_csv(out_dir / "sweep_summary.csv", SWEEP_COLUMNS, table)
