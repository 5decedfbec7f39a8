"""Policy-update rules and the outer self-play loop.

Tabular rules (``mwu_step``, ``nash_md_step``, ``omd_step``, ``gmmd_step``)
map a policy to the next one exactly.  RSPO instead minimizes a parametric
loss over softmax logits; :func:`rspo_loss` and :func:`rspo_loss_gradient`
evaluate it exactly over the tabular support and :func:`rspo_inner_solve`
runs the inner argmin.

Conventions
-----------
GMMD minimizes ``-eta <pi, G> + KL(pi || pi_t) + eta tau R(pi, mu)``, so
its fixed point is the equilibrium of the game regularized at temperature
``tau``.  The RSPO loss weight matching GMMD at ``(eta, tau)`` is
``lambda = 2 eta tau``, see :func:`rspo_lambda_for_gmmd`.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import Baseline, InnerConfig, Solver, SolverConfig
from .divergences import (NO_REGULARIZER, REVERSE_KL, Divergence, RegularizerSpec,
                          divergence_curvature, divergence_gradient, divergence_value)
from .errors import InnerSolveError, RangeError, RSPOError, SolverError, SupportError
from .game import log_policy, make_game
from .simplex import (entropic_mirror_descent, gauge_fix, log_softmax, normalize_log,
                      softmax_jvp, tangent_residual)

GMMD_DEFAULT_STEP = 0.1
RSPO_DEFAULT_STEP = 0.5
MAX_HALVINGS = 30
# tolerated round-off increase of the loss in a line search
LOSS_SLACK = 1e-15


def _log(p):
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(p, dtype=float))


# -- tabular rules --------------------------------------------------------------------

def mwu_step(pi_t, pref, eta):
    """Multiplicative weights: ``pi(y) ~ pi_t(y) exp(eta P(y > pi_t))``.

    Normalization happens in log space, so large ``eta`` cannot overflow.
    """
    pi_t = np.asarray(pi_t, dtype=float)
    G = np.asarray(pref) @ pi_t
    return normalize_log(_log(pi_t) + eta * G)


def geometric_mixture(pi_t, mu, mix):
    """Normalized ``pi_t^(1 - mix) mu^mix``."""
    mix = float(mix)
    if not 0.0 <= mix <= 1.0:
        raise RangeError(f"mixture weight must lie in [0, 1], got {mix!r}")
    pi_t = np.asarray(pi_t, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if mix == 0.0:
        return pi_t
    if mix == 1.0:
        return mu
    return normalize_log((1.0 - mix) * log_policy(pi_t) + mix * log_policy(mu))


def nash_md_step(pi_t, game, eta, tau=None):
    """Nash-MD: MWU step on the geometric mixture ``pi_t^mu`` with ``mix = eta tau``."""
    tau = game.tau if tau is None else float(tau)
    mix = eta * tau
    if not 0.0 <= mix <= 1.0:
        raise RangeError(f"eta * tau = {mix!r} must lie in [0, 1] for Nash-MD")
    mixed = geometric_mixture(pi_t, game.reference, mix)
    return mwu_step(mixed, game.preference, eta)


def omd_direction(pi_t, game, tau=None):
    """``P(y > pi_t) - tau log(pi_t(y)/mu(y))``."""
    tau = game.tau if tau is None else float(tau)
    pi_t = np.asarray(pi_t, dtype=float)
    G = game.preference @ pi_t
    if tau == 0.0:
        return G
    return G - tau * (log_policy(pi_t) - np.log(game.reference))


def omd_step(pi_t, game, eta, tau=None):
    """Online mirror descent with the log-ratio penalty in the update direction."""
    pi_t = np.asarray(pi_t, dtype=float)
    return normalize_log(_log(pi_t) + eta * omd_direction(pi_t, game, tau))


def gmmd_objective(pi, pi_t, G, mu, reg, eta, tau):
    """``-eta <pi, G> + KL(pi || pi_t) + eta tau R(pi, mu)``."""
    from .divergences import bregman_kl

    val = -eta * float(np.dot(pi, G)) + bregman_kl(pi, pi_t)
    if tau != 0.0:
        val += eta * tau * divergence_value(reg, pi, mu)
    return val


def gmmd_objective_gradient(pi, pi_t, G, mu, reg, eta, tau):
    g = -eta * G + log_policy(pi) - log_policy(pi_t) + 1.0
    if tau != 0.0:
        g = g + eta * tau * divergence_gradient(reg, pi, mu)
    return g


def gmmd_step(pi_t, game, reg=REVERSE_KL, eta=1.0, tau=None, inner: Optional[InnerConfig] = None,
              method="auto", return_info=False):
    """Generalized magnetic mirror descent step.

    Parameters
    ----------
    pi_t : ndarray
        Current policy.
    game : GameSpec
    reg : RegularizerSpec
        Magnet regularizer; weights are relative to ``tau``.
    eta, tau : float
        Learning rate and game temperature (``tau`` defaults to ``game.tau``).
    inner : InnerConfig, optional
        Mirror-descent budget for regularizers without a closed form.
    method : {"auto", "closed_form", "mirror_descent"}
        ``auto`` takes the closed form
        ``pi ~ exp((eta G + log pi_t + m log mu) / (1 + m))`` with
        ``m = eta tau w`` for pure reverse KL of total weight ``w``.

    Returns
    -------
    ndarray
        The next policy, plus an info dict when ``return_info`` is set.

    Raises
    ------
    InnerSolveError
        If mirror descent misses ``inner.tolerance`` within ``inner.max_iters``.
    """
    tau = game.tau if tau is None else float(tau)
    pi_t = np.asarray(pi_t, dtype=float)
    mu = game.reference
    G = game.preference @ pi_t
    active = tau != 0.0 and not reg.is_zero
    if method == "auto":
        method = "mirror_descent" if active and not reg.is_pure_reverse_kl else "closed_form"
    info = {"residual": 0.0, "iterations": 0}
    if method == "closed_form":
        if active and not reg.is_pure_reverse_kl:
            raise ValueError("closed-form GMMD needs a pure reverse-KL regularizer")
        logits = _log(pi_t) + eta * G
        if active:
            m = eta * tau * reg.total_weight
            logits = (logits + m * np.log(mu)) / (1.0 + m)
        out = normalize_log(logits)
        return (out, info) if return_info else out
    if method != "mirror_descent":
        raise ValueError(f"unknown method {method!r}")
    inner = inner or InnerConfig()
    if np.any(pi_t <= 0):
        raise SupportError("GMMD mirror descent needs a full-support pi_t")
    res = entropic_mirror_descent(
        lambda p: gmmd_objective(p, pi_t, G, mu, reg, eta, tau),
        lambda p: gmmd_objective_gradient(p, pi_t, G, mu, reg, eta, tau),
        pi_t, inner.step_size or GMMD_DEFAULT_STEP, inner.tolerance, inner.max_iters,
        scale=lambda p: 1.0 + eta * tau * divergence_curvature(reg, p, mu))
    info = {"residual": res.residual, "iterations": res.iterations}
    if not res.converged:
        raise InnerSolveError(
            f"GMMD inner solve stopped at residual {res.residual:.3g} "
            f"after {res.iterations} iterations", res.residual, res.iterations)
    return (res.x, info) if return_info else res.x


# -- RSPO ---------------------------------------------------------------------------------

def rspo_lambda_for_gmmd(eta, tau):
    """RSPO loss weight matching a GMMD step at ``(eta, tau)``: ``2 eta tau``."""
    return 2.0 * eta * tau


def resolve_baseline(baseline, pi_t, G):
    if isinstance(baseline, (int, float, np.floating)) and not isinstance(baseline, bool):
        return float(baseline)
    if Baseline(baseline) is Baseline.CONSTANT:
        return 0.5
    return float(np.dot(pi_t, G))


def _rspo_parts(theta, pi_t, game, reg, eta, baseline, direction):
    theta = np.asarray(theta, dtype=float)
    pi_t = np.asarray(pi_t, dtype=float)
    logp = log_softmax(theta)
    pi = np.exp(logp)
    G = game.preference @ pi_t if direction is None else np.asarray(direction, dtype=float)
    B = resolve_baseline(baseline, pi_t, G)
    live = pi_t > 0
    res = np.zeros_like(pi)
    res[live] = logp[live] - np.log(pi_t[live]) - eta * (G[live] - B)
    return logp, pi, res


def rspo_loss(theta, pi_t, game, reg=NO_REGULARIZER, eta=1.0, baseline=Baseline.CONSTANT,
              direction=None):
    """Exact RSPO loss over the tabular support.

    ``E_{y~pi_t}[(log(pi_theta(y)/pi_t(y)) - eta (G(y) - B))^2] + sum_k lambda_k R_k(pi_theta, mu)``

    Parameters
    ----------
    theta : ndarray
        Logits of ``pi_theta``.
    pi_t : ndarray
        Anchor policy; the expectation is taken under it.
    game : GameSpec
    reg : RegularizerSpec
        Weights are the loss temperatures ``lambda_k``.
    eta : float
    baseline : float or Baseline
        A number, ``"constant"`` (1/2) or ``"estimated_mean"``
        (``E_{pi_t}[G]``).
    direction : ndarray, optional
        Update direction ``G``; defaults to ``P(y > pi_t)``.
    """
    logp, pi, res = _rspo_parts(theta, pi_t, game, reg, eta, baseline, direction)
    loss = float(np.dot(np.asarray(pi_t, dtype=float), res ** 2))
    if not reg.is_zero:
        loss += divergence_value(reg, pi, game.reference)
    return loss


def rspo_loss_gradient(theta, pi_t, game, reg=NO_REGULARIZER, eta=1.0,
                       baseline=Baseline.CONSTANT, direction=None):
    """Analytic logit gradient of :func:`rspo_loss` (chain rule through softmax)."""
    logp, pi, res = _rspo_parts(theta, pi_t, game, reg, eta, baseline, direction)
    w = np.asarray(pi_t, dtype=float) * res
    grad = 2.0 * (w - pi * w.sum())
    if not reg.is_zero:
        grad = grad + softmax_jvp(pi, divergence_gradient(reg, pi, game.reference))
    return grad


def gmmd_loss(theta, pi_t, game, reg=REVERSE_KL, eta=1.0, tau=None):
    """GMMD objective evaluated at ``pi_theta``, as a function of the logits."""
    tau = game.tau if tau is None else float(tau)
    pi = np.exp(log_softmax(theta))
    G = game.preference @ np.asarray(pi_t, dtype=float)
    return gmmd_objective(pi, pi_t, G, game.reference, reg, eta, tau)


def gmmd_loss_gradient(theta, pi_t, game, reg=REVERSE_KL, eta=1.0, tau=None):
    tau = game.tau if tau is None else float(tau)
    pi = np.exp(log_softmax(theta))
    G = game.preference @ np.asarray(pi_t, dtype=float)
    return softmax_jvp(pi, gmmd_objective_gradient(pi, pi_t, G, game.reference, reg, eta, tau))


def nash_md_direction(pi_t, game, eta, tau=None):
    """``P(y > pi_t^mu)`` with the geometric mixture at ``mix = eta tau``."""
    tau = game.tau if tau is None else float(tau)
    mixed = geometric_mixture(pi_t, game.reference, eta * tau)
    return game.preference @ mixed


def nash_md_rspo_gradient(theta, pi_t, game, eta, tau=None, form="regularized"):
    """Nash-MD written as an RSPO loss gradient, in one of two equivalent forms.

    ``"regularized"``: direction ``P(y > pi_t^mu)``, baseline 1/2 and an
    explicit reverse-KL term of weight ``2 eta tau``.
    ``"shifted"``: direction ``P(y > pi_t^mu) - tau log(pi_t/mu)``,
    baseline 1/2 and no regularizer.  The two agree at ``pi_theta = pi_t``.
    """
    tau = game.tau if tau is None else float(tau)
    G = nash_md_direction(pi_t, game, eta, tau)
    if form == "regularized":
        reg = RegularizerSpec.single(Divergence.REVERSE_KL, rspo_lambda_for_gmmd(eta, tau))
        return rspo_loss_gradient(theta, pi_t, game, reg, eta, 0.5, direction=G)
    if form == "shifted":
        shift = tau * (log_policy(pi_t) - np.log(game.reference))
        return rspo_loss_gradient(theta, pi_t, game, NO_REGULARIZER, eta, 0.5,
                                  direction=G - shift)
    raise ValueError(f"unknown form {form!r}")


@dataclass
class InnerResult:
    logits: np.ndarray
    loss: float
    residual: float
    iterations: int
    converged: bool


def minimize_logits(fun, theta0, inner: InnerConfig, default_step=RSPO_DEFAULT_STEP,
                    precondition=None):
    """Backtracking gradient descent on softmax logits.

    ``fun(theta)`` returns ``(loss, grad)``.  ``precondition(theta)``
    optionally returns a positive per-coordinate scale that the gradient
    is divided by.  Each step starts from the configured step size and is
    halved up to 30 times until the loss does not increase (up to
    round-off); if no halving
    helps the solve stops unconverged.
    """
    theta = gauge_fix(theta0)
    loss, grad = fun(theta)
    r = float(np.max(np.abs(grad)))
    step = inner.step_size or default_step
    it = 0
    while r > inner.tolerance and it < inner.max_iters:
        d = grad if precondition is None else grad / precondition(theta)
        s = step
        for _ in range(MAX_HALVINGS + 1):
            cand = gauge_fix(theta - s * d)
            c_loss, c_grad = fun(cand)
            if c_loss <= loss + LOSS_SLACK * max(1.0, abs(loss)):
                break
            s *= 0.5
        else:
            break
        theta, loss, grad = cand, c_loss, c_grad
        r = float(np.max(np.abs(grad)))
        it += 1
    return InnerResult(theta, float(loss), r, it, r <= inner.tolerance)


def _rspo_preconditioner(pi_t, reg):
    lam = reg.total_weight

    def scale(theta):
        return 2.0 * pi_t + lam * np.exp(log_softmax(theta)) + 1e-300

    return scale


def rspo_inner_solve(theta_init, pi_t, game, reg=NO_REGULARIZER, eta=1.0,
                     baseline=Baseline.CONSTANT, inner: Optional[InnerConfig] = None,
                     direction=None, strict=True, return_result=False):
    """Minimize :func:`rspo_loss` over logits from ``theta_init``.

    ``theta_init=None`` starts from the logits of ``pi_t``.  Stops when the
    gradient L-inf norm is at most ``inner.tolerance``.

    Raises
    ------
    InnerSolveError
        If ``strict`` and the tolerance is not reached.
    """
    inner = inner or InnerConfig()
    pi_t = np.asarray(pi_t, dtype=float)
    if theta_init is None:
        theta_init = log_policy(pi_t)
    theta_init = np.asarray(theta_init, dtype=float)
    if inner.max_iters == 0:
        res = InnerResult(theta_init.copy(), rspo_loss(theta_init, pi_t, game, reg, eta, baseline,
                                                       direction), float("nan"), 0, False)
        return res if return_result else res.logits

    def fun(theta):
        return (rspo_loss(theta, pi_t, game, reg, eta, baseline, direction),
                rspo_loss_gradient(theta, pi_t, game, reg, eta, baseline, direction))

    pre = _rspo_preconditioner(pi_t, reg) if inner.preconditioner == "diagonal" else None
    res = minimize_logits(fun, theta_init, inner, precondition=pre)
    if strict and not res.converged:
        raise InnerSolveError(
            f"RSPO inner solve stopped at gradient norm {res.residual:.3g} "
            f"after {res.iterations} iterations", res.residual, res.iterations)
    return res if return_result else res.logits


# -- outer loop -------------------------------------------------------------------------

@dataclass
class Trajectory:
    """Iterates ``pi_0 .. pi_T`` and per-iteration diagnostics.

    Diagnostic arrays have length ``T + 1`` and are aligned with
    ``iterates``; entries that do not exist at iteration 0 (``step_linf``
    is 0, ``inner_loss`` is NaN) are filled accordingly.
    """

    iterates: np.ndarray
    duality_gap: np.ndarray
    gap_max_side: np.ndarray
    gap_min_side: np.ndarray
    reverse_kl_to_ref: np.ndarray
    entropy: np.ndarray
    step_linf: np.ndarray
    inner_loss: np.ndarray
    config_echo: dict
    seed: int
    warnings: list = field(default_factory=list)
    inner_residual: Optional[np.ndarray] = None

    @property
    def final(self):
        return self.iterates[-1]

    def __len__(self):
        return len(self.iterates)


def diagnostic_game(game, config: SolverConfig):
    """The regularized game whose duality gap measures progress of a solver.

    MWU targets the unregularized game; Nash-MD and OMD the reverse-KL game
    at ``tau``; GMMD its configured regularizer at ``tau``; RSPO with loss
    weights ``lambda`` the game with weights ``lambda / (2 eta)`` at unit
    temperature.
    """
    tau = config.resolved_tau(game)
    s = config.solver
    if s is Solver.MWU:
        return make_game(game.preference, game.reference, 0.0, game.actions.labels), NO_REGULARIZER
    if s in (Solver.NASH_MD, Solver.OMD):
        return make_game(game.preference, game.reference, tau, game.actions.labels), REVERSE_KL
    if s is Solver.GMMD:
        return make_game(game.preference, game.reference, tau, game.actions.labels), \
            config.regularizer
    reg = config.regularizer
    if reg.is_zero:
        return make_game(game.preference, game.reference, 0.0, game.actions.labels), NO_REGULARIZER
    return make_game(game.preference, game.reference, 1.0, game.actions.labels), \
        reg.scaled(1.0 / (2.0 * config.eta))


def run_solver(game, config: SolverConfig, seed=0, compute_gap=True,
               gap_inner: Optional[InnerConfig] = None, callback=None):
    """Run ``config.outer_iters`` self-play updates from ``pi_0 = mu``.

    Parameters
    ----------
    game : GameSpec
    config : SolverConfig
    seed : int
        Only consumed when ``config.sampling`` is set.
    compute_gap : bool
        Skip the duality-gap diagnostic (NaN columns) when false.
    gap_inner : InnerConfig, optional
        Budget for best responses without a closed form.
    callback : callable, optional
        Called as ``callback(t, pi)`` after every update.

    Returns
    -------
    Trajectory

    Raises
    ------
    SolverError
        Wraps a failing update with the (1-based) iteration index.
    """
    from .estimation import estimated_rspo_loss, make_rng, policy_batch, sample_batch
    from .metrics import duality_gap, policy_entropy

    T = config.outer_iters
    tau = config.resolved_tau(game)
    mu = np.array(game.reference, dtype=float)
    n = game.size
    notes = []
    if config.solver is Solver.GMMD and config.eta > tau:
        msg = f"eta={config.eta:g} exceeds tau={tau:g}; last-iterate convergence is not guaranteed"
        notes.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    d_game, d_reg = diagnostic_game(game, config)
    rng = make_rng(seed, config.sampling) if config.sampling is not None else None

    iterates = np.empty((T + 1, n))
    cols = {k: np.full(T + 1, np.nan) for k in
            ("gap", "max", "min", "kl", "ent", "step", "loss", "resid")}
    iterates[0] = mu

    def record(t, pi):
        iterates[t] = pi
        if compute_gap:
            rep = duality_gap(pi, d_game, d_reg, gap_inner)
            cols["gap"][t], cols["max"][t], cols["min"][t] = rep.gap, rep.max_side, rep.min_side
        cols["kl"][t] = divergence_value(REVERSE_KL, pi, mu)
        cols["ent"][t] = policy_entropy(pi)

    record(0, mu)
    cols["step"][0] = 0.0
    pi = mu
    for t in range(1, T + 1):
        try:
            s = config.solver
            loss = np.nan
            resid = np.nan
            if s is Solver.MWU:
                new = mwu_step(pi, game.preference, config.eta)
            elif s is Solver.NASH_MD:
                new = nash_md_step(pi, game, config.eta, tau)
            elif s is Solver.OMD:
                new = omd_step(pi, game, config.eta, tau)
            elif s is Solver.GMMD:
                new, info = gmmd_step(pi, game, config.regularizer, config.eta, tau,
                                      config.inner, return_info=True)
                resid = info["residual"]
            elif config.sampling is None:
                res = rspo_inner_solve(None, pi, game, config.regularizer, config.eta,
                                       config.baseline, config.inner, return_result=True)
                new, loss, resid = normalize_log(res.logits), res.loss, res.residual
            else:
                batch = sample_batch(pi, game.preference, config.sampling, rng)
                ref_batch = policy_batch(mu, game.preference, config.sampling.k_samples, rng,
                                         config.sampling.include_self_pairs)
                reg = config.regularizer

                def fun(theta, batch=batch, ref_batch=ref_batch):
                    return estimated_rspo_loss(theta, batch, game, reg, config.eta,
                                               config.baseline, ref_batch, with_grad=True)

                pre = _rspo_preconditioner(pi, reg) \
                    if config.inner.preconditioner == "diagonal" else None
                res = minimize_logits(fun, log_policy(pi), config.inner, precondition=pre)
                new, loss, resid = normalize_log(res.logits), res.loss, res.residual
        except RSPOError as exc:
            raise SolverError(f"iteration {t} ({config.solver.value}): {exc}", iteration=t) from exc
        cols["step"][t] = float(np.max(np.abs(new - pi)))
        cols["loss"][t] = loss
        cols["resid"][t] = resid
        pi = new
        try:
            record(t, pi)
        except RSPOError as exc:
            raise SolverError(f"iteration {t} diagnostics: {exc}", iteration=t) from exc
        if callback is not None:
            callback(t, pi)
    return Trajectory(iterates, cols["gap"], cols["max"], cols["min"], cols["kl"], cols["ent"],
                      cols["step"], cols["loss"], config.to_dict(), int(seed), notes,
                      cols["resid"])
