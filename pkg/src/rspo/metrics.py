"""Ground truth for the solvers: best responses, duality gap, the fixed-point
oracle, the saddle example's equilibrium and diversity metrics.

Nothing here calls into :mod:`rspo.solvers`; the oracle is built only on
:func:`best_response`, so agreement between the two is a genuine
cross-validation.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .config import InnerConfig
from .divergences import REVERSE_KL, divergence_curvature, divergence_gradient, divergence_value
from .errors import (DegenerateError, DimensionError, InnerSolveError, NonConvergenceError,
                     RangeError, SingularError)
from .game import regularized_payoff
from .simplex import entropic_mirror_descent, normalize_log

BR_DEFAULT_STEP = 1.0


@dataclass(frozen=True)
class GapReport:
    max_side: float
    min_side: float
    gap: float
    attacker: np.ndarray
    defender_witness: np.ndarray


def _vertex(g):
    # np.argmax returns the lowest index among exact ties
    e = np.zeros_like(g)
    e[int(np.argmax(g))] = 1.0
    return e


def regularized_response(g, mu, tau, reg, inner=None, method="auto", allow_degenerate=True):
    """``argmax_q <q, g> - tau R(q, mu)`` over the simplex.

    Parameters
    ----------
    g : ndarray
        Linear payoff per action.
    mu : ndarray
        Reference policy (full support).
    tau : float
        Regularization temperature; ``0`` (or a zero regularizer) gives a
        vertex with lowest-index tie-breaking.
    reg : RegularizerSpec
    method : {"auto", "closed_form", "mirror_descent"}
        ``auto`` uses the closed form ``mu exp(g / (tau w))`` for pure
        reverse KL and mirror descent otherwise.
    """
    g = np.asarray(g, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if tau == 0 or reg.is_zero:
        if not allow_degenerate:
            raise DegenerateError("unregularized best response is not unique in general")
        return _vertex(g)
    if method == "auto":
        method = "closed_form" if reg.is_pure_reverse_kl else "mirror_descent"
    if method == "closed_form":
        if not reg.is_pure_reverse_kl:
            raise ValueError("closed-form best response needs a pure reverse-KL regularizer")
        return normalize_log(np.log(mu) + g / (tau * reg.total_weight))
    if method != "mirror_descent":
        raise ValueError(f"unknown method {method!r}")
    inner = inner or InnerConfig()
    with np.errstate(over="ignore"):
        scaled = g / tau
    if not np.all(np.isfinite(scaled)):
        raise RangeError(f"tau={tau!r} is too small for the iterative best response")
    # curvature floor: a plain exponentiated-gradient step where the
    # regularizer flattens out (chi-square near the boundary)
    floor = min(1.0, reg.total_weight)

    def value(q):
        return divergence_value(reg, q, mu) - float(q @ scaled)

    def grad(q):
        return divergence_gradient(reg, q, mu) - scaled

    # the residual is in units of g / tau; measure the tolerance in units of g
    tol = inner.tolerance * max(1.0, 1.0 / tau)
    res = entropic_mirror_descent(value, grad, mu, inner.step_size or BR_DEFAULT_STEP,
                                  tol, inner.max_iters,
                                  scale=lambda q: np.maximum(divergence_curvature(reg, q, mu),
                                                             floor))
    if not res.converged:
        raise InnerSolveError(
            f"best response did not reach residual {tol:g} "
            f"(residual {res.residual:.3g} after {res.iterations} iterations)",
            residual=res.residual, iterations=res.iterations)
    return res.x


def best_response(pi, game, reg=REVERSE_KL, inner: Optional[InnerConfig] = None, tau=None,
                  method="auto", allow_degenerate=True):
    """Regularized best response to ``pi``.

    Maximizes ``f(q, pi) = u(q, pi) - tau R(q, mu) + tau R(pi, mu)`` over
    ``q``; only the first two terms depend on ``q``.

    Parameters
    ----------
    pi : ndarray
        Opponent policy.
    game : GameSpec
    reg : RegularizerSpec
        Regularizer; its weights multiply ``tau``.
    inner : InnerConfig, optional
        Budget of the generic mirror-descent path.
    tau : float, optional
        Overrides ``game.tau``.
    method : {"auto", "closed_form", "mirror_descent"}

    Returns
    -------
    ndarray
        The best-response policy.  For ``tau = 0`` a vertex maximizing
        ``P(y > pi)`` with lowest-index tie-breaking, unless
        ``allow_degenerate`` is false, which raises :class:`DegenerateError`.
    """
    tau = game.tau if tau is None else float(tau)
    g = game.preference @ np.asarray(pi, dtype=float)
    return regularized_response(g, game.reference, tau, reg, inner, method, allow_degenerate)


def duality_gap(pi, game, reg=REVERSE_KL, inner: Optional[InnerConfig] = None, tau=None):
    """Exploitability of ``pi`` in the regularized game.

    ``max_side = max_q f(q, pi)`` and ``min_side = min_q f(pi, q)``, the
    latter solved as its own minimization (defender payoff ``-P^T pi``).
    For consistent preferences ``min_side = 1 - max_side``.
    """
    tau = game.tau if tau is None else float(tau)
    pi = np.asarray(pi, dtype=float)
    P, mu = game.preference, game.reference
    attacker = regularized_response(P @ pi, mu, tau, reg, inner)
    defender = regularized_response(-(P.T @ pi), mu, tau, reg, inner)
    max_side = regularized_payoff(attacker, pi, game, reg, tau)
    min_side = regularized_payoff(pi, defender, game, reg, tau)
    return GapReport(float(max_side), float(min_side), float(max_side - min_side),
                     attacker, defender)


def oracle_fixed_point(game, reg=REVERSE_KL, tol=1e-10, max_rounds=100_000,
                       inner: Optional[InnerConfig] = None, tau=None, gamma=0.5, window=10):
    """Symmetric regularized equilibrium by damped best-response iteration.

    Iterates ``pi <- (1 - gamma) pi + gamma BR(pi)`` from the reference.
    Progress is judged over blocks of ``max(window, window / (2 gamma))``
    rounds: ``gamma`` is halved when the smallest residual
    ``|pi - BR(pi)|_inf`` of a block is not below that of the previous
    block.  Scaling the block with ``1 / gamma`` keeps the test blind to
    the rotation the damped map inherits from the antisymmetric game.

    Raises
    ------
    NonConvergenceError
        If the residual is still above ``tol`` after ``max_rounds``.
    """
    tau = game.tau if tau is None else float(tau)
    if not tau > 0:
        raise RangeError("the fixed-point oracle needs tau > 0")
    pi = np.array(game.reference, dtype=float)
    r = np.inf
    prev_best, best, count = np.inf, np.inf, 0
    for _ in range(max_rounds):
        br = best_response(pi, game, reg, inner, tau)
        r = float(np.max(np.abs(br - pi)))
        if r <= tol:
            return pi
        best = min(best, r)
        count += 1
        if count >= max(window, int(np.ceil(window / (2 * gamma)))):
            if best >= prev_best:
                gamma *= 0.5
            prev_best, best, count = min(best, prev_best), np.inf, 0
        pi = (1.0 - gamma) * pi + gamma * br
    raise NonConvergenceError(
        f"oracle did not converge in {max_rounds} rounds (residual {r:.3g})",
        residual=r, rounds=max_rounds)


# -- saddle example --------------------------------------------------------------

def saddle_payoff(y, y_prime, alpha):
    """``f(y, y'; a) = a/2 y'^2 + (y' - 1)(y - 1) - a/2 y^2``; y maximizes."""
    return alpha / 2 * y_prime ** 2 + (y_prime - 1) * (y - 1) - alpha / 2 * y ** 2


def saddle_gradient(y, y_prime, alpha):
    return (y_prime - 1) - alpha * y, alpha * y_prime + (y - 1)


def saddle_true_equilibrium(alpha):
    """Stationary point ``((1 - a)/(1 + a^2), (1 + a)/(1 + a^2))`` of the saddle payoff."""
    alpha = float(alpha)
    if alpha == 0.0:
        raise SingularError("alpha = 0 removes the curvature of the saddle payoff")
    # d/dy:  -a y + y' = 1 ;  d/dy':  y + a y' = 1
    A = np.array([[-alpha, 1.0], [1.0, alpha]])
    y, yp = np.linalg.solve(A, np.ones(2))
    return float(y), float(yp)


@dataclass(frozen=True)
class SaddleSpec:
    alpha_true: float = 2.0
    alpha_surrogate: float = 1.0
    domain: tuple = (-1.0, 1.0)
    bins: int = 101
    reference_center: tuple = (-0.3, 0.4)
    reference_width: float = 10.0
    eta: float = 1.0
    tau: float = 0.1
    iters: int = 20

    def __post_init__(self):
        if int(self.bins) != self.bins or self.bins < 3:
            raise RangeError(f"bins must be an integer >= 3, got {self.bins!r}")
        lo, hi = map(float, self.domain)
        if not hi > lo:
            raise RangeError(f"degenerate domain {self.domain!r}")
        if not self.reference_width > 0:
            raise RangeError("reference_width must be positive")
        if not self.eta >= 0 or not self.tau >= 0:
            raise RangeError("eta and tau must be nonnegative")
        if int(self.iters) != self.iters or self.iters < 0:
            raise RangeError("iters must be a nonnegative integer")
        object.__setattr__(self, "domain", (lo, hi))
        object.__setattr__(self, "reference_center", tuple(map(float, self.reference_center)))

    def grid(self):
        return np.linspace(self.domain[0], self.domain[1], int(self.bins))


# -- diversity ---------------------------------------------------------------------

def policy_entropy(pi):
    """Shannon entropy in nats with ``0 log 0 = 0``."""
    pi = np.asarray(pi, dtype=float)
    q = pi[pi > 0]
    return float(-(q * np.log(q)).sum())


def mode_mass(pi, grid_shape, radius=1):
    """Largest probability mass inside any L-inf ball of ``radius`` cells."""
    rows, cols = grid_shape
    pi = np.asarray(pi, dtype=float)
    if rows * cols != pi.size:
        raise DimensionError(f"grid {rows}x{cols} does not match {pi.size} actions")
    if radius < 0:
        raise RangeError("radius must be >= 0")
    w = 2 * int(radius) + 1
    padded = np.pad(pi.reshape(rows, cols), int(radius))
    return float(sliding_window_view(padded, (w, w)).sum(axis=(2, 3)).max())
