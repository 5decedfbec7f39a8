"""Small numerical helpers on the probability simplex."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import SupportError


def normalize_log(logw):
    """Map unnormalized log-weights to probabilities (max-subtracted)."""
    logw = np.asarray(logw, dtype=float)
    return np.exp(logw - logsumexp(logw))


def softmax(logits):
    return normalize_log(logits)


def log_softmax(logits):
    logits = np.asarray(logits, dtype=float)
    return logits - logsumexp(logits)


def gauge_fix(logits):
    """Shift logits to mean zero; the induced policy is unchanged."""
    logits = np.asarray(logits, dtype=float)
    return logits - logits.mean()


def logits_of(pi):
    pi = np.asarray(pi, dtype=float)
    if np.any(pi <= 0):
        raise SupportError("logits need a full-support policy")
    return gauge_fix(np.log(pi))


def softmax_jvp(pi, g):
    """Chain rule through softmax: ``(diag(pi) - pi pi^T) g``."""
    pi = np.asarray(pi, dtype=float)
    g = np.asarray(g, dtype=float)
    return pi * (g - np.dot(pi, g))


def tangent_residual(pi, grad):
    """L-inf norm of the entropic tangent projection ``pi * (grad - <pi, grad>)``.

    Vanishes exactly at the first-order optimality points of a smooth
    objective over the simplex, including boundary optima.
    """
    return float(np.max(np.abs(softmax_jvp(pi, grad))))


@dataclass
class MDResult:
    x: np.ndarray
    value: float
    residual: float
    iterations: int
    converged: bool


def entropic_mirror_descent(value, grad, x0, step, tol, max_iters, slack=1e-15, scale=None):
    """Minimize a smooth convex function over the simplex by exponentiated gradient.

    Each step is halved (at most 30 times) until the objective decreases,
    or, when the change is within round-off, until the residual does not
    increase.  Stops once :func:`tangent_residual` is at most ``tol``.

    ``scale(x)``, if given, returns positive per-coordinate curvatures
    ``d``; the log-space step then becomes ``-(g - <x, g>) / d``, still a
    descent direction, and close to a Newton step for separable objectives.
    """
    x = np.asarray(x0, dtype=float).copy()
    if np.any(x <= 0):
        raise SupportError("mirror descent needs a full-support start")
    f = value(x)
    g = grad(x)
    r = tangent_residual(x, g)
    it = 0
    while r > tol and it < max_iters:
        s = step
        logx = np.log(x)
        d = g if scale is None else (g - float(x @ g)) / scale(x)
        for _ in range(31):
            xn = normalize_log(logx - s * d)
            if np.all(xn > 0):
                fn = value(xn)
                noise = slack * max(1.0, abs(f))
                if fn < f - noise:
                    gn = grad(xn)
                    break
                if fn <= f + noise:
                    # objective change lost in round-off: fall back on the residual
                    gn = grad(xn)
                    if tangent_residual(xn, gn) <= r:
                        break
            s *= 0.5
        else:
            break
        x, f, g = xn, fn, gn
        r = tangent_residual(x, g)
        it += 1
    return MDResult(x, float(f), r, it, r <= tol)
