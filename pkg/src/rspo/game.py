"""Finite preference games: validation, utilities and the regularized payoff.

Policies and preference matrices are plain float arrays.  The validating
constructors (:func:`as_policy`, :func:`validate_preference`,
:func:`make_game`) return read-only copies so that validated objects can be
shared freely.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import expit

from .errors import ConsistencyError, DimensionError, RangeError, SupportError, ValidationError

MAX_ACTIONS = 10_000
REFERENCE_FLOOR = 1e-12
LOAD_CONSISTENCY_TOL = 1e-9
INTERNAL_CONSISTENCY_TOL = 1e-12
RANGE_TOL = 1e-12
SIMPLEX_TOL = 1e-12


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ActionSet:
    size: int
    labels: Optional[tuple] = None

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 2:
            raise DimensionError(f"action set needs at least 2 actions, got {self.size}")
        if self.size > MAX_ACTIONS:
            raise DimensionError(f"action set capped at {MAX_ACTIONS} actions, got {self.size}")
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))
            if len(self.labels) != self.size:
                raise DimensionError(
                    f"expected {self.size} labels, got {len(self.labels)}")

    def label(self, i):
        return self.labels[i] if self.labels is not None else str(i)


def as_policy(probs, tol=SIMPLEX_TOL):
    """Validate a probability vector and return it as a read-only array."""
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size < 1:
        raise DimensionError(f"policy must be a non-empty vector, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise RangeError("policy has non-finite entries")
    if np.any(p < 0):
        i = int(np.argmin(p))
        raise RangeError(f"policy entry {i} is negative ({float(p[i])!r})")
    s = p.sum()
    if abs(s - 1.0) > tol:
        raise RangeError(f"policy sums to {float(s)!r}, not 1")
    return _frozen(p)


def uniform_policy(n):
    return _frozen(np.full(n, 1.0 / n))


def floor_reference(mu, floor=REFERENCE_FLOOR):
    """Clamp a reference policy to full support and renormalize."""
    mu = np.maximum(np.asarray(mu, dtype=float), floor)
    return _frozen(mu / mu.sum())


def validate_preference(entries, tol=LOAD_CONSISTENCY_TOL):
    """Check range, diagonal and pairwise consistency of a preference matrix.

    Parameters
    ----------
    entries : array-like, shape (n, n)
        ``entries[i, j]`` is the probability that action ``i`` is preferred
        over action ``j``.
    tol : float
        Tolerance on ``P[i, i] = 1/2`` and ``P[i, j] + P[j, i] = 1``.

    Returns
    -------
    numpy.ndarray
        Read-only copy of the validated matrix.

    Raises
    ------
    DimensionError, RangeError, ConsistencyError
        The error message and attributes carry the offending coordinates.
    """
    P = np.asarray(entries, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise DimensionError(f"preference matrix must be square, got shape {P.shape}")
    n = P.shape[0]
    if n < 2:
        raise DimensionError("preference matrix needs dimension >= 2")
    if n > MAX_ACTIONS:
        raise DimensionError(f"preference matrix capped at {MAX_ACTIONS} actions")
    bad = ~np.isfinite(P) | (P < -RANGE_TOL) | (P > 1 + RANGE_TOL)
    if bad.any():
        i, j = map(int, np.argwhere(bad)[0])
        raise RangeError(f"entry ({i},{j}) = {float(P[i, j])!r} outside [0, 1]")
    diag = np.abs(np.diag(P) - 0.5)
    if diag.max() > tol:
        i = int(np.argmax(diag))
        raise ConsistencyError(
            f"diagonal entry ({i},{i}) = {float(P[i, i])!r}, expected 0.5", row=i, col=i)
    sym = np.abs(P + P.T - 1.0)
    if sym.max() > tol:
        i, j = map(int, np.unravel_index(np.argmax(sym), sym.shape))
        i, j = min(i, j), max(i, j)
        raise ConsistencyError(
            f"entries ({i},{j}) + ({j},{i}) = {float(P[i, j] + P[j, i])!r}, expected 1",
            row=i, col=j)
    return _frozen(np.clip(P, 0.0, 1.0))


def _check_dims(*arrays):
    n = arrays[0].shape[-1]
    for a in arrays[1:]:
        if a.shape[-1] != n:
            raise DimensionError(f"dimension mismatch: {arrays[0].shape} vs {a.shape}")


def utility(pi, pi_prime, pref):
    """Expected preference of ``pi`` over ``pi_prime``: ``pi @ P @ pi_prime``."""
    pi, pi_prime, P = np.asarray(pi), np.asarray(pi_prime), np.asarray(pref)
    _check_dims(P, pi, pi_prime)
    return float(pi @ P @ pi_prime)


def preference_vs_policy(y_index, pi_prime, pref):
    P = np.asarray(pref)
    n = P.shape[0]
    if not 0 <= int(y_index) < n:
        raise IndexError(f"action index {y_index} out of range for {n} actions")
    _check_dims(P, np.asarray(pi_prime))
    return float(P[int(y_index)] @ np.asarray(pi_prime))


def preference_vector(pi_prime, pref):
    """All ``P(y > pi_prime)`` at once; the update direction of MWU-type rules."""
    return np.asarray(pref) @ np.asarray(pi_prime)


@dataclass(frozen=True)
class GameSpec:
    actions: ActionSet
    preference: np.ndarray = field(repr=False)
    reference: np.ndarray
    tau: float = 0.0

    @property
    def size(self):
        return self.actions.size


def make_game(preference, reference=None, tau=0.0, labels=None, tol=INTERNAL_CONSISTENCY_TOL):
    """Build a validated :class:`GameSpec`.

    The reference defaults to uniform and is floored to full support.
    """
    P = validate_preference(preference, tol=tol)
    n = P.shape[0]
    actions = ActionSet(n, tuple(labels) if labels is not None else None)
    if reference is None:
        mu = uniform_policy(n)
    else:
        mu = as_policy(reference, tol=max(tol, SIMPLEX_TOL))
        if mu.size != n:
            raise DimensionError(f"reference has {mu.size} entries, game has {n} actions")
        mu = floor_reference(mu)
    tau = float(tau)
    if not np.isfinite(tau) or tau < 0:
        raise RangeError(f"tau must be a nonnegative real, got {tau!r}")
    return GameSpec(actions, P, mu, tau)


def regularized_payoff(pi, pi_prime, game, reg, tau=None):
    """``u(pi, pi') - tau R(pi, mu) + tau R(pi', mu)``.

    ``tau`` defaults to ``game.tau``.
    """
    from .divergences import divergence_value

    tau = game.tau if tau is None else float(tau)
    u = utility(pi, pi_prime, game.preference)
    if tau == 0.0:
        return u
    mu = game.reference
    return u - tau * divergence_value(reg, pi, mu) + tau * divergence_value(reg, pi_prime, mu)


def make_sigmoid_preference(rewards, beta):
    """Logistic preference ``P[i, j] = sigmoid((r_i - r_j) / beta)``.

    Consistency holds exactly: the lower triangle is filled as one minus the
    transposed upper triangle.
    """
    if not beta > 0:
        raise RangeError(f"beta must be positive, got {beta!r}")
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1:
        raise DimensionError("rewards must be a vector")
    P = expit((r[:, None] - r[None, :]) / beta)
    upper = np.triu(P, 1)
    P = upper + np.tril(1.0 - upper.T, -1)
    np.fill_diagonal(P, 0.5)
    return validate_preference(P, tol=INTERNAL_CONSISTENCY_TOL)


def random_preference(n, rng):
    """Uniformly random consistent preference matrix (test and demo helper)."""
    upper = np.triu(rng.uniform(0.0, 1.0, size=(n, n)), 1)
    P = upper + np.tril(1.0 - upper.T, -1)
    np.fill_diagonal(P, 0.5)
    return validate_preference(P, tol=INTERNAL_CONSISTENCY_TOL)


# -- file format ---------------------------------------------------------------

GAME_KEYS = {"size", "labels", "preference", "reference", "tau"}


def game_from_dict(doc):
    """Parse the game document schema (see README) into a :class:`GameSpec`."""
    if not isinstance(doc, dict):
        raise ValidationError("game document must be a mapping")
    unknown = set(doc) - GAME_KEYS
    if unknown:
        raise ValidationError(f"unknown game keys: {sorted(unknown)}")
    for key in ("size", "preference"):
        if key not in doc:
            raise ValidationError(f"game document missing required key {key!r}")
    size = doc["size"]
    if not isinstance(size, int) or isinstance(size, bool):
        raise ValidationError(f"size must be an integer, got {size!r}")
    try:
        P = np.array(doc["preference"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise DimensionError(f"preference is not a rectangular numeric matrix: {exc}") from None
    if P.shape != (size, size):
        raise DimensionError(f"preference has shape {P.shape}, expected ({size}, {size})")
    P = validate_preference(P, tol=LOAD_CONSISTENCY_TOL)
    # re-symmetrize so downstream math sees exact consistency
    upper = np.triu(P, 1)
    P = upper + np.tril(1.0 - upper.T, -1)
    np.fill_diagonal(P, 0.5)
    ref = doc.get("reference")
    if ref is not None:
        ref = np.asarray(ref, dtype=float)
        if ref.shape != (size,):
            raise DimensionError(f"reference has shape {ref.shape}, expected ({size},)")
        ref = as_policy(ref, tol=LOAD_CONSISTENCY_TOL)
        ref = ref / ref.sum()
    return make_game(P, ref, doc.get("tau", 0.0), doc.get("labels"))


def game_to_dict(game):
    doc = {
        "size": game.size,
        "preference": game.preference.tolist(),
        "reference": game.reference.tolist(),
        "tau": game.tau,
    }
    if game.actions.labels is not None:
        doc["labels"] = list(game.actions.labels)
    return doc


def load_game(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON ({exc})") from None
    return game_from_dict(doc)


def save_game(game, path):
    Path(path).write_text(json.dumps(game_to_dict(game), indent=2) + "\n")


def log_policy(pi):
    """Elementwise log that refuses zeros instead of returning -inf."""
    pi = np.asarray(pi, dtype=float)
    if np.any(pi <= 0):
        i = int(np.argmin(pi))
        raise SupportError(f"policy has zero mass at action {i}")
    return np.log(pi)
