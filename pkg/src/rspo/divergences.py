"""Regularizers toward the reference policy and the negentropy geometry.

Three divergences are supported, each with value and raw partial
derivatives over the ambient simplex coordinates:

=============  ==============================  ==================
kind           value R(pi, mu)                 dR/dpi(y)
=============  ==============================  ==================
reverse_kl     sum pi log(pi/mu)               log(pi/mu) + 1
forward_kl     sum mu log(mu/pi)               -mu/pi
chi_square     1/2 sum (pi/mu - 1)^2 mu        pi/mu
=============  ==============================  ==================

Gradients are not projected onto the simplex tangent space; subtract the
mean (or the pi-weighted mean) where a tangent gradient is needed.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, SupportError

DEFAULT_CLIP = 10.0
PROBE_FLOOR = 1e-9
PROBE_WITNESS_TOL = 1e-10


class Divergence(str, enum.Enum):
    REVERSE_KL = "reverse_kl"
    FORWARD_KL = "forward_kl"
    CHI_SQUARE = "chi_square"
    NONE = "none"


class Estimator(str, enum.Enum):
    ANALYTIC = "analytic"
    MONTE_CARLO_IS = "monte_carlo_is"
    MONTE_CARLO_DIRECT = "monte_carlo_direct"


@dataclass(frozen=True)
class RegTerm:
    kind: Divergence
    weight: float = 1.0
    estimator: Estimator = Estimator.ANALYTIC
    clip: float = DEFAULT_CLIP

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", Divergence(self.kind))
        except ValueError:
            raise ConfigError(f"unknown divergence kind {self.kind!r}", field="kind") from None
        try:
            object.__setattr__(self, "estimator", Estimator(self.estimator))
        except ValueError:
            raise ConfigError(f"unknown estimator {self.estimator!r}", field="estimator") from None
        w = float(self.weight)
        if not np.isfinite(w) or w < 0:
            raise ConfigError(f"regularizer weight must be >= 0, got {self.weight!r}", field="weight")
        object.__setattr__(self, "weight", w)
        c = float(self.clip)
        if not c > 0:
            raise ConfigError(f"clip must be positive, got {self.clip!r}", field="clip")
        object.__setattr__(self, "clip", c)
        if (self.estimator is Estimator.MONTE_CARLO_DIRECT
                and self.kind not in (Divergence.FORWARD_KL, Divergence.NONE)):
            raise ConfigError(
                "the direct (reference-sample) estimator is only defined for forward_kl",
                field="estimator")


@dataclass(frozen=True)
class RegularizerSpec:
    """Weighted sum of divergences toward the reference policy.

    In a game the weights are relative (the game temperature scales the
    sum); in the RSPO loss they are the loss temperatures lambda_k.
    """

    terms: tuple = (RegTerm(Divergence.NONE, 0.0),)

    def __post_init__(self):
        terms = tuple(t if isinstance(t, RegTerm) else RegTerm(**t) for t in self.terms)
        if not terms:
            raise ConfigError("regularizer needs at least one term", field="regularizer")
        object.__setattr__(self, "terms", terms)

    @classmethod
    def single(cls, kind, weight=1.0, estimator=Estimator.ANALYTIC, clip=DEFAULT_CLIP):
        return cls((RegTerm(kind, weight, estimator, clip),))

    @classmethod
    def from_records(cls, records):
        if isinstance(records, dict):
            records = [records]
        terms = []
        for i, rec in enumerate(records):
            if not isinstance(rec, dict):
                raise ConfigError(f"regularizer[{i}] must be a mapping", field=f"regularizer[{i}]")
            unknown = set(rec) - {"kind", "weight", "estimator", "clip"}
            if unknown:
                raise ConfigError(f"regularizer[{i}] has unknown keys {sorted(unknown)}",
                                  field=f"regularizer[{i}]")
            if "kind" not in rec:
                raise ConfigError(f"regularizer[{i}] missing 'kind'", field=f"regularizer[{i}].kind")
            terms.append(RegTerm(rec["kind"], rec.get("weight", 1.0),
                                 rec.get("estimator", Estimator.ANALYTIC),
                                 rec.get("clip", DEFAULT_CLIP)))
        return cls(tuple(terms))

    def to_records(self):
        return [{"kind": t.kind.value, "weight": t.weight,
                 "estimator": t.estimator.value, "clip": t.clip} for t in self.terms]

    def active_terms(self):
        return [t for t in self.terms if t.kind is not Divergence.NONE and t.weight > 0]

    @property
    def is_zero(self):
        return not self.active_terms()

    @property
    def is_pure_reverse_kl(self):
        active = self.active_terms()
        return len(active) > 0 and all(t.kind is Divergence.REVERSE_KL for t in active)

    @property
    def total_weight(self):
        return sum(t.weight for t in self.active_terms())

    def scaled(self, factor):
        return RegularizerSpec(tuple(
            RegTerm(t.kind, t.weight * factor, t.estimator, t.clip) for t in self.terms))

    def with_estimator(self, estimator):
        return RegularizerSpec(tuple(
            RegTerm(t.kind, t.weight, estimator, t.clip) for t in self.terms))


REVERSE_KL = RegularizerSpec.single(Divergence.REVERSE_KL)
NO_REGULARIZER = RegularizerSpec()


def _as_spec(spec):
    if isinstance(spec, RegularizerSpec):
        return spec
    return RegularizerSpec.single(spec)


# -- single terms (broadcast over leading axes) -----------------------------------

def _reverse_kl(pi, mu):
    if np.any((pi > 0) & (mu <= 0)):
        raise SupportError("reverse KL infinite: pi has mass where mu has none")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pi > 0, pi * (np.log(pi) - np.log(np.where(mu > 0, mu, 1.0))), 0.0)
    return terms.sum(axis=-1)


def _forward_kl(pi, mu):
    if np.any((mu > 0) & (pi <= 0)):
        raise SupportError("forward KL infinite: mu has mass where pi has none")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(mu > 0, mu * (np.log(mu) - np.log(np.where(pi > 0, pi, 1.0))), 0.0)
    return terms.sum(axis=-1)


def _chi_square(pi, mu):
    if np.any((pi > 0) & (mu <= 0)):
        raise SupportError("chi-square infinite: pi has mass where mu has none")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(mu > 0, (pi - mu) ** 2 / np.where(mu > 0, mu, 1.0), 0.0)
    return 0.5 * terms.sum(axis=-1)


def _reverse_kl_grad(pi, mu):
    if np.any(pi <= 0) or np.any(mu <= 0):
        raise SupportError("reverse KL gradient needs pi and mu with full support")
    return np.log(pi) - np.log(mu) + 1.0


def _forward_kl_grad(pi, mu):
    if np.any((mu > 0) & (pi <= 0)):
        raise SupportError("forward KL gradient infinite: zero pi where mu > 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(mu > 0, -mu / np.where(pi > 0, pi, 1.0), 0.0)


def _chi_square_grad(pi, mu):
    if np.any(mu <= 0):
        raise SupportError("chi-square gradient needs mu with full support")
    return pi / mu


_VALUE = {
    Divergence.REVERSE_KL: _reverse_kl,
    Divergence.FORWARD_KL: _forward_kl,
    Divergence.CHI_SQUARE: _chi_square,
}
_GRAD = {
    Divergence.REVERSE_KL: _reverse_kl_grad,
    Divergence.FORWARD_KL: _forward_kl_grad,
    Divergence.CHI_SQUARE: _chi_square_grad,
}


def term_value(kind, pi, mu):
    kind = Divergence(kind)
    pi, mu = np.asarray(pi, dtype=float), np.asarray(mu, dtype=float)
    if kind is Divergence.NONE:
        return np.zeros(np.broadcast_shapes(pi.shape, mu.shape)[:-1])
    return _VALUE[kind](pi, mu)


def term_gradient(kind, pi, mu):
    kind = Divergence(kind)
    pi, mu = np.asarray(pi, dtype=float), np.asarray(mu, dtype=float)
    if kind is Divergence.NONE:
        return np.zeros(np.broadcast_shapes(pi.shape, mu.shape))
    return _GRAD[kind](pi, mu)


_CURVATURE = {
    Divergence.REVERSE_KL: lambda pi, mu: np.ones_like(pi * mu),
    Divergence.FORWARD_KL: lambda pi, mu: mu / pi,
    Divergence.CHI_SQUARE: lambda pi, mu: pi / mu,
}


def divergence_curvature(spec, pi, mu):
    """``pi * diag(Hessian)`` of the weighted divergence: its curvature
    measured in the entropic geometry (constant ``w`` for reverse KL)."""
    spec = _as_spec(spec)
    pi, mu = np.asarray(pi, dtype=float), np.asarray(mu, dtype=float)
    total = np.zeros(np.broadcast_shapes(pi.shape, mu.shape))
    for t in spec.active_terms():
        total = total + t.weight * _CURVATURE[t.kind](pi, mu)
    return total


def divergence_value(spec, pi, mu):
    """Weighted divergence ``sum_k w_k R_k(pi, mu)``.

    ``spec`` may be a :class:`RegularizerSpec` or a bare kind name, which is
    taken with weight one.  Leading axes of ``pi`` broadcast.
    """
    spec = _as_spec(spec)
    pi, mu = np.asarray(pi, dtype=float), np.asarray(mu, dtype=float)
    total = np.zeros(np.broadcast_shapes(pi.shape, mu.shape)[:-1])
    for t in spec.active_terms():
        total = total + t.weight * _VALUE[t.kind](pi, mu)
    return float(total) if total.ndim == 0 else total


def divergence_gradient(spec, pi, mu):
    """Raw partial derivatives of :func:`divergence_value` w.r.t. ``pi``."""
    spec = _as_spec(spec)
    pi, mu = np.asarray(pi, dtype=float), np.asarray(mu, dtype=float)
    total = np.zeros(np.broadcast_shapes(pi.shape, mu.shape))
    for t in spec.active_terms():
        total = total + t.weight * _GRAD[t.kind](pi, mu)
    return total


def bregman_kl(pi, pi_prime):
    """Bregman divergence of the negentropy ``<pi, log pi>``, i.e. KL(pi || pi')."""
    pi, pi_prime = np.asarray(pi, dtype=float), np.asarray(pi_prime, dtype=float)
    v = _reverse_kl(pi, pi_prime)
    return float(v) if np.ndim(v) == 0 else v


def negentropy_gradient(pi):
    pi = np.asarray(pi, dtype=float)
    if np.any(pi <= 0):
        raise SupportError("negentropy gradient needs full support")
    return np.log(pi) + 1.0


# -- relative convexity -------------------------------------------------------------

@dataclass(frozen=True)
class ConvexityProbeReport:
    pairs_tested: int
    min_gap: float
    witness: Optional[tuple] = None
    witness_r_gap: Optional[float] = None
    witness_psi_gap: Optional[float] = None

    @property
    def violated(self):
        return self.witness is not None


def monotonicity_gaps(spec, pi, pi_prime, mu):
    """Return ``(<dR(pi)-dR(pi'), pi-pi'>, <dpsi(pi)-dpsi(pi'), pi-pi'>)``."""
    d = np.asarray(pi, dtype=float) - np.asarray(pi_prime, dtype=float)
    r = ((divergence_gradient(spec, pi, mu) - divergence_gradient(spec, pi_prime, mu)) * d).sum(-1)
    psi = ((negentropy_gradient(pi) - negentropy_gradient(pi_prime)) * d).sum(-1)
    return r, psi


def _dirichlet_floored(rng, n, size):
    x = rng.dirichlet(np.ones(n), size=size)
    x = np.maximum(x, PROBE_FLOOR)
    return x / x.sum(axis=-1, keepdims=True)


def relative_convexity_probe(spec, mu, n_pairs=10_000, seed=0):
    """Search for violations of relative strong convexity w.r.t. negentropy.

    Samples ``n_pairs`` pairs of interior policies and records the smallest
    value of ``<dR(pi)-dR(pi'), pi-pi'> - <dpsi(pi)-dpsi(pi'), pi-pi'>``.
    A negative minimum (below ``-1e-10``) comes with the violating pair.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    spec = _as_spec(spec)
    mu = np.asarray(mu, dtype=float)
    rng = np.random.default_rng(seed)
    a = _dirichlet_floored(rng, mu.size, n_pairs)
    b = _dirichlet_floored(rng, mu.size, n_pairs)
    r, psi = monotonicity_gaps(spec, a, b, mu)
    gap = r - psi
    k = int(np.argmin(gap))
    min_gap = float(gap[k])
    if min_gap < -PROBE_WITNESS_TOL:
        return ConvexityProbeReport(n_pairs, min_gap, (a[k].copy(), b[k].copy()),
                                    float(r[k]), float(psi[k]))
    return ConvexityProbeReport(n_pairs, min_gap)
