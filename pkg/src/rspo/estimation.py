"""Monte-Carlo side of the self-play loop.

K responses are drawn from the current policy, compared pairwise through
the preference matrix, and turned into per-sample win-rate estimates.  The
divergence gradients of the regularizer get stochastic estimators whose
density ratios are hard-clipped at ``clip`` (no gradient flows through a
clipped ratio).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import Baseline, EstimationConfig
from .divergences import Divergence, Estimator, RegularizerSpec, term_gradient
from .errors import ConfigError, DimensionError, SupportError
from .simplex import log_softmax, softmax_jvp


@dataclass
class SampleBatch:
    """K sampled action indices plus their pairwise preferences.

    ``indices`` may carry leading batch axes, shape ``(..., K)``.  The
    pairwise matrix is computed on first access.
    """

    indices: np.ndarray
    pref: np.ndarray = field(repr=False)
    include_self_pairs: bool = True
    source: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.intp)
        n = self.pref.shape[0]
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= n):
            raise IndexError("sample index out of range")
        if self.indices.shape[-1] < 1:
            raise DimensionError("a batch needs at least one sample")
        self._pairwise = None

    @property
    def k(self):
        return self.indices.shape[-1]

    @property
    def pairwise(self):
        if self._pairwise is None:
            idx = self.indices
            self._pairwise = self.pref[idx[..., :, None], idx[..., None, :]]
        return self._pairwise


def make_rng(seed, cfg: Optional[EstimationConfig] = None):
    stream = 0 if cfg is None else cfg.seed_stream
    return np.random.default_rng(np.random.SeedSequence([int(stream), int(seed)]))


def sample_indices(pi, size, rng):
    """Categorical draws from ``pi`` by inverse-CDF on uniform variates."""
    pi = np.asarray(pi, dtype=float)
    cdf = np.cumsum(pi)
    cdf[-1] = 1.0
    u = rng.random(size)
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, pi.size - 1)


def sample_batch(pi_t, pref, cfg: EstimationConfig, rng, n_batches=None):
    """Draw ``K = cfg.k_samples`` responses from ``pi_t``.

    With ``n_batches`` the indices have shape ``(n_batches, K)``.
    """
    size = cfg.k_samples if n_batches is None else (int(n_batches), cfg.k_samples)
    idx = sample_indices(pi_t, size, rng)
    return SampleBatch(idx, np.asarray(pref), cfg.include_self_pairs, np.asarray(pi_t))


def policy_batch(pi, pref, k, rng, include_self_pairs=True):
    """Batch of ``k`` draws from an arbitrary policy (estimator tests, reference batches)."""
    return SampleBatch(sample_indices(pi, k, rng), np.asarray(pref), include_self_pairs,
                       np.asarray(pi))


def estimate_pref_vs_policy(batch: SampleBatch):
    """Row means of the pairwise matrix, ``u_i = mean_j P(y_i > y_j)``.

    Without self pairs the diagonal is dropped and the mean runs over
    ``K - 1`` opponents.
    """
    U = batch.pairwise
    k = batch.k
    if batch.include_self_pairs:
        return U.sum(axis=-1) / k
    if k < 2:
        raise DimensionError("excluding self pairs needs K >= 2")
    return (U.sum(axis=-1) - 0.5) / (k - 1)


def self_pair_conditional_moments(pi_t, pref, k, include_self_pairs=True):
    """Exact mean and variance of ``u_i`` given ``y_i = y`` for every action y.

    Other samples are i.i.d. from ``pi_t``.  With self pairs the mean is
    ``(0.5 + (K-1) P(y > pi_t)) / K``, a bias of ``(0.5 - P(y > pi_t)) / K``.
    """
    P = np.asarray(pref, dtype=float)
    pi_t = np.asarray(pi_t, dtype=float)
    g = P @ pi_t
    var = (P ** 2) @ pi_t - g ** 2
    if include_self_pairs:
        return (0.5 + (k - 1) * g) / k, (k - 1) * var / k ** 2
    return g, var / (k - 1)


# -- divergence gradient estimators ---------------------------------------------------

def _check_support(values, what):
    if np.any(values <= 0):
        raise SupportError(f"sampled action has zero probability under {what}")


def _score_sum(idx, weights, pi):
    """``mean_i w_i (e_{y_i} - pi)`` for flat sample arrays."""
    k = idx.size
    counts = np.bincount(idx, weights=weights, minlength=pi.size) / k
    return counts - pi * (weights.sum() / k)


def estimate_term_gradient(kind, estimator, weight, clip, theta, mu, batch, ref_batch=None):
    kind = Divergence(kind)
    estimator = Estimator(estimator)
    logp = log_softmax(theta)
    pi = np.exp(logp)
    mu = np.asarray(mu, dtype=float)
    if kind is Divergence.NONE or weight == 0:
        return np.zeros_like(pi)
    if estimator is Estimator.ANALYTIC:
        return weight * softmax_jvp(pi, term_gradient(kind, pi, mu))
    if estimator is Estimator.MONTE_CARLO_DIRECT:
        if kind is not Divergence.FORWARD_KL:
            raise ConfigError("direct estimator is only defined for forward_kl", field="estimator")
        z = np.asarray((ref_batch if ref_batch is not None else batch).indices).ravel()
        return -weight * _score_sum(z, np.ones(z.size), pi)
    y = np.asarray(batch.indices).ravel()
    py, my = pi[y], mu[y]
    _check_support(py, "pi_theta")
    _check_support(my, "mu")
    if kind is Divergence.REVERSE_KL:
        w = np.log(np.clip(py / my, 1.0 / clip, clip))
    elif kind is Divergence.FORWARD_KL:
        w = -np.minimum(my / py, clip)
    else:
        w = np.minimum(py / my, clip)
    return weight * _score_sum(y, w, pi)


def estimate_divergence_gradient(spec: RegularizerSpec, theta, mu, batch: SampleBatch,
                                 ref_batch: Optional[SampleBatch] = None):
    """Stochastic logit gradient of ``sum_k w_k R_k(pi_theta, mu)``.

    Each term uses its configured estimator:

    * reverse KL: score-function form of ``E[(log pi/mu)^2] / 2``,
      ``mean (log pi(y)/mu(y)) (e_y - pi)`` with ``y ~ pi_theta``;
    * forward KL, importance sampled: ``-mean min(mu/pi, c) (e_y - pi)``;
    * forward KL, direct: ``-mean (e_z - pi)`` with ``z ~ mu`` taken from
      ``ref_batch`` (or ``batch`` if it was drawn from ``mu``);
    * chi-square: ``mean min(pi/mu, c) (e_y - pi)``.

    Without clipping all estimators are unbiased for the analytic gradient
    ``J(theta) dR/dpi``.
    """
    theta = np.asarray(theta, dtype=float)
    total = np.zeros_like(theta)
    for t in spec.active_terms():
        total = total + estimate_term_gradient(t.kind, t.estimator, t.weight, t.clip,
                                               theta, mu, batch, ref_batch)
    return total


def estimator_expectation(kind, estimator, theta, mu, clip=10.0, weight=1.0):
    """Exact mean of :func:`estimate_term_gradient` over its sampling law.

    Computed by enumerating actions: samples come from ``pi_theta``, or from
    ``mu`` for the direct forward-KL estimator.
    """
    kind = Divergence(kind)
    estimator = Estimator(estimator)
    pi = np.exp(log_softmax(theta))
    mu = np.asarray(mu, dtype=float)
    if kind is Divergence.NONE or estimator is Estimator.ANALYTIC:
        return estimate_term_gradient(kind, estimator, weight, clip, theta, mu, None)
    if estimator is Estimator.MONTE_CARLO_DIRECT:
        return -weight * (mu - pi)
    if kind is Divergence.REVERSE_KL:
        w = np.log(np.clip(pi / mu, 1.0 / clip, clip))
    elif kind is Divergence.FORWARD_KL:
        w = -np.minimum(mu / pi, clip)
    else:
        w = np.minimum(pi / mu, clip)
    return weight * softmax_jvp(pi, w)


def analytic_logit_gradient(spec: RegularizerSpec, theta, mu):
    from .divergences import divergence_gradient

    pi = np.exp(log_softmax(theta))
    return softmax_jvp(pi, divergence_gradient(spec, pi, mu))


def estimate_surrogate_value(kind, estimator, theta, mu, batch, clip=10.0):
    """Sample mean and standard error of the per-sample surrogate value.

    reverse KL ``(log pi/mu)^2 / 2``; forward KL (IS) ``min(mu/pi, c)``,
    whose expectation is ``sum mu = 1`` when unclipped; forward KL (direct)
    ``log(mu/pi)`` over reference draws; chi-square ``min(pi/mu, c) / 2``.
    """
    kind = Divergence(kind)
    estimator = Estimator(estimator)
    pi = np.exp(log_softmax(theta))
    mu = np.asarray(mu, dtype=float)
    y = np.asarray(batch.indices).ravel()
    py, my = pi[y], mu[y]
    _check_support(py, "pi_theta")
    _check_support(my, "mu")
    if kind is Divergence.REVERSE_KL:
        v = 0.5 * np.log(py / my) ** 2
    elif kind is Divergence.FORWARD_KL:
        v = np.log(my / py) if estimator is Estimator.MONTE_CARLO_DIRECT \
            else np.minimum(my / py, clip)
    elif kind is Divergence.CHI_SQUARE:
        v = 0.5 * np.minimum(py / my, clip)
    else:
        v = np.zeros(y.size)
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")
    return float(v.mean()), se


# -- sampled RSPO loss -------------------------------------------------------------------

def _baseline_value(baseline, u):
    if isinstance(baseline, (int, float, np.floating)) and not isinstance(baseline, bool):
        return float(baseline)
    mode = Baseline(baseline)
    if mode is Baseline.CONSTANT:
        return 0.5
    return u.mean(axis=-1, keepdims=True)


def _reg_value_grad(reg, logp, pi, mu, batch, ref_batch, with_grad):
    """Importance-weighted regularizer estimate from the pi_t batch.

    With ``w = pi_theta/pi_t`` (clipped at each term's ``clip``):
    reverse KL ``mean w log(pi_theta/mu)``, forward KL
    ``mean (mu/pi_t) log(mu/pi_theta)``, chi-square
    ``mean w pi_theta/(2 mu) - 1/2``; the direct forward-KL term averages
    ``log(mu/pi_theta)`` over ``ref_batch``.  All are unbiased when no
    clip is active.
    """
    y = batch.indices
    src = np.asarray(batch.source, dtype=float)
    pt_y = src[y]
    _check_support(pt_y, "pi_t")
    lp_y = logp[y]
    p_y = pi[y]
    mu_y = mu[y]
    k = y.shape[-1]
    value = np.zeros(y.shape[:-1])
    grad = np.zeros(y.shape[:-1] + pi.shape) if with_grad else None

    def add_grad(idx, coef, weight):
        # d/dtheta of mean_i coef_i * log pi(y_i): mean_i coef_i (e_{y_i} - pi)
        flat_idx = idx.reshape(-1, idx.shape[-1])
        flat_coef = coef.reshape(-1, idx.shape[-1])
        g = np.zeros((flat_idx.shape[0], pi.size))
        for b in range(flat_idx.shape[0]):
            g[b] = np.bincount(flat_idx[b], weights=flat_coef[b], minlength=pi.size)
        g = (g - pi * flat_coef.sum(axis=-1, keepdims=True)) / idx.shape[-1]
        return weight * g.reshape(idx.shape[:-1] + pi.shape)

    for t in reg.active_terms():
        c = t.clip
        if t.kind is Divergence.FORWARD_KL and t.estimator is Estimator.MONTE_CARLO_DIRECT:
            if ref_batch is None:
                raise ConfigError("direct forward-KL estimate needs a reference batch",
                                  field="estimator")
            z = ref_batch.indices
            value = value + t.weight * (np.log(mu[z]) - logp[z]).mean(axis=-1)
            if with_grad:
                grad = grad + add_grad(z, -np.ones(z.shape), t.weight)
            continue
        raw = p_y / pt_y
        w = np.minimum(raw, c)
        live = raw < c
        if t.kind is Divergence.REVERSE_KL:
            l = lp_y - np.log(mu_y)
            value = value + t.weight * (w * l).mean(axis=-1)
            if with_grad:
                # d(w l) = w (1 + l) dlogp where unclipped, w dlogp where clipped
                coef = w * (np.where(live, l, 0.0) + 1.0)
                grad = grad + add_grad(y, coef, t.weight)
        elif t.kind is Divergence.FORWARD_KL:
            a = np.minimum(mu_y / pt_y, c)
            value = value + t.weight * (a * (np.log(mu_y) - lp_y)).mean(axis=-1)
            if with_grad:
                grad = grad + add_grad(y, -a, t.weight)
        elif t.kind is Divergence.CHI_SQUARE:
            q = p_y / mu_y
            value = value + t.weight * ((w * q).mean(axis=-1) / 2 - 0.5)
            if with_grad:
                coef = np.where(live, 2 * w * q, w * q) / 2
                grad = grad + add_grad(y, coef, t.weight)
    return value, grad


def estimated_rspo_loss(theta, batch: SampleBatch, game, reg, eta, baseline=Baseline.CONSTANT,
                        ref_batch: Optional[SampleBatch] = None, with_grad=False,
                        direction=None):
    """Batch version of the RSPO loss.

    ``mean_i (log pi_theta(y_i)/pi_t(y_i) - eta (u_i - B))^2 + reg`` with
    ``u_i`` from :func:`estimate_pref_vs_policy` used inside the square, so
    the squared term carries an ``O(1/K)`` bias (see
    :func:`self_pair_conditional_moments`).  The regularizer is estimated
    by importance weighting against ``pi_t = batch.source``.

    Leading batch axes of ``batch.indices`` are supported and give one
    loss per batch.  With ``with_grad`` the logit gradient is returned too.
    """
    if batch.source is None:
        raise ValueError("estimated loss needs the policy the batch was drawn from")
    theta = np.asarray(theta, dtype=float)
    logp = log_softmax(theta)
    pi = np.exp(logp)
    mu = np.asarray(game.reference, dtype=float)
    y = batch.indices
    src = np.asarray(batch.source, dtype=float)
    _check_support(src[y], "pi_t")
    u = estimate_pref_vs_policy(batch) if direction is None else np.asarray(direction)
    B = _baseline_value(baseline, u)
    res = logp[y] - np.log(src[y]) - eta * (u - B)
    loss = (res ** 2).mean(axis=-1)
    rv, rg = _reg_value_grad(reg, logp, pi, mu, batch, ref_batch, with_grad)
    loss = loss + rv
    if not with_grad:
        return float(loss) if np.ndim(loss) == 0 else loss
    k = y.shape[-1]
    flat_idx = y.reshape(-1, k)
    flat_res = res.reshape(-1, k)
    g = np.zeros((flat_idx.shape[0], pi.size))
    for b in range(flat_idx.shape[0]):
        g[b] = np.bincount(flat_idx[b], weights=flat_res[b], minlength=pi.size)
    g = 2.0 * (g - pi * flat_res.sum(axis=-1, keepdims=True)) / k
    g = g.reshape(y.shape[:-1] + pi.shape) + rg
    if np.ndim(loss) == 0:
        return float(loss), g.reshape(pi.shape)
    return loss, g
