"""Configuration records for solvers, inner optimizers and sampling.

Solver configs are JSON documents whose keys mirror :class:`SolverConfig`.
Unknown keys are rejected with a :class:`~rspo.errors.ConfigError` naming
the offending field.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .divergences import REVERSE_KL, RegularizerSpec
from .errors import ConfigError


class Solver(str, enum.Enum):
    MWU = "mwu"
    NASH_MD = "nash_md"
    OMD = "omd"
    GMMD = "gmmd"
    RSPO = "rspo"


class Baseline(str, enum.Enum):
    CONSTANT = "constant"
    ESTIMATED_MEAN = "estimated_mean"


def _positive(value, name, allow_zero=False):
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}", field=name) from None
    ok = v >= 0 if allow_zero else v > 0
    if not np.isfinite(v) or not ok:
        bound = ">= 0" if allow_zero else "> 0"
        raise ConfigError(f"{name} must be {bound}, got {value!r}", field=name)
    return v


def _count(value, name, minimum):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}, got {value!r}", field=name)
    return int(value)


def _check_keys(doc, allowed, prefix):
    if not isinstance(doc, dict):
        raise ConfigError(f"{prefix or 'config'} must be a mapping", field=prefix or None)
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        name = f"{prefix}.{unknown[0]}" if prefix else unknown[0]
        raise ConfigError(f"unknown config key {name!r}", field=name)


@dataclass(frozen=True)
class InnerConfig:
    """Budget and stopping rule of an inner argmin.

    ``step_size=None`` picks the solver's own default (0.1 for entropic
    mirror descent, 0.5 for logit gradient descent).  ``preconditioner``
    is ``"none"`` or ``"diagonal"``; the latter only affects the RSPO
    logit solver.
    """

    max_iters: int = 10_000
    step_size: Optional[float] = None
    tolerance: float = 1e-10
    preconditioner: str = "none"

    def __post_init__(self):
        object.__setattr__(self, "max_iters", _count(self.max_iters, "inner.max_iters", 0))
        if self.step_size is not None:
            object.__setattr__(self, "step_size", _positive(self.step_size, "inner.step_size"))
        object.__setattr__(self, "tolerance",
                           _positive(self.tolerance, "inner.tolerance", allow_zero=True))
        if self.preconditioner not in ("none", "diagonal"):
            raise ConfigError(f"unknown preconditioner {self.preconditioner!r}",
                              field="inner.preconditioner")

    KEYS = ("max_iters", "step_size", "tolerance", "preconditioner")

    @classmethod
    def from_dict(cls, doc, prefix="inner"):
        _check_keys(doc, cls.KEYS, prefix)
        return cls(**doc)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.KEYS}


@dataclass(frozen=True)
class EstimationConfig:
    k_samples: int = 5
    include_self_pairs: bool = True
    clip_value: float = 10.0
    seed_stream: int = 0

    KEYS = ("k_samples", "include_self_pairs", "clip_value", "seed_stream")

    def __post_init__(self):
        object.__setattr__(self, "k_samples", _count(self.k_samples, "sampling.k_samples", 2))
        if not isinstance(self.include_self_pairs, (bool, np.bool_)):
            raise ConfigError("sampling.include_self_pairs must be a boolean",
                              field="sampling.include_self_pairs")
        object.__setattr__(self, "clip_value", _positive(self.clip_value, "sampling.clip_value"))
        object.__setattr__(self, "seed_stream", _count(self.seed_stream, "sampling.seed_stream", 0))

    @classmethod
    def from_dict(cls, doc, prefix="sampling"):
        _check_keys(doc, cls.KEYS, prefix)
        return cls(**doc)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.KEYS}


@dataclass(frozen=True)
class SolverConfig:
    """Solver identity and hyperparameters.

    ``tau=None`` means "use the game's temperature".  For GMMD the
    regularizer weights are relative to ``tau``; for RSPO they are the loss
    temperatures lambda.
    """

    solver: Solver = Solver.MWU
    eta: float = 1.0
    tau: Optional[float] = None
    regularizer: RegularizerSpec = REVERSE_KL
    outer_iters: int = 1
    baseline: Baseline = Baseline.CONSTANT
    inner: InnerConfig = field(default_factory=InnerConfig)
    sampling: Optional[EstimationConfig] = None

    KEYS = ("solver", "eta", "tau", "regularizer", "outer_iters", "baseline", "inner", "sampling")

    def __post_init__(self):
        try:
            object.__setattr__(self, "solver", Solver(self.solver))
        except ValueError:
            raise ConfigError(f"unknown solver {self.solver!r}", field="solver") from None
        try:
            object.__setattr__(self, "baseline", Baseline(self.baseline))
        except ValueError:
            raise ConfigError(f"unknown baseline {self.baseline!r}", field="baseline") from None
        object.__setattr__(self, "eta", _positive(self.eta, "eta"))
        if self.tau is not None:
            object.__setattr__(self, "tau", _positive(self.tau, "tau", allow_zero=True))
        object.__setattr__(self, "outer_iters", _count(self.outer_iters, "outer_iters", 1))
        if not isinstance(self.regularizer, RegularizerSpec):
            raise ConfigError("regularizer must be a RegularizerSpec", field="regularizer")
        if self.sampling is not None and self.solver is not Solver.RSPO:
            raise ConfigError("sampled expectations are only supported for the rspo solver",
                              field="sampling")

    def resolved_tau(self, game):
        return game.tau if self.tau is None else self.tau

    def with_updates(self, **kw):
        return replace(self, **kw)

    @classmethod
    def from_dict(cls, doc):
        _check_keys(doc, cls.KEYS, "")
        if "solver" not in doc:
            raise ConfigError("config missing required key 'solver'", field="solver")
        kw = dict(doc)
        if "regularizer" in kw:
            try:
                kw["regularizer"] = RegularizerSpec.from_records(kw["regularizer"])
            except ConfigError as exc:
                field_name = exc.field if (exc.field or "").startswith("regularizer") \
                    else f"regularizer.{exc.field}"
                raise ConfigError(str(exc), field=field_name) from None
        if "inner" in kw:
            kw["inner"] = InnerConfig.from_dict(kw["inner"])
        if kw.get("sampling") is not None:
            kw["sampling"] = EstimationConfig.from_dict(kw["sampling"])
        return cls(**kw)

    def to_dict(self):
        return {
            "solver": self.solver.value,
            "eta": self.eta,
            "tau": self.tau,
            "regularizer": self.regularizer.to_records(),
            "outer_iters": self.outer_iters,
            "baseline": self.baseline.value,
            "inner": self.inner.to_dict(),
            "sampling": None if self.sampling is None else self.sampling.to_dict(),
        }


def load_solver_config(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return SolverConfig.from_dict(doc)
