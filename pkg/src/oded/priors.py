"""Normal priors on the unconstrained scale and Gaussian moment containers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ConfigError, EvaluationError
from .growth_models import EffectsVector, GrowthModelSpec, ParamVector

LOG_2PI = float(np.log(2 * np.pi))

# (sigma_b_bar, K) per flexibility level, dry matter
DRY_MATTER_FLEXIBILITY = {
    "very_low": (0.01, 3),
    "low": (0.3, 4),
    "medium": (7.5, 12),
    "high": (10.0, 30),
}
# (sigma_b1_bar = sigma_b2_bar, K1 = K2) per flexibility level, fruit weight
FRUIT_WEIGHT_FLEXIBILITY = {
    "very_low": (10.0, 3),
    "low": (20.0, 16),
    "medium": (60.0, 30),
    "high": (80.0, 40),
}
FRUIT_EFFECT_SD = 0.2


@dataclass(frozen=True)
class PriorEntry:
    name: str
    transform: str
    mean: float
    sd: float

    def __post_init__(self):
        if self.transform not in ("identity", "log"):
            raise ConfigError(f"{self.name}: transform must be 'identity' or 'log'")
        if not (np.isfinite(self.mean) and np.isfinite(self.sd) and self.sd > 0):
            raise ConfigError(f"{self.name}: prior needs a finite mean and sd > 0")


@dataclass(frozen=True)
class PriorSpec:
    """Independent Normal priors for theta plus random-effect scales.

    ``effect_sd`` maps each random-effect group (``spline``, ``spline1``,
    ``spline2``, ``fruit``) to the scale used for its ``N(0, sd^2)`` prior.
    """

    entries: tuple[PriorEntry, ...]
    effect_sd: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "effect_sd", dict(self.effect_sd))
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate prior entries")
        for group, sd in self.effect_sd.items():
            if not (np.isfinite(sd) and sd > 0):
                raise ConfigError(f"random-effect scale for {group!r} must be positive")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.entries)

    @property
    def means(self) -> np.ndarray:
        return np.array([e.mean for e in self.entries])

    @property
    def sds(self) -> np.ndarray:
        return np.array([e.sd for e in self.entries])

    def effect_scales(self, groups) -> np.ndarray:
        """Per-coordinate prior sd of the random-effect vector."""
        try:
            return np.concatenate([np.full(size, self.effect_sd[g]) for g, size, *_ in groups]) \
                if groups else np.zeros(0)
        except KeyError as exc:
            raise ConfigError(f"no random-effect scale for group {exc.args[0]!r}") from None

    def check(self, spec) -> None:
        """``spec`` is anything exposing ``theta_names`` and ``effect_groups``."""
        if self.names != tuple(spec.theta_names):
            raise ConfigError(f"prior entries {self.names} do not match parameters {tuple(spec.theta_names)}")
        self.effect_scales(spec.effect_groups)

    def with_overrides(self, **means_sds) -> "PriorSpec":
        """Copy with ``name=(mean, sd)`` replacements."""
        entries = []
        for e in self.entries:
            if e.name in means_sds:
                m, s = means_sds[e.name]
                e = PriorEntry(e.name, e.transform, m, s)
            entries.append(e)
        return PriorSpec(tuple(entries), self.effect_sd)


@dataclass(frozen=True)
class GaussianApprox:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.cov, dtype=float).reshape(mean.size, mean.size)
        if not np.all(np.isfinite(mean)) or not np.all(np.isfinite(cov)):
            raise EvaluationError("Gaussian moments must be finite")
        if mean.size and np.max(np.abs(cov - cov.T)) > 1e-10 * max(1.0, np.max(np.abs(cov))):
            raise EvaluationError("covariance is not symmetric")
        if mean.size:
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                raise EvaluationError("covariance is not positive definite") from None
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


def sample_prior(prior: PriorSpec, spec: GrowthModelSpec, rng: np.random.Generator):
    """One joint draw ``(theta, b)``; ``b`` uses the fixed scales, not the drawn sds."""
    prior.check(spec)
    theta = prior.means + prior.sds * rng.standard_normal(len(prior.entries))
    b = prior.effect_scales(spec.effect_groups) * rng.standard_normal(spec.effect_dim)
    return ParamVector(spec.theta_names, theta), EffectsVector.from_flat(spec, b)


def prior_moments(prior: PriorSpec, spec) -> GaussianApprox:
    prior.check(spec)
    scales = prior.effect_scales(spec.effect_groups)
    mean = np.concatenate([prior.means, np.zeros(scales.size)])
    return GaussianApprox(mean, np.diag(np.concatenate([prior.sds, scales]) ** 2))


def log_prior_batch(prior: PriorSpec, theta: np.ndarray) -> np.ndarray:
    """Sum of Normal log-densities over the last axis of ``theta``."""
    z = (theta - prior.means) / prior.sds
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(np.log(prior.sds)) - 0.5 * LOG_2PI * len(prior.entries)


def log_prior_density(prior: PriorSpec, params: ParamVector) -> float:
    if tuple(params.names) != prior.names:
        raise ConfigError("parameter names do not match the prior")
    if not np.all(np.isfinite(params.values)):
        raise EvaluationError("non-finite parameter value", params=params.as_dict())
    return float(log_prior_batch(prior, params.values))


# --------------------------------------------------------------------------
# presets

def _entry(name, mean, sd):
    return PriorEntry(name, "log" if name.startswith("log_") else "identity", mean, sd)


def dry_matter_2021(spec: GrowthModelSpec, sigma_b_bar: float = 0.01) -> PriorSpec:
    """Dry-matter priors; ``sigma_b_bar`` sets the spline random-effect scale."""
    table = {
        "log_r": (np.log(0.1), 0.1),
        "log_lambda": (np.log(0.3), 0.1),
        "beta0": (0.1, 0.1),
        "beta1": (0.1, 0.1),
        "log_sigma_e": (np.log(1.0), 0.05),
        "log_sigma_b": (np.log(sigma_b_bar), 0.4),
        "log_sigma_bg": (np.log(FRUIT_EFFECT_SD), 0.1),
    }
    return _build("dry_matter_2021", spec, table,
                  {"spline": sigma_b_bar, "fruit": FRUIT_EFFECT_SD})


def fruit_weight(spec: GrowthModelSpec, sigma_b1_bar: float = 10.0,
                 sigma_b2_bar: float | None = None) -> PriorSpec:
    """Fruit-weight priors.  Single-phase laws use the phase-2 capacity prior."""
    sigma_b2_bar = sigma_b1_bar if sigma_b2_bar is None else sigma_b2_bar
    table = {
        "log_r": (np.log(0.02), 0.1),
        "log_lambda": (np.log(200.0), 0.1),
        "log_lambda1": (np.log(150.0), 0.1),
        "log_lambda2": (np.log(200.0), 0.1),
        "log_eta": (np.log(200.0), 0.1),
        "beta0": (1.0, 0.1),
        "beta1": (0.01, 0.1),
        "beta01": (1.0, 0.1),
        "beta11": (0.01, 0.1),
        "beta02": (1.0, 0.1),
        "beta12": (0.01, 0.1),
        "log_sigma_e": (np.log(20.0), 0.1),
        "log_sigma_b": (np.log(sigma_b1_bar), 0.1),
        "log_sigma_b1": (np.log(sigma_b1_bar), 0.1),
        "log_sigma_b2": (np.log(sigma_b2_bar), 0.1),
        "log_sigma_bg": (np.log(FRUIT_EFFECT_SD), 0.1),
    }
    return _build("fruit_weight", spec, table, {"spline": sigma_b1_bar, "spline1": sigma_b1_bar,
                                                 "spline2": sigma_b2_bar, "fruit": FRUIT_EFFECT_SD})


def _build(preset, spec, table, scales) -> PriorSpec:
    missing = [n for n in spec.theta_names if n not in table]
    if missing:
        raise ConfigError(f"preset {preset!r} has no prior for {missing}")
    entries = tuple(_entry(n, *table[n]) for n in spec.theta_names)
    return PriorSpec(entries, {g: scales[g] for g, *_ in spec.effect_groups})


PRESETS = {"dry_matter_2021": dry_matter_2021, "fruit_weight": fruit_weight}


def preset_prior(name: str, spec: GrowthModelSpec, **scales) -> PriorSpec:
    try:
        return PRESETS[name](spec, **scales)
    except KeyError:
        raise ConfigError(f"unknown prior preset {name!r}; expected one of {sorted(PRESETS)}") from None
