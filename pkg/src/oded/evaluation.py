"""Relative efficiency under alternative models, prior realisations, dispersion."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EvaluationError
from .growth_models import GrowthModel, GrowthModelSpec
from .inference import LaplaceSettings
from .priors import PriorSpec
from .simulate import TimeDesign
from .utility import UtilityEstimate, _draw_theta, expected_utility

REALIZATION_MODES = ("fix_fixed_effects", "full_prior")


@dataclass(frozen=True)
class Efficiency:
    ratio: float
    numerator: UtilityEstimate
    denominator: UtilityEstimate

    def as_dict(self) -> dict:
        return {"ratio": self.ratio,
                "numerator": self.numerator.as_dict(),
                "denominator": self.denominator.as_dict()}


def relative_efficiency(d: TimeDesign, dgm_spec: GrowthModelSpec, dgm_prior: PriorSpec,
                        d_star: TimeDesign, L: int = 20000, seed: int = 0,
                        laplace: LaplaceSettings | None = None, workers: int | None = None) -> Efficiency:
    """``U(d) / U(d_star)`` under the data-generating model, with common seeds.

    Both utilities use the same seed, so ``d == d_star`` gives exactly 1.
    Ratios above 1 are possible through Monte Carlo noise and are not clipped.
    """
    if d.n != d_star.n or d.protocol != d_star.protocol or d.fruit_count != d_star.fruit_count:
        raise ConfigError("designs must share n and protocol")
    num = expected_utility(d, dgm_spec, dgm_prior, laplace, L=L, seed=seed, workers=workers)
    den = num if np.array_equal(d.times, d_star.times) else \
        expected_utility(d_star, dgm_spec, dgm_prior, laplace, L=L, seed=seed, workers=workers)
    if not den.estimate > 0:
        raise EvaluationError(f"reference design has non-positive utility {den.estimate}")
    return Efficiency(num.estimate / den.estimate, num, den)


@dataclass(frozen=True)
class Realizations:
    curve: np.ndarray
    t: np.ndarray
    y: np.ndarray

    def __len__(self):
        return self.y.size

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("curve", "t", "y"))
        for c, t, y in zip(self.curve.tolist(), self.t.tolist(), self.y.tolist()):
            w.writerow((c, repr(t), repr(y)))
        return buf.getvalue()

    def matrix(self) -> np.ndarray:
        """Curves as rows, grid times as columns."""
        n = int(self.curve.max()) + 1 if self.curve.size else 0
        return self.y.reshape(n, -1)


def generate_realizations(spec: GrowthModelSpec, prior: PriorSpec, n_curves: int, t_grid,
                          mode: str = "fix_fixed_effects", seed: int = 0) -> Realizations:
    """Mean curves for prior draws of the random effects.

    ``fix_fixed_effects`` holds every fixed effect at its prior mean;
    ``full_prior`` draws those too.  With fruit effects each curve is the
    curve of one fruit.
    """
    if mode not in REALIZATION_MODES:
        raise ConfigError(f"mode must be one of {REALIZATION_MODES}")
    if n_curves < 1:
        raise ConfigError("n_curves must be >= 1")
    t_grid = np.asarray(t_grid, dtype=float).reshape(-1)
    if t_grid.size == 0 or t_grid.min() < 0 or t_grid.max() > spec.t_max:
        raise ConfigError(f"t_grid must lie in [0, {spec.t_max}]")
    prior.check(spec)
    model = GrowthModel(spec)
    scales = prior.effect_scales(spec.effect_groups)
    rng = np.random.default_rng(seed)
    fruit = np.zeros(t_grid.size, dtype=int) if spec.fruit_count else None
    rows = model.rows(t_grid, fruit)
    ys = np.empty((n_curves, t_grid.size))
    for c in range(n_curves):
        theta = prior.means if mode == "fix_fixed_effects" else _draw_theta(prior, model, rng)[0]
        b = scales * rng.standard_normal(spec.effect_dim)
        ys[c] = model.mean(theta, b, rows)
    curve = np.repeat(np.arange(n_curves), t_grid.size)
    return Realizations(curve, np.tile(t_grid, n_curves), ys.reshape(-1))


def flexibility_dispersion(design, t_max: float | None = None) -> float:
    """Mean gap between consecutive sorted times divided by ``T / (n - 1)``.

    Equispaced designs spanning ``[0, T]`` give 1 and fully replicated
    designs 0.  This is an average spacing, so one wide gap can hide clusters.
    """
    if isinstance(design, TimeDesign):
        times, t_max = design.times, design.t_max if t_max is None else t_max
    else:
        times = np.sort(np.asarray(design, dtype=float).reshape(-1))
    if times.size < 2:
        raise ConfigError("dispersion needs at least 2 design points")
    if t_max is None or not t_max > 0:
        raise ConfigError("dispersion needs the horizon t_max > 0")
    return float(np.mean(np.diff(times)) / (t_max / (times.size - 1)))
