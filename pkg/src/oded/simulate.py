"""Sampling designs and synthetic datasets."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .growth_models import EffectsVector, GrowthModel, GrowthModelSpec, ParamVector

PROTOCOLS = ("destructive", "repeated_measures")


@dataclass(frozen=True)
class TimeDesign:
    times: np.ndarray
    protocol: str = "destructive"
    fruit_count: int | None = None
    t_max: float | None = None

    def __post_init__(self):
        times = np.sort(np.asarray(self.times, dtype=float).reshape(-1))
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"protocol must be one of {PROTOCOLS}")
        if self.protocol == "repeated_measures" and not self.fruit_count:
            raise ConfigError("repeated_measures designs need fruit_count >= 1")
        if self.protocol == "destructive" and self.fruit_count:
            raise ConfigError("destructive designs have no fruit_count")
        if not np.all(np.isfinite(times)) or (times.size and times[0] < 0):
            raise ConfigError("design times must be finite and >= 0")
        if self.t_max is not None and times.size and times[-1] > self.t_max:
            raise ConfigError(f"design times must lie in [0, {self.t_max}]")
        object.__setattr__(self, "times", times)

    @property
    def n(self) -> int:
        return self.times.size

    def with_times(self, times) -> "TimeDesign":
        return TimeDesign(times, self.protocol, self.fruit_count, self.t_max)

    def row_layout(self):
        """Row times and fruit ids; fruit-major for repeated measures."""
        if self.protocol == "destructive":
            return self.times.copy(), None
        G = int(self.fruit_count)
        return np.tile(self.times, G), np.repeat(np.arange(G), self.n)


@dataclass(frozen=True)
class Dataset:
    time: np.ndarray
    y: np.ndarray
    fruit: np.ndarray | None = None

    def __len__(self):
        return self.y.size

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "fruit", "y"])
        fruit = [""] * len(self) if self.fruit is None else self.fruit.tolist()
        for t, g, y in zip(self.time.tolist(), fruit, self.y.tolist()):
            w.writerow([repr(t), g, repr(y)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Dataset":
        rows = list(csv.DictReader(io.StringIO(text)))
        if rows and set(rows[0]) != {"time", "fruit", "y"}:
            raise ConfigError("dataset CSV must have header time,fruit,y")
        fruit = [r["fruit"] for r in rows]
        return cls(np.array([float(r["time"]) for r in rows]),
                   np.array([float(r["y"]) for r in rows]),
                   None if all(f == "" for f in fruit) else np.array([int(f) for f in fruit]))


def check_protocol(spec: GrowthModelSpec, design: TimeDesign) -> None:
    if spec.fruit_count:
        if design.protocol != "repeated_measures" or design.fruit_count != spec.fruit_count:
            raise ConfigError("models with fruit effects need a repeated_measures design "
                              "with the same fruit_count")
    elif design.protocol != "destructive":
        raise ConfigError("repeated_measures designs need a model with fruit effects")
    if design.n and design.times[-1] > spec.t_max:
        raise ConfigError(f"design times exceed the model horizon {spec.t_max}")


def simulate_dataset(spec: GrowthModelSpec, design: TimeDesign, params: ParamVector,
                     effects: EffectsVector, rng: np.random.Generator) -> Dataset:
    """Mean curve plus ``N(0, sigma_e^2)`` noise on every row (no truncation)."""
    check_protocol(spec, design)
    effects.check(spec)
    model = GrowthModel(spec)
    t, fruit = design.row_layout()
    mu = model.mean(params.values, effects.flat(), model.rows(t, fruit))
    y = mu + params.natural("log_sigma_e") * rng.standard_normal(t.size)
    return Dataset(t, y, fruit)
