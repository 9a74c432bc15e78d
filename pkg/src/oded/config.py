"""Run configuration: JSON blocks validated into dataclasses before any compute."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ConfigError
from .growth_models import KINDS, GrowthModelSpec
from .inference import LaplaceSettings
from .optimizer import SearchSettings
from .priors import (DRY_MATTER_FLEXIBILITY, FRUIT_WEIGHT_FLEXIBILITY, PRESETS, PriorEntry,
                     PriorSpec, preset_prior)
from .simulate import TimeDesign

FLEXIBILITY_TABLES = {"dry_matter_2021": DRY_MATTER_FLEXIBILITY, "fruit_weight": FRUIT_WEIGHT_FLEXIBILITY}
PRESET_DEFAULTS = {
    "dry_matter_2021": {"kind": "FlexGompertz", "t_max": 30.0, "y0": 0.01, "fruit_count": None,
                        "grid_step": 0.5},
    "fruit_weight": {"kind": "FlexDoubleGompertz", "t_max": 350.0, "y0": 1.0, "fruit_count": 5,
                     "grid_step": 5.0},
}


@dataclass
class ModelBlock:
    kind: str = None
    t_max: float = None
    y0: float | None = None
    flexibility: str | None = None
    sigma_b_bar: float | None = None
    sigma_b2_bar: float | None = None
    K: int | None = None
    K2: int | None = None
    richards_shape: float = 2.0
    weibull_shape: float = 2.0
    fruit_count: int | None = None
    phase2_exponent: str = "as_printed"


@dataclass
class PriorBlock:
    preset: str = "dry_matter_2021"
    # name -> [mean, sd] on the transformed scale
    entries: dict = field(default_factory=dict)


@dataclass
class DesignBlock:
    n: int | None = None
    times: list | None = None
    bounds: list | None = None
    protocol: str | None = None
    G: int | None = None


@dataclass
class ComputeBlock:
    L_search: int = 1000
    L_final: int = 20000
    E: int = 100
    seed: int = 0
    workers: int = 1
    restarts: int = 3
    max_iter: int = 50
    tol: float = 1e-8
    h: float = 1e-4
    spd_floor: float = 1e-8


@dataclass
class AlgorithmBlock:
    name: str = "ace"
    grid_step: float | None = None
    passes: int = 3
    Q: int = 20
    acceptance_reps: int = 2
    starts: int = 10
    lengthscale_divisor: float = 5.0
    nugget_floor: float = 1e-6


@dataclass
class RealizeBlock:
    n_curves: int = 10
    grid_points: int = 61
    mode: str = "fix_fixed_effects"


@dataclass
class EfficiencyBlock:
    # rows: {"label", "times"}; columns: {"label", "model", "prior", "reference_times"}
    designs: list = field(default_factory=list)
    dgms: list = field(default_factory=list)


@dataclass
class SimulateBlock:
    # fixed-effect values on the transformed scale; drawn from the prior when empty
    params: dict = field(default_factory=dict)


BLOCKS = {"model": ModelBlock, "prior": PriorBlock, "design": DesignBlock, "compute": ComputeBlock,
          "algorithm": AlgorithmBlock, "realize": RealizeBlock, "efficiency": EfficiencyBlock,
          "simulate": SimulateBlock}


def _block(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(where + '.' + k for k in unknown)}")
    return cls(**data)


@dataclass
class RunConfig:
    model: ModelBlock = field(default_factory=ModelBlock)
    prior: PriorBlock = field(default_factory=PriorBlock)
    design: DesignBlock = field(default_factory=DesignBlock)
    compute: ComputeBlock = field(default_factory=ComputeBlock)
    algorithm: AlgorithmBlock = field(default_factory=AlgorithmBlock)
    realize: RealizeBlock = field(default_factory=RealizeBlock)
    efficiency: EfficiencyBlock = field(default_factory=EfficiencyBlock)
    simulate: SimulateBlock = field(default_factory=SimulateBlock)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(data) - set(BLOCKS))
        if unknown:
            raise ConfigError(f"unknown config block(s) {unknown}")
        cfg = cls(**{name: _block(BLOCKS[name], data.get(name, {}), name) for name in BLOCKS})
        try:
            cfg.resolve()
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid configuration value: {exc}") from None
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    # -- resolution and validation ------------------------------------------

    def resolve(self) -> None:
        """Fill preset defaults in place and validate every block."""
        p, m = self.prior, self.model
        if p.preset not in PRESETS:
            raise ConfigError(f"unknown prior preset {p.preset!r}; expected one of {sorted(PRESETS)}")
        defaults = PRESET_DEFAULTS[p.preset]
        m.kind = defaults["kind"] if m.kind is None else m.kind
        m.t_max = defaults["t_max"] if m.t_max is None else float(m.t_max)
        m.y0 = defaults["y0"] if m.y0 is None else m.y0
        # fruit_count 0 switches fruit effects off explicitly
        m.fruit_count = defaults["fruit_count"] if m.fruit_count is None else m.fruit_count
        if m.kind not in KINDS:
            raise ConfigError(f"model.kind must be one of {KINDS}")
        if m.flexibility is not None:
            table = FLEXIBILITY_TABLES[p.preset]
            if m.flexibility not in table:
                raise ConfigError(f"model.flexibility must be one of {sorted(table)}")
            sb, K = table[m.flexibility]
            m.sigma_b_bar = sb if m.sigma_b_bar is None else m.sigma_b_bar
            m.K = K if m.K is None else m.K
            if p.preset == "fruit_weight":
                m.sigma_b2_bar = sb if m.sigma_b2_bar is None else m.sigma_b2_bar
                m.K2 = K if m.K2 is None else m.K2
        a = self.algorithm
        a.grid_step = defaults["grid_step"] if a.grid_step is None else a.grid_step
        d = self.design
        if d.bounds is None:
            d.bounds = [0.0, m.t_max]
        if d.protocol is None:
            d.protocol = "repeated_measures" if m.fruit_count else "destructive"
        if d.protocol == "repeated_measures" and d.G is None:
            d.G = m.fruit_count
        if d.times is not None:
            if d.n is None:
                d.n = len(d.times)
            elif d.n != len(d.times):
                raise ConfigError("design.n does not match design.times")
        # build everything once so errors surface before compute
        self.model_spec()
        self.prior_spec()
        self.laplace_settings()
        self.search_settings()
        if len(d.bounds) != 2 or not (0 <= d.bounds[0] < d.bounds[1] <= m.t_max):
            raise ConfigError(f"design.bounds must satisfy 0 <= lo < hi <= {m.t_max}")
        if d.n is not None and (not isinstance(d.n, int) or isinstance(d.n, bool) or d.n < 1):
            raise ConfigError("design.n must be a positive integer")
        if d.times is not None:
            self.design_template().with_times(d.times)
        if self.realize.n_curves < 1 or self.realize.grid_points < 2:
            raise ConfigError("realize needs n_curves >= 1 and grid_points >= 2")

    def require(self, *keys: str) -> None:
        for key in keys:
            block, name = key.split(".")
            if getattr(getattr(self, block), name) is None:
                raise ConfigError(f"missing required key {key}")

    def model_spec(self) -> GrowthModelSpec:
        m = self.model
        kw = dict(y0=m.y0, richards_shape=m.richards_shape, weibull_shape=m.weibull_shape,
                  fruit_count=m.fruit_count or None, phase2_exponent=m.phase2_exponent)
        if m.kind in ("FlexGompertz", "FlexLogistic", "FlexDoubleGompertz"):
            if m.K is None or m.sigma_b_bar is None:
                raise ConfigError("flexible models need model.flexibility or model.K and model.sigma_b_bar")
            K2 = (m.K2 if m.K2 is not None else m.K) if m.kind == "FlexDoubleGompertz" else 0
            return GrowthModelSpec.with_knot_counts(m.kind, m.t_max, K=m.K, K2=K2, **kw)
        return GrowthModelSpec(m.kind, m.t_max, **kw)

    def prior_spec(self, spec: GrowthModelSpec | None = None) -> PriorSpec:
        spec = spec or self.model_spec()
        m, p = self.model, self.prior
        if p.preset == "dry_matter_2021":
            scales = {} if m.sigma_b_bar is None else {"sigma_b_bar": m.sigma_b_bar}
        else:
            scales = {}
            if m.sigma_b_bar is not None:
                scales["sigma_b1_bar"] = m.sigma_b_bar
            if m.sigma_b2_bar is not None:
                scales["sigma_b2_bar"] = m.sigma_b2_bar
        prior = preset_prior(p.preset, spec, **scales)
        if p.entries:
            unknown = sorted(set(p.entries) - set(prior.names))
            if unknown:
                raise ConfigError(f"prior.entries names {unknown} are not parameters of {spec.kind}")
            try:
                overrides = {k: (float(v[0]), float(v[1])) for k, v in p.entries.items()}
            except (TypeError, ValueError, IndexError):
                raise ConfigError("prior.entries values must be [mean, sd]") from None
            prior = PriorSpec(tuple(PriorEntry(e.name, e.transform, *overrides.get(e.name, (e.mean, e.sd)))
                                    for e in prior.entries), prior.effect_sd)
        return prior

    def laplace_settings(self) -> LaplaceSettings:
        c = self.compute
        return LaplaceSettings(restarts=c.restarts, max_iter=c.max_iter, tol=c.tol, h=c.h,
                               spd_floor=c.spd_floor, E=c.E)

    def search_settings(self) -> SearchSettings:
        a, c = self.algorithm, self.compute
        return SearchSettings(algorithm=a.name, grid_step=a.grid_step, passes=a.passes, Q=a.Q,
                              acceptance_reps=a.acceptance_reps, starts=a.starts,
                              L_search=c.L_search, L_final=c.L_final, seed=c.seed,
                              lengthscale_divisor=a.lengthscale_divisor, nugget_floor=a.nugget_floor)

    def design_template(self) -> TimeDesign:
        d = self.design
        G = d.G if d.protocol == "repeated_measures" else None
        return TimeDesign(np.zeros(0), d.protocol, G, self.model.t_max)

    def build_design(self) -> TimeDesign:
        """The configured design: explicit times or ``n`` equispaced over the bounds."""
        self.require("design.n")
        d = self.design
        times = d.times if d.times is not None else np.linspace(d.bounds[0], d.bounds[1], d.n)
        return self.design_template().with_times(times)


def parse_override(text: str):
    """``block.key=value``; the value is JSON when it parses, else a string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) != 2 or not all(parts):
        raise ConfigError(f"override key {key!r} must look like block.key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return parts, value


def load_config(path: str, overrides=()) -> RunConfig:
    """Read a config (or a run manifest) and apply ``block.key=value`` overrides."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if isinstance(data, dict) and "config" in data and "subcommand" in data:
        data = data["config"]
    return apply_overrides(data, overrides)


def apply_overrides(data: dict, overrides=()) -> RunConfig:
    data = json.loads(json.dumps(data))
    for text in overrides:
        (block, key), value = parse_override(text)
        if block not in BLOCKS:
            raise ConfigError(f"unknown config block {block!r}")
        data.setdefault(block, {})
        if not isinstance(data[block], dict):
            raise ConfigError(f"{block} must be an object")
        data[block][key] = value
    return RunConfig.from_dict(data)
