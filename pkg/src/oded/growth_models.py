"""Growth laws with optional polynomial-spline time warps.

Every model is a closed-form solution of ``dy/dt = r * y * f(y) * B'(t)``
(``B'(t) = 1`` for the base laws).  The flexible variants replace the time
argument of the base solution by the warp ``B(t)``.

Two layers live here:

* scalar helpers (:func:`spline_B`, :func:`mean_response`, :func:`ode_rhs`)
  working on :class:`ParamVector` / :class:`EffectsVector`;
* :class:`GrowthModel`, a vectorised engine that evaluates the mean for whole
  stacks of parameter vectors at once.  Inference and simulation go through it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DomainError, EvaluationError

KINDS = (
    "Gompertz",
    "Logistic",
    "DoubleGompertz",
    "FlexGompertz",
    "FlexLogistic",
    "FlexDoubleGompertz",
    "Richards",
    "Weibull",
)
FLEXIBLE = {"FlexGompertz", "FlexLogistic", "FlexDoubleGompertz"}
TWO_PHASE = {"DoubleGompertz", "FlexDoubleGompertz"}
PHASE2_EXPONENTS = ("as_printed", "time_shifted")


def equispaced_knots(K: int, t_max: float) -> tuple[float, ...]:
    """Interior knots ``k * T / (K + 1)`` for ``k = 1..K``."""
    return tuple(k * t_max / (K + 1) for k in range(1, K + 1))


@dataclass(frozen=True)
class GrowthModelSpec:
    kind: str
    t_max: float
    y0: float = 0.01
    knots: tuple[float, ...] = ()
    knots2: tuple[float, ...] = ()
    richards_shape: float = 2.0
    weibull_shape: float = 2.0
    fruit_count: int | None = None
    phase2_exponent: str = "as_printed"

    def __post_init__(self):
        object.__setattr__(self, "knots", tuple(float(k) for k in self.knots))
        object.__setattr__(self, "knots2", tuple(float(k) for k in self.knots2))
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if not self.t_max > 0:
            raise ConfigError("t_max must be positive")
        if not self.y0 > 0:
            raise ConfigError("y0 must be positive")
        if not (self.richards_shape > 0 and self.weibull_shape > 0):
            raise ConfigError("shape constants must be positive")
        if self.fruit_count is not None and int(self.fruit_count) < 1:
            raise ConfigError("fruit_count must be >= 1")
        if self.phase2_exponent not in PHASE2_EXPONENTS:
            raise ConfigError(f"phase2_exponent must be one of {PHASE2_EXPONENTS}")
        if self.kind not in FLEXIBLE and (self.knots or self.knots2):
            raise ConfigError(f"{self.kind} takes no knots")
        if self.kind != "FlexDoubleGompertz" and self.knots2:
            raise ConfigError("knots2 is only used by FlexDoubleGompertz")
        for name in ("knots", "knots2"):
            tau = np.asarray(getattr(self, name))
            if tau.size and (np.any(np.diff(tau) <= 0) or tau[0] <= 0 or tau[-1] >= self.t_max):
                raise ConfigError(f"{name} must be strictly increasing inside (0, t_max)")

    @classmethod
    def with_knot_counts(cls, kind: str, t_max: float, K: int = 0, K2: int = 0, **kw):
        """Build a spec with equally spaced interior knots."""
        if K < 0 or K2 < 0:
            raise ConfigError("knot counts must be non-negative")
        return cls(kind=kind, t_max=t_max, knots=equispaced_knots(K, t_max),
                   knots2=equispaced_knots(K2, t_max), **kw)

    @property
    def K(self) -> int:
        return len(self.knots)

    @property
    def K2(self) -> int:
        return len(self.knots2)

    @property
    def flexible(self) -> bool:
        return self.kind in FLEXIBLE

    @property
    def two_phase(self) -> bool:
        return self.kind in TWO_PHASE

    @property
    def theta_names(self) -> tuple[str, ...]:
        if self.kind == "FlexDoubleGompertz":
            names = ["log_r", "log_lambda1", "log_lambda2", "log_eta",
                     "beta01", "beta11", "beta02", "beta12",
                     "log_sigma_e", "log_sigma_b1", "log_sigma_b2"]
        elif self.kind == "DoubleGompertz":
            names = ["log_r", "log_lambda1", "log_lambda2", "log_eta", "log_sigma_e"]
        elif self.flexible:
            names = ["log_r", "log_lambda", "beta0", "beta1", "log_sigma_e", "log_sigma_b"]
        else:
            names = ["log_r", "log_lambda", "log_sigma_e"]
        if self.fruit_count:
            names.append("log_sigma_bg")
        return tuple(names)

    @property
    def effect_groups(self) -> tuple[tuple[str, int, str], ...]:
        """``(group, size, sd parameter name)`` for every random-effect block."""
        groups = []
        if self.kind == "FlexDoubleGompertz":
            groups += [("spline1", self.K, "log_sigma_b1"), ("spline2", self.K2, "log_sigma_b2")]
        elif self.flexible:
            groups.append(("spline", self.K, "log_sigma_b"))
        if self.fruit_count:
            groups.append(("fruit", int(self.fruit_count), "log_sigma_bg"))
        return tuple(groups)

    @property
    def effect_dim(self) -> int:
        return sum(size for _, size, _ in self.effect_groups)


@dataclass(frozen=True)
class ParamVector:
    """Fixed-effect vector on the unconstrained scale, addressable by name."""

    names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        if vals.shape != (len(self.names),):
            raise ConfigError(f"expected {len(self.names)} values, got {vals.size}")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_mapping(cls, spec: GrowthModelSpec, mapping: Mapping[str, float]):
        missing = set(spec.theta_names) - set(mapping)
        extra = set(mapping) - set(spec.theta_names)
        if missing or extra:
            raise ConfigError(f"parameter mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        return cls(spec.theta_names, np.array([mapping[n] for n in spec.theta_names], float))

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def natural(self, name: str) -> float:
        """Value on the natural scale (``exp`` of ``log_*`` entries)."""
        v = self[name]
        return float(np.exp(v)) if name.startswith("log_") else v

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))


@dataclass(frozen=True)
class EffectsVector:
    b_spline: np.ndarray = field(default_factory=lambda: np.zeros(0))
    b_spline2: np.ndarray = field(default_factory=lambda: np.zeros(0))
    b_fruit: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        for name in ("b_spline", "b_spline2", "b_fruit"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"{name} must be finite")
            object.__setattr__(self, name, arr)

    @classmethod
    def zeros(cls, spec: GrowthModelSpec):
        return cls.from_flat(spec, np.zeros(spec.effect_dim))

    @classmethod
    def from_flat(cls, spec: GrowthModelSpec, flat) -> "EffectsVector":
        flat = np.asarray(flat, dtype=float).reshape(-1)
        if flat.size != spec.effect_dim:
            raise ConfigError(f"expected {spec.effect_dim} random effects, got {flat.size}")
        parts, i = {}, 0
        for group, size, _ in spec.effect_groups:
            parts[group] = flat[i:i + size]
            i += size
        return cls(b_spline=parts.get("spline", parts.get("spline1", np.zeros(0))),
                   b_spline2=parts.get("spline2", np.zeros(0)),
                   b_fruit=parts.get("fruit", np.zeros(0)))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.b_spline, self.b_spline2, self.b_fruit])

    def check(self, spec: GrowthModelSpec) -> None:
        want = (spec.K, spec.K2 if spec.two_phase else 0, int(spec.fruit_count or 0))
        got = (self.b_spline.size, self.b_spline2.size, self.b_fruit.size)
        if want != got:
            raise ConfigError(f"effect sizes {got} do not match spec {want}")


# --------------------------------------------------------------------------
# spline warp

def spline_basis(t, knots) -> np.ndarray:
    """``t**(k+1)/(k+1) - tau_k * t`` for k = 1..K; shape ``t.shape + (K,)``."""
    t = np.asarray(t, dtype=float)[..., None]
    tau = np.asarray(knots, dtype=float)
    k = np.arange(1, tau.size + 1, dtype=float)
    return t ** (k + 1) / (k + 1) - tau * t


def spline_basis_deriv(t, knots) -> np.ndarray:
    """``t**k - tau_k`` for k = 1..K; shape ``t.shape + (K,)``."""
    t = np.asarray(t, dtype=float)[..., None]
    tau = np.asarray(knots, dtype=float)
    k = np.arange(1, tau.size + 1, dtype=float)
    return t ** k - tau


def _check_spline_args(b, knots):
    b = np.asarray(b, dtype=float).reshape(-1)
    knots = np.asarray(knots, dtype=float).reshape(-1)
    if b.size != knots.size:
        raise ConfigError(f"{b.size} spline coefficients for {knots.size} knots")
    return b, knots


def spline_Bprime(t, beta0: float, beta1: float, b: Sequence[float], knots: Sequence[float]):
    """Rate multiplier ``beta0 + beta1 t + sum_k b_k (t^k - tau_k)``."""
    b, knots = _check_spline_args(b, knots)
    t = np.asarray(t, dtype=float)
    out = beta0 + beta1 * t + spline_basis_deriv(t, knots) @ b
    return float(out) if out.ndim == 0 else out


def spline_B(t, beta0: float, beta1: float, b: Sequence[float], knots: Sequence[float]):
    """Antiderivative of :func:`spline_Bprime` with ``B(0) = 0``."""
    b, knots = _check_spline_args(b, knots)
    t = np.asarray(t, dtype=float)
    out = beta0 * t + beta1 * t ** 2 / 2 + spline_basis(t, knots) @ b
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# vectorised engine

@dataclass(frozen=True)
class Rows:
    """Observation layout: one time (and optionally one fruit id) per row."""

    t: np.ndarray
    fruit: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.t.size


class GrowthModel:
    """Vectorised mean evaluation for one :class:`GrowthModelSpec`.

    ``theta`` arrays carry the parameters in ``spec.theta_names`` order along
    their last axis; every other axis broadcasts.
    """

    def __init__(self, spec: GrowthModelSpec):
        self.spec = spec
        self.theta_names = spec.theta_names
        self.index = {n: i for i, n in enumerate(self.theta_names)}
        self.effect_groups = spec.effect_groups
        self.effect_dim = spec.effect_dim
        self._slices = {}
        i = 0
        for group, size, _ in self.effect_groups:
            self._slices[group] = slice(i, i + size)
            i += size
        self._sd_cols = np.concatenate(
            [np.full(size, self.index[sd], dtype=int) for _, size, sd in self.effect_groups]
        ) if self.effect_groups else np.zeros(0, dtype=int)

    @property
    def theta_dim(self) -> int:
        return len(self.theta_names)

    def rows(self, t, fruit=None) -> Rows:
        t = np.asarray(t, dtype=float).reshape(-1)
        if fruit is not None:
            fruit = np.asarray(fruit, dtype=int).reshape(-1)
        if self.spec.fruit_count and fruit is None:
            raise ConfigError("models with fruit effects need a fruit id per row")
        return Rows(t, fruit)

    def effect_sd(self, theta: np.ndarray) -> np.ndarray:
        return np.exp(np.take(theta, self._sd_cols, axis=-1))

    def sigma_e(self, theta: np.ndarray) -> np.ndarray:
        return np.exp(theta[..., self.index["log_sigma_e"]])

    def _params(self, theta, extra_dims: int):
        pad = (slice(None),) * (theta.ndim - 1)
        def col(name):
            v = theta[pad + (self.index[name],)]
            return v.reshape(v.shape + (1,) * extra_dims)
        p = {"r": np.exp(col("log_r"))}
        if self.spec.two_phase:
            p["lam1"] = np.exp(col("log_lambda1"))
            p["lam2"] = np.exp(col("log_lambda2"))
            p["eta"] = np.exp(col("log_eta"))
        else:
            p["lam"] = np.exp(col("log_lambda"))
        if self.spec.kind == "FlexDoubleGompertz":
            for name in ("beta01", "beta11", "beta02", "beta12"):
                p[name] = col(name)
        elif self.spec.flexible:
            p["beta0"], p["beta1"] = col("beta0"), col("beta1")
        return p

    def _core(self, p, t, s1_t=0.0, s1_eta=0.0, s2_t=0.0, log_rmult=None):
        """Closed-form mean given the spline sums ``b . basis``."""
        spec, y0 = self.spec, self.spec.y0
        r = p["r"] if log_rmult is None else p["r"] * np.exp(log_rmult)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore", under="ignore"):
            if spec.kind in ("FlexGompertz", "FlexLogistic"):
                Bt = p["beta0"] * t + p["beta1"] * t * t / 2 + s1_t
            elif not spec.two_phase:
                Bt = t
            if spec.kind in ("Gompertz", "FlexGompertz"):
                lam = p["lam"]
                return lam * np.exp(-np.log(lam / y0) * np.exp(-r * Bt))
            if spec.kind in ("Logistic", "FlexLogistic"):
                lam = p["lam"]
                return lam * y0 / (y0 + (lam - y0) * np.exp(-r * Bt))
            if spec.kind == "Richards":
                lam, a = p["lam"], spec.richards_shape
                return lam / (1 + ((lam / y0) ** a - 1) * np.exp(-a * r * Bt)) ** (1 / a)
            if spec.kind == "Weibull":
                lam, a = p["lam"], spec.weibull_shape
                return lam - (lam - y0) * np.exp(-(r * Bt) ** a)
            # two-phase Gompertz
            lam1, lam2, eta = p["lam1"], p["lam2"], p["eta"]
            if spec.kind == "FlexDoubleGompertz":
                B1t = p["beta01"] * t + p["beta11"] * t * t / 2 + s1_t
                B1eta = p["beta01"] * eta + p["beta11"] * eta * eta / 2 + s1_eta
                if spec.phase2_exponent == "as_printed":
                    arg2 = p["beta02"] * t + p["beta12"] * t * t / 2 + s2_t - eta
                else:
                    u = t - eta
                    arg2 = p["beta02"] * u + p["beta12"] * u * u / 2 + s2_t
            else:
                B1t, B1eta, arg2 = t, eta, t - eta
            c1 = np.log(lam1 / y0)
            y1 = lam1 * np.exp(-c1 * np.exp(-r * B1t))
            y1eta = lam1 * np.exp(-c1 * np.exp(-r * B1eta))
            y2 = lam2 * np.exp(-np.log(lam2 / y1eta) * np.exp(-r * arg2))
            return np.where(t <= eta, y1, y2)

    def mean(self, theta, b, rows: Rows) -> np.ndarray:
        """Mean per row; ``theta`` (..., d), ``b`` (..., M_b) -> (..., n)."""
        theta = np.asarray(theta, dtype=float)
        b = np.asarray(b, dtype=float)
        p = self._params(theta, 1)
        t, spec = rows.t, self.spec
        kw = {}
        if spec.flexible:
            b1 = b[..., self._slices["spline1" if spec.two_phase else "spline"]]
            kw["s1_t"] = b1 @ spline_basis(t, spec.knots).T
            if spec.two_phase:
                eta = p["eta"]
                kw["s1_eta"] = np.sum(spline_basis(eta, spec.knots) * b1[..., None, :], axis=-1)
                b2 = b[..., self._slices["spline2"]]
                if spec.phase2_exponent == "time_shifted":
                    phi2 = spline_basis(t - eta, spec.knots2)
                    kw["s2_t"] = np.sum(phi2 * b2[..., None, :], axis=-1)
                else:
                    kw["s2_t"] = b2 @ spline_basis(t, spec.knots2).T
        if spec.fruit_count:
            kw["log_rmult"] = b[..., self._slices["fruit"]][..., rows.fruit]
        return self._core(p, t, **kw)

    # -- Monte Carlo fast path -------------------------------------------
    # Random effects are b = sd(theta) * z with z fixed, so every spline sum
    # b . basis(t) equals sd * (z . basis(t)); the z projections are cached.
    # Arrays use the layout (stencil point, row, draw) so that the innermost
    # loop runs over the E draws.

    def mc_cache(self, z: np.ndarray, rows: Rows) -> dict:
        """Projections of standard-normal draws ``z`` (B, E, M_b), each (B, n, E)."""
        spec, t = self.spec, rows.t
        cache = {}
        if spec.flexible:
            z1 = z[..., self._slices["spline1" if spec.two_phase else "spline"]]
            cache["z1"] = z1
            cache["p1"] = np.ascontiguousarray(np.swapaxes(z1 @ spline_basis(t, spec.knots).T, 1, 2))
            if spec.two_phase:
                z2 = z[..., self._slices["spline2"]]
                cache["z2"] = z2
                if spec.phase2_exponent == "as_printed":
                    cache["p2"] = np.ascontiguousarray(
                        np.swapaxes(z2 @ spline_basis(t, spec.knots2).T, 1, 2))
        if spec.fruit_count:
            cache["pg"] = np.ascontiguousarray(np.swapaxes(z[..., self._slices["fruit"]][..., rows.fruit], 1, 2))
        return cache

    def mc_sse(self, theta: np.ndarray, cache: dict, y: np.ndarray, rows: Rows) -> np.ndarray:
        """Residual sums of squares for one dataset and every draw.

        ``theta`` (S, d); ``cache`` holds one dataset's projections (n, E);
        ``y`` (n,).  Returns (S, E); NaN marks a non-finite mean.
        """
        spec = self.spec
        if spec.two_phase:
            mu = self._mc_mean_two_phase(theta, cache, rows)
            mu -= y[:, None]
            return np.einsum("sne,sne->se", mu, mu)
        col = {name: theta[:, i] for name, i in self.index.items()}
        t, y0 = rows.t, spec.y0
        S, n = theta.shape[0], t.size
        E = (cache["p1"] if spec.flexible else cache["pg"]).shape[-1]
        r, lam = np.exp(col["log_r"]), np.exp(col["log_lambda"])
        x = np.empty((S, n, E))
        with np.errstate(over="ignore", invalid="ignore", divide="ignore", under="ignore"):
            # x <- r * B(t) (times the fruit rate multiplier)
            if spec.flexible:
                np.multiply((r * np.exp(col["log_sigma_b"]))[:, None, None], cache["p1"], out=x)
                x += (r[:, None] * (col["beta0"][:, None] * t + col["beta1"][:, None] * t * t / 2))[:, :, None]
            else:
                x[:] = (r[:, None] * t)[:, :, None]
            if spec.fruit_count:
                mult = np.multiply(np.exp(col["log_sigma_bg"])[:, None, None], cache["pg"])
                np.exp(mult, out=mult)
                x *= mult
            # x <- mean / scale - y / scale, so that sse = scale^2 * sum(x^2)
            if spec.kind in ("Gompertz", "FlexGompertz"):
                np.negative(x, out=x)
                np.exp(x, out=x)
                x *= -np.log(lam / y0)[:, None, None]
                np.exp(x, out=x)
                x -= (y / lam[:, None])[:, :, None]
                scale = lam
            elif spec.kind in ("Logistic", "FlexLogistic"):
                np.negative(x, out=x)
                np.exp(x, out=x)
                x *= (lam - y0)[:, None, None]
                x += y0
                np.reciprocal(x, out=x)
                scale = lam * y0
                x -= (y / scale[:, None])[:, :, None]
            elif spec.kind == "Richards":
                a = spec.richards_shape
                x *= -a
                np.exp(x, out=x)
                x *= ((lam / y0) ** a - 1)[:, None, None]
                x += 1
                np.power(x, -1 / a, out=x)
                x -= (y / lam[:, None])[:, :, None]
                scale = lam
            else:  # Weibull
                np.power(x, spec.weibull_shape, out=x)
                np.negative(x, out=x)
                np.exp(x, out=x)
                scale = lam - y0
                x -= ((lam[:, None] - y) / scale[:, None])[:, :, None]
            np.square(x, out=x)
            return x.sum(axis=1) * (scale * scale)[:, None]

    def _mc_mean_two_phase(self, theta, cache, rows):
        spec = self.spec
        p = self._params(theta, 2)
        t = rows.t[:, None]
        kw = {}
        if spec.flexible:
            sd1 = np.exp(theta[:, self.index["log_sigma_b1"]])[:, None, None]
            sd2 = np.exp(theta[:, self.index["log_sigma_b2"]])[:, None, None]
            kw["s1_t"] = sd1 * cache["p1"]
            phi_eta = spline_basis(p["eta"][:, 0, 0], spec.knots)  # (S, K1)
            kw["s1_eta"] = sd1 * (phi_eta @ cache["z1"].T)[:, None, :]
            if spec.phase2_exponent == "as_printed":
                kw["s2_t"] = sd2 * cache["p2"]
            else:
                phi2 = spline_basis(t[:, 0] - p["eta"][:, :, 0], spec.knots2)  # (S, n, K2)
                kw["s2_t"] = sd2 * (phi2 @ cache["z2"].T)
        if spec.fruit_count:
            sdg = np.exp(theta[:, self.index["log_sigma_bg"]])[:, None, None]
            kw["log_rmult"] = sdg * cache["pg"]
        return self._core(p, t, **kw)


# --------------------------------------------------------------------------
# scalar API

def _check_params(spec, params: ParamVector):
    if tuple(params.names) != spec.theta_names:
        raise ConfigError(f"parameters {params.names} do not match {spec.theta_names}")
    if not np.all(np.isfinite(params.values)):
        raise ConfigError("parameters must be finite")


def mean_response(spec: GrowthModelSpec, params: ParamVector, effects: EffectsVector | None,
                  t, fruit: int | None = None):
    """Closed-form mean at time(s) ``t``.

    ``fruit`` selects the per-fruit rate ``r * exp(b_fruit[g])``; ``None``
    gives the population curve.
    """
    _check_params(spec, params)
    effects = EffectsVector.zeros(spec) if effects is None else effects
    effects.check(spec)
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(t_arr > spec.t_max) or not np.all(np.isfinite(t_arr)):
        raise DomainError(f"t must lie in [0, {spec.t_max}]")
    model = GrowthModel(spec)
    b = effects.flat().copy()
    if spec.fruit_count:
        if fruit is None:
            b[model._slices["fruit"]] = 0.0
            fruit = 0
        elif not 0 <= fruit < spec.fruit_count:
            raise ConfigError(f"fruit index {fruit} out of range")
    rows = Rows(t_arr.reshape(-1), None if not spec.fruit_count else np.full(t_arr.size, fruit))
    out = model.mean(params.values, b, rows)
    if not np.all(np.isfinite(out)):
        raise EvaluationError("non-finite mean response", params=params.as_dict())
    return float(out[0]) if t_arr.ndim == 0 else out.reshape(t_arr.shape)


def ode_rhs(spec: GrowthModelSpec, params: ParamVector, effects: EffectsVector | None,
            t: float, y: float, fruit: int | None = None) -> float:
    """Right-hand side of the growth ODE whose solution is :func:`mean_response`."""
    _check_params(spec, params)
    if not y > 0:
        raise DomainError("y must be positive")
    effects = EffectsVector.zeros(spec) if effects is None else effects
    effects.check(spec)
    r = params.natural("log_r")
    if spec.fruit_count and fruit is not None:
        r *= np.exp(effects.b_fruit[fruit])
    kind = spec.kind
    if kind in ("FlexGompertz", "FlexLogistic"):
        warp = spline_Bprime(t, params["beta0"], params["beta1"], effects.b_spline, spec.knots)
    else:
        warp = 1.0
    if kind in ("Gompertz", "FlexGompertz"):
        return r * y * np.log(params.natural("log_lambda") / y) * warp
    if kind in ("Logistic", "FlexLogistic"):
        return r * y * (1 - y / params.natural("log_lambda")) * warp
    if kind == "Richards":
        return r * y * (1 - (y / params.natural("log_lambda")) ** spec.richards_shape)
    if kind == "Weibull":
        a = spec.weibull_shape
        return (params.natural("log_lambda") - y) * a * r * (r * t) ** (a - 1)
    eta = params.natural("log_eta")
    if t <= eta:
        lam = params.natural("log_lambda1")
        if kind == "FlexDoubleGompertz":
            warp = spline_Bprime(t, params["beta01"], params["beta11"], effects.b_spline, spec.knots)
    else:
        lam = params.natural("log_lambda2")
        if kind == "FlexDoubleGompertz":
            u = t if spec.phase2_exponent == "as_printed" else t - eta
            warp = spline_Bprime(u, params["beta02"], params["beta12"], effects.b_spline2, spec.knots2)
    return r * y * np.log(lam / y) * warp
