"""Design search: grid coordinate exchange and emulator-based (approximate) exchange.

An *objective* is any callable ``objective(times, seed) -> (estimate, std_error)``
returning a noisy evaluation of a design given as a time vector.  Calls with
the same seed share random numbers, so comparisons under one seed are paired.
"""

from __future__ import annotations

import csv
import io
import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import ConfigError, EstimationError, OdedError
from .inference import LaplaceSettings
from .simulate import TimeDesign
from .utility import expected_utility

log = logging.getLogger(__name__)

ALGORITHMS = ("ce", "ace")
SCAN_POINTS = 1000
NUGGET_RETRIES = 3

# spawn-key tags keeping seed streams of different purposes disjoint
_TAG_START, _TAG_RUN, _TAG_FINAL, _TAG_EMULATOR, _TAG_ACCEPT = range(5)


def derive_seed(root: int, *key: int) -> int:
    """Independent 32-bit seed for the substream ``key`` of ``root``."""
    return int(np.random.SeedSequence(root, spawn_key=tuple(int(k) for k in key)).generate_state(1)[0])


@dataclass(frozen=True)
class SearchSettings:
    algorithm: str = "ace"
    grid_step: float = 0.5
    passes: int = 3
    Q: int = 20
    acceptance_reps: int = 2
    starts: int = 10
    L_search: int = 1000
    L_final: int = 20000
    seed: int = 0
    # emulator rules: lengthscale = range / divisor; nugget >= floor
    lengthscale_divisor: float = 5.0
    nugget_floor: float = 1e-6

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}")
        if not self.grid_step > 0:
            raise ConfigError("grid_step must be > 0")
        if self.Q < 5:
            raise ConfigError("Q must be >= 5")
        if self.starts < 1 or self.passes < 1 or self.acceptance_reps < 1:
            raise ConfigError("starts, passes and acceptance_reps must be >= 1")
        if self.L_search < 2 or self.L_final < self.L_search:
            raise ConfigError("need 2 <= L_search <= L_final")
        if not (self.lengthscale_divisor > 0 and self.nugget_floor > 0):
            raise ConfigError("emulator rules must be positive")


@dataclass(frozen=True)
class TraceRecord:
    step: int
    pass_: int
    coordinate: int
    time: float
    estimate: float
    std_error: float
    accepted: bool
    kind: str


TRACE_FIELDS = ("step", "pass", "coordinate", "time", "estimate", "std_error", "accepted", "kind")


@dataclass
class SearchTrace:
    """Append-only log of objective evaluations; ``step`` is a logical clock."""

    records: list = field(default_factory=list)

    def append(self, pass_, coordinate, time, estimate, std_error, accepted, kind) -> TraceRecord:
        rec = TraceRecord(len(self.records), int(pass_), int(coordinate), float(time),
                          float(estimate), float(std_error), bool(accepted), kind)
        self.records.append(rec)
        return rec

    def __len__(self):
        return len(self.records)

    def accepted(self) -> list[TraceRecord]:
        return [r for r in self.records if r.accepted]

    def to_csv(self, start: int | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("start",) + TRACE_FIELDS if start is not None else TRACE_FIELDS)
        for r in self.records:
            row = (r.step, r.pass_, r.coordinate, repr(r.time), repr(r.estimate),
                   repr(r.std_error), int(r.accepted), r.kind)
            w.writerow(((start,) + row) if start is not None else row)
        return buf.getvalue()


def _bounds(start: TimeDesign, bounds):
    if bounds is None:
        if start.t_max is None:
            raise ConfigError("search bounds unknown: give bounds or a design with t_max")
        bounds = (0.0, start.t_max)
    lo, hi = float(bounds[0]), float(bounds[1])
    if not (np.isfinite(lo) and np.isfinite(hi) and 0 <= lo < hi):
        raise ConfigError("bounds must satisfy 0 <= lo < hi")
    if start.n and (start.times[0] < lo or start.times[-1] > hi):
        raise ConfigError("start design lies outside the bounds")
    return lo, hi


def _safe_eval(objective, times, seed):
    try:
        est, se = objective(np.sort(times), seed)
    except OdedError as exc:
        log.info("objective failed at %s: %s", np.round(times, 6).tolist(), exc)
        return None
    if not np.isfinite(est):
        return None
    return float(est), float(se)


# --------------------------------------------------------------------------
# coordinate exchange on a grid

def coordinate_exchange(start: TimeDesign, objective, settings: SearchSettings, bounds=None):
    """Grid coordinate exchange under a single common seed.

    Every evaluation of one run uses the seed ``settings.seed``, so the
    objective is a fixed function during the search and accepted values never
    decrease.  Candidates equal in value to the incumbent are not accepted.
    """
    lo, hi = _bounds(start, bounds)
    grid = np.arange(lo, hi + settings.grid_step * 1e-9, settings.grid_step)
    grid = np.unique(np.clip(np.append(grid, hi), lo, hi))
    seed = settings.seed
    trace = SearchTrace()
    x = start.times.copy()
    first = _safe_eval(objective, x, seed)
    if first is None:
        raise EstimationError("objective failed at the start design")
    best, best_se = first
    trace.append(0, -1, np.nan, best, best_se, True, "start")
    for p in range(settings.passes):
        changed = False
        for i in range(x.size):
            current = x[i]
            for g in grid:
                if g == current:
                    continue
                cand = x.copy()
                cand[i] = g
                res = _safe_eval(objective, cand, seed)
                if res is None:
                    trace.append(p, i, g, np.nan, np.nan, False, "failed")
                    continue
                better = res[0] > best
                trace.append(p, i, g, res[0], res[1], better, "candidate")
                if better:
                    best, best_se = res
                    x = cand
                    changed = True
        if not changed:
            break
    return start.with_times(np.sort(x)), trace


# --------------------------------------------------------------------------
# Gaussian-process emulator

@dataclass(frozen=True)
class Emulator:
    xs: np.ndarray
    alpha: np.ndarray
    lengthscale: float
    y_mean: float
    y_scale: float
    nugget: float

    def predict(self, x) -> np.ndarray:
        """Predictive mean on the original scale of ``ys``."""
        x = np.asarray(x, dtype=float)
        if self.alpha.size == 0:
            return np.full(x.shape, self.y_mean)
        k = np.exp(-0.5 * ((x[..., None] - self.xs) / self.lengthscale) ** 2)
        return self.y_mean + self.y_scale * (k @ self.alpha)


class EmulatorError(EstimationError):
    pass


def gp_fit_1d(xs, ys, settings: SearchSettings | None = None, std_errors=None) -> Emulator:
    """Zero-mean squared-exponential GP on standardised ``ys``.

    Lengthscale ``(max - min) / divisor``; unit signal variance after
    standardisation (i.e. the sample variance of ``ys``); nugget the larger of
    the floor and the mean squared standard error on the standardised scale.
    """
    settings = settings or SearchSettings()
    xs = np.asarray(xs, dtype=float).reshape(-1).copy()
    ys = np.asarray(ys, dtype=float).reshape(-1)
    if xs.size != ys.size:
        raise ConfigError("xs and ys differ in length")
    if xs.size < 5:
        raise ConfigError("the emulator needs at least 5 points")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise ConfigError("emulator inputs must be finite")
    order = np.argsort(xs, kind="stable")
    dup = np.flatnonzero(np.diff(xs[order]) == 0)
    if dup.size:
        warnings.warn(f"{dup.size} duplicate emulator inputs perturbed by 1e-9", RuntimeWarning)
        for k in dup:
            xs[order[k + 1]] += 1e-9 * (k + 1)
    span = xs.max() - xs.min()
    ell = span / settings.lengthscale_divisor
    y_mean = float(np.mean(ys))
    y_scale = float(np.std(ys, ddof=1))
    if y_scale == 0:
        return Emulator(xs, np.zeros(0), ell, y_mean, 0.0, settings.nugget_floor)
    z = (ys - y_mean) / y_scale
    nugget = settings.nugget_floor
    if std_errors is not None:
        se = np.asarray(std_errors, dtype=float).reshape(-1)
        if se.size != xs.size or not np.all(np.isfinite(se)):
            raise ConfigError("emulator standard errors must be finite, one per input")
        nugget = max(nugget, float(np.mean(se ** 2)) / y_scale ** 2)
    K = np.exp(-0.5 * ((xs[:, None] - xs[None, :]) / ell) ** 2)
    for _ in range(NUGGET_RETRIES + 1):
        try:
            factor = cho_factor(K + nugget * np.eye(xs.size), lower=True)
            return Emulator(xs, cho_solve(factor, z), ell, y_mean, y_scale, nugget)
        except np.linalg.LinAlgError:
            nugget *= 10
    raise EmulatorError("emulator kernel matrix is singular")


def emulator_argmax(e: Emulator, bounds) -> float:
    """Maximiser of the predictive mean on a 1000-point scan (first index on ties)."""
    grid = np.linspace(float(bounds[0]), float(bounds[1]), SCAN_POINTS)
    return float(grid[int(np.argmax(e.predict(grid)))])


# --------------------------------------------------------------------------
# approximate coordinate exchange

def ace_optimize(start: TimeDesign, objective, settings: SearchSettings, bounds=None):
    """Emulator-based coordinate exchange.

    For each coordinate the objective is evaluated at ``Q`` equispaced times
    (disjoint seeds), a GP emulator picks a candidate, and incumbent and
    candidate are compared over ``acceptance_reps`` fresh common seeds.  The
    candidate wins only with a strictly higher mean.
    """
    lo, hi = _bounds(start, bounds)
    trace = SearchTrace()
    x = start.times.copy()
    qs = np.linspace(lo, hi, settings.Q)
    root = settings.seed
    for p in range(settings.passes):
        for i in range(x.size):
            xs, ys, ses = [], [], []
            for q, tq in enumerate(qs):
                cand = x.copy()
                cand[i] = tq
                res = _safe_eval(objective, cand, derive_seed(root, _TAG_EMULATOR, p, i, q))
                # a single surviving inner sample gives an infinite standard error
                if res is None or not np.isfinite(res[1]):
                    trace.append(p, i, tq, np.nan, np.nan, False, "failed")
                    continue
                trace.append(p, i, tq, res[0], res[1], False, "emulator")
                xs.append(tq)
                ys.append(res[0])
                ses.append(res[1])
            try:
                em = gp_fit_1d(xs, ys, settings, ses)
            except (EmulatorError, ConfigError) as exc:
                log.info("pass %d coordinate %d skipped: %s", p, i, exc)
                trace.append(p, i, x[i], np.nan, np.nan, False, "skipped")
                continue
            t_new = emulator_argmax(em, (lo, hi))
            cand = x.copy()
            cand[i] = t_new
            inc_vals, cand_vals = [], []
            for rep in range(settings.acceptance_reps):
                s = derive_seed(root, _TAG_ACCEPT, p, i, rep)
                a, b = _safe_eval(objective, x, s), _safe_eval(objective, cand, s)
                if a is None or b is None:
                    continue
                inc_vals.append(a[0])
                cand_vals.append(b[0])
            if not inc_vals:
                trace.append(p, i, t_new, np.nan, np.nan, False, "failed")
                continue
            inc_mean, cand_mean = float(np.mean(inc_vals)), float(np.mean(cand_vals))
            se = float(np.std(cand_vals, ddof=1) / np.sqrt(len(cand_vals))) if len(cand_vals) > 1 else np.nan
            accept = cand_mean > inc_mean
            trace.append(p, i, t_new, cand_mean, se, accept, "acceptance")
            if accept:
                x = cand
    return start.with_times(np.sort(x)), trace


# --------------------------------------------------------------------------
# expected-utility objective and multi-start protocol

@dataclass
class UtilityObjective:
    """Expected KL utility of the design ``template.with_times(times)``."""

    template: TimeDesign
    spec: object
    prior: object
    L: int
    laplace: LaplaceSettings = field(default_factory=LaplaceSettings)
    workers: int | None = None

    def __call__(self, times, seed):
        u = expected_utility(self.template.with_times(times), self.spec, self.prior,
                             self.laplace, L=self.L, seed=seed, workers=self.workers)
        return u.estimate, u.std_error


@dataclass
class StartResult:
    start: TimeDesign
    design: TimeDesign | None
    estimate: float
    std_error: float
    trace: SearchTrace | None
    error: str | None = None


@dataclass
class MultiStartResult:
    design: TimeDesign
    estimate: float
    std_error: float
    L: int
    starts: list

    def trace_csv(self) -> str:
        parts = [s.trace.to_csv(start=k) for k, s in enumerate(self.starts) if s.trace is not None]
        if not parts:
            return ",".join(("start",) + TRACE_FIELDS) + "\n"
        head = parts[0].splitlines(keepends=True)[0]
        return head + "".join("".join(p.splitlines(keepends=True)[1:]) for p in parts)


def random_design(template: TimeDesign, n: int, settings: SearchSettings, bounds, start: int) -> TimeDesign:
    """Uniform random start; snapped to the grid for coordinate exchange."""
    lo, hi = bounds
    rng = np.random.default_rng(np.random.SeedSequence(settings.seed, spawn_key=(_TAG_START, start)))
    t = rng.uniform(lo, hi, n)
    if settings.algorithm == "ce":
        t = np.clip(lo + np.round((t - lo) / settings.grid_step) * settings.grid_step, lo, hi)
    return template.with_times(t)


def multi_start(spec, prior, n: int, settings: SearchSettings, template: TimeDesign | None = None,
                laplace: LaplaceSettings | None = None, workers: int | None = None,
                objective=None, bounds=None) -> MultiStartResult:
    """Optimise from ``starts`` random designs and keep the best under a final
    common-seed evaluation with ``L_final`` samples.

    ``objective(times, seed, L)`` may replace the expected-utility objective.
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    template = template or TimeDesign(np.zeros(0), t_max=spec.t_max)
    bounds = bounds or (0.0, spec.t_max if hasattr(spec, "t_max") else template.t_max)
    laplace = laplace or LaplaceSettings()
    if objective is None:
        def objective(times, seed, L):
            return UtilityObjective(template, spec, prior, L, laplace, workers)(times, seed)
    search = coordinate_exchange if settings.algorithm == "ce" else ace_optimize
    final_seed = derive_seed(settings.seed, _TAG_FINAL)
    results = []
    for k in range(settings.starts):
        d0 = random_design(template, n, settings, bounds, k)
        run = replace(settings, seed=derive_seed(settings.seed, _TAG_RUN, k))
        try:
            d, trace = search(d0, lambda t, s: objective(t, s, settings.L_search), run, bounds)
            est, se = objective(d.times, final_seed, settings.L_final)
            if not np.isfinite(est):
                raise EstimationError("non-finite final evaluation")
            results.append(StartResult(d0, d, float(est), float(se), trace))
        except OdedError as exc:
            log.warning("start %d failed: %s", k, exc)
            results.append(StartResult(d0, None, float("nan"), float("nan"), None, str(exc)))
    ok = [k for k, r in enumerate(results) if r.design is not None]
    if not ok:
        raise EstimationError(f"all {settings.starts} starts failed")
    best = max(ok, key=lambda k: (results[k].estimate, -k))
    r = results[best]
    return MultiStartResult(r.design, r.estimate, r.std_error, settings.L_final, results)
