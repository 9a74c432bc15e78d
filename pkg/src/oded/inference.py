"""Two-stage Laplace approximation with a Monte Carlo marginal likelihood.

Stage one finds the mode and curvature of ``log p(y | theta) + log p(theta)``
where the random effects are integrated out by averaging the conditional
likelihood over ``E`` fixed standard-normal draws scaled by the current random
effect sds (common random numbers keep the objective deterministic).  Stage two
does the same for ``log p(y | theta*, b) + log p(b | sd(theta*))``.

All heavy lifting runs on *blocks* of independent problems at once: objective
values for every problem, stencil point and Monte Carlo draw are computed in a
single broadcast.  A problem's trajectory depends only on its own inputs, so
results do not depend on how problems are grouped into blocks.
"""

from __future__ import annotations

import logging
from functools import lru_cache
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .errors import ConfigError, EvaluationError, InferenceError
from .growth_models import EffectsVector, GrowthModel, GrowthModelSpec, ParamVector
from .priors import LOG_2PI, GaussianApprox, PriorSpec, log_prior_batch

log = logging.getLogger(__name__)

# elements per broadcast chunk (float64); bounds peak memory of objective calls
CHUNK_ELEMENTS = 2_000_000
# elements per fused Monte Carlo kernel call; sized to stay in cache
KERNEL_ELEMENTS = 40_000
LINE_SEARCH_STEPS = 2.0 ** -np.arange(12)


@dataclass(frozen=True)
class LaplaceSettings:
    restarts: int = 3
    max_iter: int = 50
    tol: float = 1e-8
    h: float = 1e-4
    spd_floor: float = 1e-8
    E: int = 100
    method: str = "newton"

    def __post_init__(self):
        if self.restarts < 1 or self.max_iter < 1 or self.E < 1:
            raise ConfigError("restarts, max_iter and E must be >= 1")
        if not (self.tol > 0 and self.h > 0 and self.spd_floor > 0):
            raise ConfigError("tol, h and spd_floor must be positive")
        if self.method not in ("newton", "nelder-mead"):
            raise ConfigError("method must be 'newton' or 'nelder-mead'")


@dataclass(frozen=True)
class LaplaceApprox(GaussianApprox):
    """Gaussian approximation plus diagnostics of how it was obtained."""

    log_density: float = float("nan")
    repaired: bool = False
    converged: bool = True
    restarts_used: int = 0


def as_model(spec):
    """Wrap a :class:`GrowthModelSpec`; pass any other model object through."""
    return GrowthModel(spec) if isinstance(spec, GrowthModelSpec) else spec


# --------------------------------------------------------------------------
# finite differences and SPD repair

def _steps(x, h):
    return h * (1.0 + np.abs(x))


@lru_cache(maxsize=64)
def _stencil_template(d: int) -> np.ndarray:
    """Unit offsets (S, d) in stencil order."""
    eye = np.eye(d)
    rows = [np.zeros((1, d)), np.stack([eye, -eye], axis=1).reshape(2 * d, d)]
    if d > 1:
        i, j = np.triu_indices(d, 1)
        ei, ej = eye[i], eye[j]
        rows.append(np.stack([ei + ej, ei - ej, -ei + ej, -ei - ej], axis=1).reshape(-1, d))
    out = np.concatenate(rows)
    out.flags.writeable = False
    return out


def stencil_points(x: np.ndarray, h: float) -> np.ndarray:
    """Central-difference stencil around each row of ``x`` (B, d) -> (B, S, d).

    Order: centre, ``+h_i``/``-h_i`` pairs, then the four corners of each
    ``(i, j)`` pair with ``i < j``; ``S = 1 + 2 d^2``.
    """
    x = np.atleast_2d(x)
    return x[:, None, :] + _stencil_template(x.shape[1])[None] * _steps(x, h)[:, None, :]


def stencil_derivatives(fvals: np.ndarray, x: np.ndarray, h: float):
    """Gradient (B, d) and Hessian (B, d, d) from stencil values (B, S)."""
    x = np.atleast_2d(x)
    B, d = x.shape
    hs = _steps(x, h)
    f0 = fvals[:, 0]
    pm = fvals[:, 1:1 + 2 * d].reshape(B, d, 2)
    grad = (pm[..., 0] - pm[..., 1]) / (2 * hs)
    H = np.zeros((B, d, d))
    idx = np.arange(d)
    H[:, idx, idx] = (pm[..., 0] - 2 * f0[:, None] + pm[..., 1]) / hs ** 2
    if d > 1:
        i, j = np.triu_indices(d, 1)
        c = fvals[:, 1 + 2 * d:].reshape(B, -1, 4)
        off = (c[..., 0] - c[..., 1] - c[..., 2] + c[..., 3]) / (4 * hs[:, i] * hs[:, j])
        H[:, i, j] = off
        H[:, j, i] = off
    return grad, H


def finite_diff_hessian(objective, x, h: float = 1e-4, vectorized: bool = False) -> np.ndarray:
    """Hessian of a scalar ``objective`` at ``x`` by central second differences.

    Uses step ``h * (1 + |x_i|)`` per coordinate.  With ``vectorized=True``
    the objective receives all stencil points as an (S, d) array.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    pts = stencil_points(x[None], h)[0]
    vals = np.asarray(objective(pts) if vectorized else [objective(p) for p in pts], dtype=float)
    if not np.all(np.isfinite(vals)):
        bad = int(np.argmax(~np.isfinite(vals)))
        coord = _stencil_coordinate(bad, x.size)
        raise EvaluationError(f"non-finite objective on the stencil of coordinate {coord}",
                              params={"x": x.tolist()})
    return stencil_derivatives(vals[None], x[None], h)[1][0]


def _stencil_coordinate(k: int, d: int):
    if k == 0:
        return "centre"
    if k <= 2 * d:
        return (k - 1) // 2
    i, j = np.triu_indices(d, 1)
    p = (k - 1 - 2 * d) // 4
    return (int(i[p]), int(j[p]))


def _spd_repair_batch(m: np.ndarray, floor: float):
    """Symmetrise and floor eigenvalues; returns (matrices, clipped flags, inverses)."""
    m = 0.5 * (m + np.swapaxes(m, -1, -2))
    w, V = np.linalg.eigh(m)
    clipped = np.any(w < floor, axis=-1)
    wc = np.maximum(w, floor)
    rebuilt = (V * wc[:, None, :]) @ np.swapaxes(V, -1, -2)
    rep = np.where(clipped[:, None, None], 0.5 * (rebuilt + np.swapaxes(rebuilt, -1, -2)), m)
    inv = (V / wc[:, None, :]) @ np.swapaxes(V, -1, -2)
    inv = 0.5 * (inv + np.swapaxes(inv, -1, -2))
    return rep, clipped, inv


def spd_repair(m, floor: float = 1e-8) -> np.ndarray:
    """Symmetrise ``m`` and raise every eigenvalue to at least ``floor``."""
    m = np.asarray(m, dtype=float)
    return _spd_repair_batch(m[None], floor)[0][0]


# --------------------------------------------------------------------------
# batched damped Newton

@dataclass
class NewtonResult:
    x: np.ndarray
    value: np.ndarray
    neg_hessian: np.ndarray
    cov: np.ndarray
    converged: np.ndarray
    repaired: np.ndarray
    iterations: np.ndarray = field(default=None)


def _newton_step(A, g):
    """Ascent direction from the negative Hessian with |eigenvalue| regularisation."""
    A = 0.5 * (A + np.swapaxes(A, -1, -2))
    w, V = np.linalg.eigh(A)
    aw = np.abs(w)
    aw = np.maximum(aw, 1e-10 * np.maximum(1.0, aw.max(axis=-1, keepdims=True)))
    proj = np.einsum("bdk,bd->bk", V, g) / aw
    return np.einsum("bdk,bk->bd", V, proj)


def newton_maximize(fun, x0: np.ndarray, settings: LaplaceSettings) -> NewtonResult:
    """Maximise ``B`` independent objectives simultaneously.

    ``fun(points, idx)`` returns values (b, S) for points (b, S, d) of the
    problems listed in ``idx``.  Convergence is declared when the Newton
    decrement ``g' A^-1 g / 2`` drops below ``tol``; the curvature returned is
    the stencil Hessian at that final iterate.
    """
    x = np.array(x0, dtype=float, copy=True)
    B, d = x.shape
    value = np.full(B, -np.inf)
    A_out = np.zeros((B, d, d))
    cov = np.zeros((B, d, d))
    converged = np.zeros(B, bool)
    failed = np.zeros(B, bool)
    repaired = np.zeros(B, bool)
    iters = np.zeros(B, int)
    h, tol = settings.h, settings.tol
    if d == 0:
        value[:] = fun(x[:, None, :], np.arange(B))[:, 0]
        converged[:] = np.isfinite(value)
        return NewtonResult(x, value, A_out, cov, converged, repaired, iters)
    for _ in range(settings.max_iter):
        act = np.flatnonzero(~converged & ~failed)
        if act.size == 0:
            break
        iters[act] += 1
        xa = x[act]
        fv = fun(stencil_points(xa, h), act)
        finite = np.all(np.isfinite(fv), axis=1)
        failed[act[~finite]] = True
        act, xa, fv = act[finite], xa[finite], fv[finite]
        if act.size == 0:
            continue
        g, H = stencil_derivatives(fv, xa, h)
        A = -H
        rep, clipped, inv = _spd_repair_batch(A, settings.spd_floor)
        step = np.where(clipped[:, None], _newton_step(A, g), np.einsum("bij,bj->bi", inv, g))
        dec = 0.5 * np.einsum("bi,bi->b", g, step)
        done = (dec < tol) & ~clipped
        f0 = fv[:, 0]

        def accept(sel):
            k = act[sel]
            converged[k] = True
            value[k] = f0[sel]
            A_out[k] = A[sel]
            cov[k] = inv[sel]
            repaired[k] = clipped[sel]

        accept(done)
        ls = ~done
        if not ls.any():
            continue
        k, xs, st, fs = act[ls], xa[ls], step[ls], f0[ls]
        cand = xs[:, None, :] + LINE_SEARCH_STEPS[None, :, None] * st[:, None, :]
        fc = fun(cand, k)
        slope = 2 * dec[ls]
        ok = fc >= fs[:, None] + 1e-4 * LINE_SEARCH_STEPS[None, :] * slope[:, None]
        ok &= np.isfinite(fc)
        first = np.argmax(ok, axis=1)
        has = ok.any(axis=1)
        best = np.argmax(np.where(np.isfinite(fc), fc, -np.inf), axis=1)
        improved = fc[np.arange(k.size), best] > fs
        pick = np.where(has, first, best)
        move = has | improved
        x[k[move]] = cand[np.flatnonzero(move), pick[move]]
        # no ascent possible: numerical optimum if the curvature is proper
        stalled = np.flatnonzero(~move)
        if stalled.size:
            sub = np.flatnonzero(ls)[stalled]
            proper = ~clipped[sub]
            accept_mask = np.zeros(act.size, bool)
            accept_mask[sub[proper]] = True
            accept(accept_mask)
            failed[act[sub[~proper]]] = True
    for k in np.flatnonzero(~converged):
        value[k] = -np.inf
    return NewtonResult(x, value, A_out, cov, converged, repaired, iters)


# --------------------------------------------------------------------------
# objectives

def _chunked(fun, points, idx, per_point):
    """Evaluate ``fun(points, idx)`` in chunks along the problem axis."""
    b, S = points.shape[:2]
    per_problem = max(1, S * per_point)
    step = max(1, CHUNK_ELEMENTS // per_problem)
    if step >= b:
        return fun(points, idx)
    return np.concatenate([fun(points[i:i + step], idx[i:i + step]) for i in range(0, b, step)])


def _normal_ll(y, mu, sigma):
    """Sum of Normal log-densities over the last axis; NaN means become -inf."""
    n = y.shape[-1]
    with np.errstate(invalid="ignore", over="ignore"):
        r = (y - mu) / sigma[..., None]
        ll = -0.5 * np.sum(r * r, axis=-1) - n * np.log(sigma) - 0.5 * n * LOG_2PI
    return np.where(np.isnan(ll), -np.inf, ll)


class ThetaObjective:
    """Log MC-marginal likelihood plus log prior for a block of datasets.

    ``Y`` (B, n) responses; ``Z`` (B, E, M_b) standard-normal draws.
    """

    def __init__(self, model, prior: PriorSpec, rows, Y, Z):
        self.model, self.prior, self.rows = model, prior, rows
        self.Y = np.atleast_2d(Y)
        self.M = model.effect_dim
        self.cache = None
        if self.M:
            self.Z = Z
            self.E = Z.shape[1]
            self.cache = model.mc_cache(Z, rows) if hasattr(model, "mc_sse") else None

    def _sse_fast(self, theta, idx):
        n = self.rows.n
        out = np.empty(theta.shape[:2] + (self.E,))
        step = max(1, KERNEL_ELEMENTS // (n * self.E))
        for j, k in enumerate(idx):
            cache = {name: v[k] for name, v in self.cache.items()}
            for s in range(0, theta.shape[1], step):
                out[j, s:s + step] = self.model.mc_sse(theta[j, s:s + step], cache, self.Y[k], self.rows)
        return out

    def loglik(self, theta, idx):
        model, rows = self.model, self.rows
        if not self.M:
            mu = model.mean(theta, np.zeros(theta.shape[:-1] + (0,)), rows)
            return _normal_ll(self.Y[idx][:, None, :], mu, model.sigma_e(theta))
        if self.cache is not None:
            sse = self._sse_fast(theta, idx)
            sig = model.sigma_e(theta)[..., None]
            n = rows.n
            with np.errstate(invalid="ignore", over="ignore"):
                ll = -0.5 * sse / (sig * sig) - n * np.log(sig) - 0.5 * n * LOG_2PI
            ll = np.where(np.isnan(ll), -np.inf, ll)
        else:
            b = model.effect_sd(theta)[:, :, None, :] * self.Z[idx][:, None]
            mu = model.mean(theta[:, :, None, :], b, rows)
            ll = _normal_ll(self.Y[idx][:, None, None, :], mu, model.sigma_e(theta)[..., None])
        with np.errstate(divide="ignore"):
            return logsumexp(ll, axis=-1) - np.log(self.E)

    def __call__(self, theta, idx):
        if self.cache is not None:
            ll = self.loglik(theta, idx)
        else:
            per_point = self.rows.n * (self.E if self.M else 1)
            ll = _chunked(self.loglik, theta, idx, per_point)
        return ll + log_prior_batch(self.prior, theta)


class EffectsObjective:
    """``log p(y | theta*, b) + log p(b | sd(theta*))`` for a block of datasets."""

    def __init__(self, model, rows, Y, theta_star):
        self.model, self.rows = model, rows
        self.Y = np.atleast_2d(Y)
        self.theta = np.atleast_2d(theta_star)
        self.sd = model.effect_sd(self.theta)

    def loglik(self, b, idx):
        theta = self.theta[idx][:, None, :]
        mu = self.model.mean(theta, b, self.rows)
        sig = np.broadcast_to(self.model.sigma_e(theta), b.shape[:-1])
        return _normal_ll(self.Y[idx][:, None, :], mu, sig)

    def __call__(self, b, idx):
        ll = _chunked(self.loglik, b, idx, self.rows.n + b.shape[-1])
        sd = self.sd[idx][:, None, :]
        z = b / sd
        lp = -0.5 * np.sum(z * z, axis=-1) - np.sum(np.log(sd), axis=-1) - 0.5 * LOG_2PI * b.shape[-1]
        return ll + lp


class _Standardized:
    """``fun`` seen through ``x = shift + scale * u`` with per-problem (B, d) arrays."""

    def __init__(self, fun, shift, scale):
        self.fun, self.shift, self.scale = fun, shift, scale

    def __call__(self, u, idx):
        return self.fun(self.shift[idx][:, None, :] + self.scale[idx][:, None, :] * u, idx)


def _maximize(fun, starts, settings: LaplaceSettings, shift=None, scale=None):
    """Newton (or simplex) from ``starts`` (B, R, d); later starts only for failures.

    With ``shift``/``scale`` (B, d) the search and its finite differences run
    on ``u = (x - shift) / scale``; results are mapped back, which leaves a
    Gaussian approximation unchanged.
    """
    B, R, d = starts.shape
    if scale is not None:
        fun = _Standardized(fun, shift, scale)
        starts = (starts - shift[:, None, :]) / scale[:, None, :]
    res = _run_method(fun, starts[:, 0], settings)
    used = np.zeros(B, int)
    for r in range(1, min(R, settings.restarts)):
        retry = np.flatnonzero(~res.converged)
        if retry.size == 0:
            break
        sub = _run_method(lambda p, i: fun(p, retry[i]), starts[retry, r], settings)
        for name in ("x", "value", "neg_hessian", "cov", "converged", "repaired", "iterations"):
            getattr(res, name)[retry] = getattr(sub, name)
        used[retry] = r
    if scale is not None:
        outer = scale[:, :, None] * scale[:, None, :]
        res.x = shift + scale * res.x
        res.cov = res.cov * outer
        res.neg_hessian = res.neg_hessian / outer
    return res, used


def _run_method(fun, x0, settings):
    if settings.method == "newton":
        return newton_maximize(fun, x0, settings)
    return _simplex_maximize(fun, x0, settings)


def _simplex_maximize(fun, x0, settings):
    """Per-problem Nelder-Mead followed by the stencil Hessian at the optimum."""
    B, d = x0.shape
    xs = np.array(x0, copy=True)
    ok = np.zeros(B, bool)
    for k in range(B):
        idx = np.array([k])
        neg = lambda v: -float(fun(v[None, None, :], idx)[0, 0])
        opt = minimize(neg, x0[k], method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": settings.tol,
                                "maxiter": 400 * max(d, 1), "maxfev": 800 * max(d, 1)})
        xs[k], ok[k] = opt.x, opt.success and np.isfinite(opt.fun)
    fv = fun(stencil_points(xs, settings.h), np.arange(B))
    g, H = stencil_derivatives(fv, xs, settings.h)
    rep, clipped, inv = _spd_repair_batch(-H, settings.spd_floor)
    ok &= np.all(np.isfinite(fv), axis=1)
    return NewtonResult(xs, np.where(ok, fv[:, 0], -np.inf), -H, inv, ok, clipped, np.ones(B, int))


# --------------------------------------------------------------------------
# block API used by the expected-utility estimator

@dataclass
class BlockPosterior:
    theta_mean: np.ndarray
    theta_cov: np.ndarray
    b_mean: np.ndarray
    b_cov: np.ndarray
    ok: np.ndarray
    repaired: np.ndarray


def laplace_block(model, prior: PriorSpec, rows, Y, Z, starts, settings: LaplaceSettings) -> BlockPosterior:
    """Both Laplace stages for B datasets sharing one design.

    ``starts`` (B, R, d) are the mode-search starting points; ``Z`` (B, E, M_b)
    the common random numbers of each dataset.
    """
    Y = np.atleast_2d(Y)
    B = Y.shape[0]
    d = starts.shape[-1]
    theta_res, _ = _maximize(ThetaObjective(model, prior, rows, Y, Z), starts, settings,
                             np.broadcast_to(prior.means, (B, d)), np.broadcast_to(prior.sds, (B, d)))
    M = model.effect_dim
    ok = theta_res.converged.copy()
    repaired = theta_res.repaired.copy()
    if M:
        eff = EffectsObjective(model, rows, Y, theta_res.x)
        b_res, _ = _maximize(eff, np.zeros((B, 1, M)), settings, np.zeros((B, M)), eff.sd)
        ok &= b_res.converged
        repaired |= b_res.repaired
        b_mean, b_cov = b_res.x, b_res.cov
    else:
        b_mean, b_cov = np.zeros((B, 0)), np.zeros((B, 0, 0))
    return BlockPosterior(theta_res.x, theta_res.cov, b_mean, b_cov, ok, repaired)


# --------------------------------------------------------------------------
# single-dataset API

def _rows_for(model, dataset):
    return model.rows(dataset.time, dataset.fruit)


def log_likelihood_conditional(dataset, spec, params: ParamVector, effects: EffectsVector | None) -> float:
    """Sum over rows of ``log N(y | mean, sigma_e^2)``."""
    model = as_model(spec)
    b = np.zeros(model.effect_dim) if effects is None else (
        effects.flat() if isinstance(effects, EffectsVector) else np.asarray(effects, float))
    theta = np.asarray(getattr(params, "values", params), dtype=float)
    rows = _rows_for(model, dataset)
    mu = model.mean(theta, b, rows)
    if not np.all(np.isfinite(mu)):
        raise EvaluationError("non-finite mean response",
                              params=getattr(params, "as_dict", lambda: theta.tolist())())
    return float(_normal_ll(np.asarray(dataset.y, float), mu, np.asarray(model.sigma_e(theta))))


def log_marginal_likelihood_mc(dataset, spec, params: ParamVector, settings: LaplaceSettings,
                               rng: np.random.Generator) -> float:
    """``log (1/E) sum_e p(y | theta, b_e)`` with ``b_e ~ N(0, sd(theta)^2)``."""
    model = as_model(spec)
    theta = np.asarray(getattr(params, "values", params), dtype=float)
    if model.effect_dim == 0:
        return log_likelihood_conditional(dataset, model, theta, None)
    Z = rng.standard_normal((1, settings.E, model.effect_dim))
    obj = ThetaObjective(model, _flat_prior(model), _rows_for(model, dataset),
                         np.asarray(dataset.y, float)[None], Z)
    val = float(obj.loglik(theta[None, None, :], np.array([0]))[0, 0])
    if val == -np.inf:
        log.warning("all %d Monte Carlo draws underflowed; marginal likelihood is -inf", settings.E)
    return val


def _flat_prior(model):
    from .priors import PriorEntry
    return PriorSpec(tuple(PriorEntry(n, "identity", 0.0, 1.0) for n in model.theta_names))


def _starts(prior: PriorSpec, settings: LaplaceSettings, rng, B=1):
    d = len(prior.entries)
    starts = np.empty((B, settings.restarts, d))
    starts[:, 0] = prior.means
    if settings.restarts > 1:
        starts[:, 1:] = prior.means + prior.sds * rng.standard_normal((B, settings.restarts - 1, d))
    return starts


def laplace_theta(dataset, spec, prior: PriorSpec, settings: LaplaceSettings,
                  rng: np.random.Generator) -> LaplaceApprox:
    """Mode and inverse negative Hessian of the fixed-effect posterior."""
    model = as_model(spec)
    prior.check(model)
    Z = rng.standard_normal((1, settings.E, model.effect_dim))
    starts = _starts(prior, settings, rng)
    obj = ThetaObjective(model, prior, _rows_for(model, dataset), np.asarray(dataset.y, float)[None], Z)
    res, used = _maximize(obj, starts, settings, prior.means[None], prior.sds[None])
    if not res.converged[0]:
        raise InferenceError("mode search did not converge after all restarts", best=res.x[0])
    return LaplaceApprox(res.x[0], res.cov[0], log_density=float(res.value[0]),
                         repaired=bool(res.repaired[0]), restarts_used=int(used[0]))


def laplace_b_given_theta(dataset, spec, theta_star, settings: LaplaceSettings) -> LaplaceApprox:
    """Mode and curvature of the random effects with theta fixed at ``theta_star``."""
    model = as_model(spec)
    if isinstance(theta_star, ParamVector):
        theta_star = theta_star.values
    elif isinstance(theta_star, GaussianApprox):
        theta_star = theta_star.mean
    theta = np.asarray(theta_star, float)
    M = model.effect_dim
    if M == 0:
        return LaplaceApprox(np.zeros(0), np.zeros((0, 0)))
    obj = EffectsObjective(model, _rows_for(model, dataset), np.asarray(dataset.y, float)[None], theta[None])
    res, _ = _maximize(obj, np.zeros((1, 1, M)), settings, np.zeros((1, M)), obj.sd)
    if not res.converged[0]:
        raise InferenceError("random-effect mode search did not converge", best=res.x[0])
    return LaplaceApprox(res.x[0], res.cov[0], log_density=float(res.value[0]),
                         repaired=bool(res.repaired[0]))


def joint_posterior(theta_post: GaussianApprox, b_post: GaussianApprox) -> GaussianApprox:
    """Concatenated means and block-diagonal covariance (zero cross-blocks)."""
    d, m = theta_post.dim, b_post.dim
    cov = np.zeros((d + m, d + m))
    cov[:d, :d] = theta_post.cov
    cov[d:, d:] = b_post.cov
    return GaussianApprox(np.concatenate([theta_post.mean, b_post.mean]), cov)
