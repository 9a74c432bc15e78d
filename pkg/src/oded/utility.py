"""Expected Kullback-Leibler utility of a sampling design."""

from __future__ import annotations

import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EstimationError, EvaluationError
from .growth_models import GrowthModelSpec
from .inference import LaplaceSettings, as_model, laplace_block
from .priors import GaussianApprox, PriorSpec, prior_moments
from .simulate import TimeDesign, check_protocol

log = logging.getLogger(__name__)

# samples per inference block; fixed so results never depend on the worker count
BLOCK_SIZE = 16
FAILURE_WARN_RATE = 0.05
MAX_REJECTIONS = 1000


@dataclass
class UtilityEstimate:
    estimate: float
    std_error: float
    L: int
    failures: int = 0
    rejections: int = 0
    per_sample: np.ndarray | None = None

    def as_dict(self) -> dict:
        return {"estimate": self.estimate, "std_error": self.std_error, "L": self.L,
                "failures": self.failures, "rejections": self.rejections}


def kld_mvn(prior: GaussianApprox, post: GaussianApprox) -> float:
    """KL(post || prior) between two multivariate Normals."""
    if prior.dim != post.dim:
        raise ConfigError(f"dimension mismatch: {prior.dim} vs {post.dim}")
    return float(kld_mvn_batch(prior, post.mean[None], post.cov[None])[0])


def kld_mvn_batch(prior: GaussianApprox, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """KL divergences of many posteriors (B, M), (B, M, M) from one prior."""
    M = prior.dim
    if M == 0:
        return np.zeros(means.shape[0])
    try:
        L0 = np.linalg.cholesky(prior.cov)
        L1 = np.linalg.cholesky(covs)
    except np.linalg.LinAlgError:
        raise EvaluationError("covariance is not positive definite") from None
    # Sigma0^-1 via triangular solves; no explicit inverse of a posterior
    L0inv = np.linalg.solve(L0, np.eye(M))
    W = L0inv @ L1                                  # L0^-1 L1
    trace = np.sum(W * W, axis=(-2, -1))
    diff = L0inv @ (prior.mean - means)[..., None]
    quad = np.sum(diff[..., 0] ** 2, axis=-1)
    logdet1 = 2 * np.sum(np.log(np.diagonal(L1, axis1=-2, axis2=-1)), axis=-1)
    logdet0 = 2 * np.sum(np.log(np.diag(L0)))
    return 0.5 * (trace + quad - M - (logdet1 - logdet0))


def _sample_rng(seed: int, l: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(l,)))


def _draw_theta(prior: PriorSpec, model, rng):
    """Prior draw of theta; two-phase capacities must satisfy lambda2 > lambda1."""
    names = model.theta_names
    d = len(names)
    rejected = 0
    while True:
        theta = prior.means + prior.sds * rng.standard_normal(d)
        if "log_lambda2" not in names or theta[names.index("log_lambda2")] > theta[names.index("log_lambda1")]:
            return theta, rejected
        rejected += 1
        if rejected > MAX_REJECTIONS:
            raise ConfigError("prior rarely satisfies lambda2 > lambda1")


def _block_utilities(model, prior, design_times, fruit, settings, seed, samples):
    """Per-sample KL utilities (NaN on failure) and rejection counts for one block."""
    rows = model.rows(design_times, fruit)
    d, M = model.theta_dim, model.effect_dim
    B = len(samples)
    Y = np.empty((B, rows.n))
    Z = np.empty((B, settings.E, M))
    starts = np.empty((B, settings.restarts, d))
    scales = prior.effect_scales(model.effect_groups)
    rejections = 0
    for k, l in enumerate(samples):
        rng = _sample_rng(seed, l)
        theta, rej = _draw_theta(prior, model, rng)
        rejections += rej
        b = scales * rng.standard_normal(M)
        mu = model.mean(theta, b, rows)
        Y[k] = mu + model.sigma_e(theta) * rng.standard_normal(rows.n)
        Z[k] = rng.standard_normal((settings.E, M))
        starts[k, 0] = prior.means
        starts[k, 1:] = prior.means + prior.sds * rng.standard_normal((settings.restarts - 1, d))
    post = laplace_block(model, prior, rows, Y, Z, starts, settings)
    pm = prior_moments(prior, model)
    means = np.concatenate([post.theta_mean, post.b_mean], axis=1)
    covs = np.zeros((B, d + M, d + M))
    covs[:, :d, :d] = post.theta_cov
    covs[:, d:, d:] = post.b_cov
    util = np.full(B, np.nan)
    ok = post.ok & np.all(np.isfinite(means), axis=1) & np.all(np.isfinite(covs), axis=(1, 2))
    if ok.any():
        try:
            util[ok] = kld_mvn_batch(pm, means[ok], covs[ok])
        except EvaluationError:
            for k in np.flatnonzero(ok):
                try:
                    util[k] = kld_mvn_batch(pm, means[k:k + 1], covs[k:k + 1])[0]
                except EvaluationError:
                    pass
    return util, rejections


def _block_task(args):
    spec, prior, times, fruit, settings, seed, samples = args
    return _block_utilities(as_model(spec), prior, times, fruit, settings, seed, samples)


def default_workers() -> int:
    return int(os.environ.get("ODED_WORKERS", "1") or 1)


def expected_utility(design: TimeDesign, spec, prior: PriorSpec, settings: LaplaceSettings | None = None,
                     L: int = 1000, seed: int = 0, workers: int | None = None,
                     keep_samples: bool = False) -> UtilityEstimate:
    """Monte Carlo estimate of the expected KL utility of ``design``.

    Sample ``l`` draws everything from the substream ``(seed, l)``; blocks of
    samples may run on any number of worker processes without changing the
    result.  Samples whose inference fails are dropped and counted.
    """
    if L < 2:
        raise ConfigError("L must be >= 2")
    settings = settings or LaplaceSettings()
    model = as_model(spec)
    prior.check(model)
    if isinstance(spec, GrowthModelSpec):
        check_protocol(spec, design)
    times, fruit = design.row_layout()
    blocks = [range(i, min(i + BLOCK_SIZE, L)) for i in range(0, L, BLOCK_SIZE)]
    workers = default_workers() if workers is None else workers
    tasks = [(spec if isinstance(spec, GrowthModelSpec) else model, prior, times, fruit,
              settings, seed, list(b)) for b in blocks]
    if workers > 1 and len(blocks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_block_task, tasks))
    else:
        results = [_block_utilities(model, prior, times, fruit, settings, seed, list(b)) for b in blocks]
    util = np.concatenate([r[0] for r in results])
    rejections = sum(r[1] for r in results)
    good = util[np.isfinite(util)]
    failures = L - good.size
    if good.size == 0:
        raise EstimationError(f"all {L} inner inferences failed")
    if failures > FAILURE_WARN_RATE * L:
        warnings.warn(f"{failures} of {L} inner inferences failed and were dropped", RuntimeWarning)
    est = math.fsum(good.tolist()) / good.size
    se = float(np.sqrt(math.fsum(((good - est) ** 2).tolist()) / (good.size - 1) / good.size)) \
        if good.size > 1 else float("inf")
    return UtilityEstimate(float(est), se, L, int(failures), int(rejections),
                           util if keep_samples else None)
