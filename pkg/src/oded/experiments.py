"""Study protocols shared by the acceptance tests and the scripts/ runners.

* :func:`dispersion_trend` optimises dry-matter designs at two flexibility
  levels over several seeds and compares their dispersion.
* :func:`efficiency_ordering` optimises designs under the flexible Gompertz
  model and scores them under alternative base models.

:func:`search_workload` counts the expected-utility samples such a run
consumes, so a run can be costed before it starts.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .evaluation import flexibility_dispersion, relative_efficiency
from .growth_models import GrowthModelSpec
from .inference import LaplaceSettings
from .optimizer import SearchSettings, derive_seed, multi_start
from .priors import DRY_MATTER_FLEXIBILITY, dry_matter_2021
from .simulate import TimeDesign
from .utility import expected_utility

DRY_MATTER_T = 30.0


def dry_matter_model(level: str | None, kind: str = "FlexGompertz"):
    """Spec and prior for a dry-matter flexibility level (``None`` for base laws)."""
    if level is None:
        spec = GrowthModelSpec(kind, DRY_MATTER_T)
        return spec, dry_matter_2021(spec)
    sigma_b_bar, K = DRY_MATTER_FLEXIBILITY[level]
    spec = GrowthModelSpec.with_knot_counts(kind, DRY_MATTER_T, K=K)
    return spec, dry_matter_2021(spec, sigma_b_bar)


def search_workload(n: int, settings: SearchSettings, t_max: float = DRY_MATTER_T) -> int:
    """Expected-utility samples used by one :func:`multi_start` run.

    Exact for ACE; an upper bound for CE (every pass run in full).
    """
    if settings.algorithm == "ace":
        per_coord = (settings.Q + 2 * settings.acceptance_reps) * settings.L_search
        per_start = settings.passes * n * per_coord
    else:
        grid = int(np.floor(t_max / settings.grid_step + 1e-9)) + 1
        per_start = (1 + settings.passes * n * (grid - 1)) * settings.L_search
    return settings.starts * (per_start + settings.L_final)


def sample_cost(spec, prior, n: int, laplace: LaplaceSettings | None = None, L: int = 64,
                seed: int = 12345) -> float:
    """Seconds per expected-utility sample at an equispaced design."""
    design = TimeDesign(np.linspace(0.1 * spec.t_max, 0.9 * spec.t_max, n), t_max=spec.t_max)
    start = time.perf_counter()
    expected_utility(design, spec, prior, laplace, L=L, seed=seed)
    return (time.perf_counter() - start) / L


@dataclass
class DispersionRun:
    rep: int
    level: str
    times: list
    dispersion: float
    estimate: float
    std_error: float


def dispersion_trend(n: int = 12, reps: int = 5, levels=("very_low", "high"),
                     settings: SearchSettings | None = None, laplace: LaplaceSettings | None = None,
                     workers: int | None = None, progress=None) -> list[DispersionRun]:
    """Optimal-design dispersion per replication and flexibility level."""
    settings = settings or SearchSettings(starts=3, L_search=500, L_final=500)
    runs = []
    for rep in range(reps):
        s = replace(settings, seed=derive_seed(settings.seed, rep))
        for level in levels:
            spec, prior = dry_matter_model(level)
            res = multi_start(spec, prior, n, s, laplace=laplace, workers=workers)
            run = DispersionRun(rep, level, res.design.times.tolist(),
                                flexibility_dispersion(res.design, spec.t_max), res.estimate, res.std_error)
            runs.append(run)
            if progress:
                progress(run)
    return runs


def dispersion_summary(runs, low="very_low", high="high") -> dict:
    by = {(r.rep, r.level): r for r in runs}
    reps = sorted({r.rep for r in runs})
    wins = [by[rep, high].dispersion > by[rep, low].dispersion for rep in reps]
    return {"wins": int(sum(wins)), "reps": len(reps),
            "dispersion": {lvl: [by[rep, lvl].dispersion for rep in reps] for lvl in (low, high)}}


@dataclass
class EfficiencyStudy:
    designs: dict                 # level -> times
    references: dict              # dgm kind -> times
    efficiency: dict = field(default_factory=dict)   # (level, dgm) -> ratio
    details: dict = field(default_factory=dict)


def efficiency_ordering(n: int = 4, levels=("very_low", "high"), dgms=("Logistic", "Richards"),
                        settings: SearchSettings | None = None, L_eval: int = 2000, seed: int = 0,
                        laplace: LaplaceSettings | None = None, workers: int | None = None,
                        progress=None) -> EfficiencyStudy:
    """Relative efficiency of flexible-Gompertz optimal designs under base dgms."""
    settings = settings or SearchSettings()
    designs, refs = {}, {}
    for level in levels:
        spec, prior = dry_matter_model(level)
        designs[level] = multi_start(spec, prior, n, settings, laplace=laplace, workers=workers).design
        if progress:
            progress(("design", level, designs[level].times.tolist()))
    study = EfficiencyStudy({k: v.times.tolist() for k, v in designs.items()}, {})
    for kind in dgms:
        spec, prior = dry_matter_model(None, kind)
        refs[kind] = multi_start(spec, prior, n, settings, laplace=laplace, workers=workers).design
        study.references[kind] = refs[kind].times.tolist()
        if progress:
            progress(("reference", kind, study.references[kind]))
        for level, d in designs.items():
            eff = relative_efficiency(d, spec, prior, refs[kind], L=L_eval, seed=seed,
                                      laplace=laplace, workers=workers)
            study.efficiency[level, kind] = eff.ratio
            study.details[level, kind] = eff.as_dict()
            if progress:
                progress(("efficiency", level, kind, eff.ratio))
    return study
