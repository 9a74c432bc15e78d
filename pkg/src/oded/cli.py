"""Command-line front end: ``oded <subcommand> --config run.json [--set block.key=value ...]``.

Exit codes: 0 success, 2 configuration error, 3 compute error.  Each run
writes ``manifest.json`` (the resolved configuration); passing a manifest
back as ``--config`` reproduces the run's outputs.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .errors import ConfigError, OdedError
from .evaluation import flexibility_dispersion, generate_realizations, relative_efficiency
from .growth_models import ParamVector
from .inference import joint_posterior, laplace_b_given_theta, laplace_theta
from .optimizer import multi_start
from .priors import sample_prior
from .simulate import Dataset, simulate_dataset
from .utility import expected_utility

log = logging.getLogger("oded")

EXIT_OK, EXIT_CONFIG, EXIT_COMPUTE = 0, 2, 3


def _workers(cfg: RunConfig) -> int:
    env = os.environ.get("ODED_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"ODED_WORKERS must be an integer, got {env!r}") from None
    return max(1, int(cfg.compute.workers))


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# --------------------------------------------------------------------------
# subcommands: each returns ({path: text}, summary)

def cmd_realize(cfg: RunConfig, args):
    spec = cfg.model_spec()
    r = cfg.realize
    grid = np.linspace(0.0, spec.t_max, r.grid_points)
    table = generate_realizations(spec, cfg.prior_spec(spec), r.n_curves, grid, r.mode, cfg.compute.seed)
    mid = table.matrix()[:, r.grid_points // 2]
    summary = {"rows": len(table), "curves": r.n_curves, "mid_horizon_sd": float(np.std(mid, ddof=1))
               if r.n_curves > 1 else 0.0}
    return {args.out or "realizations.csv": table.to_csv()}, summary


def cmd_simulate(cfg: RunConfig, args):
    spec = cfg.model_spec()
    prior = cfg.prior_spec(spec)
    design = cfg.build_design()
    rng = np.random.default_rng(cfg.compute.seed)
    params, effects = sample_prior(prior, spec, rng)
    if cfg.simulate.params:
        unknown = sorted(set(cfg.simulate.params) - set(spec.theta_names))
        if unknown:
            raise ConfigError(f"simulate.params has unknown names {unknown}")
        params = ParamVector(spec.theta_names, np.array(
            [float(cfg.simulate.params.get(n, v)) for n, v in zip(spec.theta_names, params.values)]))
    data = simulate_dataset(spec, design, params, effects, rng)
    summary = {"rows": len(data), "params": params.as_dict()}
    return {args.out or "data.csv": data.to_csv()}, summary


def cmd_expected_utility(cfg: RunConfig, args):
    spec = cfg.model_spec()
    u = expected_utility(cfg.build_design(), spec, cfg.prior_spec(spec), cfg.laplace_settings(),
                         L=cfg.compute.L_final, seed=cfg.compute.seed, workers=_workers(cfg),
                         keep_samples=bool(args.per_sample))
    summary = u.as_dict()
    outputs = {}
    if args.out:
        outputs[args.out] = _json(summary)
    if args.per_sample:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("sample", "utility"))
        for l, v in enumerate(u.per_sample.tolist()):
            w.writerow((l, repr(v)))
        outputs[args.per_sample] = buf.getvalue()
    return outputs, summary


def _optimize(cfg: RunConfig, spec=None, prior=None):
    spec = spec or cfg.model_spec()
    prior = prior or cfg.prior_spec(spec)
    cfg.require("design.n")
    return multi_start(spec, prior, cfg.design.n, cfg.search_settings(),
                       template=cfg.design_template(), laplace=cfg.laplace_settings(),
                       workers=_workers(cfg), bounds=tuple(cfg.design.bounds))


def cmd_optimize(cfg: RunConfig, args):
    res = _optimize(cfg)
    design = {"times": res.design.times.tolist(), "estimate": res.estimate,
              "std_error": res.std_error, "L": res.L}
    outputs = {args.out or "design.json": _json(design)}
    if args.trace:
        outputs[args.trace] = res.trace_csv()
    summary = dict(design, starts=[{"times": None if s.design is None else s.design.times.tolist(),
                                    "estimate": s.estimate, "error": s.error} for s in res.starts])
    if res.design.n >= 2:
        summary["dispersion"] = flexibility_dispersion(res.design, cfg.model.t_max)
    return outputs, summary


def _sub_config(cfg: RunConfig, model: dict, prior: dict | None) -> RunConfig:
    data = cfg.to_dict()
    data["model"] = dict(model)
    if prior is not None:
        data["prior"] = dict(prior)
    return RunConfig.from_dict(data)


def _check_efficiency(cfg: RunConfig):
    e = cfg.efficiency
    if not e.designs or not e.dgms:
        raise ConfigError("efficiency needs non-empty efficiency.designs and efficiency.dgms")
    for k, d in enumerate(e.designs):
        if not isinstance(d, dict) or set(d) - {"label", "times"} or "times" not in d:
            raise ConfigError(f"efficiency.designs[{k}] must be {{label, times}}")
    subs = []
    for k, g in enumerate(e.dgms):
        if not isinstance(g, dict) or set(g) - {"label", "model", "prior", "reference_times"} or "model" not in g:
            raise ConfigError(f"efficiency.dgms[{k}] must be {{label, model, prior?, reference_times?}}")
        subs.append(_sub_config(cfg, g["model"], g.get("prior")))
    designs = [cfg.design_template().with_times(d["times"]) for d in e.designs]
    if len({d.n for d in designs}) != 1:
        raise ConfigError("efficiency designs must share n")
    return designs, subs


def cmd_efficiency(cfg: RunConfig, args):
    designs, subs = _check_efficiency(cfg)
    e, c = cfg.efficiency, cfg.compute
    labels = [d.get("label", f"design{k}") for k, d in enumerate(e.designs)]
    dgm_labels = [g.get("label", f"dgm{k}") for k, g in enumerate(e.dgms)]
    matrix = np.empty((len(designs), len(subs)))
    refs = []
    for j, (g, sub) in enumerate(zip(e.dgms, subs)):
        spec = sub.model_spec()
        prior = sub.prior_spec(spec)
        if g.get("reference_times") is not None:
            ref = cfg.design_template().with_times(g["reference_times"])
        else:
            sub.design.n = designs[0].n
            ref = _optimize(sub, spec, prior).design
        refs.append(ref.times.tolist())
        for i, d in enumerate(designs):
            matrix[i, j] = relative_efficiency(d, spec, prior, ref, L=c.L_final, seed=c.seed,
                                               laplace=sub.laplace_settings(), workers=_workers(cfg)).ratio
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["design"] + dgm_labels)
    for label, row in zip(labels, matrix.tolist()):
        w.writerow([label] + [repr(v) for v in row])
    summary = {"efficiency": {label: dict(zip(dgm_labels, row)) for label, row in zip(labels, matrix.tolist())},
               "reference_designs": dict(zip(dgm_labels, refs))}
    return {args.out or "efficiency.csv": buf.getvalue()}, summary


def cmd_fit(cfg: RunConfig, args):
    if not args.data:
        raise ConfigError("fit needs --data file.csv")
    try:
        data = Dataset.from_csv(Path(args.data).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {args.data}: {exc.strerror}") from None
    except ValueError as exc:
        raise ConfigError(f"bad dataset {args.data}: {exc}") from None
    spec = cfg.model_spec()
    prior = cfg.prior_spec(spec)
    settings = cfg.laplace_settings()
    rng = np.random.default_rng(cfg.compute.seed)
    th = laplace_theta(data, spec, prior, settings, rng)
    b = laplace_b_given_theta(data, spec, th.mean, settings)
    joint = joint_posterior(th, b)
    result = {"theta_names": list(spec.theta_names),
              "theta_mean": th.mean.tolist(), "theta_sd": np.sqrt(np.diag(th.cov)).tolist(),
              "b_mean": b.mean.tolist(), "b_sd": np.sqrt(np.diag(b.cov)).tolist(),
              "log_density": th.log_density, "repaired": bool(th.repaired or b.repaired),
              "dim": joint.dim}
    return {args.out or "fit.json": _json(result)}, result


COMMANDS = {"realize": cmd_realize, "simulate": cmd_simulate, "expected-utility": cmd_expected_utility,
            "optimize": cmd_optimize, "efficiency": cmd_efficiency, "fit": cmd_fit}


# --------------------------------------------------------------------------
# argument parsing and the run wrapper

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oded", description="Robust Bayesian sampling-time design for growth models.")
    parser.add_argument("--version", action="version", version=f"oded {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run configuration or manifest (JSON)")
        p.add_argument("--set", action="append", default=[], metavar="BLOCK.KEY=VALUE",
                       help="override one config value (repeatable)")
        p.add_argument("--out", help="primary output file")
        p.add_argument("--manifest", help="manifest path (default: manifest.json next to --out)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "optimize":
            p.add_argument("--algorithm", choices=("ce", "ace"))
            p.add_argument("--n", type=int)
            p.add_argument("--starts", type=int)
            p.add_argument("--seed", type=int)
            p.add_argument("--L-search", dest="L_search", type=int)
            p.add_argument("--L-final", dest="L_final", type=int)
            p.add_argument("--trace", help="trace CSV")
        if name == "expected-utility":
            p.add_argument("--per-sample", help="per-sample utilities CSV")
        if name == "fit":
            p.add_argument("--data", help="dataset CSV with header time,fruit,y")
    return parser


def _flag_overrides(args) -> list[str]:
    pairs = [("algorithm", "algorithm.name"), ("n", "design.n"), ("starts", "algorithm.starts"),
             ("seed", "compute.seed"), ("L_search", "compute.L_search"), ("L_final", "compute.L_final")]
    out = []
    for attr, key in pairs:
        v = getattr(args, attr, None)
        if v is not None:
            out.append(f"{key}={json.dumps(v)}")
    return out


def _write_all(outputs: dict) -> None:
    written = []
    try:
        for path, text in outputs.items():
            p = Path(path)
            p.parent.mkdir(parents=True, exist_ok=True)
            tmp = p.with_name(p.name + ".part")
            tmp.write_text(text)
            written.append(tmp)
        for tmp in written:
            tmp.replace(tmp.with_name(tmp.name[:-len(".part")]))
    except OSError:
        for tmp in written:
            tmp.unlink(missing_ok=True)
        raise


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, list(args.set) + _flag_overrides(args))
        if args.command == "efficiency":
            _check_efficiency(cfg)
        if args.command in ("simulate", "expected-utility", "optimize", "efficiency"):
            cfg.require("design.n")
        _workers(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        outputs, summary = COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OdedError as exc:
        print(f"compute error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    manifest = args.manifest or str(Path(next(iter(outputs), "out")).parent / "manifest.json")
    outputs[manifest] = _json({"subcommand": args.command, "seed": cfg.compute.seed,
                               "version": __version__, "config": cfg.to_dict()})
    try:
        _write_all(outputs)
    except OSError as exc:
        print(f"cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
