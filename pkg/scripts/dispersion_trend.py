"""Optimal-design dispersion at very-low and high flexibility over seeds.

The acceptance protocol is ``--n 12 --reps 5 --starts 3 --L-search 500``;
smaller settings give a quicker indicative run, e.g.

    python scripts/dispersion_trend.py --starts 1 --L-search 100 --passes 1 \
        --Q 10 --L-final 500 --out results/dispersion_reduced.json
"""

import argparse
import time

from oded.experiments import dispersion_summary, dispersion_trend

from _common import search_arguments, search_settings, settings_dict, write_json


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=12)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default="results/dispersion_trend.json")
    search_arguments(p, starts=3, L_search=500)
    args = p.parse_args(argv)
    settings = search_settings(args)
    start = time.perf_counter()

    def show(run):
        print(f"rep {run.rep} {run.level:9s} dispersion {run.dispersion:.3f} "
              f"U {run.estimate:.3f} +/- {run.std_error:.3f} times {[round(t, 2) for t in run.times]}",
              flush=True)

    runs = dispersion_trend(args.n, args.reps, settings=settings, workers=args.workers, progress=show)
    summary = dispersion_summary(runs)
    print(f"high > very_low in {summary['wins']}/{summary['reps']} replications")
    write_json(args.out, {"n": args.n, "settings": settings_dict(settings), "summary": summary,
                          "runs": [vars(r) for r in runs], "seconds": time.perf_counter() - start})


if __name__ == "__main__":
    main()
