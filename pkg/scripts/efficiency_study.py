"""Relative efficiency of flexible-Gompertz designs under Logistic and Richards.

The acceptance protocol is ``--n 4 --L-final 2000 --L-eval 2000`` with the
default search; a quicker indicative run:

    python scripts/efficiency_study.py --starts 2 --L-search 100 --passes 2 \
        --Q 10 --L-final 1000 --L-eval 1000 --out results/efficiency_reduced.json
"""

import argparse
import time

from oded.experiments import efficiency_ordering

from _common import search_arguments, search_settings, settings_dict, write_json


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--L-eval", type=int, default=2000)
    p.add_argument("--eval-seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default="results/efficiency_study.json")
    search_arguments(p, L_final=2000)
    args = p.parse_args(argv)
    settings = search_settings(args)
    start = time.perf_counter()
    study = efficiency_ordering(args.n, settings=settings, L_eval=args.L_eval, seed=args.eval_seed,
                                workers=args.workers, progress=lambda e: print(*e, flush=True))
    for (level, kind), ratio in sorted(study.efficiency.items()):
        print(f"{level:9s} under {kind:9s} efficiency {ratio:.3f}")
    write_json(args.out, {"n": args.n, "settings": settings_dict(settings), "L_eval": args.L_eval,
                          "designs": study.designs, "references": study.references,
                          "efficiency": {f"{lvl}/{k}": v for (lvl, k), v in study.efficiency.items()},
                          "details": {f"{lvl}/{k}": v for (lvl, k), v in study.details.items()},
                          "seconds": time.perf_counter() - start})


if __name__ == "__main__":
    main()
