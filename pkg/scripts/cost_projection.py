"""Project wall-clock time of the dispersion and efficiency protocols.

Measures seconds per expected-utility sample for each model the protocol
touches and multiplies by the sample count of the search settings.

    python scripts/cost_projection.py --L 64
"""

import argparse

from oded import SearchSettings
from oded.experiments import dry_matter_model, sample_cost, search_workload


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--L", type=int, default=64, help="samples used to time each model")
    args = p.parse_args(argv)

    def cost(level, kind="FlexGompertz", n=4):
        spec, prior = dry_matter_model(level, kind)
        return sample_cost(spec, prior, n, L=args.L)

    s7 = SearchSettings(starts=3, L_search=500)
    per7 = search_workload(12, s7)
    c7 = {lvl: cost(lvl, n=12) for lvl in ("very_low", "high")}
    t7 = 5 * per7 * sum(c7.values())
    print("dispersion trend (n=12, 5 reps, starts 3, L_search 500)")
    for lvl, c in c7.items():
        print(f"  {lvl:9s} {1e3 * c:7.2f} ms/sample")
    print(f"  samples {10 * per7:,}  projected {t7 / 3600:.1f} h")

    s8 = SearchSettings(L_final=2000)
    per8 = search_workload(4, s8)
    flex = {lvl: cost(lvl) for lvl in ("very_low", "high")}
    base = {k: cost(None, k) for k in ("Logistic", "Richards")}
    t8 = per8 * (sum(flex.values()) + sum(base.values())) + 2 * 2000 * 2 * sum(base.values())
    print("efficiency ordering (n=4, default search, L_final 2000, L_eval 2000)")
    for name, c in {**flex, **base}.items():
        print(f"  {name:9s} {1e3 * c:7.2f} ms/sample")
    print(f"  samples {4 * per8 + 16000:,}  projected {t8 / 3600:.1f} h")


if __name__ == "__main__":
    main()
