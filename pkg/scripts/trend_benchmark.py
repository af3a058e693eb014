"""Planted-signal comparison of Evt+GPSR against RNN Spv over several seeds.

    python3 scripts/trend_benchmark.py --seeds 0 1 2 3 4
"""
import argparse
import json

from lowprior.benchmark import run_seed, summarize


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--json", help="also write per-seed results here")
    args = ap.parse_args()
    results = []
    for seed in args.seeds:
        r = run_seed(seed)
        results.append(r)
        print(f"seed {seed}: train prior {r.train_prior:.5f}  test prior {r.test_prior:.5f}  "
              f"Spv AUPRC {r.spv_auprc:.4f}  Evt+GPSR(p={r.best_p}) AUPRC {r.evt_auprc:.4f}  [{r.seconds:.0f}s]")
    s = summarize(results)
    print(f"median AUPRC  Spv {s['median_spv_auprc']:.4f}  Evt+GPSR {s['median_evt_auprc']:.4f}  "
          f"test prior {s['median_test_prior']:.4f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"seeds": [vars(r) for r in results], "summary": s}, fh, indent=2)


if __name__ == "__main__":
    main()
