"""Monte Carlo of the factor count on simulated MA or ARMA factor data.

Example:
    python3 scripts/factor_recovery_mc.py --m 10 --r 2 --n 2 --N 2000 --runs 20
    python3 scripts/factor_recovery_mc.py --m 10 --r 2 --n 2 --p 2 --N 5000 --runs 20
"""

import argparse
import json
import time
import warnings
from dataclasses import replace

import numpy as np

from armafactor.arma import IdentifySettings, identify_arma, random_ar_polynomial, simulate_arma
from armafactor.estimate import random_factor_model


def run(m, r, n, p, N, seed, settings):
    rng = np.random.default_rng(seed)
    model = random_factor_model(m, r, n, rng)
    a = random_ar_polynomial(p, rng)
    y = simulate_arma(model, a, N, rng)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = identify_arma(y, n, p, 0.5, replace(settings, seed=seed))
    return {"seed": seed, "r_hat": res.factors.r_hat, "s": list(res.factors.s),
            "a_err": float(np.abs(res.model.a - a).max()) if p else 0.0,
            "delta_alpha": res.delta.delta_alpha, "delta_max": res.delta.delta_max,
            "consistent": res.primal.diagnostics["consistent"]}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--m", type=int, default=10)
    ap.add_argument("--r", type=int, default=2)
    ap.add_argument("--n", type=int, default=2)
    ap.add_argument("--p", type=int, default=0)
    ap.add_argument("--N", type=int, default=2000)
    ap.add_argument("--runs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--margin", type=float, default=None)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    st = IdentifySettings(trials=args.trials)
    if args.margin is not None:
        st = replace(st, margin=args.margin)
    runs = []
    for k in range(args.runs):
        t0 = time.perf_counter()
        rec = run(args.m, args.r, args.n, args.p, args.N, args.seed + k, st)
        rec["seconds"] = time.perf_counter() - t0
        runs.append(rec)
        s = np.asarray(rec["s"])
        print(f"seed={rec['seed']} r_hat={rec['r_hat']} s={np.round(s[:5], 3)} "
              f"a_err={rec['a_err']:.3f} t={rec['seconds']:.0f}s", flush=True)
    hits = [r for r in runs if r["r_hat"] == args.r]
    print(f"hit rate {len(hits)}/{len(runs)}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"args": vars(args), "runs": runs}, fh, indent=2)


if __name__ == "__main__":
    main()
