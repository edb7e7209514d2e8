"""Repeated model-selection trials on synthetic run histograms.

Draws histograms from a CS law and from a two-component exponential mixture,
runs the CS-vs-nEXP comparison on each, and reports how often the generating
family wins.  One CSV line per trial goes to ``--out``.

    python scripts/model_recovery.py --trials 100 --runs 10000
"""

import argparse
import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from collstate import models
from collstate.models import CSParams, FitOptions, NExpParams


@dataclass
class RecoveryConfig:
    trials: int = 100
    runs: int = 10_000
    p: float = 0.4
    alpha: float = 0.55
    weights: tuple[float, float] = (0.7, 0.3)
    rates: tuple[float, float] = (0.1, 0.8)
    n_max: int = 5
    starts: int = 32
    seed: int = 0
    out: Path | None = None
    options: FitOptions = field(init=False)

    def __post_init__(self):
        self.options = FitOptions(starts=self.starts, seed=self.seed)


def mixture_params(weights, rates) -> NExpParams:
    # run-mass weights to intensity amplitudes
    return NExpParams(tuple(w * -math.expm1(-b) for w, b in zip(weights, rates)), tuple(rates))


def trial(cfg: RecoveryConfig, source: str, seed: int) -> dict:
    gen = CSParams(1.0, cfg.p, cfg.alpha) if source == "CS" else mixture_params(cfg.weights, cfg.rates)
    hist = models.synth_sample(gen, cfg.runs, rng_seed=seed)
    rep = models.select_model(hist, cfg.n_max, options=cfg.options)
    row = {"source": source, "seed": seed, "delta_E": rep.delta_E, "best_n": rep.best_n,
           "alpha": None, "alpha_err": None}
    cs = rep.cs_fit
    if cs is not None:
        row["alpha"] = cs.param_dict()["alpha"]
        se = cs.stderr_dict()
        row["alpha_err"] = None if se is None else se["alpha"]
    return row


def run(cfg: RecoveryConfig) -> list[dict]:
    t0 = time.perf_counter()
    rows = [trial(cfg, src, cfg.seed + off + i)
            for src, off in (("CS", 0), ("2EXP", 100_000)) for i in range(cfg.trials)]
    if cfg.out is not None:
        with open(cfg.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    for src in ("CS", "2EXP"):
        d = np.array([r["delta_E"] if r["delta_E"] is not None else np.nan
                      for r in rows if r["source"] == src])
        q = np.nanpercentile(d, [5, 50, 95])
        print(f"{src:>4}: dE>3 {int((d > 3).sum())}/{d.size}  dE<0 {int((d < 0).sum())}/{d.size}  "
              f"dE 5/50/95% = {q[0]:.1f} / {q[1]:.1f} / {q[2]:.1f}")
    cs = [r for r in rows if r["source"] == "CS" and r["alpha_err"]]
    hits = sum(abs(r["alpha"] - cfg.alpha) <= 3 * r["alpha_err"] for r in cs)
    print(f"alpha within 3 s.e. of {cfg.alpha}: {hits}/{len(cs)}")
    print(f"elapsed {time.perf_counter() - t0:.0f}s")
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--runs", type=int, default=10_000)
    ap.add_argument("--alpha", type=float, default=0.55)
    ap.add_argument("--p", type=float, default=0.4)
    ap.add_argument("--nmax", type=int, default=5)
    ap.add_argument("--starts", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path)
    a = ap.parse_args(argv)
    run(RecoveryConfig(a.trials, a.runs, a.p, a.alpha, n_max=a.nmax, starts=a.starts,
                       seed=a.seed, out=a.out))


if __name__ == "__main__":
    main()
