"""Held-out accuracy of the black box as the embedding size K varies.

    python3 scripts/embedding_study.py --seeds 1 2 3 --ks 5 60 500 --out k_study.csv
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from dataclasses import dataclass

import numpy as np

from tabxplain import blackbox as bb
from tabxplain.data import split, standardize, synth_highdim


@dataclass(frozen=True)
class StudyConfig:
    n: int = 2000
    m_total: int = 1000
    m_informative: int = 20
    classes: int = 4
    epochs: int = 20
    test_fraction: float = 0.2


def one_run(seed: int, k: int, cfg: StudyConfig = StudyConfig()) -> dict:
    d = synth_highdim(cfg.n, cfg.m_total, cfg.m_informative, cfg.classes, 1.0, seed)
    train, test = split(d, cfg.test_fraction, seed)
    train, scaler = standardize(train)
    test = test.with_features(scaler.transform(test.features))
    t0 = time.perf_counter()
    model = bb.train(train, bb.CAEConfig(embedding_dim=k, epochs=cfg.epochs, seed=seed), scaler)
    acc = float(np.mean(bb.predict(model, test.features) == test.labels))
    return {"seed": seed, "k": k, "k_frac": k / cfg.m_total, "test_accuracy": acc,
            "final_loss": model.history[-1]["loss"] if model.history else float("nan"),
            "seconds": time.perf_counter() - t0}


def study(seeds, ks, cfg: StudyConfig = StudyConfig(), log=None) -> list[dict]:
    rows = []
    for s in seeds:
        for k in ks:
            rows.append(one_run(s, k, cfg))
            if log:
                log(rows[-1])
    return rows


def medians(rows) -> dict[int, float]:
    ks = sorted({r["k"] for r in rows})
    return {k: float(np.median([r["test_accuracy"] for r in rows if r["k"] == k])) for k in ks}


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--ks", type=int, nargs="+", default=[5, 60, 500])
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--out", default="k_study.csv")
    args = p.parse_args(argv)
    rows = study(args.seeds, args.ks, StudyConfig(epochs=args.epochs), log=lambda r: print(r, flush=True))
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    for k, acc in medians(rows).items():
        print(f"K={k}: median accuracy {acc:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
