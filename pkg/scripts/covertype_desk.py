"""Desk-scale Forest Cover Type run through the CLI pipeline.

The data comes from ``$TABX_COVTYPE_CSV`` (a CSV with a ``Cover_Type`` label
column) or from scikit-learn's local cache. Nothing is downloaded.

    python3 scripts/covertype_desk.py --run-dir runs/covertype --threads 4
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from tabxplain import cli
from tabxplain.surrogate import SurrogateModel

CONFIG = Path(__file__).resolve().parent / "configs" / "covertype.cfg"
LABEL = "Cover_Type"


def find_covertype(workdir: Path) -> Path | None:
    """Path of a covertype CSV, or None when no local copy exists."""
    env = os.environ.get("TABX_COVTYPE_CSV")
    if env:
        return Path(env)
    try:
        from sklearn.datasets import fetch_covtype
        d = fetch_covtype(download_if_missing=False)
    except (ImportError, OSError):
        return None
    out = workdir / "covtype.csv"
    if not out.exists():
        workdir.mkdir(parents=True, exist_ok=True)
        names = [f"f{i}" for i in range(d.data.shape[1])] + [LABEL]
        np.savetxt(out, np.column_stack([d.data, d.target]), delimiter=",", header=",".join(names),
                   comments="", fmt="%.10g")
    return out


def reverify(run_dir: Path, instances, threads: int = 1) -> dict:
    """Explain each test instance and re-check every counterfactual on the surrogate."""
    cfg = cli.RunConfig.from_flat(json.loads((run_dir / "config.json").read_text())["config"])
    run = cli.RunDir(run_dir, cfg, threads)
    _, test, sel = cli._reduced(run)
    kind, model = cli._primary(run, run.load_surrogates())
    returned = flipped = bb_flipped = 0
    for i in instances:
        cli.stage_explain(run, int(i))
        doc = json.loads(run.file(f"explanations/instance_{i}.json").read_text())["explanation"]
        x = test.features[int(i), sel]
        y0 = int(model.predict(x[None])[0])
        for cf in doc["counterfactuals"]:
            x_new = x.copy()
            for ch in cf["changes"]:
                x_new[ch["feature"]] += ch["delta"]
            returned += 1
            flipped += int(int(model.predict(x_new[None])[0]) != y0)
            bb_flipped += int(bool(cf["verified"]))
    return {"instances": len(instances), "counterfactuals": returned, "flipped": flipped,
            "blackbox_flipped": bb_flipped}


def desk(run_dir: Path, csv: Path, threads: int = 1, n_instances: int = 100, overrides=()) -> dict:
    t0 = time.perf_counter()
    argv = ["run", "--config", str(CONFIG), "--run-dir", str(run_dir), "--threads", str(threads),
            "--set", f"data.path={csv}"]
    for kv in overrides:
        argv += ["--set", kv]
    code = cli.main(argv)
    if code != 0:
        raise RuntimeError(f"pipeline exited with {code}")
    surrogates = json.loads((run_dir / "surrogates.json").read_text())["surrogates"]
    rules = json.loads((run_dir / "rules.json").read_text())
    n_test = json.loads((run_dir / "data.json").read_text())["n_test"]
    rng = np.random.default_rng([0, 8])
    picks = np.sort(rng.choice(n_test, size=min(n_instances, n_test), replace=False))
    cf = reverify(run_dir, picks, threads)
    return {"ert_rule_fidelity": rules["fidelity"], "ert_r2": surrogates["ert"]["fidelity"]["r_squared"],
            "counterfactuals": cf, "seconds": time.perf_counter() - t0}


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--run-dir", default="runs/covertype")
    p.add_argument("--csv", help="covertype CSV (defaults to $TABX_COVTYPE_CSV or the sklearn cache)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = p.parse_args(argv)
    run_dir = Path(args.run_dir)
    csv = Path(args.csv) if args.csv else find_covertype(run_dir)
    if csv is None:
        print("covertype data not found: set TABX_COVTYPE_CSV or populate the sklearn cache", file=sys.stderr)
        return 2
    print(json.dumps(desk(run_dir, csv, args.threads, args.instances, args.set), indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
