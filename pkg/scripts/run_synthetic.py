"""Full pipeline on the small synthetic config, then print the report summary.

    python3 scripts/run_synthetic.py --run-dir runs/synth --threads 2
"""

import argparse
import json
import sys
from pathlib import Path

from tabxplain import cli

CONFIG = Path(__file__).resolve().parent / "configs" / "synthetic.cfg"


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--run-dir", default="runs/synth")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--instance", type=int, action="append", default=[0])
    args = p.parse_args(argv)
    argv = ["run", "--config", str(CONFIG), "--run-dir", args.run_dir, "--threads", str(args.threads)]
    for i in args.instance:
        argv += ["--instance", str(i)]
    code = cli.main(argv)
    if code:
        return code
    report = cli.load_report(Path(args.run_dir) / "report.json")
    print(json.dumps({"blackbox": report["blackbox"]["metrics"],
                      "surrogates": {k: v["fidelity"]["r_squared"] for k, v in report["surrogates"].items()},
                      "rules": {k: report["rules"][k] for k in ("fidelity", "confidence")}}, indent=2))
    print(report["rules_text"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
