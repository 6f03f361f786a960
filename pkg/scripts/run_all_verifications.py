#!/usr/bin/env python3
"""Run every verification experiment and print a summary table.

The PDE-residual and residual-identity checks run on a 2D mixture, the
stochastic checks on the default 1D bimodal mixture.  Exits nonzero if
any experiment fails its thresholds.
"""

import json
import sys
from pathlib import Path

from consistency_lab.cli import main

ROOT = Path(__file__).resolve().parent.parent
CONFIG_2D = ROOT / "configs" / "verify_fpe_2d.toml"

RUNS = [
    ("verify-fpe", str(CONFIG_2D)),
    ("verify-lemma-a4", str(CONFIG_2D)),
    ("verify-thm41", None),
    ("verify-martingale", None),
    ("verify-thm42", None),
    ("verify-drift", None),
]


def run_all(out_root: str = "out/verifications", seed: int = 0) -> int:
    worst = 0
    rows = []
    for experiment, config in RUNS:
        out_dir = Path(out_root) / experiment
        argv = [experiment, "--out", str(out_dir), "--seed", str(seed)]
        if config:
            argv += ["--config", config]
        code = main(argv)
        worst = max(worst, code)
        report = json.loads((out_dir / "report.json").read_text())
        rows.append((experiment, "PASS" if report.get("passed") else "FAIL", out_dir))
    width = max(len(r[0]) for r in rows)
    print()
    for name, status, out_dir in rows:
        print(f"{name:<{width}}  {status}  -> {out_dir}")
    return worst


if __name__ == "__main__":
    sys.exit(run_all(*sys.argv[1:2], *(int(a) for a in sys.argv[2:3])))
