"""Generate the seeded fixture, run every stage and compare with ground truth.

    python3 scripts/run_fixture_pipeline.py --out-dir /tmp/memealert-demo
"""

import argparse
import csv
import json
import sys
import time
from pathlib import Path

from memealert.cli import main as cli


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out-dir", default="fixture-demo")
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args()
    out = Path(args.out_dir)
    if cli(["fixture", "--out-dir", str(out), "--seed", str(args.seed)]) != 0:
        return 1
    t0 = time.perf_counter()
    if cli(["run", "--config", str(out / "pipeline.cfg")]) != 0:
        return 1
    elapsed = time.perf_counter() - t0
    truth = json.loads((out / "ground_truth.json").read_text())
    run_dir = max((out / "runs").iterdir(), key=lambda p: p.stat().st_mtime)
    with open(run_dir / "alert" / f"{truth['ticker']}_alerts.csv") as fh:
        fired = [(r["day"], r["influencers"]) for r in csv.DictReader(fh) if r["stage2"] == "1"]
    print(f"pipeline finished in {elapsed:.1f}s -> {run_dir}")
    print(f"planted bursts : {truth['burst_days']}")
    print(f"stage-2 alerts : {fired}")
    ok = [d for d, _ in fired] == truth["burst_days"] and all(
        u == truth["influencer"] for _, u in fired)
    print("ground truth recovered" if ok else "MISMATCH with ground truth")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
