"""Run every config in configs/ (or the ones named) and write outputs under out/."""

import argparse
import sys
import time
from pathlib import Path

from glmcf.cli import main as glmcf_main

ROOT = Path(__file__).resolve().parent.parent


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("names", nargs="*", help="config stems, e.g. convergence_flat (default: all)")
    p.add_argument("--out", default=str(ROOT / "out"), help="parent output directory")
    args = p.parse_args(argv)
    configs = sorted((ROOT / "configs").glob("*.toml"))
    if args.names:
        configs = [c for c in configs if c.stem in args.names]
    worst = 0
    for cfg in configs:
        t0 = time.time()
        code = glmcf_main(["run", str(cfg), "--out", str(Path(args.out) / cfg.stem)])
        print(f"== {cfg.stem}: exit {code} in {time.time() - t0:.1f}s", flush=True)
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
