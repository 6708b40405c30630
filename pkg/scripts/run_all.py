"""Run every shipped config, writing each kind under <root>/<kind>.

    python scripts/run_all.py [--root runs] [--only wegner ladder]
"""

import argparse
import dataclasses
import sys
import time
from pathlib import Path

from gaussloc.cli import EXIT_OK, run
from gaussloc.config import load_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--root", default="runs", type=Path)
    ap.add_argument("--only", nargs="*", default=None, help="config stems to run")
    args = ap.parse_args(argv)
    failed = []
    for path in sorted(CONFIGS.glob("*.toml")):
        if args.only and path.stem not in args.only:
            continue
        cfg = dataclasses.replace(load_config(path), output=args.root / path.stem)
        t0 = time.perf_counter()
        code = run(cfg)
        print(f"{path.stem:<16} exit {code}  {time.perf_counter() - t0:7.1f}s  -> {cfg.output}")
        if code != EXIT_OK:
            failed.append(path.stem)
    if failed:
        print("failed:", ", ".join(failed))
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
