"""Run every scenario's investigation query over several seeds and print one JSON line per run."""

from __future__ import annotations

import argparse
import json

from provql import scenarios
from provql.config import NORMALIZATIONS, Config


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scale", type=int, default=10_000)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--scenario", choices=scenarios.SCENARIOS, action="append")
    ap.add_argument("--normalization", choices=NORMALIZATIONS, default="incoming")
    args = ap.parse_args()
    config = Config(weight_normalization=args.normalization)
    for name in args.scenario or scenarios.SCENARIOS:
        for seed in range(args.seeds):
            sc = scenarios.generate(name, args.scale, seed)
            print(json.dumps(scenarios.score_run(sc, config).as_json()), flush=True)


if __name__ == "__main__":
    main()
