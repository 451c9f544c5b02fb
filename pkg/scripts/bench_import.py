"""Time JSONL import and store save/load for a generated scenario.

The printed rate is an observation about this machine, not a target.
"""

from __future__ import annotations

import argparse
import json
import tempfile
import time
from pathlib import Path

from provql import scenarios
from provql.importer import import_file
from provql.store import FileStore, MemoryStore, save_store


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenario", default="password_crack", choices=scenarios.SCENARIOS)
    ap.add_argument("--scale", type=int, default=100_000)
    ap.add_argument("--batch-size", type=int, default=10_000)
    args = ap.parse_args()
    sc = scenarios.generate(args.scenario, args.scale, 0)
    with tempfile.TemporaryDirectory() as d:
        paths = scenarios.write_scenario(sc, d)
        store = MemoryStore()
        t0 = time.perf_counter()
        stats = import_file(paths["log"], store, args.batch_size)
        t_import = time.perf_counter() - t0
        t0 = time.perf_counter()
        save_store(store, Path(d) / "store")
        t_save = time.perf_counter() - t0
        t0 = time.perf_counter()
        with FileStore(Path(d) / "store") as fs:
            n = len(fs)
        t_open = time.perf_counter() - t0
    print(json.dumps({
        "events": stats.accepted, "rejected": stats.rejected, "import_s": round(t_import, 3),
        "events_per_s": round(stats.accepted / t_import), "save_s": round(t_save, 3),
        "file_store_open_s": round(t_open, 4), "file_store_events": n,
    }))


if __name__ == "__main__":
    main()
