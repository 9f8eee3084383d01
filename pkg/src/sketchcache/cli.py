"""Command-line entry points: `sketchcache serve` and `sketchcache bench`."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional

from . import bench as bench_mod
from .kernels import BACKEND


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import build_from_config, create_app, load_config

    cfg = load_config(args.config)
    cache, rules = build_from_config(cfg)
    app = create_app(cache, rules=rules)
    host, _, port = cfg["listen"].rpartition(":")
    logging.info("kernel backend: %s", BACKEND)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level="info")
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    if args.kernels:
        rows = bench_mod.bench_backends(n=args.n)
        print(f"{'backend':<10} {'op':<20} {'ops/sec':>14}")
        for row in rows:
            print(f"{row['backend']:<10} {row['op']:<20} {row['ops_per_sec']:>14,.0f}")
        if args.out:
            with open(args.out, "w") as fh:
                json.dump(rows, fh, indent=2)
        return 0
    summaries, report = bench_mod.run_bench(
        dataset=args.dataset,
        n=args.n,
        window_ms=args.window,
        algo=args.algo,
        seed=args.seed,
        out=args.out,
        path=args.path,
    )
    print(f"kernel backend: {BACKEND}")
    for s in summaries:
        rate = s["n"] / s["ingest_s"] if s["ingest_s"] else float("inf")
        print(
            f"{s['algo']:<8} ingest {rate:>12,.0f} samples/s   "
            f"query avg {s['query_avg_ms']:.3f} ms   size {s['bytes']:,} bytes"
        )
    worst = report.max_rel_err()
    print(f"rows: {len(report.rows)}   worst rel_err: {worst:.4f}")
    if args.out:
        print(f"report written to {args.out}")
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="sketchcache",
        description="Sliding-window sketch cache: HTTP service and benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--config", help="YAML config path", default=None)
    serve.set_defaults(func=_cmd_serve)

    bench = sub.add_parser("bench", help="accuracy/latency benchmark")
    bench.add_argument(
        "--dataset",
        choices=("zipf", "uniform", "dynamic", "normal", "file"),
        default="zipf",
    )
    bench.add_argument("--n", type=int, default=100_000, help="stream length")
    bench.add_argument("--window", type=int, default=None, help="window span in ms")
    bench.add_argument("--algo", choices=("ehkll", "ehuniv", "sampler", "all"), default="all")
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--out", default=None, help="write report CSV/JSON here")
    bench.add_argument("--path", default=None, help="input CSV for --dataset file")
    bench.add_argument(
        "--kernels", action="store_true", help="compare compiled vs pure-Python kernels"
    )
    bench.set_defaults(func=_cmd_bench)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
