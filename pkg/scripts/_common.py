import argparse
import logging
import sys

from gvector.bench import RESULT_HEADER, BenchConfig, result_line


def base_parser(description: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--seeds", default="0,1,2,3,4", help="comma-separated seeds")
    p.add_argument("--n-speakers", type=int, default=50)
    p.add_argument("--per-speaker", type=int, default=20)
    p.add_argument("--dim", type=int, default=100)
    p.add_argument("--ratio", type=float, default=3.0, help="between/within speaker std")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="RunConfig override, repeatable")
    p.add_argument("--out", help="also write per-run rows to this CSV")
    return p


def bench_from(args) -> BenchConfig:
    return BenchConfig(n_speakers=args.n_speakers, per_speaker=args.per_speaker, dim=args.dim, ratio=args.ratio)


def seeds_from(args) -> list[int]:
    return [int(s) for s in args.seeds.split(",") if s.strip()]


class Rows:
    """Print each finished run and optionally collect them into a CSV."""

    def __init__(self, out: str | None):
        self.out = out
        self.lines = [RESULT_HEADER]
        print(RESULT_HEADER, flush=True)

    def __call__(self, name, res) -> None:
        line = result_line(name, res)
        self.lines.append(line)
        print(line, flush=True)

    def close(self) -> None:
        if self.out:
            with open(self.out, "w") as f:
                f.write("\n".join(self.lines) + "\n")


def setup_logging() -> None:
    logging.basicConfig(level=logging.WARNING, stream=sys.stderr, format="%(levelname)s %(message)s")
