"""Compare backends on seeded synthetic speakers.

    python3 scripts/benchmark.py --seeds 0,1,2 --ratio 3
    python3 scripts/benchmark.py --ratio 0.6 --per-speaker 30 --set epochs=150 --set lr=1e-3
"""

from collections import defaultdict

from _common import Rows, base_parser, bench_from, seeds_from, setup_logging

from gvector.bench import median, parse_overrides, run_grid
from gvector.config import RunConfig


def main() -> None:
    p = base_parser(__doc__.splitlines()[0])
    p.add_argument("--backends", default="cosine,lda_cosine,plda,gnn")
    args = p.parse_args()
    setup_logging()
    base = RunConfig().updated(**parse_overrides(args.set))
    configs = {b: base.updated(backend=b) for b in args.backends.split(",")}
    rows = Rows(args.out)
    results = run_grid(bench_from(args), seeds_from(args), configs, rows)
    rows.close()
    by = defaultdict(list)
    for name, r in results:
        by[name].append(r)
    print()
    for name, rs in by.items():
        print(f"{name:12s} median EER {median(r.eer for r in rs):7.3f}%  median minDCF {median(r.min_dcf for r in rs):.4f}")


if __name__ == "__main__":
    main()
