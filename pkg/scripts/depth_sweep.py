"""GNN EER as a function of the number of message-passing layers.

    python3 scripts/depth_sweep.py --depths 1,2,3,4 --seeds 0,1,2,3,4
"""

from _common import Rows, base_parser, bench_from, seeds_from, setup_logging

from gvector.bench import median, parse_overrides, run_grid
from gvector.config import RunConfig


def main() -> None:
    p = base_parser(__doc__.splitlines()[0])
    p.add_argument("--depths", default="1,2,3,4")
    p.add_argument("--variants", default="GAT", help="comma-separated GNN variants")
    args = p.parse_args()
    setup_logging()
    base = RunConfig(backend="gnn").updated(**parse_overrides(args.set))
    configs = {f"{v},depth={d}": base.updated(variant=v, depth=int(d)) for v in args.variants.split(",") for d in args.depths.split(",")}
    rows = Rows(args.out)
    results = run_grid(bench_from(args), seeds_from(args), configs, rows)
    rows.close()
    print()
    for name in configs:
        print(f"{name:20s} median EER {median(r.eer for n, r in results if n == name):7.3f}%")


if __name__ == "__main__":
    main()
