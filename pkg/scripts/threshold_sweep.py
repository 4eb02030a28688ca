"""GNN EER as a function of the PLDA edge threshold.

    python3 scripts/threshold_sweep.py --thresholds 2,4,6,8,10,12 --seeds 0,1,2
"""

from _common import Rows, base_parser, bench_from, seeds_from, setup_logging

from gvector.bench import is_u_shaped, median, parse_overrides, run_grid
from gvector.config import RunConfig


def main() -> None:
    p = base_parser(__doc__.splitlines()[0])
    p.add_argument("--thresholds", default="2,4,6,8,10,12")
    args = p.parse_args()
    setup_logging()
    base = RunConfig(backend="gnn").updated(**parse_overrides(args.set))
    thresholds = [float(t) for t in args.thresholds.split(",")]
    configs = {f"threshold={t:g}": base.updated(threshold=t) for t in thresholds}
    rows = Rows(args.out)
    results = run_grid(bench_from(args), seeds_from(args), configs, rows)
    rows.close()
    curve = []
    print()
    for name in configs:
        rs = [r for n, r in results if n == name]
        curve.append(median(r.eer for r in rs))
        print(f"{name:16s} median EER {curve[-1]:7.3f}%  median degree {median(r.mean_degree for r in rs):7.1f}")
    print(f"interior minimum below both ends: {is_u_shaped(curve)}")


if __name__ == "__main__":
    main()
