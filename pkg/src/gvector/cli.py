"""Command-line interface: ``gvector <subcommand> [--config FILE] [--key value ...]``.

Every run-config key is also a flag (``lda_dim`` -> ``--lda-dim``); flags
override the config file, which overrides the defaults. Artifacts of one run
live in ``out_dir``:

    frontend/         centering mean, LDA, PLDA            (preprocess)
    nodes.emb         node features, dev+enroll+test       (build-graph)
    graph.txt         edge list                            (build-graph)
    node_labels.txt   speaker label of each dev node       (build-graph)
    model.gnnm        trained network                      (train)
    loss.csv          per-epoch training loss              (train)
    gvectors.emb      g-vector of every node               (extract)
    scores.txt        one line per trial                   (score)
    metrics.csv, det.csv, report.txt                       (eval)

Errors end the process with exit status 2 (config), 3 (data) or 4
(numeric divergence) and a first stderr line of the form
``error=<category> exit=<code> kind=<ExceptionName>: <diagnostic>``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from .config import RunConfig, expand_sweep, load_config
from .errors import ConfigError, DataError, GvectorError, UnknownIdError
from .gnn import load_checkpoint, save_checkpoint, train, write_loss_history
from .gnn.train import extract_gvectors
from .graph import read_graph, write_graph
from .io import (
    _atomic_write_text,
    read_embeddings,
    read_labels,
    read_scores,
    read_trials,
    write_embeddings,
    write_labels,
    write_scores,
    write_trials,
)
from .metrics import det_curve, evaluate, write_det_csv, write_metrics_csv
from .pipeline import (
    TrialData,
    _score,
    build_graph_inputs,
    check_trials,
    fit_frontend_for,
    gnn_config,
    load_dev,
    load_frontend,
    load_model_map,
    load_trial_data,
    run_baseline,
    save_frontend,
)
from .synth import SynthConfig, generate

log = logging.getLogger("gvector")

NODES, GRAPH, NODE_LABELS = "nodes.emb", "graph.txt", "node_labels.txt"
MODEL, LOSS, GVECTORS, SCORES = "model.gnnm", "loss.csv", "gvectors.emb", "scores.txt"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _out(cfg: RunConfig, name: str) -> Path:
    return Path(cfg.out_dir) / name


def _need(path: Path, step: str) -> Path:
    if not path.exists():
        raise ConfigError(f"missing {path}; run '{step}' first")
    return path


def _prepare_out(cfg: RunConfig) -> None:
    Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)


# -- subcommands -------------------------------------------------------------


def cmd_preprocess(cfg: RunConfig) -> None:
    cfg.check_paths(("dev", "dev_labels"))
    dev = load_dev(cfg)
    fe = fit_frontend_for(cfg, dev)
    _prepare_out(cfg)
    save_frontend(fe, _out(cfg, "frontend"))
    log.info("frontend: LDA %d -> %d, PLDA rank %d", fe.lda.dim_in, fe.lda.dim_out, fe.plda.q)


def cmd_build_graph(cfg: RunConfig) -> None:
    cfg.check_paths(("dev", "dev_labels", "enroll", "test"))
    fe = load_frontend(_need(_out(cfg, "frontend"), "preprocess"))
    dev = load_dev(cfg)
    sets = [dev, read_embeddings(cfg.enroll), read_embeddings(cfg.test)]
    inputs = build_graph_inputs(cfg, fe, sets)
    write_embeddings(inputs.nodes, _out(cfg, NODES))
    write_graph(inputs.graph, _out(cfg, GRAPH))
    write_labels({i: dev.labels[i] for i in dev.ids}, _out(cfg, NODE_LABELS))


def _load_nodes(cfg: RunConfig):
    nodes = read_embeddings(_need(_out(cfg, NODES), "build-graph"))
    graph = read_graph(_need(_out(cfg, GRAPH), "build-graph"))
    if graph.n != len(nodes):
        raise DataError(f"graph has {graph.n} nodes but {len(nodes)} node vectors")
    return nodes, graph


def cmd_train(cfg: RunConfig) -> None:
    nodes, graph = _load_nodes(cfg)
    dev_labels = read_labels(_need(_out(cfg, NODE_LABELS), "build-graph"))
    classes = sorted(set(dev_labels.values()))
    index = {c: k for k, c in enumerate(classes)}
    labels = np.array([index[dev_labels[i]] if i in dev_labels else -1 for i in nodes.ids])
    unknown = set(dev_labels) - set(nodes.ids)
    if unknown:
        raise UnknownIdError(f"labelled id {sorted(unknown)[0]!r} is not a graph node")
    model, history = train(gnn_config(cfg, nodes.dim, len(classes)), graph, nodes.vectors, labels, labels >= 0)
    save_checkpoint(model, _out(cfg, MODEL))
    write_loss_history(history, _out(cfg, LOSS))
    if history:
        log.info("trained %d epochs, final loss %.5f", len(history), history[-1])


def cmd_extract(cfg: RunConfig) -> None:
    nodes, graph = _load_nodes(cfg)
    model = load_checkpoint(_need(_out(cfg, MODEL), "train"))
    write_embeddings(extract_gvectors(model, graph, nodes.vectors, nodes.ids), _out(cfg, GVECTORS))


def cmd_score(cfg: RunConfig) -> None:
    cfg.check_paths(("enroll", "enroll_map", "test", "trials"))
    enroll = read_embeddings(cfg.enroll)
    test = read_embeddings(cfg.test)
    model_map = load_model_map(cfg.enroll_map, enroll)
    trials = read_trials(cfg.trials)
    check_trials(trials, model_map, test)
    if cfg.backend == "gnn":
        gvecs = read_embeddings(_need(_out(cfg, GVECTORS), "extract"))
        scores = _score(cfg, trials, gvecs.subset(enroll.ids), model_map, gvecs.subset(test.ids), "cosine")
    else:
        fe = load_frontend(_need(_out(cfg, "frontend"), "preprocess"))
        data = TrialData(None, enroll, test, model_map, trials)
        scores = run_baseline(cfg, data, fe)
    write_scores(scores, _out(cfg, SCORES))


def _keyed_scores(cfg: RunConfig, scores_path: Path):
    scores = read_scores(scores_path)
    if all(k == "unknown" for k in scores.keys):
        cfg.check_paths(("trials",))
        trials = read_trials(cfg.trials)
        if not trials.has_keys:
            raise DataError(f"{cfg.trials} has no target/nontarget keys")
        scores = scores.with_keys(trials)
    return scores


def cmd_eval(cfg: RunConfig, scores_path: str | None = None) -> str:
    path = Path(scores_path) if scores_path else _need(_out(cfg, SCORES), "score")
    scores = _keyed_scores(cfg, path)
    report = evaluate(scores, cfg.dcf_params)
    text = report.text(f"backend={cfg.backend}" + (f" variant={cfg.variant}" if cfg.backend == "gnn" else ""))
    _prepare_out(cfg)
    write_metrics_csv(report, _out(cfg, "metrics.csv"))
    write_det_csv(det_curve(*scores.split()), _out(cfg, "det.csv"))
    _atomic_write_text(_out(cfg, "report.txt"), text.splitlines())
    return text


def cmd_run(cfg: RunConfig) -> str:
    """Every stage in order; inputs are validated up front."""
    load_trial_data(cfg)
    _prepare_out(cfg)
    _atomic_write_text(_out(cfg, "config.txt"), cfg.to_text().splitlines())
    cmd_preprocess(cfg)
    if cfg.backend == "gnn":
        cmd_build_graph(cfg)
        cmd_train(cfg)
        cmd_extract(cfg)
    cmd_score(cfg)
    return cmd_eval(cfg)


def _sweep_one(cfg: RunConfig) -> tuple[float, float]:
    cmd_run(cfg)
    with open(_out(cfg, "metrics.csv"), encoding="utf-8") as fh:
        rows = dict(csv.reader(fh))
    return float(rows["eer_percent"]), float(rows["min_dcf"])


def cmd_sweep(cfg: RunConfig, grid: dict[str, str], jobs: int = 1) -> str:
    runs = expand_sweep(grid)
    cfgs = []
    for overrides in runs:
        name = ",".join(f"{k}={v}" for k, v in overrides.items())
        sub = load_config(None, {**_config_values(cfg), **overrides, "out_dir": str(Path(cfg.out_dir) / name)})
        cfgs.append((name, overrides, sub))
    load_trial_data(cfg)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_one, [c for _, _, c in cfgs]))
    else:
        results = [_sweep_one(c) for _, _, c in cfgs]
    keys = list(grid)
    lines = [",".join(["run", *keys, "eer_percent", "min_dcf"])]
    for (name, overrides, _), (eer, dcf) in zip(cfgs, results):
        lines.append(",".join([f'"{name}"', *(overrides[k] for k in keys), f"{eer:.6f}", f"{dcf:.6f}"]))
    _atomic_write_text(Path(cfg.out_dir) / "sweep.csv", lines)
    width = max(len(n) for n, _, _ in cfgs)
    return "\n".join(f"{name:<{width}}  EER[%] {eer:6.2f}  minDCF {dcf:.3f}" for (name, _, _), (eer, dcf) in zip(cfgs, results))


def cmd_synth(args: argparse.Namespace) -> None:
    sc = SynthConfig(
        n_speakers=args.n_speakers,
        per_speaker=args.per_speaker,
        dim=args.dim,
        between_std=args.between_std,
        within_std=args.within_std,
        seed=args.seed,
        dev_fraction=args.dev_fraction,
        n_enroll=args.n_enroll,
    )
    data = generate(sc)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ext = "emb" if args.format == "binary" else "txt"
    files = {"dev": f"dev.{ext}", "dev_labels": "dev.labels", "enroll": f"enroll.{ext}", "enroll_map": "enroll.map", "test": f"test.{ext}", "trials": "trials"}
    write_embeddings(data.dev, out / files["dev"], args.format)
    write_labels(data.dev.labels, out / files["dev_labels"])
    write_embeddings(data.enroll, out / files["enroll"], args.format)
    write_labels({m: model for model, members in data.model_map.items() for m in members}, out / files["enroll_map"])
    write_embeddings(data.test, out / files["test"], args.format)
    write_labels(data.test.labels, out / "test.labels")
    write_trials(data.trials, out / files["trials"])
    # paths in a config file are resolved against the file's directory
    lines = [f"{k} = {v}" for k, v in files.items()] + ["out_dir = run"]
    _atomic_write_text(out / "config.txt", lines)


# -- argument parsing --------------------------------------------------------

_CONFIG_HELP = {
    "backend": "gnn | cosine | lda_cosine | plda",
    "node_transform": "raw | lda",
    "edge_metric": "cosine | lda_cosine | lda_plda",
    "graph_rule": "threshold | top_k",
    "variant": "GCN | GAT | GATv2 | SAGE_mean | GraphTF | TAGCN",
    "enroll_mode": "average | score_average",
    "dcf": "dcf14 (p_target 1/101) | dcf001 | custom",
}


def _config_values(cfg: RunConfig) -> dict[str, str]:
    text = cfg.to_text()
    return dict(tuple(s.strip() for s in line.split("=", 1)) for line in text.splitlines())


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", "-c", help="flat 'key = value' config file")
    g = p.add_argument_group("run configuration (override the config file)")
    for f in fields(RunConfig):
        g.add_argument("--" + f.name.replace("_", "-"), dest="cfg_" + f.name, metavar=f.name.upper(), help=_CONFIG_HELP.get(f.name, f"default: {f.default}"))


def _run_config(args: argparse.Namespace) -> RunConfig:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    return load_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gvector", description="Graph neural network backend for speaker verification.")
    parser.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    helps = {
        "preprocess": "fit centering, LDA and PLDA on labelled dev data",
        "build-graph": "node features and similarity graph over dev+enroll+test",
        "train": "train the GNN on the graph (loss on dev nodes)",
        "extract": "write g-vectors for every node",
        "score": "score the trial list with the configured backend",
        "eval": "EER / minDCF report, metrics.csv and det.csv",
        "run": "all stages end to end",
        "sweep": "run a grid of configurations, one subdirectory each",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        _add_config_flags(p)
        if name == "eval":
            p.add_argument("--scores", help="score file (default: <out_dir>/scores.txt)")
        if name == "sweep":
            p.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2,...", help="values to sweep; repeat for a product grid")
            p.add_argument("--jobs", type=int, default=1, help="concurrent runs")

    p = sub.add_parser("synth", help="write a seeded synthetic dataset and config", description="write a seeded synthetic dataset and config")
    d = SynthConfig()
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-speakers", type=int, default=d.n_speakers)
    p.add_argument("--per-speaker", type=int, default=d.per_speaker)
    p.add_argument("--dim", type=int, default=d.dim)
    p.add_argument("--between-std", type=float, default=d.between_std)
    p.add_argument("--within-std", type=float, default=d.within_std)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--dev-fraction", type=float, default=d.dev_fraction)
    p.add_argument("--n-enroll", type=int, default=d.n_enroll)
    p.add_argument("--format", choices=("binary", "text"), default="binary")
    return parser


def _dispatch(args: argparse.Namespace) -> str | None:
    if args.command == "synth":
        return cmd_synth(args)
    cfg = _run_config(args)
    if args.command == "sweep":
        if not args.grid:
            raise ConfigError("sweep needs at least one --grid KEY=V1,V2,...")
        grid = {}
        for item in args.grid:
            key, sep, values = item.partition("=")
            if not sep:
                raise ConfigError(f"bad --grid {item!r}; expected KEY=V1,V2,...")
            grid[key.strip()] = values
        return cmd_sweep(cfg, grid, args.jobs)
    if args.command == "eval":
        return cmd_eval(cfg, args.scores)
    return {
        "preprocess": cmd_preprocess,
        "build-graph": cmd_build_graph,
        "train": cmd_train,
        "extract": cmd_extract,
        "score": cmd_score,
        "run": cmd_run,
    }[args.command](cfg)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        text = _dispatch(args)
    except GvectorError as exc:
        return _fail(exc.category, exc.exit_code, type(exc).__name__, str(exc))
    except FileNotFoundError as exc:
        return _fail("config_error", 2, "FileNotFoundError", str(exc))
    except (OSError, UnicodeDecodeError) as exc:
        return _fail("data_error", 3, type(exc).__name__, str(exc))
    if text:
        print(text)
    return 0


def _fail(category: str, code: int, kind: str, message: str) -> int:
    message = " ".join(message.split())  # keep the diagnostic on one line
    print(f"error={category} exit={code} kind={kind}: {message}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
