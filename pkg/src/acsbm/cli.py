"""Command line entry point: ``acsbm {simulate,fit,experiment,summarize}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .model import load_model
from .pipeline import fit
from .sampler import load_network, sample_attributes, sample_network, save_network

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class _ConfigProblem(Exception):
    pass


def _model_or_config_error(path):
    try:
        return load_model(path)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise _ConfigProblem(f"invalid model config {path}: {exc}") from exc


def cmd_simulate(args):
    if not args.config:
        raise _ConfigProblem("simulate requires --config MODEL.json")
    spec, sched = _model_or_config_error(args.config)
    if args.n < 1:
        raise _ConfigProblem("--n must be positive")
    seed = args.seed or 0
    attrs = sample_attributes(spec, args.n, seed)
    net = sample_network(spec, attrs, sched, seed)
    edges_path, attrs_path = save_network(args.out or ".", net)
    print(f"wrote {net.num_edges} edges to {edges_path} and attributes to {attrs_path}")


def cmd_fit(args):
    network_dir = Path(args.network) if args.network else None
    edges = args.edges or (network_dir / "edges.txt" if network_dir else None)
    attributes = args.attributes or (network_dir / "attributes.tsv" if network_dir else None)
    if edges is None or attributes is None:
        raise _ConfigProblem("fit requires --network DIR or both --edges and --attributes")
    K, levels = args.K, None
    if args.config:
        spec, _ = _model_or_config_error(args.config)
        K, levels = spec.K, spec.levels
    if K is None:
        raise _ConfigProblem("fit requires --K or --config MODEL.json")
    try:
        net = load_network(edges, attributes)
    except (OSError, ValueError) as exc:
        raise _ConfigProblem(f"cannot read network: {exc}") from exc
    result = fit(net, K, d=args.d, method=args.method or "gmm", seed=args.seed or 0,
                 levels=levels)
    rate = None
    if net.truth is not None:
        rate = harness.misclassification(result.theta_hat, net.truth, K)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "fit.json"
    path.write_text(json.dumps(result.to_dict(rate), indent=2) + "\n")
    msg = f"wrote {path}"
    if rate is not None:
        msg += f" (misclassification {rate:.4g})"
    print(msg)


def cmd_experiment(args):
    if not args.config:
        raise _ConfigProblem("experiment requires --config EXPERIMENT.json")
    try:
        cfg = harness.load_config(args.config)
    except harness.ConfigError as exc:
        raise _ConfigProblem(str(exc)) from exc
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.method:
        cfg.method = args.method
    out_dir = args.out or cfg.out_dir
    if not out_dir:
        raise _ConfigProblem("no output directory: pass --out or set out_dir in the config")
    records, summary = harness.run_experiment(cfg, threads=args.threads)
    paths = harness.write_outputs(out_dir, records, summary, cfg.record_timings)
    failed = sum(r.failed for r in records)
    for row in summary["per_n"]:
        print(f"n={row['n']:>7}  median={row['median']}  IQR=[{row['q1']}, {row['q3']}]  "
              f"failures={row['failures']}")
    print(f"wrote {paths['csv']} and {paths['summary']}")
    if failed == len(records):
        raise RuntimeError("every replicate failed")


def cmd_summarize(args):
    K = args.K
    if args.config:
        try:
            K = harness.load_config(args.config).spec.K
        except harness.ConfigError as exc:
            raise _ConfigProblem(str(exc)) from exc
    try:
        records = harness.read_records_csv(args.csv)
    except (OSError, ValueError, KeyError) as exc:
        raise _ConfigProblem(f"cannot read {args.csv}: {exc}") from exc
    text = json.dumps(harness.summarize(records, K), indent=2) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(text)
        print(f"wrote {out / 'summary.json'}")
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--method", choices=["gmm", "kmeans"])
    common.add_argument("--out", metavar="DIR")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="acsbm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="sample a network and its attributes")
    p.add_argument("--n", type=int, required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", parents=[common], help="estimate communities for a network")
    p.add_argument("--network", metavar="DIR", help="directory holding edges.txt and attributes.tsv")
    p.add_argument("--edges", metavar="PATH")
    p.add_argument("--attributes", metavar="PATH")
    p.add_argument("--K", type=int)
    p.add_argument("--d", type=int)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("experiment", parents=[common], help="run a simulation sweep")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("summarize", parents=[common], help="summarise a replicate CSV")
    p.add_argument("csv", metavar="CSV")
    p.add_argument("--K", type=int)
    p.set_defaults(func=cmd_summarize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except _ConfigProblem as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
