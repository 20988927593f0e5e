"""Command-line entry point: ``gnnpath generate|stats|train|compare``.

Exit codes: 0 success, 1 configuration error, 2 runtime or numerical error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .autodiff import ContractError
from .corpus import (
    CHAIN11_PRESET,
    CorpusError,
    FeatureError,
    LinearCorpusConfig,
    build_graph,
    compute_stats,
    generate_linear_corpus,
    load_corpus,
)
from .experiment import (
    COMPARE_HEADER,
    ConfigError,
    curves_csv,
    load_config,
    parse_range,
    run_experiment,
    stats_csv,
    summary_csv,
    write_atomic,
)
from .trainer import NumericalError, aggregate_seeds

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
DEFAULT_SEED = 0

log = logging.getLogger("gnnpath")


def _print_stats(stats, out=None) -> None:
    print(
        f"docs={stats.n_doc} keywords={stats.n_kw} edges={stats.n_edges} diameter={stats.diameter_str()}",
        file=out or sys.stdout,
    )


def cmd_generate(args) -> int:
    if args.preset == "chain11":
        cfg = CHAIN11_PRESET
        if args.seed is not None:
            cfg = LinearCorpusConfig(cfg.n_docs, cfg.new_kw_per_doc, cfg.reuse_per_doc, cfg.reuse_window, args.seed)
    else:
        cfg = LinearCorpusConfig(
            n_docs=args.docs,
            new_kw_per_doc=parse_range(args.new),
            reuse_per_doc=parse_range(args.reuse),
            reuse_window=args.window,
            seed=DEFAULT_SEED if args.seed is None else args.seed,
        )
    corpus = generate_linear_corpus(cfg)
    if args.output == "-":
        sys.stdout.write(corpus.to_text())
    else:
        corpus.save(args.output)
    _print_stats(compute_stats(build_graph(corpus)), out=sys.stderr if args.output == "-" else sys.stdout)
    return EXIT_OK


def cmd_stats(args) -> int:
    stats = compute_stats(build_graph(load_corpus(args.corpus)))
    _print_stats(stats)
    if args.csv:
        write_atomic({Path(args.csv).name: stats_csv(stats)}, Path(args.csv).parent)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.output:
        cfg = replace(cfg, output_dir=args.output)
    curves = run_experiment(cfg)
    write_atomic(
        {"curves.csv": curves_csv(cfg.train.seeds, curves), "summary.csv": summary_csv(curves)},
        cfg.output_dir,
    )
    summary = aggregate_seeds(curves)
    print(f"{cfg.name}: final return {summary.final_str()} over {summary.n_seeds} seeds -> {cfg.output_dir}")
    return EXIT_OK


def cmd_compare(args) -> int:
    if len(args.configs) < 2:
        raise ConfigError("compare: need at least two configs")
    cfgs = [load_config(p) for p in args.configs]
    graphs = [c.graph() for c in cfgs]
    for c, g in zip(cfgs[1:], graphs[1:]):
        if g != graphs[0]:
            raise ConfigError(f"compare: {c.name} uses a different corpus than {cfgs[0].name}")
        if c.train.episodes != cfgs[0].train.episodes:
            raise ConfigError(f"compare: {c.name} has a different episode count than {cfgs[0].name}")
    rows = []
    for c in cfgs:
        s = aggregate_seeds(run_experiment(c))
        features = "-" if c.policy == "random" else c.features.kind
        rows.append([c.name, c.policy, features, c.train.episodes, len(c.train.seeds), s.final_mean, s.final_stddev])
    lines = [",".join(COMPARE_HEADER)]
    lines += [",".join(str(x) if not isinstance(x, float) else repr(x) for x in r) for r in rows]
    text = "\n".join(lines) + "\n"
    if args.output:
        write_atomic({Path(args.output).name: text}, Path(args.output).parent)
    sys.stdout.write(text)
    for r in rows:
        print(f"{r[0]:>20}  {r[5]:.2f} ± {r[6]:.2f}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gnnpath", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic linear corpus")
    g.add_argument("--docs", type=int, default=11)
    g.add_argument("--new", default="2-4", help="fresh keywords per document, e.g. 2-4")
    g.add_argument("--reuse", default="2-4", help="keywords reused from earlier documents")
    g.add_argument("--window", type=int, default=3, help="how many previous documents to reuse from")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--preset", choices=["chain11"], default=None)
    g.add_argument("-o", "--output", default="-")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("stats", help="print corpus graph statistics")
    s.add_argument("corpus")
    s.add_argument("--csv", default=None, help="also write the statistics as CSV")
    s.set_defaults(func=cmd_stats)

    t = sub.add_parser("train", help="train (or run the random baseline) per a config file")
    t.add_argument("config")
    t.add_argument("-o", "--output", default=None, help="override [output] dir")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("compare", help="final returns of several configs on one corpus")
    c.add_argument("configs", nargs="+")
    c.add_argument("-o", "--output", default=None)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CorpusError, FeatureError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ContractError, FloatingPointError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
