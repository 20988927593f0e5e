"""Experiment configuration files and CSV outputs.

A config is an INI file::

    [corpus]
    path = corpus.txt              ; or the generator.* keys below
    generator.docs = 11
    generator.seed = 4

    [features]
    kind = one_hot                 ; one_hot | embedding_file | seeded_random
    dim = 100
    path = vectors.txt

    [train]
    policy = gnn                   ; gnn | random
    lr = 0.0005
    seeds = 0..24

    [output]
    dir = runs/chain11

Missing ``[train]`` keys take the defaults of :class:`TrainConfig`.
"""

from __future__ import annotations

import configparser
import csv
import io
import os
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

from .corpus import (
    BipartiteGraph,
    Corpus,
    FeatureProvider,
    LinearCorpusConfig,
    build_graph,
    generate_linear_corpus,
    load_corpus,
)
from .trainer import TrainConfig, aggregate_seeds, run_random_baseline, run_training

CSV_VERSION = 1
CURVES_HEADER = ["seed", "episode", "return"]
SUMMARY_HEADER = ["episode", "mean", "stddev"]
STATS_HEADER = ["n_doc", "n_kw", "n_edges", "diameter"]
COMPARE_HEADER = ["config", "policy", "features", "episodes", "seeds", "final_mean", "final_stddev"]


class ConfigError(ValueError):
    """Invalid experiment configuration; the message starts with the offending field path."""


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"0..24"`` (inclusive), ``"1,5,9"`` or a mix of both."""
    seeds: list[int] = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise ValueError("empty seed list")
    return tuple(seeds)


def parse_range(text: str) -> tuple[int, int]:
    """``"2-4"`` or ``"3"`` as an inclusive integer range."""
    text = text.strip()
    if "-" in text[1:]:
        lo, hi = text.split("-", 1)
        return int(lo), int(hi)
    return int(text), int(text)


@dataclass(frozen=True)
class ExperimentConfig:
    corpus_path: str | None = None
    generator: LinearCorpusConfig | None = None
    features: FeatureProvider = field(default_factory=FeatureProvider)
    train: TrainConfig = field(default_factory=TrainConfig)
    policy: str = "gnn"
    output_dir: str = "runs"
    name: str = "experiment"

    def load_corpus(self) -> Corpus:
        if self.corpus_path is not None:
            return load_corpus(self.corpus_path)
        return generate_linear_corpus(self.generator)

    def graph(self) -> BipartiteGraph:
        return build_graph(self.load_corpus())


_TRAIN_KEYS = {
    "lr": ("learning_rate", float),
    "gamma": ("gamma", float),
    "episodes": ("episodes", int),
    "batch": ("batch_size", int),
    "repeat": ("repeat_per_collect", int),
    "episodes_per_collect": ("episodes_per_collect", int),
    "seeds": ("seeds", parse_seeds),
    "hidden": ("hidden_dim", int),
    "heads": ("heads", int),
    "optimizer": ("optimizer", str),
    "workers": ("workers", int),
}
_GENERATOR_KEYS = {
    "generator.docs": ("n_docs", int),
    "generator.seed": ("seed", int),
    "generator.new": ("new_kw_per_doc", parse_range),
    "generator.reuse": ("reuse_per_doc", parse_range),
    "generator.window": ("reuse_window", int),
}


def _convert(section: str, key: str, raw: str, fn):
    try:
        return fn(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} ({exc})") from None


def parse_config(text: str, base_dir: str | Path = ".", name: str = "experiment") -> ExperimentConfig:
    base_dir = Path(base_dir)
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config: {exc}") from None
    for section in cp.sections():
        if section not in ("corpus", "features", "train", "output"):
            raise ConfigError(f"{section}: unknown section")

    corpus = cp["corpus"] if cp.has_section("corpus") else {}
    corpus_path = None
    generator = None
    gen_keys = [k for k in corpus if k.startswith("generator.")]
    if "path" in corpus and gen_keys:
        raise ConfigError("corpus: give either path or generator.* keys, not both")
    if "path" in corpus:
        p = Path(corpus["path"])
        corpus_path = str(p if p.is_absolute() else base_dir / p)
        if not Path(corpus_path).is_file():
            raise ConfigError(f"corpus.path: file not found: {corpus_path}")
    elif gen_keys:
        kwargs = {}
        for key in gen_keys:
            if key not in _GENERATOR_KEYS:
                raise ConfigError(f"corpus.{key}: unknown key")
            attr, fn = _GENERATOR_KEYS[key]
            kwargs[attr] = _convert("corpus", key, corpus[key], fn)
        generator = LinearCorpusConfig(**kwargs)
        try:
            generator.validate()
        except ValueError as exc:
            raise ConfigError(f"corpus.generator: {exc}") from None
    else:
        raise ConfigError("corpus: missing path or generator.* keys")
    for key in corpus:
        if key != "path" and not key.startswith("generator."):
            raise ConfigError(f"corpus.{key}: unknown key")

    feats = cp["features"] if cp.has_section("features") else {}
    for key in feats:
        if key not in ("kind", "dim", "path", "seed"):
            raise ConfigError(f"features.{key}: unknown key")
    source = feats.get("path")
    if source is not None and not Path(source).is_absolute():
        source = str(base_dir / source)
    if source is not None and not Path(source).is_file():
        raise ConfigError(f"features.path: file not found: {source}")
    try:
        provider = FeatureProvider(
            kind=feats.get("kind", "one_hot"),
            dim=_convert("features", "dim", feats["dim"], int) if "dim" in feats else None,
            source=source,
            seed=_convert("features", "seed", feats["seed"], int) if "seed" in feats else 0,
        )
    except ValueError as exc:
        raise ConfigError(f"features: {exc}") from None

    train_sec = cp["train"] if cp.has_section("train") else {}
    overrides = {}
    policy = "gnn"
    for key in train_sec:
        if key == "policy":
            policy = train_sec[key].strip()
            if policy not in ("gnn", "random"):
                raise ConfigError(f"train.policy: expected gnn or random, got {policy!r}")
            continue
        if key not in _TRAIN_KEYS:
            raise ConfigError(f"train.{key}: unknown key")
        attr, fn = _TRAIN_KEYS[key]
        overrides[attr] = _convert("train", key, train_sec[key], fn)
    train = replace(TrainConfig(), **overrides)
    try:
        train.validate()
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from None

    out = cp["output"] if cp.has_section("output") else {}
    out_dir = Path(out.get("dir", "runs"))
    if not out_dir.is_absolute():
        out_dir = base_dir / out_dir
    return ExperimentConfig(corpus_path, generator, provider, train, policy, str(out_dir), name)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config: file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), base_dir=path.parent, name=path.stem)


def run_experiment(cfg: ExperimentConfig) -> list[list[float]]:
    graph = cfg.graph()
    if cfg.policy == "random":
        return [run_random_baseline(graph.doc_count, cfg.train.episodes, seed) for seed in cfg.train.seeds]
    return run_training(cfg.train, graph, cfg.features)


# ---------------------------------------------------------------- CSV helpers


def _fmt(x: float) -> str:
    return repr(float(x))


def curves_csv(seeds, curves) -> str:
    buf = io.StringIO()
    buf.write(f"# gnnpath curves v{CSV_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVES_HEADER)
    for seed, curve in zip(seeds, curves):
        for ep, r in enumerate(curve, start=1):
            w.writerow([seed, ep, _fmt(r)])
    return buf.getvalue()


def summary_csv(curves) -> str:
    summary = aggregate_seeds(curves)
    buf = io.StringIO()
    buf.write(f"# gnnpath summary v{CSV_VERSION}; final {summary.final_str()} over {summary.n_seeds} seeds\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    for ep, (m, s) in enumerate(zip(summary.mean, summary.stddev), start=1):
        w.writerow([ep, _fmt(m), _fmt(s)])
    return buf.getvalue()


def stats_csv(stats) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STATS_HEADER)
    w.writerow([stats.n_doc, stats.n_kw, stats.n_edges, stats.diameter_str()])
    return buf.getvalue()


def read_csv_rows(path_or_text: str | Path, text: bool = False) -> list[dict[str, str]]:
    content = path_or_text if text else Path(path_or_text).read_text(encoding="utf-8")
    lines = [ln for ln in content.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def write_atomic(files: dict[str, str], out_dir: str | Path) -> None:
    """Write every file to a temp name first, then rename them all into place."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    staged = []
    try:
        for name, content in files.items():
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=out_dir)
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(content)
            staged.append((tmp, out_dir / name))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, final in staged:
        os.replace(tmp, final)
