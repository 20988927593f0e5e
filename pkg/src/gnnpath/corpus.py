"""Document/keyword corpora and their bipartite graphs.

Corpus file format (UTF-8)::

    #corpus <topic>
    <doc_id> :: <kw1> | <kw2> | ...

Document order in the file is the intended reading order. Embedding files
hold one ``<keyword> <f1> ... <fK>`` line per keyword.
"""

from __future__ import annotations

import hashlib
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Tensor


class CorpusError(ValueError):
    """Malformed corpus file or invalid corpus content."""


class GeneratorConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Document:
    id: str
    keywords: tuple[str, ...]


def normalize_keyword(kw: str) -> str:
    return kw.strip().lower()


@dataclass(frozen=True)
class Corpus:
    documents: tuple[Document, ...]
    topic: str = ""

    def __post_init__(self):
        if not self.documents:
            raise CorpusError("corpus has no documents")
        seen: set[str] = set()
        for doc in self.documents:
            if doc.id in seen:
                raise CorpusError(f"duplicate document id {doc.id!r}")
            seen.add(doc.id)
            if not doc.keywords:
                raise CorpusError(f"document {doc.id!r} has no keywords")

    @classmethod
    def from_lists(cls, keywords: Sequence[Sequence[str]], topic: str = "", ids=None) -> Corpus:
        ids = ids or [f"d{i + 1}" for i in range(len(keywords))]
        docs = tuple(
            Document(str(i), tuple(normalize_keyword(k) for k in kws)) for i, kws in zip(ids, keywords)
        )
        return cls(docs, topic)

    def __len__(self) -> int:
        return len(self.documents)

    @property
    def ids(self) -> list[str]:
        return [d.id for d in self.documents]

    def to_text(self) -> str:
        lines = [f"#corpus {self.topic}".rstrip()]
        lines += [f"{d.id} :: {' | '.join(d.keywords)}" for d in self.documents]
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")


def parse_corpus(text: str, source: str = "<string>") -> Corpus:
    topic = None
    docs: list[Document] = []
    ids: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if topic is None:
            if not line.startswith("#corpus"):
                raise CorpusError(f"{source}:{lineno}: expected '#corpus <topic>' header")
            topic = line[len("#corpus"):].strip()
            continue
        if line.startswith("#"):
            continue
        if "::" not in line:
            raise CorpusError(f"{source}:{lineno}: expected '<doc_id> :: <kw> | ...'")
        doc_id, _, rest = line.partition("::")
        doc_id = doc_id.strip()
        if not doc_id:
            raise CorpusError(f"{source}:{lineno}: empty document id")
        if doc_id in ids:
            raise CorpusError(f"{source}:{lineno}: duplicate document id {doc_id!r}")
        kws = tuple(k for k in (normalize_keyword(p) for p in rest.split("|")) if k)
        if not kws:
            raise CorpusError(f"{source}:{lineno}: document {doc_id!r} has an empty keyword list")
        ids.add(doc_id)
        docs.append(Document(doc_id, kws))
    if topic is None:
        raise CorpusError(f"{source}: empty corpus file")
    if not docs:
        raise CorpusError(f"{source}: no documents")
    return Corpus(tuple(docs), topic)


def load_corpus(path: str | Path) -> Corpus:
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"{path}: no such corpus file")
    return parse_corpus(path.read_text(encoding="utf-8"), source=str(path))


@dataclass(frozen=True)
class BipartiteGraph:
    """Documents and keywords as the two node types; an edge per containment.

    ``doc_adj[d]`` lists keyword indices of document ``d`` and ``kw_adj[w]``
    lists documents containing keyword ``w``, both ascending.
    """

    doc_count: int
    kw_count: int
    edges: tuple[tuple[int, int], ...]
    vocabulary: tuple[str, ...] = ()
    doc_adj: tuple[tuple[int, ...], ...] = field(default=(), repr=False)
    kw_adj: tuple[tuple[int, ...], ...] = field(default=(), repr=False)

    @classmethod
    def from_edges(cls, doc_count: int, kw_count: int, edges, vocabulary=()) -> BipartiteGraph:
        edges = tuple(sorted(set((int(d), int(w)) for d, w in edges)))
        doc_adj: list[list[int]] = [[] for _ in range(doc_count)]
        kw_adj: list[list[int]] = [[] for _ in range(kw_count)]
        for d, w in edges:
            if not (0 <= d < doc_count and 0 <= w < kw_count):
                raise IndexError(f"edge {(d, w)} out of range")
            doc_adj[d].append(w)
            kw_adj[w].append(d)
        return cls(
            doc_count,
            kw_count,
            edges,
            tuple(vocabulary),
            tuple(tuple(sorted(a)) for a in doc_adj),
            tuple(tuple(sorted(a)) for a in kw_adj),
        )

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def permute_documents(self, perm: Sequence[int]) -> BipartiteGraph:
        """Relabel so that new document ``i`` is old document ``perm[i]``."""
        inverse = {old: new for new, old in enumerate(perm)}
        return BipartiteGraph.from_edges(
            self.doc_count, self.kw_count, [(inverse[d], w) for d, w in self.edges], self.vocabulary
        )


def build_graph(corpus: Corpus) -> BipartiteGraph:
    index: dict[str, int] = {}
    edges = []
    for d, doc in enumerate(corpus.documents):
        for kw in doc.keywords:
            if kw not in index:
                index[kw] = len(index)
            edges.append((d, index[kw]))
    return BipartiteGraph.from_edges(len(corpus), len(index), edges, tuple(index))


@dataclass(frozen=True)
class CorpusStats:
    n_doc: int
    n_kw: int
    n_edges: int
    diameter: float  # math.inf when disconnected

    def diameter_str(self) -> str:
        return "inf" if math.isinf(self.diameter) else str(int(self.diameter))


def _bfs(adj: list[list[int]], src: int) -> list[int]:
    dist = [-1] * len(adj)
    dist[src] = 0
    queue = deque([src])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def node_adjacency(graph: BipartiteGraph) -> list[list[int]]:
    """Undirected adjacency over all nodes: docs first, then keywords offset by doc_count."""
    n = graph.doc_count
    adj: list[list[int]] = [[] for _ in range(n + graph.kw_count)]
    for d, w in graph.edges:
        adj[d].append(n + w)
        adj[n + w].append(d)
    return adj


def compute_stats(graph: BipartiteGraph) -> CorpusStats:
    adj = node_adjacency(graph)
    if not adj:
        raise CorpusError("empty graph")
    diameter = 0
    for src in range(len(adj)):
        dist = _bfs(adj, src)
        if min(dist) < 0:
            diameter = math.inf
            break
        diameter = max(diameter, max(dist))
    return CorpusStats(graph.doc_count, graph.kw_count, graph.n_edges, diameter)


@dataclass(frozen=True)
class LinearCorpusConfig:
    """Generator settings; ranges are inclusive ``(low, high)``."""

    n_docs: int = 11
    new_kw_per_doc: tuple[int, int] = (2, 4)
    reuse_per_doc: tuple[int, int] = (2, 4)
    reuse_window: int = 2
    seed: int = 0

    def validate(self) -> None:
        lo, hi = self.new_kw_per_doc
        rlo, rhi = self.reuse_per_doc
        if self.n_docs < 1:
            raise GeneratorConfigError("n_docs must be >= 1")
        if lo < 1 or hi < lo:
            raise GeneratorConfigError(f"new_kw_per_doc must satisfy 1 <= low <= high, got {(lo, hi)}")
        if rlo < 0 or rhi < rlo:
            raise GeneratorConfigError(f"reuse_per_doc must satisfy 0 <= low <= high, got {(rlo, rhi)}")
        if self.reuse_window < 0:
            raise GeneratorConfigError("reuse_window must be >= 0")


# 11 docs, 32 keywords, 67 edges, diameter 6: close to the real 11-document
# course (31 keywords, 62 edges, diameter 6).
CHAIN11_PRESET = LinearCorpusConfig(n_docs=11, new_kw_per_doc=(2, 4), reuse_per_doc=(2, 4), reuse_window=3, seed=4)


def generate_linear_corpus(cfg: LinearCorpusConfig) -> Corpus:
    """Synthesize a corpus whose documents introduce keywords in reading order.

    Each document gets fresh keywords, and after the first one also reuses
    keywords sampled without replacement from the previous ``reuse_window``
    documents.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    docs: list[list[str]] = []
    n_kw = 0
    for i in range(cfg.n_docs):
        kws: list[str] = []
        if i > 0 and cfg.reuse_window > 0:
            pool: list[str] = []
            for prev in docs[max(0, i - cfg.reuse_window):i]:
                pool.extend(k for k in prev if k not in pool)
            want = int(rng.integers(cfg.reuse_per_doc[0], cfg.reuse_per_doc[1] + 1))
            want = min(want, len(pool))
            if want:
                picks = rng.choice(len(pool), size=want, replace=False)
                kws.extend(pool[j] for j in sorted(picks))
        fresh = int(rng.integers(cfg.new_kw_per_doc[0], cfg.new_kw_per_doc[1] + 1))
        for _ in range(fresh):
            n_kw += 1
            kws.append(f"k{n_kw:03d}")
        docs.append(kws)
    return Corpus.from_lists(docs, topic=f"linear-{cfg.n_docs}-seed{cfg.seed}")


def cumulative_keyword_counts(corpus: Corpus) -> list[int]:
    """Total distinct keywords seen after each document."""
    seen: set[str] = set()
    out = []
    for doc in corpus.documents:
        seen.update(doc.keywords)
        out.append(len(seen))
    return out


# ---------------------------------------------------------------- keyword features


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureProvider:
    kind: str = "one_hot"  # one_hot | embedding_file | seeded_random
    dim: int | None = None
    source: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("one_hot", "embedding_file", "seeded_random"):
            raise FeatureError(f"unknown feature kind {self.kind!r}")
        if self.kind == "embedding_file" and not self.source:
            raise FeatureError("embedding_file features need a source path")
        if self.kind == "seeded_random" and (self.dim is None or self.dim < 1):
            raise FeatureError("seeded_random features need dim >= 1")

    def width(self, graph: BipartiteGraph) -> int:
        """Input width K_w this provider produces for ``graph``."""
        if self.kind == "one_hot":
            return graph.kw_count
        if self.kind == "seeded_random":
            return int(self.dim)
        return keyword_features(self, graph).shape[1]


def load_embeddings(path: str | Path) -> dict[str, np.ndarray]:
    table: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            try:
                vec = np.array([float(x) for x in parts[1:]])
            except ValueError as exc:
                raise FeatureError(f"{path}:{lineno}: {exc}") from None
            if dim is None:
                dim = vec.size
            if vec.size != dim or dim == 0:
                raise FeatureError(f"{path}:{lineno}: expected {dim} values, got {vec.size}")
            table[normalize_keyword(parts[0])] = vec
    return table


def _keyword_vector(seed: int, keyword: str, dim: int) -> np.ndarray:
    digest = hashlib.sha256(f"{seed}\x00{keyword}".encode()).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def keyword_features(provider: FeatureProvider, graph: BipartiteGraph) -> Tensor:
    """Input feature matrix with one row per keyword node."""
    m = graph.kw_count
    if provider.kind == "one_hot":
        if provider.dim is not None and provider.dim != m:
            raise FeatureError(f"one_hot dim {provider.dim} != keyword count {m}")
        return Tensor(np.eye(m))
    if provider.kind == "seeded_random":
        return Tensor(np.stack([_keyword_vector(provider.seed, kw, provider.dim) for kw in graph.vocabulary]))
    table = load_embeddings(provider.source)
    rows = []
    for kw in graph.vocabulary:
        if kw not in table:
            raise FeatureError(f"no embedding for keyword {kw!r} in {provider.source}")
        rows.append(table[kw])
    mat = np.stack(rows)
    if provider.dim is not None and mat.shape[1] != provider.dim:
        raise FeatureError(f"embedding width {mat.shape[1]} != configured dim {provider.dim}")
    return Tensor(mat)


def document_features(graph: BipartiteGraph, dim: int) -> Tensor:
    return Tensor(np.zeros((graph.doc_count, dim)))
