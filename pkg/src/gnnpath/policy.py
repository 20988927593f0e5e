"""Graph-attention recommendation policy over the document/keyword graph.

Pipeline for one decision step:

1. project keyword features to width K; documents start as zero vectors;
2. first block: KW->DOC, DOC->KW, KW->DOC;
3. multiply document embeddings by MLP(one-hot feedback);
4. second block: DOC->KW (the keyword embeddings here are the knowledge
   state estimate), then KW->DOC;
5. multiply document embeddings by MLP(remaining steps);
6. score each document with an MLP and softmax over all documents.

Weights act on row vectors (``h @ W``), so an MLP from width K1 to K2 has
``A1`` of shape ``(K1, K)`` and ``A2`` of shape ``(K, K2)``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Segments, Tensor
from .corpus import BipartiteGraph
from .env import N_FEEDBACK, Feedback


class PolicyConfigError(ValueError):
    pass


# (name, direction); each application has its own weights.
GAT_LAYERS = (
    ("gat1", "kw2doc"),
    ("gat2", "doc2kw"),
    ("gat3", "kw2doc"),
    ("gat4", "doc2kw"),
    ("gat5", "kw2doc"),
)
MLPS = ("mlp_feedback", "mlp_time", "mlp_score")


@dataclass(frozen=True)
class PolicyDims:
    kw_dim: int  # K_w
    hidden: int = 32  # K
    heads: int = 2
    feedback_dim: int = N_FEEDBACK  # K_d
    time_dim: int = 1  # K_tau

    def validate(self) -> None:
        for name in ("kw_dim", "hidden", "heads", "feedback_dim", "time_dim"):
            if getattr(self, name) < 1:
                raise PolicyConfigError(f"{name} must be >= 1")

    def mlp_shapes(self) -> dict[str, tuple[int, int]]:
        k = self.hidden
        return {"mlp_feedback": (self.feedback_dim, k), "mlp_time": (self.time_dim, k), "mlp_score": (k, 1)}

    def parameter_count(self) -> int:
        """Closed-form count of scalar parameters."""
        k = self.hidden
        gat = len(GAT_LAYERS) * self.heads * (k * k + 2 * k)
        mlps = sum(k1 * k + k + k * k2 + k2 for k1, k2 in self.mlp_shapes().values())
        return self.kw_dim * k + gat + mlps


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_policy(dims: PolicyDims, seed: int = 0) -> ParameterSet:
    """Glorot-uniform weights, zero biases, reproducible per seed."""
    dims.validate()
    rng = np.random.default_rng(seed)
    k = dims.hidden
    params = ParameterSet()
    # Draw in a fixed order so the stream does not depend on dict ordering.
    params["input_proj"] = Tensor(_glorot(rng, dims.kw_dim, k, (dims.kw_dim, k)))
    for layer, _ in GAT_LAYERS:
        for h in range(dims.heads):
            params[f"{layer}.h{h}.W"] = Tensor(_glorot(rng, k, k, (k, k)))
            params[f"{layer}.h{h}.v"] = Tensor(_glorot(rng, k, 1, (k,)))
            params[f"{layer}.h{h}.B"] = Tensor(np.zeros(k))
    for name, (k1, k2) in dims.mlp_shapes().items():
        params[f"{name}.A1"] = Tensor(_glorot(rng, k1, k, (k1, k)))
        params[f"{name}.B1"] = Tensor(np.zeros(k))
        params[f"{name}.A2"] = Tensor(_glorot(rng, k, k2, (k, k2)))
        params[f"{name}.B2"] = Tensor(np.zeros(k2))
    return params


def policy_dims(params: ParameterSet) -> PolicyDims:
    kw_dim, k = params["input_proj"].shape
    heads = sum(1 for name in params if name.startswith("gat1.") and name.endswith(".W"))
    return PolicyDims(
        kw_dim=kw_dim,
        hidden=k,
        heads=heads,
        feedback_dim=params["mlp_feedback.A1"].shape[0],
        time_dim=params["mlp_time.A1"].shape[0],
    )


# ---------------------------------------------------------------- graph layout


@dataclass(frozen=True)
class _Direction:
    src: np.ndarray  # sending node of each edge
    recv: np.ndarray  # receiving node of each edge
    groups: Segments  # edge positions per receiver, ascending by sender
    n_recv: int


class GraphLayout:
    """Edge index arrays for ``copies`` disjoint replicas of a graph.

    Replica ``b`` owns documents ``b*n .. b*n + n - 1`` and keywords
    ``b*m .. b*m + m - 1``.
    """

    def __init__(self, graph: BipartiteGraph, copies: int = 1):
        n, m = graph.doc_count, graph.kw_count
        self.graph = graph
        self.copies = copies
        self.n_docs = n * copies
        self.n_kws = m * copies
        self.kw2doc = self._direction(graph.doc_adj, n, m, copies)
        self.doc2kw = self._direction(graph.kw_adj, m, n, copies)
        self.doc_groups = Segments([range(b * n, (b + 1) * n) for b in range(copies)])

    @staticmethod
    def _direction(adj, n_recv, n_src, copies) -> _Direction:
        src, recv, groups = [], [], []
        for b in range(copies):
            for r, neigh in enumerate(adj):
                start = len(src)
                for s in neigh:
                    src.append(b * n_src + s)
                    recv.append(b * n_recv + r)
                groups.append(range(start, len(src)))
        return _Direction(
            np.asarray(src, dtype=np.intp), np.asarray(recv, dtype=np.intp), Segments(groups), n_recv * copies
        )


@functools.lru_cache(maxsize=64)
def graph_layout(graph: BipartiteGraph, copies: int = 1) -> GraphLayout:
    return GraphLayout(graph, copies)


# ---------------------------------------------------------------- building blocks


def mlp_apply(params, prefix: str, x: Tensor) -> Tensor:
    """One-hidden-layer MLP ``relu(x A1 + B1) A2 + B2`` applied to each row of ``x``.

    ``x`` may be a single vector or an ``n x K1`` matrix.
    """
    A1, B1 = params[f"{prefix}.A1"], params[f"{prefix}.B1"]
    A2, B2 = params[f"{prefix}.A2"], params[f"{prefix}.B2"]
    vector = x.data.ndim == 1
    if vector:
        x = ad.reshape(x, (1, x.shape[0]))
    if x.shape[1] != A1.shape[0]:
        raise PolicyConfigError(f"{prefix}: input width {x.shape[1]} != {A1.shape[0]}")
    rows = x.shape[0]
    hidden = ad.relu(ad.add(ad.matmul(x, A1), ad.expand_rows(B1, rows)))
    out = ad.add(ad.matmul(hidden, A2), ad.expand_rows(B2, rows))
    if vector:
        out = ad.reshape(out, (out.shape[1],))
    return out


def attention_coefficients(W: Tensor, v: Tensor, neighbor_embs: Tensor, receiver_emb: Tensor) -> Tensor:
    """Additive attention of one receiver over its neighbours.

    score_i = v . tanh(h_i W + h_r W), normalized with a softmax.
    """
    n = neighbor_embs.shape[0]
    if n < 1:
        raise ValueError("attention needs at least one neighbour")
    p = ad.matmul(neighbor_embs, W)
    q = ad.matmul(ad.reshape(receiver_emb, (1, receiver_emb.shape[0])), W)
    q = ad.index_rows(q, np.zeros(n, dtype=np.intp))
    k = W.shape[1]
    scores = ad.reshape(ad.matmul(ad.tanh(ad.add(p, q)), ad.reshape(v, (k, 1))), (n,))
    return ad.masked_softmax(scores, list(range(n)))


def _gat_head(params, prefix: str, direction: _Direction, h_src: Tensor, h_recv: Tensor) -> Tensor:
    W = params[f"{prefix}.W"]
    v = params[f"{prefix}.v"]
    B = params[f"{prefix}.B"]
    k = W.shape[1]
    e = direction.src.size
    p = ad.index_rows(ad.matmul(h_src, W), direction.src)
    q = ad.index_rows(ad.matmul(h_recv, W), direction.recv)
    scores = ad.reshape(ad.matmul(ad.tanh(ad.add(p, q)), ad.reshape(v, (k, 1))), (e,))
    alpha = ad.segment_softmax(scores, direction.groups)
    messages = ad.hadamard(p, ad.expand_cols(alpha, k))
    agg = ad.gather_sum(messages, direction.groups)
    return ad.add(agg, ad.expand_rows(B, direction.n_recv))


def gat_layer(params, layer: str, direction: _Direction, h_src: Tensor, h_recv: Tensor, heads: int) -> Tensor:
    """One bipartite GAT application; heads are averaged before the ReLU.

    Receivers without neighbours get ``relu(B)``.
    """
    out = _gat_head(params, f"{layer}.h0", direction, h_src, h_recv)
    for h in range(1, heads):
        out = ad.add(out, _gat_head(params, f"{layer}.h{h}", direction, h_src, h_recv))
    if heads > 1:
        out = ad.scale(out, 1.0 / heads)
    return ad.relu(out)


def gat_kw_to_doc(params, layer: str, layout: GraphLayout, h_w: Tensor, h_d: Tensor, heads: int) -> Tensor:
    return gat_layer(params, layer, layout.kw2doc, h_w, h_d, heads)


def gat_doc_to_kw(params, layer: str, layout: GraphLayout, h_d: Tensor, h_w: Tensor, heads: int) -> Tensor:
    return gat_layer(params, layer, layout.doc2kw, h_d, h_w, heads)


# ---------------------------------------------------------------- forward pass


@dataclass
class SessionState:
    """What the policy knows about the current learner."""

    n_docs: int
    horizon: int
    feedback: np.ndarray = field(default=None)
    step: int = 0

    def __post_init__(self):
        if self.feedback is None:
            self.feedback = np.full(self.n_docs, int(Feedback.NOT_VISITED), dtype=np.intp)
        if not 0 <= self.step <= self.horizon:
            raise ValueError(f"step {self.step} outside [0, {self.horizon}]")

    @property
    def remaining(self) -> int:
        return self.horizon - self.step

    def observe(self, doc: int, feedback: Feedback) -> None:
        self.feedback[doc] = int(feedback)
        self.step += 1

    def copy(self) -> SessionState:
        return SessionState(self.n_docs, self.horizon, self.feedback.copy(), self.step)


@dataclass
class ActionDistribution:
    probs: np.ndarray
    log_probs: Tensor
    scores: Tensor
    knowledge_state: Tensor | None = None

    def __len__(self) -> int:
        return self.probs.size


@dataclass
class BatchOutput:
    scores: Tensor  # (copies * n,)
    log_probs: Tensor  # (copies * n,)
    knowledge_state: Tensor  # (copies * m, K)
    n_docs: int


def encode_graph(params, graph: BipartiteGraph, features: Tensor) -> tuple[Tensor, Tensor]:
    """First block; independent of the learner, so it can be shared across a batch.

    Returns document embeddings after the block and the keyword embeddings
    from its middle layer.
    """
    dims = policy_dims(params)
    if features.shape != (graph.kw_count, dims.kw_dim):
        raise PolicyConfigError(
            f"keyword features have shape {features.shape}, policy expects ({graph.kw_count}, {dims.kw_dim})"
        )
    layout = graph_layout(graph, 1)
    x_w = ad.matmul(features, params["input_proj"])
    x_d = ad.constant(np.zeros((graph.doc_count, dims.hidden)))
    h_d = gat_kw_to_doc(params, "gat1", layout, x_w, x_d, dims.heads)
    h_w = gat_doc_to_kw(params, "gat2", layout, h_d, x_w, dims.heads)
    h_d = gat_kw_to_doc(params, "gat3", layout, h_w, h_d, dims.heads)
    return h_d, h_w


def forward_batch(params, graph: BipartiteGraph, features: Tensor, sessions: list[SessionState]) -> BatchOutput:
    """Evaluate the policy for several sessions at once on disjoint graph replicas."""
    dims = policy_dims(params)
    n, m, b = graph.doc_count, graph.kw_count, len(sessions)
    for s in sessions:
        if s.n_docs != n:
            raise PolicyConfigError(f"session has {s.n_docs} documents, graph has {n}")
        if s.step >= s.horizon:
            raise ValueError("session is already over")
    h_d, h_w = encode_graph(params, graph, features)
    layout = graph_layout(graph, b)
    if b > 1:
        h_d = ad.index_rows(h_d, np.tile(np.arange(n), b))
        h_w = ad.index_rows(h_w, np.tile(np.arange(m), b))

    fb = np.zeros((b * n, dims.feedback_dim))
    fb[np.arange(b * n), np.concatenate([s.feedback for s in sessions])] = 1.0
    h_phi = ad.hadamard(h_d, mlp_apply(params, "mlp_feedback", ad.constant(fb)))

    knowledge = gat_doc_to_kw(params, "gat4", layout, h_phi, h_w, dims.heads)
    h_d3 = gat_kw_to_doc(params, "gat5", layout, knowledge, h_phi, dims.heads)

    remaining = np.repeat([float(s.remaining) for s in sessions], n).reshape(-1, 1)
    if dims.time_dim != 1:
        raise PolicyConfigError("remaining time is a scalar counter; time_dim must be 1")
    h_tau = ad.hadamard(h_d3, mlp_apply(params, "mlp_time", ad.constant(remaining)))

    scores = ad.reshape(mlp_apply(params, "mlp_score", h_tau), (b * n,))
    log_probs = ad.segment_log_softmax(scores, layout.doc_groups)
    return BatchOutput(scores, log_probs, knowledge, n)


def forward(params, graph: BipartiteGraph, features: Tensor, session: SessionState) -> ActionDistribution:
    out = forward_batch(params, graph, features, [session])
    probs = np.exp(out.log_probs.data)
    probs /= probs.sum()
    return ActionDistribution(probs, out.log_probs, out.scores, out.knowledge_state)


def sample_action(dist: ActionDistribution, rng: np.random.Generator) -> tuple[int, Tensor]:
    """Draw a document index; the returned log-probability stays on the graph."""
    cdf = np.cumsum(dist.probs)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    idx = min(idx, dist.probs.size - 1)
    return idx, ad.pick(dist.log_probs, idx)


def greedy_action(dist: ActionDistribution) -> int:
    return int(np.argmax(dist.probs))
