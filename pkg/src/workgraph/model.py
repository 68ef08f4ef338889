"""Relation-, type- and relevance-aware attention GNN over working graphs.

A mini-batch is the disjoint union of its working graphs: node and edge
arrays are concatenated with offsets, so one forward pass covers every
(question, choice) graph in the batch and batch normalization inside each
layer's update MLP sees all node messages of the batch.

Per layer, for an edge s -> t::

    m_st  = f_m([h_s, u_s, r_st])
    q_s   = f_q([h_s, u_s, rho_s]);   k_t = f_k([h_t, u_t, rho_t, r_st])
    alpha = softmax over the source's edges of q_s . k_t / sqrt(D)
    h_t' = f_n(sum_s alpha_st m_st) + h_t
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import tensor_core as tc
from .errors import DataError, NumericalError
from .graph_builder import NUM_NODE_TYPES, Z, WorkingGraph
from .kg_store import EntityEmbeddings
from .tensor_core import MLP, Linear, ParamStore, Tensor

POOLING_MODES = ("attention", "mean")
NORMALIZATION_MODES = ("outgoing", "incoming")


@dataclass
class ModelConfig:
    D: int = 200
    L: int = 5
    dropout_p: float = 0.2
    d_lm: int | None = None  # defaults to D
    entity_dim: int | None = None  # width of the learned entity table; defaults to D
    use_relevance_in_attention: bool = True
    use_type_embedding: bool = True
    use_relation_embedding: bool = True
    pooling: str = "attention"
    normalize_attention_over: str = "outgoing"
    batch_norm: bool = True
    use_gnn: bool = True  # False gives the encoder-only baseline

    def __post_init__(self):
        if self.D <= 0 or self.D % 2:
            raise ValueError(f"D must be a positive even number, got {self.D}")
        if self.L < 1:
            raise ValueError(f"L must be >= 1, got {self.L}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")
        if self.pooling not in POOLING_MODES:
            raise ValueError(f"pooling must be one of {POOLING_MODES}")
        if self.normalize_attention_over not in NORMALIZATION_MODES:
            raise ValueError(f"normalize_attention_over must be one of {NORMALIZATION_MODES}")
        if self.d_lm is None:
            self.d_lm = self.D
        if self.entity_dim is None:
            self.entity_dim = self.D

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


class TokenVocab:
    """Token to id map; id 0 is the unknown token."""

    UNK = "<unk>"

    def __init__(self, tokens: Iterable[str] = ()):
        self.tokens = [self.UNK]
        self.index = {self.UNK: 0}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self.index:
            self.index[token] = len(self.tokens)
            self.tokens.append(token)
        return self.index[token]

    def ids(self, tokens: Sequence[str]) -> list[int]:
        return [self.index.get(t, 0) for t in tokens]

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def from_graphs(cls, graphs: Iterable[WorkingGraph]) -> "TokenVocab":
        seen: set[str] = set()
        for wg in graphs:
            seen.update(wg.context_tokens)
        return cls(sorted(seen))


@dataclass
class GraphBatch:
    """Disjoint union of working graphs with global node/edge indexing."""

    graphs: list[WorkingGraph]
    node_offsets: np.ndarray
    edge_offsets: np.ndarray
    node_graph: np.ndarray
    entity_ids: np.ndarray
    node_types: np.ndarray
    relevance: np.ndarray
    src: np.ndarray
    rel: np.ndarray
    dst: np.ndarray
    z_index: np.ndarray
    entity_nodes: np.ndarray
    token_ids: np.ndarray
    token_graph: np.ndarray
    token_counts: np.ndarray
    num_relations: int
    z_lm: np.ndarray | None = None

    @property
    def num_graphs(self) -> int:
        return len(self.graphs)

    @property
    def num_nodes(self) -> int:
        return int(self.node_offsets[-1])

    @property
    def num_edges(self) -> int:
        return int(self.edge_offsets[-1])


def collate(graphs: Sequence[WorkingGraph], vocab: TokenVocab,
            z_lm: Mapping[tuple[str, int], np.ndarray] | None = None) -> GraphBatch:
    if not graphs:
        raise ValueError("cannot collate an empty list of graphs")
    num_rel = graphs[0].num_relations
    if any(g.num_relations != num_rel for g in graphs):
        raise DataError("graphs in a batch must share one relation layout")
    n_nodes = np.array([g.num_nodes for g in graphs])
    n_edges = np.array([g.num_edges for g in graphs])
    node_off = np.concatenate([[0], np.cumsum(n_nodes)])
    edge_off = np.concatenate([[0], np.cumsum(n_edges)])
    shift = np.repeat(node_off[:-1], n_edges)
    node_types = np.concatenate([g.node_types for g in graphs])
    tokens = [vocab.ids(g.context_tokens) for g in graphs]
    if any(len(t) == 0 for t in tokens):
        raise DataError("every working graph needs a nonempty context")
    counts = np.array([len(t) for t in tokens])
    zvec = None
    if z_lm is not None:
        try:
            zvec = np.stack([z_lm[(g.example_id, g.choice_index)] for g in graphs])
        except KeyError as exc:
            raise DataError(f"no external context vector for {exc.args[0]}") from None
    return GraphBatch(
        graphs=list(graphs),
        node_offsets=node_off,
        edge_offsets=edge_off,
        node_graph=np.repeat(np.arange(len(graphs)), n_nodes),
        entity_ids=np.concatenate([g.entity_ids for g in graphs]),
        node_types=node_types,
        relevance=np.concatenate([g.relevance for g in graphs]),
        src=np.concatenate([g.src for g in graphs]) + shift,
        rel=np.concatenate([g.rel for g in graphs]),
        dst=np.concatenate([g.dst for g in graphs]) + shift,
        z_index=node_off[:-1].copy(),
        entity_nodes=np.flatnonzero(node_types != Z),
        token_ids=np.concatenate([np.asarray(t, dtype=np.int64) for t in tokens]),
        token_graph=np.repeat(np.arange(len(graphs)), counts),
        token_counts=counts,
        num_relations=num_rel,
        z_lm=zvec,
    )


@dataclass
class AttentionRecord:
    """Edge list of one working graph plus its attention weights per layer."""

    src: np.ndarray
    dst: np.ndarray
    rel: np.ndarray
    layers: list[np.ndarray]

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def alpha(self, layer: int | None = None) -> np.ndarray:
        """Weights of a 1-based layer number; ``None`` means the last layer."""
        if layer is None:
            return self.layers[-1]
        if not 1 <= layer <= len(self.layers):
            raise IndexError(f"layer {layer} outside 1..{len(self.layers)}")
        return self.layers[layer - 1]


@dataclass
class ForwardResult:
    logits: Tensor
    z_lm: Tensor
    z_gnn: Tensor | None = None
    pooled: Tensor | None = None
    h: Tensor | None = None
    attention: list[np.ndarray] = field(default_factory=list)
    pool_weights: np.ndarray | None = None

    def attention_record(self, batch: GraphBatch, i: int) -> AttentionRecord:
        lo, hi = batch.edge_offsets[i], batch.edge_offsets[i + 1]
        shift = batch.node_offsets[i]
        return AttentionRecord(batch.src[lo:hi] - shift, batch.dst[lo:hi] - shift,
                               batch.rel[lo:hi].copy(), [a[lo:hi].copy() for a in self.attention])


def _one_hot(index: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros((index.shape[0], width))
    out[np.arange(index.shape[0]), index] = 1.0
    return out


class GraphReasoner:
    """Context encoder, GNN over working graphs, pooling and answer head.

    Parameters named ``encoder.*`` form the encoder learning-rate group;
    everything else is the GNN group.
    """

    def __init__(self, config: ModelConfig, num_relations: int, num_entities: int, vocab: TokenVocab,
                 entity_embeddings: EntityEmbeddings | None = None, seed: int = 0):
        self.config = config
        self.num_relations = num_relations
        self.num_entities = num_entities
        self.vocab = vocab
        self.seed = seed
        self.fixed_embeddings = entity_embeddings
        self.store = store = ParamStore(seed)
        D, d_lm = config.D, config.d_lm
        self.message_count = 0
        self.relation_rows = 0

        store.add("encoder.tokens", (len(vocab), d_lm), "normal")
        self.f_enc = MLP(store, "encoder.mlp", d_lm, d_lm, d_lm)
        if not config.use_gnn:
            self.head = MLP(store, "head", d_lm, D, 1)
            return

        if entity_embeddings is None:
            store.add("gnn.entity_table", (num_entities, config.entity_dim), "normal")
            ent_dim = config.entity_dim
        else:
            if entity_embeddings.vectors.shape[0] != num_entities:
                raise DataError("entity embeddings do not match the entity vocabulary")
            ent_dim = entity_embeddings.dim
        self.f_h = Linear(store, "gnn.f_h", ent_dim, D)
        self.f_hz = Linear(store, "gnn.f_hz", d_lm, D)
        self.f_u = Linear(store, "gnn.f_u", NUM_NODE_TYPES, D // 2)
        self.f_r = MLP(store, "gnn.f_r", num_relations + 2 * NUM_NODE_TYPES, D, D)
        self.f_rho = MLP(store, "gnn.f_rho", 1, D // 2, D // 2)
        self.layers = []
        for layer in range(config.L):
            p = f"gnn.layer{layer}"
            self.layers.append({
                "f_m": Linear(store, f"{p}.f_m", 5 * D // 2, D),
                "f_q": Linear(store, f"{p}.f_q", 2 * D, D),
                "f_k": Linear(store, f"{p}.f_k", 3 * D, D),
                "f_n": MLP(store, f"{p}.f_n", D, D, D, norm=config.batch_norm),
            })
        if config.pooling == "attention":
            self.f_pool = Linear(store, "gnn.pool", d_lm, D, bias=False)
        self.head = MLP(store, "head", d_lm + 2 * D, D, 1)

    @property
    def params(self) -> ParamStore:
        return self.store

    # ------------------------------------------------------------ pieces

    def encode_context(self, batch: GraphBatch) -> Tensor:
        """Mean of token embeddings through a 2-layer MLP, one row per graph."""
        if batch.z_lm is not None:
            if batch.z_lm.shape[1] != self.config.d_lm:
                raise DataError(f"external context vectors have width {batch.z_lm.shape[1]}, "
                                f"expected {self.config.d_lm}")
            return Tensor(batch.z_lm)
        if (batch.token_counts == 0).any():
            raise DataError("empty token list")
        emb = tc.take_rows(self.store["encoder.tokens"], batch.token_ids)
        w = (1.0 / batch.token_counts)[batch.token_graph][:, None]
        bag = tc.scatter_add(tc.mul(emb, w), batch.token_graph, batch.num_graphs)
        return self.f_enc(bag)

    def init_node_states(self, batch: GraphBatch, z_lm: Tensor) -> Tensor:
        ents = batch.entity_nodes
        ids = batch.entity_ids[ents]
        if self.fixed_embeddings is None:
            emb = tc.take_rows(self.store["gnn.entity_table"], ids)
        else:
            absent = ids[~self.fixed_embeddings.present[ids]]
            if absent.size:
                raise DataError(f"no embedding for entity id(s) {sorted(set(absent.tolist()))[:5]}")
            emb = Tensor(self.fixed_embeddings.vectors[ids])
        n = batch.num_nodes
        h_ent = tc.scatter_add(self.f_h(emb), ents, n)
        h_z = tc.scatter_add(self.f_hz(z_lm), batch.z_index, n)
        return h_ent + h_z

    def type_relation_embed(self, batch: GraphBatch) -> tuple[Tensor, Tensor]:
        """Node type embeddings [N, D/2] and relation embeddings [E, D].

        ``f_r`` is evaluated once per distinct (relation, source type,
        target type) combination and gathered per edge.
        """
        cfg = self.config
        types = batch.node_types
        D = cfg.D
        if cfg.use_type_embedding:
            u = self.f_u(Tensor(_one_hot(types, NUM_NODE_TYPES)))
        else:
            u = Tensor(np.zeros((batch.num_nodes, D // 2)))
        if not cfg.use_relation_embedding:
            self.relation_rows = 0
            return u, Tensor(np.zeros((batch.num_edges, D)))
        ts, tt = types[batch.src], types[batch.dst]
        if not cfg.use_type_embedding:
            ts = np.zeros_like(ts)
            tt = np.zeros_like(tt)
        code = (batch.rel * NUM_NODE_TYPES + ts) * NUM_NODE_TYPES + tt
        uniq, inverse = np.unique(code, return_inverse=True)
        u_tt = uniq % NUM_NODE_TYPES
        u_ts = (uniq // NUM_NODE_TYPES) % NUM_NODE_TYPES
        u_rel = uniq // (NUM_NODE_TYPES * NUM_NODE_TYPES)
        feats = [_one_hot(u_rel, self.num_relations)]
        type_feats = [_one_hot(u_ts, NUM_NODE_TYPES), _one_hot(u_tt, NUM_NODE_TYPES)]
        if not cfg.use_type_embedding:
            type_feats = [np.zeros_like(f) for f in type_feats]
        r_unique = self.f_r(Tensor(np.concatenate(feats + type_feats, axis=1)))
        self.relation_rows = int(uniq.shape[0])
        return u, tc.take_rows(r_unique, inverse.reshape(-1))

    def embed_relevance(self, batch: GraphBatch) -> Tensor:
        if not self.config.use_relevance_in_attention:
            return Tensor(np.zeros((batch.num_nodes, self.config.D // 2)))
        return self.f_rho(Tensor(batch.relevance[:, None]))

    def compute_messages(self, layer: int, h: Tensor, u: Tensor, r: Tensor, batch: GraphBatch) -> Tensor:
        f_m = self.layers[layer]["f_m"]
        self.message_count += batch.num_edges
        return f_m(tc.concat([tc.take_rows(h, batch.src), tc.take_rows(u, batch.src), r], axis=1))

    def compute_attention(self, layer: int, h: Tensor, u: Tensor, r: Tensor, rho: Tensor,
                          batch: GraphBatch) -> Tensor:
        lay = self.layers[layer]
        src, dst = batch.src, batch.dst
        q = lay["f_q"](tc.concat([h, u, rho], axis=1))
        k = lay["f_k"](tc.concat([tc.take_rows(h, dst), tc.take_rows(u, dst), tc.take_rows(rho, dst), r], axis=1))
        gamma = tc.mul(tc.tsum(tc.mul(tc.take_rows(q, src), k), axis=1), 1.0 / math.sqrt(self.config.D))
        segments = src if self.config.normalize_attention_over == "outgoing" else dst
        return tc.segment_softmax(gamma, segments, batch.num_nodes)

    def gnn_layer(self, layer: int, h: Tensor, u: Tensor, r: Tensor, rho: Tensor, batch: GraphBatch,
                  training: bool, rng: np.random.Generator | None) -> tuple[Tensor, Tensor]:
        m = self.compute_messages(layer, h, u, r, batch)
        alpha = self.compute_attention(layer, h, u, r, rho, batch)
        agg = tc.scatter_add(tc.mul(m, tc.reshape(alpha, (-1, 1))), batch.dst, batch.num_nodes)
        out = self.layers[layer]["f_n"](agg, training)
        out = tc.dropout(out, self.config.dropout_p, training, rng)
        return h + out, alpha

    def pool_graph(self, h: Tensor, batch: GraphBatch, z_lm: Tensor) -> tuple[Tensor, np.ndarray | None]:
        """Pool entity rows (z excluded) per graph; graphs without entities pool to zero."""
        ents = batch.entity_nodes
        G = batch.num_graphs
        graph_of = batch.node_graph[ents]
        h_ent = tc.take_rows(h, ents)
        if self.config.pooling == "mean":
            counts = np.bincount(graph_of, minlength=G).astype(float)
            w = (1.0 / counts[graph_of])[:, None]
            return tc.scatter_add(tc.mul(h_ent, w), graph_of, G), None
        key = tc.take_rows(self.f_pool(z_lm), graph_of)
        weights = tc.segment_softmax(tc.tsum(tc.mul(h_ent, key), axis=1), graph_of, G)
        pooled = tc.scatter_add(tc.mul(h_ent, tc.reshape(weights, (-1, 1))), graph_of, G)
        return pooled, weights.data

    def score_answer(self, z_lm: Tensor, z_gnn: Tensor, g: Tensor) -> Tensor:
        return tc.reshape(self.head(tc.concat([z_lm, z_gnn, g], axis=1)), (-1,))

    # ------------------------------------------------------------ full pass

    def forward(self, batch: GraphBatch, training: bool = False,
                rng: np.random.Generator | None = None) -> ForwardResult:
        z_lm = self.encode_context(batch)
        if not self.config.use_gnn:
            return ForwardResult(tc.reshape(self.head(z_lm), (-1,)), z_lm)
        h = self.init_node_states(batch, z_lm)
        u, r = self.type_relation_embed(batch)
        rho = self.embed_relevance(batch)
        attention = []
        for layer in range(self.config.L):
            h, alpha = self.gnn_layer(layer, h, u, r, rho, batch, training, rng)
            attention.append(alpha.data)
        g, pool_w = self.pool_graph(h, batch, z_lm)
        z_gnn = tc.take_rows(h, batch.z_index)
        logits = self.score_answer(z_lm, z_gnn, g)
        if not np.isfinite(logits.data).all():  # pragma: no cover - guarded per op
            raise NumericalError("non-finite logits")
        return ForwardResult(logits, z_lm, z_gnn, g, h, attention, pool_w)

    def __call__(self, batch: GraphBatch, training: bool = False, rng=None) -> Tensor:
        return self.forward(batch, training, rng).logits

    # ------------------------------------------------------------ persistence

    def describe(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "num_relations": self.num_relations,
            "num_entities": self.num_entities,
            "vocab": self.vocab.tokens,
            "seed": self.seed,
        }

    def save(self, directory: str | Path, extra: Mapping | None = None) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        tc.save_tensors(directory / "checkpoint.wgt", self.store.state_dict())
        meta = self.describe()
        if extra:
            meta.update(extra)
        (directory / "model.json").write_text(json.dumps(meta, indent=1, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, directory: str | Path, entity_embeddings: EntityEmbeddings | None = None) -> "GraphReasoner":
        directory = Path(directory)
        meta = json.loads((directory / "model.json").read_text(encoding="utf-8"))
        vocab = TokenVocab()
        for tok in meta["vocab"][1:]:
            vocab.add(tok)
        model = cls(ModelConfig.from_dict(meta["config"]), meta["num_relations"], meta["num_entities"],
                    vocab, entity_embeddings, seed=meta.get("seed", 0))
        model.store.load_state_dict(tc.load_tensors(directory / "checkpoint.wgt"))
        model.meta = meta
        return model


def load_external_context_vectors(source: str | Iterable[str]) -> dict[tuple[str, int], np.ndarray]:
    """Parse ``example_id<TAB>choice_index<TAB>v1 ... v_d`` lines."""
    lines = source.splitlines() if isinstance(source, str) else source
    out: dict[tuple[str, int], np.ndarray] = {}
    dim = None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise DataError(f"line {lineno}: expected id<TAB>choice<TAB>vector")
        try:
            vec = np.array([float(x) for x in fields[2].split()])
            key = (fields[0], int(fields[1]))
        except ValueError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
        if dim is None:
            dim = vec.shape[0]
        elif vec.shape[0] != dim:
            raise DataError(f"line {lineno}: vector width {vec.shape[0]} != {dim}")
        out[key] = vec
    return out
