"""GraphSAGE (mean aggregator) over patient graphs, trained from scratch.

Graphs in a minibatch are stacked into one disjoint union: node features are
gathered from the embedding table, neighbor means come from a sparse
row-normalized aggregation operator, and each graph is read out at its
patient node before a logistic head.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import numeric as nm
from .errors import DegenerateSplit, EmptyEvaluation, InvalidInput, PkgSageError, ShapeError
from .graph import PatientGraph, message_edges
from .report import Metrics, compute_metrics

log = logging.getLogger(__name__)

UNK = "<unk>"
CHECKPOINT_FORMAT = "pkgsage-model/1"


@dataclass
class TrainConfig:
    d_embed: int = 32
    d_hidden: int = 64
    n_layers: int = 2
    lr: float = 1e-3
    epochs: int = 30
    seed: int = 0
    threshold: float = 0.5
    split: tuple = (0.70, 0.15, 0.15)
    class_weighting: bool = False
    batch_size: int = 32
    early_stopping: bool = False
    patience: int = 5
    readout: str = "patient"

    def __post_init__(self):
        self.split = tuple(float(s) for s in self.split)
        if len(self.split) != 3 or abs(sum(self.split) - 1.0) > 1e-9 or min(self.split) < 0:
            raise InvalidInput(f"split must be three non-negative fractions summing to 1: {self.split}")
        if min(self.d_embed, self.d_hidden, self.n_layers, self.batch_size) < 1:
            raise InvalidInput("dimensions, n_layers and batch_size must be >= 1")
        if self.epochs < 0:
            raise InvalidInput("epochs must be >= 0")
        if self.readout not in ("patient", "mean"):
            raise InvalidInput(f"unknown readout {self.readout!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split"] = list(self.split)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise InvalidInput(f"unknown train config keys {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------- parameters

@dataclass
class EmbeddingTable:
    vocab: dict
    weights: nm.Param

    @property
    def unk_row(self) -> int:
        return len(self.vocab)

    def ids(self, tokens: Sequence[str]) -> np.ndarray:
        unk = self.unk_row
        return np.fromiter((self.vocab.get(t, unk) for t in tokens), dtype=np.int64,
                           count=len(tokens))


@dataclass
class SageLayer:
    W: nm.Param
    bias: nm.Param

    @property
    def d_in(self) -> int:
        return self.W.shape[0] // 2

    @property
    def d_out(self) -> int:
        return self.W.shape[1]


@dataclass
class SageModel:
    embeddings: EmbeddingTable
    layers: list
    head_w: nm.Param
    head_b: nm.Param
    config: TrainConfig

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("a SageModel needs at least one layer")
        d = self.embeddings.weights.shape[1]
        for layer in self.layers:
            if layer.W.shape[0] != 2 * d:
                raise ShapeError(f"layer expects input dim {layer.W.shape[0] // 2}, got {d}")
            if layer.bias.shape != (1, layer.d_out):
                raise ShapeError("bias shape does not match layer output")
            d = layer.d_out
        if self.head_w.shape != (d, 1) or self.head_b.shape != (1, 1):
            raise ShapeError("head shape does not match final layer output")

    def params(self) -> list:
        out = [self.embeddings.weights]
        for layer in self.layers:
            out += [layer.W, layer.bias]
        return out + [self.head_w, self.head_b]

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()


def _token_vector(seed: int, token: str, d: int, std: float) -> np.ndarray:
    # per-token stream so a token's initial embedding does not depend on the
    # rest of the vocabulary (keeps ablation runs comparable)
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    rng = np.random.default_rng([seed, int.from_bytes(digest[:8], "little")])
    return rng.normal(0.0, std, size=d)


def init_model(vocab_tokens, config: TrainConfig, prior: Optional[float] = None) -> SageModel:
    """Fresh model over a sorted token vocabulary.

    The head weights start at zero and the head bias at the log-odds of
    `prior` (0 when no prior is given), so an untrained model predicts the
    training base rate for every graph.
    """
    tokens = sorted(set(vocab_tokens))
    vocab = {t: i for i, t in enumerate(tokens)}
    d = config.d_embed
    emb = np.zeros((len(tokens) + 1, d))
    for t, i in vocab.items():
        emb[i] = _token_vector(config.seed, t, d, 1.0 / np.sqrt(d))
    table = EmbeddingTable(vocab, nm.Param(emb, name="embeddings"))

    rng = np.random.default_rng(config.seed)
    layers = []
    d_in = d
    for i in range(config.n_layers):
        d_out = config.d_hidden
        limit = np.sqrt(6.0 / (2 * d_in + d_out))
        W = rng.uniform(-limit, limit, size=(2 * d_in, d_out))
        layers.append(SageLayer(nm.Param(W, name=f"layer{i}.W"),
                                nm.Param(np.zeros((1, d_out)), name=f"layer{i}.bias")))
        d_in = d_out
    bias = 0.0
    if prior is not None:
        q = min(max(prior, 1e-6), 1 - 1e-6)
        bias = float(np.log(q / (1 - q)))
    return SageModel(table, layers, nm.Param(np.zeros((d_in, 1)), name="head.w"),
                     nm.Param(np.full((1, 1), bias), name="head.b"), config)


# ------------------------------------------------------------------- batching

@dataclass
class GraphBatch:
    token_ids: np.ndarray
    agg: sp.csr_matrix      # n_nodes × n_nodes, row v = mean over N(v)
    pool: sp.csr_matrix     # n_graphs × n_nodes readout
    labels: np.ndarray


@dataclass
class _Prepared:
    """Per-graph arrays cached across epochs."""
    ids: np.ndarray
    senders: np.ndarray
    receivers: np.ndarray
    n: int
    label: int


def _prepare(graph: PatientGraph, table: EmbeddingTable) -> _Prepared:
    pairs = message_edges(graph)
    senders = np.array([s for s, _ in pairs], dtype=np.int64)
    receivers = np.array([d for _, d in pairs], dtype=np.int64)
    return _Prepared(table.ids(graph.tokens), senders, receivers, graph.n_nodes, graph.label)


def _assemble(items: Sequence[_Prepared], readout: str) -> GraphBatch:
    sizes = np.array([it.n for it in items], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    total = int(sizes.sum())
    ids = np.concatenate([it.ids for it in items])
    snd = np.concatenate([it.senders + off for it, off in zip(items, offsets)])
    rcv = np.concatenate([it.receivers + off for it, off in zip(items, offsets)])
    indeg = np.bincount(rcv, minlength=total).astype(np.float64)
    data = 1.0 / indeg[rcv] if rcv.size else np.zeros(0)
    agg = sp.csr_matrix((data, (rcv, snd)), shape=(total, total))
    b = len(items)
    if readout == "patient":
        pool = sp.csr_matrix((np.ones(b), (np.arange(b), offsets)), shape=(b, total))
    else:
        rows = np.repeat(np.arange(b), sizes)
        pool = sp.csr_matrix((1.0 / sizes[rows], (rows, np.arange(total))), shape=(b, total))
    labels = np.array([it.label for it in items], dtype=np.float64)
    return GraphBatch(ids, agg, pool, labels)


def make_batch(graphs: Sequence[PatientGraph], table: EmbeddingTable,
               readout: str = "patient") -> GraphBatch:
    return _assemble([_prepare(g, table) for g in graphs], readout)


# ------------------------------------------------------------ forward/backward

def embed(graph: PatientGraph, table: EmbeddingTable) -> np.ndarray:
    return table.weights.value[table.ids(graph.tokens)]


def sage_forward(features: np.ndarray, graph: PatientGraph, layer: SageLayer,
                 activation: str = "relu") -> np.ndarray:
    """One SAGE layer on a single graph: act(W·[h_v ; mean_{u∈N(v)} h_u] + b)."""
    features = nm.as_matrix(features)
    if features.shape[0] != graph.n_nodes:
        raise ShapeError(f"{features.shape[0]} feature rows for {graph.n_nodes} nodes")
    if features.shape[1] != layer.d_in:
        raise ShapeError(f"feature dim {features.shape[1]} != layer input dim {layer.d_in}")
    inbox = {v: [] for v in range(graph.n_nodes)}
    for s, d in message_edges(graph):
        inbox[d].append(s)
    neigh = np.vstack([nm.row_mean(features, inbox[v]) for v in range(graph.n_nodes)])
    z = nm.add(nm.matmul(nm.concat_cols(features, neigh), layer.W.value), layer.bias.value)
    if activation == "relu":
        return nm.relu(z)
    if activation == "linear":
        return z
    raise PkgSageError(f"unknown activation {activation!r}")


def _forward(model: SageModel, batch: GraphBatch):
    h = model.embeddings.weights.value[batch.token_ids]
    cache = []
    last = len(model.layers) - 1
    for i, layer in enumerate(model.layers):
        concat = np.concatenate([h, batch.agg @ h], axis=1)
        z = concat @ layer.W.value + layer.bias.value
        cache.append((concat, z))
        h = nm.relu(z) if i < last else z
    readout = batch.pool @ h
    logits = (readout @ model.head_w.value + model.head_b.value).ravel()
    return logits, readout, cache


def batch_logits(model: SageModel, batch: GraphBatch) -> np.ndarray:
    return _forward(model, batch)[0]


def batch_loss(model: SageModel, batch: GraphBatch, weights=None) -> float:
    logits = batch_logits(model, batch)
    return nm.bce_with_logits(logits, batch.labels, weights)[0]


def loss_and_grad(model: SageModel, batch: GraphBatch, weights=None) -> float:
    """Mean BCE over the batch; accumulates gradients into every Param."""
    logits, readout, cache = _forward(model, batch)
    loss, dlogit = nm.bce_with_logits(logits, batch.labels, weights)
    dlogit = dlogit.reshape(-1, 1)
    model.head_w.grad += readout.T @ dlogit
    model.head_b.grad += dlogit.sum(axis=0, keepdims=True)
    dh = batch.pool.T @ (dlogit @ model.head_w.value.T)
    last = len(model.layers) - 1
    for i in range(last, -1, -1):
        layer = model.layers[i]
        concat, z = cache[i]
        dz = nm.relu_backward(z, dh) if i < last else dh
        layer.W.grad += concat.T @ dz
        layer.bias.grad += dz.sum(axis=0, keepdims=True)
        dconcat = dz @ layer.W.value.T
        d_self, d_neigh = nm.split_cols(dconcat, layer.d_in)
        dh = d_self + batch.agg.T @ d_neigh
    np.add.at(model.embeddings.weights.grad, batch.token_ids, dh)
    return loss


# ---------------------------------------------------------------- prediction

def predict_many(model: SageModel, graphs: Sequence[PatientGraph],
                 chunk: int = 512) -> np.ndarray:
    out = []
    for start in range(0, len(graphs), chunk):
        batch = make_batch(graphs[start:start + chunk], model.embeddings, model.config.readout)
        out.append(nm.sigmoid(batch_logits(model, batch)))
    if not out:
        return np.zeros(0)
    return np.clip(np.concatenate(out), nm.PROB_CLAMP, 1.0 - nm.PROB_CLAMP)


def predict(model: SageModel, graph: PatientGraph) -> float:
    return float(predict_many(model, [graph])[0])


def evaluate(model: SageModel, graphs: Sequence[PatientGraph],
             threshold: Optional[float] = None) -> Metrics:
    if not graphs:
        raise EmptyEvaluation("cannot evaluate on an empty graph list")
    if threshold is None:
        threshold = model.config.threshold
    return compute_metrics(predict_many(model, graphs), [g.label for g in graphs], threshold)


# ------------------------------------------------------------------ training

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_metrics: Optional[Metrics]

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "train_loss": self.train_loss,
                "val_metrics": None if self.val_metrics is None else self.val_metrics.to_dict()}


@dataclass
class TrainResult:
    model: SageModel
    history: list
    test_metrics: Optional[Metrics]
    split: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.model.config.to_dict(),
            "history": [h.to_dict() for h in self.history],
            "test_metrics": None if self.test_metrics is None else self.test_metrics.to_dict(),
            "split_sizes": {k: len(v) for k, v in self.split.items()},
        }


def stratified_split(labels: Sequence[int], fractions, seed: int) -> dict:
    """Per-class shuffle, then cut each class by the train/val/test fractions."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    parts = {"train": [], "val": [], "test": []}
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(idx.size)]
        n_train = int(round(fractions[0] * idx.size))
        n_val = int(round(fractions[1] * idx.size))
        n_val = min(n_val, idx.size - n_train)
        parts["train"].append(idx[:n_train])
        parts["val"].append(idx[n_train:n_train + n_val])
        parts["test"].append(idx[n_train + n_val:])
    return {k: np.sort(np.concatenate(v)) for k, v in parts.items()}


def _snapshot(model: SageModel) -> list:
    return [p.value.copy() for p in model.params()]


def _restore(model: SageModel, values: list) -> None:
    for p, v in zip(model.params(), values):
        p.value[...] = v


def train(graphs: Sequence[PatientGraph], config: TrainConfig) -> TrainResult:
    if len(graphs) < 10:
        raise InvalidInput(f"need at least 10 graphs to train, got {len(graphs)}")
    labels = np.array([g.label for g in graphs])
    split = stratified_split(labels, config.split, config.seed)
    train_idx = split["train"]
    train_labels = labels[train_idx]
    if train_labels.size == 0 or train_labels.min() == train_labels.max():
        raise DegenerateSplit("training split contains a single class")
    train_graphs = [graphs[i] for i in train_idx]
    val_graphs = [graphs[i] for i in split["val"]]
    test_graphs = [graphs[i] for i in split["test"]]

    vocab = {t for g in train_graphs for t in g.tokens}
    n_pos = int(train_labels.sum())
    n_neg = train_labels.size - n_pos
    model = init_model(vocab, config, prior=n_pos / train_labels.size)
    pos_weight = n_neg / n_pos if config.class_weighting else 1.0

    prepared = [_prepare(g, model.embeddings) for g in train_graphs]
    rng = np.random.default_rng([config.seed, 1])
    params = model.params()
    history = []
    best_f1, best_state, stale = -1.0, None, 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(prepared))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            items = [prepared[i] for i in order[start:start + config.batch_size]]
            batch = _assemble(items, config.readout)
            weights = np.where(batch.labels == 1, pos_weight, 1.0)
            loss = loss_and_grad(model, batch, weights)
            for p in params:
                nm.adam_step(p, config.lr)
            total += loss * len(items)
        val = evaluate(model, val_graphs, config.threshold) if val_graphs else None
        history.append(EpochRecord(epoch, total / len(prepared), val))
        if config.early_stopping and val is not None:
            if val.f1 > best_f1:
                best_f1, best_state, stale = val.f1, _snapshot(model), 0
            else:
                stale += 1
                if stale >= config.patience:
                    log.debug("early stop at epoch %d", epoch)
                    break
    if best_state is not None:
        _restore(model, best_state)
    test = evaluate(model, test_graphs, config.threshold) if test_graphs else None
    return TrainResult(model, history, test, split)


# --------------------------------------------------------------- checkpoints

def model_to_dict(model: SageModel) -> dict:
    tokens = sorted(model.embeddings.vocab, key=model.embeddings.vocab.get)
    return {
        "format": CHECKPOINT_FORMAT,
        "config": model.config.to_dict(),
        "vocab": tokens,
        "embeddings": model.embeddings.weights.value.tolist(),
        "layers": [{"W": l.W.value.tolist(), "bias": l.bias.value.tolist()}
                   for l in model.layers],
        "head": {"w": model.head_w.value.tolist(), "b": model.head_b.value.tolist()},
    }


def model_from_dict(data: dict) -> SageModel:
    if data.get("format") != CHECKPOINT_FORMAT:
        raise PkgSageError(f"unrecognised checkpoint format {data.get('format')!r}")
    config = TrainConfig.from_dict(data["config"])
    vocab = {t: i for i, t in enumerate(data["vocab"])}
    table = EmbeddingTable(vocab, nm.Param(np.array(data["embeddings"]), name="embeddings"))
    layers = [SageLayer(nm.Param(np.array(l["W"]), name=f"layer{i}.W"),
                        nm.Param(np.array(l["bias"]), name=f"layer{i}.bias"))
              for i, l in enumerate(data["layers"])]
    return SageModel(table, layers, nm.Param(np.array(data["head"]["w"]), name="head.w"),
                     nm.Param(np.array(data["head"]["b"]), name="head.b"), config)


def save_model(model: SageModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path) -> SageModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
