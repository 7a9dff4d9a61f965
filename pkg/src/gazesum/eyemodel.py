"""Gaze-time (ptgt) prediction over AST nodes: eye-gnn and eye-rnn.

Every node of the linearized AST is embedded; the node states are then
refined either by GNN hops over the adjacency matrix or by a GRU over the
sequence. The focal node's raw embedding is appended as one extra row, the
``(m_cap + 1) x n`` matrix is flattened and a dense layer with a sigmoid
yields the predicted ptgt of the focal node.
"""
from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import ndops as nd
from .codeparse import EncodedMethod, Vocabulary
from .evalmetrics import pearson
from .exceptions import ConfigError, DegenerateCorrelation, UsageError
from .gaze import PtgtSample

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EyeModelConfig:
    arch: str = "gnn"
    m_cap: int = 400
    embed_dim: int = 100
    gnn_hops: int = 2
    rnn_hidden: int = 100
    dense_hidden: int = 0
    dense_init: str = "glorot"
    epochs: int = 100
    batch_size: int = 32
    optimizer: str = "adam"
    lr: float = 1e-3
    seed: int = 0
    pretrain_embedding_path: str | None = None

    def __post_init__(self):
        if self.arch not in ("gnn", "rnn"):
            raise ConfigError(f"arch must be 'gnn' or 'rnn', got {self.arch!r}")
        if self.arch == "rnn" and self.rnn_hidden != self.embed_dim:
            raise ConfigError("eye-rnn needs rnn_hidden == embed_dim so the focal "
                              "embedding row fits the state matrix")
        if self.dense_init not in ("glorot", "zeros"):
            raise ConfigError(f"dense_init must be 'glorot' or 'zeros', got {self.dense_init!r}")
        for name in ("m_cap", "embed_dim", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.gnn_hops < 0 or self.dense_hidden < 0:
            raise ConfigError("gnn_hops and dense_hidden must be non-negative")

    @property
    def name(self) -> str:
        return f"eye-{self.arch}" + ("-pretrain" if self.pretrain_embedding_path else "")

    @property
    def dense_width(self) -> int:
        return (self.m_cap + 1) * self.embed_dim


class EyeGazeNet:
    """Parameter container for one gaze-prediction configuration."""

    def __init__(self, config: EyeModelConfig, vocab: Vocabulary,
                 params: Mapping[str, nd.Tensor] | None = None):
        self.config = config
        self.vocab = vocab
        self.embedding_coverage: float | None = None
        self.params: dict[str, nd.Tensor] = dict(params) if params else self._init_params()

    def _init_params(self) -> dict:
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        n = cfg.embed_dim
        p = {"embedding": nd.Tensor(rng.normal(0.0, 0.1, (len(self.vocab), n)), True, "embedding")}
        if cfg.arch == "gnn":
            for k in range(cfg.gnn_hops):
                p[f"gnn{k}.W"] = nd.Tensor(nd.glorot(rng, n, n), True, f"gnn{k}.W")
                p[f"gnn{k}.b"] = nd.Tensor(np.zeros(n), True, f"gnn{k}.b")
        else:
            for key, t in nd.init_gru(rng, n, cfg.rnn_hidden, "rnn.").items():
                p[f"rnn.{key}"] = t
        out = cfg.dense_hidden or 1
        width = cfg.dense_width
        w = nd.glorot(rng, width, out) if cfg.dense_init == "glorot" else np.zeros((width, out))
        p["dense.W"] = nd.Tensor(w, True, "dense.W")
        p["dense.b"] = nd.Tensor(np.zeros(out), True, "dense.b")
        if cfg.dense_hidden:
            w2 = nd.glorot(rng, cfg.dense_hidden, 1) if cfg.dense_init == "glorot" \
                else np.zeros((cfg.dense_hidden, 1))
            p["out.W"] = nd.Tensor(w2, True, "out.W")
            p["out.b"] = nd.Tensor(np.zeros(1), True, "out.b")
        if cfg.pretrain_embedding_path:
            table, cov = load_pretrained_embeddings(
                cfg.pretrain_embedding_path, self.vocab, p["embedding"].data)
            p["embedding"].data = table
            self.embedding_coverage = cov
        return p

    def parameters(self) -> list[nd.Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    def gru_params(self) -> dict:
        return {k[len("rnn."):]: v for k, v in self.params.items() if k.startswith("rnn.")}

    # forward passes
    def node_states(self, ids: np.ndarray, adj: np.ndarray, length: int) -> nd.Tensor:
        """(length, n) refined node states for the non-padding prefix."""
        cfg = self.config
        emb = nd.embed_lookup(self.params["embedding"], ids[:length])
        if cfg.arch == "gnn":
            a = np.asarray(adj)[:length, :length]
            normalized = nd.degree_normalize(a)
            h = emb
            for k in range(cfg.gnn_hops):
                h = nd.gnn_hop(h, a, self.params[f"gnn{k}.W"], self.params[f"gnn{k}.b"],
                               normalized)
            return h
        gru = self.gru_params()
        h = nd.Tensor(np.zeros(cfg.rnn_hidden))
        outputs = []
        for x in nd.unbind(emb):
            h = nd.gru_cell(x, h, gru)
            outputs.append(h)
        return nd.stack(outputs)

    def _head(self, pre: nd.Tensor) -> nd.Tensor:
        if self.config.dense_hidden:
            pre = nd.relu(pre) @ self.params["out.W"] + self.params["out.b"]
        return nd.sigmoid(pre)

    def method_logits(self, ids, adj, length: int, focals: Sequence[int]) -> nd.Tensor:
        """Sigmoid outputs for several focal positions sharing one state pass.

        Padding rows of the state matrix are zero, so only the first
        ``length * n`` dense rows contribute; the focal row uses the last n.
        """
        cfg = self.config
        n = cfg.embed_dim
        focals = np.asarray(focals, dtype=np.int64)
        if focals.size and (focals.min() < 0 or focals.max() >= length):
            raise UsageError(f"focal index outside the {length} non-padding positions")
        states = self.node_states(ids, adj, length)
        W = self.params["dense.W"]
        base = nd.flatten(states) @ W[: length * n]
        focal_rows = nd.embed_lookup(self.params["embedding"], np.asarray(ids)[focals])
        pre = focal_rows @ W[cfg.m_cap * n:] + base + self.params["dense.b"]
        return nd.reshape(self._head(pre), (-1,))


def forward_ptgt(net: EyeGazeNet, ids, adj, focal_index: int, length: int | None = None) -> nd.Tensor:
    """Single focal prediction through the full (m_cap + 1) x n matrix (scalar tensor).

    This is the literal pipeline: full-size state matrix (padding rows
    zero), focal embedding appended as a row, row-major flatten, dense,
    sigmoid.
    """
    cfg = net.config
    ids = np.asarray(ids)
    if len(ids) != cfg.m_cap:
        raise UsageError(f"sequence length {len(ids)} != m_cap {cfg.m_cap}")
    if length is None:
        length = int(np.count_nonzero(np.asarray(adj).sum(axis=1)))
    if not 0 <= focal_index < cfg.m_cap:
        raise UsageError(f"focal index {focal_index} outside 0..{cfg.m_cap - 1}")
    if focal_index >= length:
        raise UsageError(f"focal index {focal_index} is a padding position")
    n = cfg.embed_dim
    mask = nd.Tensor((np.arange(cfg.m_cap) < length).astype(np.float64)[:, None])
    emb = nd.embed_lookup(net.params["embedding"], ids) * mask
    if cfg.arch == "gnn":
        h = emb
        adj = np.asarray(adj, dtype=np.float64)
        for k in range(cfg.gnn_hops):
            h = nd.gnn_hop(h, adj, net.params[f"gnn{k}.W"], net.params[f"gnn{k}.b"])
        states = h
    else:
        gru = net.gru_params()
        h = nd.Tensor(np.zeros(cfg.rnn_hidden))
        rows = []
        for t, x in enumerate(nd.unbind(emb)):
            if t < length:
                h = nd.gru_cell(x, h, gru)
                rows.append(h)
            else:
                rows.append(nd.Tensor(np.zeros(n)))
        states = nd.stack(rows)
    focal = nd.reshape(nd.embed_lookup(net.params["embedding"], ids[focal_index:focal_index + 1]),
                       (1, n))
    flat = nd.flatten(nd.concat([states, focal], axis=0))
    pre = flat @ net.params["dense.W"] + net.params["dense.b"]
    return nd.reshape(net._head(pre), ())


def predict_attention_vector(net: EyeGazeNet, method: EncodedMethod) -> np.ndarray:
    """Predicted ptgt for every non-padding node, visible and structural alike."""
    seq = method.sequence
    out = net.method_logits(seq.ids, method.adjacency, seq.length, np.arange(seq.length))
    return out.data.copy()


def predict_samples(net: EyeGazeNet, samples: Sequence[PtgtSample],
                    methods: Mapping[str, EncodedMethod]) -> np.ndarray:
    preds = np.empty(len(samples))
    by_method = defaultdict(list)
    for k, s in enumerate(samples):
        by_method[s.method_id].append(k)
    for mid, idx in by_method.items():
        enc = methods[mid]
        focals = [samples[k].focal_node_index for k in idx]
        preds[idx] = net.method_logits(enc.sequence.ids, enc.adjacency, enc.length, focals).data
    return preds


# --------------------------------------------------------------------------
# pretrained embeddings


def load_pretrained_embeddings(path, vocab: Vocabulary, table: np.ndarray):
    """Copy rows for in-vocabulary tokens from a ``token v1 ... vn`` text file.

    Returns the new table and the fraction of non-reserved vocabulary
    tokens the file covered.
    """
    table = np.array(table, dtype=np.float64)
    dim = table.shape[1]
    covered = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise ConfigError(f"{path}:{lineno}: {len(values)} values, expected {dim}")
            if token in vocab:
                table[vocab.encode(token)] = [float(v) for v in values]
                covered.add(token)
    regular = [t for t in vocab.id_to_token if t not in vocab.specials]
    coverage = len(covered & set(regular)) / len(regular) if regular else 0.0
    logger.info("pretrained embeddings cover %.1f%% of the vocabulary", 100 * coverage)
    return table, coverage


# --------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    net: EyeGazeNet
    losses: list                       # mean training MSE per epoch
    initial_loss: float
    history: list = field(default_factory=list)   # callback return values


def training_mse(net: EyeGazeNet, samples, methods) -> float:
    preds = predict_samples(net, samples, methods)
    targets = np.array([s.target for s in samples])
    return float(np.mean((preds - targets) ** 2))


def train_eye(config: EyeModelConfig, samples: Sequence[PtgtSample],
              methods: Mapping[str, EncodedMethod], vocab: Vocabulary,
              on_epoch: Callable[[int, EyeGazeNet, float], object] | None = None,
              net: EyeGazeNet | None = None) -> TrainResult:
    """Minimize MSE between predicted and observed ptgt over ``samples``.

    ``on_epoch(epoch, net, loss)`` runs after every epoch (1-based); its
    return values are collected in ``TrainResult.history``.
    """
    if not samples:
        raise ConfigError("train_eye needs at least one sample")
    missing = {s.method_id for s in samples} - set(methods)
    if missing:
        raise ConfigError(f"samples reference unknown methods {sorted(missing)[:5]}")
    for enc in methods.values():
        if enc.sequence.m_cap != config.m_cap:
            raise ConfigError(f"{enc.method_id}: encoded with m_cap {enc.sequence.m_cap}, "
                              f"config expects {config.m_cap}")
    net = net or EyeGazeNet(config, vocab)
    params = net.parameters()
    opt = nd.make_optimizer(config.optimizer, params, config.lr)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    targets = np.array([s.target for s in samples])
    initial = training_mse(net, samples, methods)
    result = TrainResult(net, [], initial)
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(samples))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            by_method: dict = defaultdict(list)
            for k in batch:
                by_method[samples[k].method_id].append(k)
            with nd.Tape() as tape:
                preds, idx = [], []
                for mid in sorted(by_method):
                    ks = by_method[mid]
                    enc = methods[mid]
                    focals = [samples[k].focal_node_index for k in ks]
                    preds.append(net.method_logits(enc.sequence.ids, enc.adjacency,
                                                   enc.length, focals))
                    idx.extend(ks)
                pred = nd.concat(preds) if len(preds) > 1 else preds[0]
                loss = nd.mse(pred, nd.Tensor(targets[idx]))
            nd.backward(tape, loss, params)
            opt.step()
            total += loss.item() * len(batch)
        epoch_loss = total / len(samples)
        result.losses.append(epoch_loss)
        if on_epoch is not None:
            result.history.append(on_epoch(epoch, net, epoch_loss))
    return result


# --------------------------------------------------------------------------
# hold-out protocol


@dataclass(frozen=True)
class Fold:
    held_programmer: str
    held_method: str
    train: tuple
    test: tuple


def make_folds(programmers: Iterable[str], common_methods: Iterable[str],
               samples: Sequence[PtgtSample]) -> list[Fold]:
    """One fold per (programmer, common method): test on that pair, train on
    every sample from other programmers over other methods."""
    programmers = sorted(set(programmers))
    common = sorted(set(common_methods))
    seen = {(s.programmer_id, s.method_id) for s in samples}
    gaps = [(p, m) for m in common for p in programmers if (p, m) not in seen]
    if gaps:
        raise ConfigError(f"common methods missing programmers: {gaps}")
    folds = []
    for m in common:
        for p in programmers:
            train = tuple(s for s in samples if s.programmer_id != p and s.method_id != m)
            test = tuple(s for s in samples if s.programmer_id == p and s.method_id == m)
            folds.append(Fold(p, m, train, test))
    return folds


def common_methods_of(samples: Sequence[PtgtSample], programmers: Iterable[str] | None = None):
    """Methods for which every programmer contributed samples."""
    by_method = defaultdict(set)
    for s in samples:
        by_method[s.method_id].add(s.programmer_id)
    everyone = set(programmers) if programmers is not None else set().union(*by_method.values())
    return sorted(m for m, ps in by_method.items() if ps >= everyone)


def evaluate_correlation(net: EyeGazeNet, fold: Fold, methods: Mapping[str, EncodedMethod]) -> float:
    """Pearson r over the held-out visible tokens; NaN when undefined."""
    if not fold.test:
        raise ConfigError(f"fold {fold.held_programmer}/{fold.held_method} has no test samples")
    preds = predict_samples(net, fold.test, methods)
    targets = [s.target for s in fold.test]
    try:
        return pearson(preds, targets)
    except (DegenerateCorrelation, ValueError):
        return math.nan


def nanmean_count(values: Iterable[float]) -> tuple[float, int]:
    """Mean over defined values and the number of undefined (NaN) ones."""
    vals = [v for v in values if not math.isnan(v)]
    return (float(np.mean(vals)) if vals else math.nan), sum(1 for v in values if math.isnan(v))


@dataclass
class CrossValidation:
    epochs: list                     # evaluated epoch numbers
    scores: dict                     # (programmer, method) -> list of r per evaluated epoch
    losses: dict = field(default_factory=dict)

    def mean_curve(self) -> list:
        return [nanmean_count(s[k] for s in self.scores.values())[0]
                for k in range(len(self.epochs))]

    def best_epoch(self) -> int:
        curve = self.mean_curve()
        defined = [(v, -e) for v, e in zip(curve, self.epochs) if not math.isnan(v)]
        return -max(defined)[1] if defined else self.epochs[-1]

    def at_epoch(self, epoch: int) -> dict:
        k = self.epochs.index(epoch)
        return {key: s[k] for key, s in self.scores.items()}


def cross_validate(config: EyeModelConfig, samples: Sequence[PtgtSample],
                   methods: Mapping[str, EncodedMethod], vocab: Vocabulary,
                   programmers: Iterable[str] | None = None,
                   common: Iterable[str] | None = None, eval_every: int = 1) -> CrossValidation:
    """Train one model per fold, recording held-out correlation along the way."""
    programmers = sorted(set(programmers) if programmers is not None
                         else {s.programmer_id for s in samples})
    common = sorted(common) if common is not None else common_methods_of(samples, programmers)
    folds = make_folds(programmers, common, samples)
    evaluated = [e for e in range(1, config.epochs + 1)
                 if e % eval_every == 0 or e == config.epochs]
    cv = CrossValidation(evaluated, {})
    for fold in folds:
        def hook(epoch, net, loss, fold=fold):
            if epoch in evaluated:
                return evaluate_correlation(net, fold, methods)
            return None
        if not fold.train:
            raise ConfigError(f"fold {fold.held_programmer}/{fold.held_method} has no training data")
        res = train_eye(config, fold.train, methods, vocab, on_epoch=hook)
        key = (fold.held_programmer, fold.held_method)
        cv.scores[key] = [h for h in res.history if h is not None]
        cv.losses[key] = res.losses
        logger.info("fold %s/%s: r=%s", *key, cv.scores[key][-1])
    return cv


def correlation_table(scores: Mapping[tuple, float], inter: Mapping[str, float] | None = None) -> str:
    """Methods as rows, programmers as columns, plus m. avg. and p. avg. rows."""
    programmers = sorted({p for p, _ in scores})
    methods = sorted({m for _, m in scores})
    fmt = lambda v: "N/A" if v is None or math.isnan(v) else f"{v:.3f}"
    width = max(7, *(len(p) + 1 for p in programmers))
    head = "method".ljust(10) + "".join(p.rjust(width) for p in programmers) + "avg.".rjust(width)
    lines = [head]
    for m in methods:
        row = [scores.get((p, m), math.nan) for p in programmers]
        lines.append(m[:10].ljust(10) + "".join(fmt(v).rjust(width) for v in row)
                     + fmt(nanmean_count(row)[0]).rjust(width))
    m_avg = [nanmean_count(scores.get((p, m), math.nan) for m in methods)[0] for p in programmers]
    lines.append("m. avg.".ljust(10) + "".join(fmt(v).rjust(width) for v in m_avg)
                 + fmt(nanmean_count(m_avg)[0]).rjust(width))
    if inter is not None:
        p_avg = [inter.get(p, math.nan) for p in programmers]
        lines.append("p. avg.".ljust(10) + "".join(fmt(v).rjust(width) for v in p_avg)
                     + fmt(nanmean_count(p_avg)[0]).rjust(width))
    return "\n".join(lines)


# --------------------------------------------------------------------------
# persistence


def save_eye_checkpoint(path, net: EyeGazeNet, **extra) -> None:
    meta = {"kind": "eye", "config": asdict(net.config), "vocab": net.vocab.to_dict(), **extra}
    nd.save_checkpoint(path, net.params, meta)


def load_eye_checkpoint(path) -> EyeGazeNet:
    arrays, meta = nd.load_checkpoint(path)
    if meta.get("kind") != "eye":
        raise ConfigError(f"{path}: not a gaze-model checkpoint")
    cfg = replace(EyeModelConfig(), **meta["config"])
    params = {k: nd.Tensor(v, True, k) for k, v in arrays.items()}
    return EyeGazeNet(cfg, Vocabulary.from_dict(meta["vocab"]), params)
