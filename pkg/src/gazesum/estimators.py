"""scikit-learn style wrappers around the parser, gaze model and summarizer."""
from __future__ import annotations

from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .codeparse import DEFAULT_M_CAP, EncodedMethod, Vocabulary, build_vocab, encode_method, parse_method
from .eyemodel import EyeModelConfig, predict_attention_vector, predict_samples, train_eye
from .gaze import PtgtSample
from .summarizer import (SummaryExample, SummaryModelConfig, build_summary_vocab, encode_summary,
                         generate_batch, normalize_attention, summary_tokens, train_summarizer)
from .validation import check_attention, check_focal_pairs, check_sources


class AstEncoder(TransformerMixin, BaseEstimator):
    """Java method sources -> :class:`EncodedMethod` (ids + adjacency)."""

    def __init__(self, m_cap: int = DEFAULT_M_CAP, vocab_size: int = 10_000, self_loops: bool = True):
        self.m_cap = m_cap
        self.vocab_size = vocab_size
        self.self_loops = self_loops

    def fit(self, X, y=None):
        sources = check_sources(X)
        graphs = [parse_method(s, f"m{i}") for i, s in enumerate(sources)]
        self.vocab_ = build_vocab(graphs, self.vocab_size)
        return self

    def transform(self, X) -> list[EncodedMethod]:
        check_is_fitted(self, "vocab_")
        sources = check_sources(X)
        return [encode_method(parse_method(s, f"m{i}"), self.vocab_, self.m_cap, self.self_loops)
                for i, s in enumerate(sources)]


def _config_params(cls, est) -> dict:
    names = {f.name for f in fields(cls)}
    return {k: v for k, v in est.get_params().items() if k in names}


class EyeGazeRegressor(RegressorMixin, BaseEstimator):
    """Predicts ptgt for (encoded method, focal node index) pairs."""

    def __init__(self, vocab: Vocabulary | None = None, arch: str = "gnn", m_cap: int = DEFAULT_M_CAP,
                 embed_dim: int = 100, gnn_hops: int = 2, rnn_hidden: int = 100,
                 dense_hidden: int = 0, dense_init: str = "glorot", epochs: int = 100,
                 batch_size: int = 32, optimizer: str = "adam", lr: float = 1e-3, seed: int = 0,
                 pretrain_embedding_path: str | None = None):
        self.vocab = vocab
        self.arch = arch
        self.m_cap = m_cap
        self.embed_dim = embed_dim
        self.gnn_hops = gnn_hops
        self.rnn_hidden = rnn_hidden
        self.dense_hidden = dense_hidden
        self.dense_init = dense_init
        self.epochs = epochs
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.lr = lr
        self.seed = seed
        self.pretrain_embedding_path = pretrain_embedding_path

    def _samples(self, X, y=None):
        pairs = check_focal_pairs(X, self.m_cap)
        methods, samples = {}, []
        for k, (enc, focal) in enumerate(pairs):
            methods.setdefault(enc.method_id, enc)
            target = 0.0 if y is None else float(y[k])
            samples.append(PtgtSample(enc.method_id, "", int(focal), target))
        return samples, methods

    def fit(self, X, y):
        if self.vocab is None:
            raise ValueError("EyeGazeRegressor needs the vocabulary used to encode X")
        y = np.asarray(y, dtype=np.float64)
        if len(y) != len(X):
            raise ValueError(f"{len(X)} inputs vs {len(y)} targets")
        samples, methods = self._samples(X, y)
        self.config_ = EyeModelConfig(**_config_params(EyeModelConfig, self))
        result = train_eye(self.config_, samples, methods, self.vocab)
        self.net_ = result.net
        self.loss_curve_ = result.losses
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "net_")
        samples, methods = self._samples(X)
        return predict_samples(self.net_, samples, methods)

    def predict_attention(self, methods) -> list[np.ndarray]:
        """Raw predicted ptgt for every non-padding node of each method."""
        check_is_fitted(self, "net_")
        return [predict_attention_vector(self.net_, m) for m in methods]


class CodeSummarizer(BaseEstimator):
    """Encoded methods + reference docstrings -> generated one-line summaries."""

    def __init__(self, variant: str = "baseline", summary_vocab_size: int = 10_000,
                 embed_dim: int = 100, enc_hidden: int = 256, dec_hidden: int = 256,
                 human_rnn_hidden: int = 256, max_ast_len: int = DEFAULT_M_CAP,
                 max_summary_len: int = 13, epochs: int = 10, batch_size: int = 32,
                 optimizer: str = "adam", lr: float = 1e-3, seed: int = 0):
        self.variant = variant
        self.summary_vocab_size = summary_vocab_size
        self.embed_dim = embed_dim
        self.enc_hidden = enc_hidden
        self.dec_hidden = dec_hidden
        self.human_rnn_hidden = human_rnn_hidden
        self.max_ast_len = max_ast_len
        self.max_summary_len = max_summary_len
        self.epochs = epochs
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.lr = lr
        self.seed = seed

    @staticmethod
    def _ids(methods):
        return [np.asarray(m.sequence.ids[: m.length]) for m in methods]

    def fit(self, X, y, attention=None, ast_vocab_size: int | None = None):
        """``X``: EncodedMethods; ``y``: docstrings; ``attention``: raw vectors (augmented)."""
        if len(X) != len(y):
            raise ValueError(f"{len(X)} methods vs {len(y)} summaries")
        ids = self._ids(X)
        att = check_attention(attention, ids, self.variant)
        words = [summary_tokens(t, self.max_summary_len) for t in y]
        self.summary_vocab_ = build_summary_vocab(words, self.summary_vocab_size)
        params = _config_params(SummaryModelConfig, self)
        params["summary_vocab_size"] = len(self.summary_vocab_)
        params["ast_vocab_size"] = ast_vocab_size or int(max(a.max() for a in ids)) + 1
        self.config_ = SummaryModelConfig(**params)
        examples = [SummaryExample(m.method_id, a,
                                   encode_summary(w, self.summary_vocab_, self.max_summary_len),
                                   None if att is None else normalize_attention(v, m.method_id))
                    for m, a, w, v in zip(X, ids, words, att or [None] * len(ids))]
        result = train_summarizer(self.config_, examples)
        self.net_ = result.net
        self.loss_curve_ = result.losses
        return self

    def predict(self, X, attention=None) -> list[str]:
        check_is_fitted(self, "net_")
        ids = self._ids(X)
        att = check_attention(attention, ids, self.variant)
        norm = None if att is None else [normalize_attention(v) for v in att]
        out = generate_batch(self.net_, ids, norm)
        return [" ".join(self.summary_vocab_.decode(i) for i in t) for t in out]
