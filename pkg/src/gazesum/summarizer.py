"""GRU encoder-decoder code summarizer, baseline and human-attention augmented.

Baseline: AST-node embeddings -> encoder GRU; a GRU decoder with
dot-product attention over the encoder states; the output layer sees
``[context, decoder state, encoder final state]``.

Augmented: the encoder is unchanged, but the embeddings are also scaled
position-wise by the (mean 1.0) human attention vector and run through a
second GRU whose final state takes the place of the encoder final state in
the output layer input. Both variants therefore have the same output-layer
width.
"""
from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import ndops as nd
from .codeparse import PAD, Vocabulary
from .exceptions import AlignError, ConfigError, NormalizationError

logger = logging.getLogger(__name__)

SUMMARY_SPECIALS = ("<pad>", "<unk>", "<s>", "</s>")
BOS, EOS = 2, 3


@dataclass(frozen=True)
class SummaryModelConfig:
    variant: str = "baseline"
    ast_vocab_size: int = 10_000
    summary_vocab_size: int = 10_000
    embed_dim: int = 100
    enc_hidden: int = 256
    dec_hidden: int = 256
    human_rnn_hidden: int = 256
    max_ast_len: int = 400
    max_summary_len: int = 13
    epochs: int = 10
    batch_size: int = 32
    optimizer: str = "adam"
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.variant not in ("baseline", "augmented"):
            raise ConfigError(f"variant must be 'baseline' or 'augmented', got {self.variant!r}")
        if self.dec_hidden != self.enc_hidden:
            raise ConfigError("dot-product attention needs dec_hidden == enc_hidden")
        if self.output_width("baseline") != self.output_width("augmented"):
            raise ConfigError(
                f"fairness parity violated: baseline output width "
                f"{self.output_width('baseline')} != augmented "
                f"{self.output_width('augmented')} (set human_rnn_hidden == enc_hidden)")
        if min(self.ast_vocab_size, self.summary_vocab_size) < len(SUMMARY_SPECIALS):
            raise ConfigError("vocabulary sizes must cover the reserved ids")

    def output_width(self, variant: str | None = None) -> int:
        variant = variant or self.variant
        extra = self.enc_hidden if variant == "baseline" else self.human_rnn_hidden
        return self.enc_hidden + self.dec_hidden + extra


@dataclass(frozen=True)
class HumanAttentionVector:
    method_id: str
    values: tuple

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.size == 0 or abs(vals.mean() - 1.0) > 1e-9 or (vals < 0).any():
            raise NormalizationError(f"{self.method_id}: attention must be non-negative "
                                     "with mean 1.0")

    def __len__(self):
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


def normalize_attention(raw: Sequence[float], method_id: str = "") -> HumanAttentionVector:
    """Scale raw predicted ptgt so the per-method mean is exactly 1.0."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0 or (raw < 0).any() or not np.isfinite(raw).all():
        raise NormalizationError(f"{method_id}: attention must be non-empty, finite, >= 0")
    m = raw.mean()
    if m <= 0:
        raise NormalizationError(f"{method_id}: all-zero attention cannot be normalized")
    return HumanAttentionVector(method_id, tuple(raw / m))


def random_attention_vectors(lo: float, hi: float, length: int, seed,
                             method_id: str = "") -> HumanAttentionVector:
    """Uniform draws in [lo, hi] per position, then normalized to mean 1.0."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return normalize_attention(_uniform(rng, lo, hi, length), method_id)


def _uniform(rng, lo, hi, length):
    if not 0 <= lo < hi:
        raise ConfigError(f"need 0 <= lo < hi, got lo={lo}, hi={hi}")
    return rng.uniform(lo, hi, size=length)


def random_attention_corpus(lengths: Mapping[str, int], lo: float, hi: float,
                            seed: int) -> dict[str, HumanAttentionVector]:
    """One control attention vector per method, drawn in sorted method order."""
    rng = np.random.default_rng(seed)
    return {mid: normalize_attention(_uniform(rng, lo, hi, lengths[mid]), mid)
            for mid in sorted(lengths)}


_SENTENCE_END = re.compile(r"\.(\s|$)")


def summary_tokens(text: str, max_len: int = 13) -> list[str]:
    """First sentence of a docstring, lowercased, punctuation dropped."""
    text = re.sub(r"<[^>]+>", " ", text or "")
    text = text.split("@", 1)[0]
    m = _SENTENCE_END.search(text)
    if m:
        text = text[: m.start()]
    return re.findall(r"[a-z0-9]+", text.lower())[:max_len]


def build_summary_vocab(summaries: Iterable[Sequence[str]], max_size: int = 10_000) -> Vocabulary:
    counts = Counter()
    for s in summaries:
        counts.update(s)
    return Vocabulary.from_counts(counts, max_size, SUMMARY_SPECIALS)


def encode_summary(words: Sequence[str], vocab: Vocabulary, max_len: int = 13) -> np.ndarray:
    return np.array([BOS] + [vocab.encode(w) for w in words[:max_len]] + [EOS], dtype=np.int64)


# --------------------------------------------------------------------------
# model


@dataclass
class EncoderOutput:
    states: nd.Tensor      # (B, T, H)
    final: nd.Tensor       # (B, H)
    extra: nd.Tensor       # (B, H) fed to the output layer
    mask: np.ndarray       # (B, T) bool, True on real positions
    scaled_input: nd.Tensor | None = None


class SummaryNet:
    def __init__(self, config: SummaryModelConfig, params: Mapping[str, nd.Tensor] | None = None):
        self.config = config
        self.params: dict[str, nd.Tensor] = dict(params) if params else self._init_params()

    def _init_params(self) -> dict:
        c = self.config
        rng = np.random.default_rng(c.seed)
        p = {
            "ast_embedding": nd.Tensor(rng.normal(0, 0.1, (c.ast_vocab_size, c.embed_dim)), True),
            "sum_embedding": nd.Tensor(rng.normal(0, 0.1, (c.summary_vocab_size, c.embed_dim)), True),
        }
        for prefix, d_h in (("enc.", c.enc_hidden), ("dec.", c.dec_hidden)):
            p.update({prefix + k: v for k, v in nd.init_gru(rng, c.embed_dim, d_h, prefix).items()})
        if c.variant == "augmented":
            p.update({"human." + k: v for k, v in
                      nd.init_gru(rng, c.embed_dim, c.human_rnn_hidden, "human.").items()})
        width = c.output_width()
        p["out.W"] = nd.Tensor(nd.glorot(rng, width, c.summary_vocab_size), True)
        p["out.b"] = nd.Tensor(np.zeros(c.summary_vocab_size), True)
        for k, v in p.items():
            v.name = k
        return p

    @property
    def output_width(self) -> int:
        return self.params["out.W"].shape[0]

    def parameters(self) -> list[nd.Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    def gru(self, prefix: str) -> dict:
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}


def _run_gru(inputs: nd.Tensor, mask: np.ndarray, params: dict, d_h: int):
    """Masked GRU over (B, T, d) inputs; padding steps carry the state through."""
    B = inputs.shape[0]
    h = nd.Tensor(np.zeros((B, d_h)))
    states = []
    for t, x in enumerate(nd.unbind(inputs, axis=1)):
        h_new = nd.gru_cell(x, h, params)
        m = mask[:, t:t + 1].astype(np.float64)
        if m.all():
            h = h_new
        else:
            h = h_new * nd.Tensor(m) + h * nd.Tensor(1.0 - m)
        states.append(h)
    return nd.stack(states, axis=1), h


def pad_batch(seqs: Sequence[np.ndarray], pad_value=PAD, dtype=np.int64):
    T = max(len(s) for s in seqs)
    out = np.full((len(seqs), T), pad_value, dtype=dtype)
    mask = np.zeros((len(seqs), T), dtype=bool)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
        mask[i, :len(s)] = True
    return out, mask


def encode(net: SummaryNet, ast_ids: Sequence[np.ndarray],
           attention: Sequence[HumanAttentionVector | np.ndarray | None] | None = None) -> EncoderOutput:
    """Encode a batch of AST id sequences (unpadded, one array per method)."""
    c = net.config
    augmented = c.variant == "augmented"
    if augmented != (attention is not None):
        raise ConfigError(f"{c.variant} model {'needs' if augmented else 'takes no'} attention")
    full_lens = [len(a) for a in ast_ids]
    ast_ids = [np.asarray(a, dtype=np.int64)[: c.max_ast_len] for a in ast_ids]
    ids, mask = pad_batch(ast_ids)
    emb = nd.embed_lookup(net.params["ast_embedding"], ids)
    states, final = _run_gru(emb, mask, net.gru("enc."), c.enc_hidden)
    if not augmented:
        return EncoderOutput(states, final, final, mask)
    scale = np.ones(ids.shape)
    for i, (a, n) in enumerate(zip(attention, full_lens)):
        vals = a.as_array() if isinstance(a, HumanAttentionVector) else np.asarray(a, dtype=float)
        if len(vals) != n:
            raise AlignError(f"attention length {len(vals)} != {n} AST positions")
        vals = vals[: c.max_ast_len]
        scale[i, :len(vals)] = vals
    scaled = emb * nd.Tensor(scale[:, :, None])
    _, human_final = _run_gru(scaled, mask, net.gru("human."), c.human_rnn_hidden)
    return EncoderOutput(states, final, human_final, mask, scaled)


def _attend(enc: EncoderOutput, s: nd.Tensor):
    B, T, H = enc.states.shape
    scores = nd.sum_(enc.states * nd.reshape(s, (B, 1, H)), axis=2)
    alpha = nd.softmax(scores, axis=1, mask=enc.mask)
    context = nd.sum_(enc.states * nd.reshape(alpha, (B, T, 1)), axis=1)
    return context, alpha


def _decoder_outputs(net: SummaryNet, enc: EncoderOutput, inputs: np.ndarray) -> nd.Tensor:
    """(B, L) gold input ids -> (B, L, output_width) output-layer inputs."""
    emb = nd.embed_lookup(net.params["sum_embedding"], inputs)
    dec = net.gru("dec.")
    s = enc.final
    outs = []
    for x in nd.unbind(emb, axis=1):
        s = nd.gru_cell(x, s, dec)
        context, _ = _attend(enc, s)
        outs.append(nd.concat([context, s, enc.extra], axis=1))
    return nd.stack(outs, axis=1)


def decode_train_step(net: SummaryNet, enc: EncoderOutput,
                      summary_ids: Sequence[np.ndarray]) -> nd.Tensor:
    """Teacher-forced mean cross-entropy over all non-padding target steps."""
    ids, _ = pad_batch([np.asarray(s, dtype=np.int64) for s in summary_ids])
    if ids.shape[1] < 2:
        raise ConfigError("summaries need at least BOS and EOS")
    inputs, targets = ids[:, :-1], ids[:, 1:]
    step_mask = targets != PAD
    feats = _decoder_outputs(net, enc, inputs)
    B, L, W = feats.shape
    logits = nd.reshape(feats, (B * L, W)) @ net.params["out.W"] + net.params["out.b"]
    return nd.cross_entropy(logits, targets.reshape(-1), step_mask.reshape(-1))


def generate(net: SummaryNet, ast_ids: np.ndarray,
             attention: HumanAttentionVector | np.ndarray | None = None) -> list[int]:
    """Greedy decoding from BOS; stops at EOS or after max_summary_len words."""
    return generate_batch(net, [ast_ids], None if attention is None else [attention])[0]


def generate_batch(net: SummaryNet, ast_ids: Sequence[np.ndarray],
                   attention: Sequence | None = None) -> list[list[int]]:
    c = net.config
    enc = encode(net, ast_ids, attention)
    B = len(ast_ids)
    dec = net.gru("dec.")
    s = enc.final
    token = np.full(B, BOS, dtype=np.int64)
    done = np.zeros(B, dtype=bool)
    out: list[list[int]] = [[] for _ in range(B)]
    W, b = net.params["out.W"], net.params["out.b"]
    for _ in range(c.max_summary_len):
        x = nd.embed_lookup(net.params["sum_embedding"], token)
        s = nd.gru_cell(x, s, dec)
        context, _ = _attend(enc, s)
        logits = (nd.concat([context, s, enc.extra], axis=1) @ W + b).data
        logits[:, [PAD, BOS]] = -np.inf
        token = logits.argmax(axis=1)
        for i in range(B):
            if done[i]:
                continue
            if token[i] == EOS:
                done[i] = True
            else:
                out[i].append(int(token[i]))
        if done.all():
            break
    return out


# --------------------------------------------------------------------------
# training


@dataclass
class SummaryExample:
    method_id: str
    ast_ids: np.ndarray
    summary_ids: np.ndarray
    attention: HumanAttentionVector | None = None


@dataclass
class SummaryTrainResult:
    net: SummaryNet
    losses: list = field(default_factory=list)


def train_summarizer(config: SummaryModelConfig, examples: Sequence[SummaryExample],
                     on_epoch: Callable[[int, SummaryNet, float], None] | None = None,
                     net: SummaryNet | None = None) -> SummaryTrainResult:
    if not examples:
        raise ConfigError("no training examples")
    usable = [e for e in examples if len(e.summary_ids) > 2]
    if len(usable) < len(examples):
        logger.warning("skipping %d example(s) with empty summaries", len(examples) - len(usable))
    if not usable:
        raise ConfigError("every training summary is empty")
    augmented = config.variant == "augmented"
    if augmented and any(e.attention is None for e in usable):
        raise ConfigError("augmented training needs attention for every example")
    net = net or SummaryNet(config)
    params = net.parameters()
    opt = nd.make_optimizer(config.optimizer, params, config.lr)
    rng = np.random.default_rng([config.seed, 2])
    result = SummaryTrainResult(net)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(usable))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [usable[k] for k in order[start:start + config.batch_size]]
            with nd.Tape() as tape:
                enc = encode(net, [e.ast_ids for e in batch],
                             [e.attention for e in batch] if augmented else None)
                loss = decode_train_step(net, enc, [e.summary_ids for e in batch])
            nd.backward(tape, loss, params)
            opt.step()
            total += loss.item() * len(batch)
        result.losses.append(total / len(usable))
        logger.info("epoch %d loss %.4f", epoch, result.losses[-1])
        if on_epoch is not None:
            on_epoch(epoch, net, result.losses[-1])
    return result


def save_summary_checkpoint(path, net: SummaryNet, ast_vocab: Vocabulary,
                            summary_vocab: Vocabulary, **extra) -> None:
    meta = {"kind": "summarizer", "config": asdict(net.config),
            "ast_vocab": ast_vocab.to_dict(), "summary_vocab": summary_vocab.to_dict(), **extra}
    nd.save_checkpoint(path, net.params, meta)


def load_summary_checkpoint(path):
    arrays, meta = nd.load_checkpoint(path)
    if meta.get("kind") != "summarizer":
        raise ConfigError(f"{path}: not a summarizer checkpoint")
    cfg = replace(SummaryModelConfig(), **meta["config"])
    net = SummaryNet(cfg, {k: nd.Tensor(v, True, k) for k, v in arrays.items()})
    return net, Vocabulary.from_dict(meta["ast_vocab"]), Vocabulary.from_dict(meta["summary_vocab"])
