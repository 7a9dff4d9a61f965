"""Pearson r, corpus BLEU, METEOR (exact + stem) and the paired t-test."""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Protocol, Sequence

import numpy as np
from nltk.stem import PorterStemmer
from scipy.special import betainc

from .exceptions import ConfigError, DegenerateCorrelation, DegenerateTest

METEOR_ALPHA = 0.9
METEOR_BETA = 3.0
METEOR_GAMMA = 0.5
METEOR_VARIANT = "exact+stem (no synonym module)"


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError(f"pearson needs two equal-length vectors of length >= 2, "
                         f"got {x.shape} and {y.shape}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateCorrelation("correlation undefined for a constant vector")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


# --------------------------------------------------------------------------
# BLEU


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hypotheses: Sequence[Sequence[str]], references: Sequence[Sequence[str]],
                max_n: int = 4) -> float:
    """Cumulative corpus BLEU-``max_n`` on a 0-100 scale, unsmoothed."""
    if len(hypotheses) != len(references):
        raise ConfigError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise ConfigError("corpus_bleu needs a non-empty corpus")
    matched = [0] * max_n
    total = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            h = _ngrams(hyp, n)
            r = _ngrams(ref, n)
            matched[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            total[n - 1] += max(len(hyp) - n + 1, 0)
    if hyp_len == 0 or any(m == 0 for m in matched):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matched, total)) / max_n
    bp = math.exp(min(0.0, 1.0 - ref_len / hyp_len))
    return 100.0 * bp * math.exp(log_p)


# --------------------------------------------------------------------------
# METEOR

_stemmer = PorterStemmer()


@lru_cache(maxsize=65536)
def _stem(word: str) -> str:
    return _stemmer.stem(word)


@dataclass(frozen=True)
class MeteorScore:
    score: float
    matches: int
    chunks: int
    precision: float
    recall: float
    empty: bool = False


def meteor_alignment(hyp: Sequence[str], ref: Sequence[str]) -> list[tuple[int, int]]:
    """One-to-one unigram alignment: most exact matches, then most matches, then fewest chunks.

    Exhaustive memoised search over hypothesis positions; the state keeps
    only the reference positions still reachable by later words.
    """
    exact = [[j for j, r in enumerate(ref) if r == h] for h in hyp]
    stems_ref = [_stem(r) for r in ref]
    stem = [[j for j, r in enumerate(stems_ref) if r == _stem(h) and ref[j] != h]
            for h in hyp]
    later = [0] * (len(hyp) + 1)
    for i in range(len(hyp) - 1, -1, -1):
        mask = later[i + 1]
        for j in exact[i] + stem[i]:
            mask |= 1 << j
        later[i] = mask

    def best(i: int, used: int, prev: int):
        # cost is (-exact, -matches, chunks); only still-reachable refs matter
        return _best(i, used & later[i], prev)

    @lru_cache(maxsize=None)
    def _best(i: int, used: int, prev: int):
        if i == len(hyp):
            return (0, 0, 0), ()
        options = [(best(i + 1, used, -2)[0], -1, False)]
        for kind, cands in ((True, exact[i]), (False, stem[i])):
            for j in cands:
                if used >> j & 1:
                    continue
                sub = best(i + 1, used | (1 << j), j)[0]
                new_chunk = 0 if prev == j - 1 and prev >= 0 else 1
                options.append(((sub[0] - kind, sub[1] - 1, sub[2] + new_chunk), j, kind))
        cost, j, _ = min(options, key=lambda o: (o[0], o[1]))
        if j < 0:
            return cost, best(i + 1, used, -2)[1]
        return cost, ((i, j),) + best(i + 1, used | (1 << j), j)[1]

    return list(best(0, 0, -2)[1])


def count_chunks(alignment: Sequence[tuple[int, int]]) -> int:
    chunks = 0
    prev = None
    for i, j in sorted(alignment):
        if prev is None or not (i == prev[0] + 1 and j == prev[1] + 1):
            chunks += 1
        prev = (i, j)
    return chunks


def meteor_from_counts(matches: int, chunks: int, hyp_len: int, ref_len: int,
                       alpha=METEOR_ALPHA, beta=METEOR_BETA, gamma=METEOR_GAMMA) -> float:
    if matches == 0:
        return 0.0
    p = matches / hyp_len
    r = matches / ref_len
    f_mean = p * r / (alpha * p + (1 - alpha) * r)
    penalty = gamma * (chunks / matches) ** beta
    return f_mean * (1.0 - penalty)


def meteor_detail(hypothesis: Sequence[str], reference: Sequence[str]) -> MeteorScore:
    hyp, ref = list(hypothesis), list(reference)
    if not hyp or not ref:
        return MeteorScore(0.0, 0, 0, 0.0, 0.0, empty=True)
    align = meteor_alignment(hyp, ref)
    m = len(align)
    ch = count_chunks(align)
    score = meteor_from_counts(m, ch, len(hyp), len(ref))
    return MeteorScore(score, m, ch, m / len(hyp), m / len(ref))


def meteor(hypothesis: Sequence[str], reference: Sequence[str]) -> float:
    return meteor_detail(hypothesis, reference).score


# --------------------------------------------------------------------------
# significance


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    df: int
    alternative: str = "two-sided"


def t_sf(t: float, df: float) -> float:
    """P(T > t) for Student's t via the regularized incomplete beta function."""
    x = df / (df + t * t)
    tail = 0.5 * betainc(df / 2.0, 0.5, x)
    return float(tail if t >= 0 else 1.0 - tail)


def paired_t_test(a: Sequence[float], b: Sequence[float],
                  alternative: str = "two-sided") -> TTestResult:
    """Paired t-test on per-item scores; ``alternative`` is two-sided or greater."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("paired_t_test needs two equal-length score vectors (n >= 2)")
    d = a - b
    n = len(d)
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise DegenerateTest("all paired differences are identical")
    t = float(d.mean()) / (sd / math.sqrt(n))
    df = n - 1
    if alternative == "two-sided":
        p = 2.0 * t_sf(abs(t), df)
    elif alternative == "greater":
        p = t_sf(t, df)
    else:
        raise ConfigError(f"unknown alternative {alternative!r}")
    return TTestResult(t, min(1.0, p), df, alternative)


# --------------------------------------------------------------------------
# reporting


class SentenceSimilarity(Protocol):
    """Pluggable semantic-similarity metric (e.g. a sentence-encoder score)."""

    name: str

    def score(self, hypothesis: Sequence[str], reference: Sequence[str]) -> float: ...


@dataclass
class MetricReport:
    meteor_scores: list
    bleu: float
    mean_meteor: float
    paired_tests: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(**d)


def evaluate_summaries(predictions: Sequence[Sequence[str]], references: Sequence[Sequence[str]],
                       metadata: dict | None = None) -> MetricReport:
    scores = [meteor(h, r) for h, r in zip(predictions, references)]
    meta = {"meteor_variant": METEOR_VARIANT, "meteor_params":
            {"alpha": METEOR_ALPHA, "beta": METEOR_BETA, "gamma": METEOR_GAMMA},
            "bleu": "corpus BLEU-4, unsmoothed", "n": len(scores)}
    meta.update(metadata or {})
    return MetricReport(
        meteor_scores=scores,
        bleu=corpus_bleu(predictions, references),
        mean_meteor=float(np.mean(scores)) if scores else 0.0,
        metadata=meta,
    )
