import itertools
import json
import math
import statistics

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from gazesum.evalmetrics import (METEOR_VARIANT, MetricReport, corpus_bleu, count_chunks,
                                 evaluate_summaries, meteor, meteor_detail, meteor_from_counts,
                                 paired_t_test, pearson, t_sf)
from gazesum.exceptions import ConfigError, DegenerateCorrelation, DegenerateTest


def t_two_sided_oracle(t, df):
    """2 * integral of the Student t density from |t| to infinity (mpmath quadrature)."""
    mpmath.mp.dps = 30
    nu = mpmath.mpf(df)
    c = mpmath.gamma((nu + 1) / 2) / (mpmath.sqrt(nu * mpmath.pi) * mpmath.gamma(nu / 2))
    pdf = lambda x: c * (1 + x * x / nu) ** (-(nu + 1) / 2)
    return float(2 * mpmath.quad(pdf, [abs(t), mpmath.inf]))


# pearson

def test_pearson_examples():
    x = [1.0, 2.0, 3.0]
    assert pearson(x, x) == 1.0
    assert pearson(x, [-v for v in x]) == -1.0
    assert pearson(x, [1, 2, 4]) == pytest.approx(9 / math.sqrt(84), abs=1e-12)
    with pytest.raises(DegenerateCorrelation):
        pearson([1, 1, 1], x)


def test_pearson_matches_closed_form(rng):
    for _ in range(100):
        n = int(rng.integers(2, 40))
        x, y = rng.normal(size=n), rng.normal(size=n)
        assert pearson(x, y) == pytest.approx(statistics.correlation(x, y), abs=1e-10)


@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=20), st.floats(0.1, 10),
       st.floats(-100, 100))
def test_pearson_affine_invariant(x, a, b):
    y = np.sin(np.arange(len(x)))
    if np.std(x) < 1e-3:
        return
    r1 = pearson(x, y)
    r2 = pearson([a * v + b for v in x], y)
    assert r2 == pytest.approx(r1, abs=1e-9)


# BLEU

def test_bleu_examples():
    hyp, ref = ["the cat sat".split()], ["the cat sat down".split()]
    assert corpus_bleu(hyp, ref) == 0.0
    assert corpus_bleu(hyp, ref, max_n=3) == pytest.approx(100 * math.exp(1 - 4 / 3), abs=1e-9)
    assert corpus_bleu(hyp, ref, max_n=3) == pytest.approx(71.65, abs=0.01)
    same = ["a b c d e".split(), "x y z w".split()]
    assert corpus_bleu(same, same) == pytest.approx(100.0)
    assert corpus_bleu([["a", "b"]], [["c", "d"]]) == 0.0
    with pytest.raises(ConfigError):
        corpus_bleu([], [])


def test_bleu_clipping_hand_count():
    # hyp "the the the cat", ref "the cat sat": p1 = (1 + 1)/4, p2 = 1/3
    hyp, ref = ["the the the cat".split()], ["the cat sat".split()]
    expected = 100 * math.exp((math.log(2 / 4) + math.log(1 / 3)) / 2)
    assert corpus_bleu(hyp, ref, max_n=2) == pytest.approx(expected, abs=1e-9)


@given(st.permutations(range(4)))
def test_bleu_permutation_invariant(perm):
    hyps = ["a b c d".split(), "a b x".split(), "q r s t u".split(), "b c".split()]
    refs = ["a b c d e".split(), "a b c".split(), "q r s t".split(), "b c d".split()]
    base = corpus_bleu(hyps, refs)
    assert corpus_bleu([hyps[i] for i in perm], [refs[i] for i in perm]) == pytest.approx(base)


# METEOR

def test_meteor_examples():
    assert meteor("set up the pawn".split(), "set up the board".split()) == pytest.approx(
        0.75 * (1 - 0.5 / 27), abs=1e-12)
    words = [f"w{i}" for i in range(10)]
    assert meteor(words, words) == pytest.approx(0.9995, abs=1e-12)
    assert meteor(["a"], ["b"]) == 0.0
    empty = meteor_detail([], ["a"])
    assert empty.score == 0.0 and empty.empty


def test_meteor_uses_stems():
    d = meteor_detail(["tests"], ["test"])
    assert d.matches == 1


def brute_force_meteor(hyp, ref):
    """Enumerate every one-to-one exact matching; keep most matches, then fewest chunks."""
    best = (0, 0)
    pairs = [(i, j) for i in range(len(hyp)) for j in range(len(ref)) if hyp[i] == ref[j]]
    for k in range(len(pairs), 0, -1):
        for combo in itertools.combinations(pairs, k):
            if len({i for i, _ in combo}) < k or len({j for _, j in combo}) < k:
                continue
            cand = (k, -count_chunks(combo))
            best = max(best, cand)
    m, neg_chunks = best
    return meteor_from_counts(m, -neg_chunks, len(hyp), len(ref)) if m else 0.0


VOCAB3 = ["a", "b", "c"]


def test_meteor_matches_brute_force_exhaustively():
    sents = [list(s) for s in itertools.product(VOCAB3, repeat=3)]
    for h in sents:
        for r in sents:
            assert meteor(h, r) == pytest.approx(brute_force_meteor(h, r), abs=1e-12)


def test_meteor_monotone_in_matches():
    sents = [list(s) for s in itertools.product(VOCAB3, repeat=3)]
    for h in sents:
        top = meteor(h, h)
        for r in sents:
            if meteor_detail(h, r).matches < 3:
                assert top >= meteor(h, r)


# paired t-test

def test_paired_t_examples():
    res = paired_t_test([1, 2, 3], [0, 0, 0])
    assert res.t == pytest.approx(2 * math.sqrt(3), abs=1e-9)
    assert res.df == 2
    assert res.p == pytest.approx(t_two_sided_oracle(res.t, 2), abs=1e-4)
    assert res.p == pytest.approx(0.074180, abs=1e-4)
    swapped = paired_t_test([0, 0, 0], [1, 2, 3])
    assert swapped.t == -res.t and swapped.p == pytest.approx(res.p, abs=1e-15)
    with pytest.raises(DegenerateTest):
        paired_t_test([1, 2], [1, 2])


@pytest.mark.parametrize("df", [2, 10, 100])
def test_t_tail_matches_quadrature(df):
    for t in (0.1, 0.7, 1.5, 2.52, 4.0):
        assert 2 * t_sf(t, df) == pytest.approx(t_two_sided_oracle(t, df), abs=1e-6)


def test_one_sided_option():
    a, b = [0.4, 0.5, 0.6, 0.55], [0.3, 0.45, 0.5, 0.52]
    two = paired_t_test(a, b)
    one = paired_t_test(a, b, alternative="greater")
    assert one.p == pytest.approx(two.p / 2, abs=1e-12)


# reporting

def test_metric_report_stable_json():
    r = evaluate_summaries([["set", "up"], ["a"]], [["set", "up", "board"], ["b"]])
    assert len(r.meteor_scores) == 2
    assert r.metadata["meteor_variant"] == METEOR_VARIANT
    again = MetricReport.from_dict(json.loads(r.to_json()))
    assert again.to_json() == r.to_json()
    assert 0 <= r.bleu <= 100 and all(0 <= s <= 1 for s in r.meteor_scores)
