"""Small synthetic Java corpora and gaze logs for smoke runs and tests."""
from __future__ import annotations

import csv
import json

import numpy as np

from .codeparse import parse_method, visible_token_stream

NOUNS = ("count", "name", "item", "value", "buffer", "player", "board", "score", "file",
         "token", "node", "price", "order", "user", "color", "window", "message", "level")
TYPES = ("int", "String", "boolean", "double", "long")

# (source template, summary template); {N} noun, {C} capitalized noun, {T} type
TEMPLATES = (
    ("public {T} get{C}() {{ return {N}; }}", "returns the {N}"),
    ("public void set{C}({T} {N}) {{ this.{N} = {N}; }}", "sets the {N}"),
    ("public boolean has{C}() {{ return {N} != null; }}", "checks whether the {N} exists"),
    ("public void reset{C}() {{ {N} = 0; changed = true; }}", "resets the {N} to zero"),
    ("public void add{C}({T} {N}) {{ if ({N} != null) {{ {N}s.add({N}); }} size++; }}",
     "adds a {N} to the list"),
    ("public int count{C}s() {{ int total = 0; for (int i = 0; i < {N}s.length; i++) "
     "{{ if ({N}s[i] > 0) {{ total++; }} }} return total; }}", "counts the positive {N}s"),
    ("public void print{C}() {{ System.out.println(\"{N} is \" + {N}); }}", "prints the {N}"),
    ("public {T} compute{C}({T} a, {T} b) {{ {T} result = a + b; return result * {N}; }}",
     "computes the {N} from two values"),
    ("public void clear{C}s() {{ while (!{N}s.isEmpty()) {{ {N}s.remove(0); }} }}",
     "removes every {N}"),
    ("public boolean is{C}Valid({T} {N}) {{ return {N} >= min{C} && {N} <= max{C}; }}",
     "checks whether the {N} is valid"),
)


def make_method(rng: np.random.Generator, k: int | None = None):
    k = int(rng.integers(len(TEMPLATES))) if k is None else k
    noun = NOUNS[int(rng.integers(len(NOUNS)))]
    typ = TYPES[int(rng.integers(len(TYPES)))]
    src, summ = TEMPLATES[k]
    fill = {"N": noun, "C": noun.capitalize(), "T": typ}
    return src.format(**fill), summ.format(**fill) + "."


def make_corpus(n_methods: int = 200, n_projects: int = 8, seed: int = 0) -> list[dict]:
    """Records in the method corpus format; some sources repeat on purpose."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_methods):
        source, summary = make_method(rng)
        out.append({"id": f"m{i:04d}", "project": f"proj{int(rng.integers(n_projects)):02d}",
                    "source": source, "summary": summary})
    return out


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def synthetic_gaze(records: list[dict], programmers: list[str], seed: int = 0,
                   fixations_per_token: float = 1.5) -> list[dict]:
    """Fixation rows where identifier-like tokens draw longer gaze.

    Each programmer shares an underlying per-token salience and adds
    personal noise, so programmers correlate strongly with each other.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for rec in records:
        tokens = visible_token_stream(rec["source"])
        base = np.array([3.0 if t.isalpha() and len(t) > 3 else 1.0 if t.isalnum() else 0.3
                         for t in tokens])
        for prog in programmers:
            weight = base * rng.lognormal(0.0, 0.3, size=len(tokens))
            n_fix = max(len(tokens), int(fixations_per_token * len(tokens)))
            picks = rng.choice(len(tokens), size=n_fix, p=weight / weight.sum())
            for idx in picks:
                dur = float(np.round(rng.uniform(60, 400) * (1 + 0.5 * base[idx]), 1))
                rows.append({"programmer_id": prog, "method_id": rec["id"],
                             "token_index": int(idx), "token_text": tokens[idx],
                             "duration_ms": dur})
    return rows


def write_fixations(path, rows) -> None:
    from .gaze import FIXATION_COLUMNS
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=FIXATION_COLUMNS)
        w.writeheader()
        w.writerows(rows)


def check_parses(records) -> list[str]:
    """Ids whose source fails to parse (should be empty for generated corpora)."""
    bad = []
    for r in records:
        try:
            parse_method(r["source"], r["id"])
        except Exception:
            bad.append(r["id"])
    return bad
