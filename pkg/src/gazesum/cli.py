"""Command-line pipeline: corpus preparation through evaluation and heatmaps.

Every subcommand resolves its settings as defaults < ``--config`` file <
per-command flags < ``--seed``, writes its outputs into ``--out`` and
records them in ``manifest.json`` (sorted keys, no timestamps, output files
named relative to ``--out`` with their sha256).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from collections import Counter, defaultdict
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from .codeparse import (Vocabulary, build_vocab, encode_method, linearize, parse_method,
                        visible_token_stream)
from .evalmetrics import MetricReport, evaluate_summaries, paired_t_test
from .exceptions import (AlignError, ConfigError, DegenerateTest, EmptyGazeError, GazesumError,
                         IngestError, NormalizationError, ParseError)
from .eyemodel import (EyeModelConfig, correlation_table, cross_validate, load_eye_checkpoint,
                       predict_attention_vector, save_eye_checkpoint, train_eye)
from .gaze import (PtgtVector, align_to_ast, build_gaze_dataset, ingest_fixations,
                   inter_programmer_correlation)
from .heatmap import render_heatmap
from .summarizer import (SummaryExample, SummaryModelConfig, build_summary_vocab, encode_summary,
                         generate_batch, load_summary_checkpoint, normalize_attention,
                         random_attention_corpus, save_summary_checkpoint, summary_tokens,
                         train_summarizer)

logger = logging.getLogger("gazesum")

EXIT_BASE = {
    "corpus-prepare": 10, "gaze-ingest": 20, "train-eye": 30, "eval-eye": 40,
    "predict-attn": 50, "train-sum": 60, "eval-sum": 70, "control-random": 80,
    "heatmap": 90, "report": 100,
}
# offset within a subcommand's range
EXIT_OFFSETS = ((ConfigError, 1), (ParseError, 2), (IngestError, 2), (AlignError, 3),
                (EmptyGazeError, 3), (NormalizationError, 4), (KeyError, 5), (OSError, 6),
                (GazesumError, 7))

_EYE_KEYS = {f.name: f.default for f in fields(EyeModelConfig) if f.name != "seed"}
_SUM_KEYS = {f.name: f.default for f in fields(SummaryModelConfig)
             if f.name not in ("seed", "variant", "ast_vocab_size", "summary_vocab_size")}

COMMANDS = {
    "corpus-prepare": dict(corpus="", top_fraction=0.10, dedup=True, exclude_projects="",
                           split_ratios="0.9,0.05,0.05", vocab_size=10_000,
                           summary_vocab_size=10_000, max_summary_len=13),
    "gaze-ingest": dict(fixations="", corpus="", column_map="", min_duration=100.0,
                        check_text=True),
    "train-eye": dict(ptgt="", corpus="", ast_vocab="", checkpoint_every=10, **_EYE_KEYS),
    "eval-eye": dict(ptgt="", corpus="", ast_vocab="", programmers="", methods="",
                     eval_every=1, **_EYE_KEYS),
    "predict-attn": dict(checkpoint="", corpus=""),
    "train-sum": dict(train="", ast_vocab="", summary_vocab="", attention="",
                      variant="baseline", **_SUM_KEYS),
    "eval-sum": dict(checkpoint="", test="", attention="", name=""),
    "control-random": dict(train="", test="", ast_vocab="", summary_vocab="", attention="",
                           seeds="1,2,3,4,5", **_SUM_KEYS),
    "heatmap": dict(corpus="", method_id="", attention_source="predicted", attention="",
                    programmer=""),
    "report": dict(reports="", control=""),
}


# --------------------------------------------------------------------------
# config handling


def _coerce(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {type(default).__name__}") from None
    return raw.strip() if raw is not None else None


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def resolve_config(command: str, file_values: dict, flag_values: dict, seed: int | None) -> dict:
    defaults = COMMANDS[command]
    file_values = dict(file_values)
    if seed is None and "seed" in file_values:
        seed = int(_coerce("seed", file_values.pop("seed"), 0))
    file_values.pop("seed", None)
    unknown = sorted(set(file_values) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
    cfg = dict(defaults)
    for src in (file_values, flag_values):
        for k, v in src.items():
            if v is not None:
                cfg[k] = _coerce(k, v, defaults[k]) if isinstance(v, str) else v
    cfg["seed"] = 0 if seed is None else seed
    for k, v in cfg.items():
        if defaults.get(k) is None and v == "":
            cfg[k] = None
    return cfg


def _require(cfg: dict, *keys):
    missing = [k for k in keys if not cfg.get(k)]
    if missing:
        raise ConfigError("missing required setting(s): " + ", ".join(missing))


# --------------------------------------------------------------------------
# file helpers


def read_jsonl(path, required: tuple = ()) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"{path}: invalid JSON ({exc.msg})", lineno) from None
            missing = [k for k in required if k not in rec]
            if missing:
                raise IngestError(f"{path}: missing field(s) {missing}", lineno)
            out.append(rec)
    return out


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


CORPUS_FIELDS = ("id", "project", "source", "summary")


def read_corpus(path) -> list[dict]:
    return read_jsonl(path, CORPUS_FIELDS)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


class Run:
    """Output directory plus the manifest being assembled for it."""

    def __init__(self, command: str, cfg: dict, out: Path):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.outputs: list[str] = []
        self.results: dict = {}
        out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def finish(self) -> dict:
        manifest = {
            "command": self.command,
            "version": __version__,
            "config": self.cfg,
            "outputs": {n: _sha256(self.out / n) for n in sorted(set(self.outputs))},
            "results": self.results,
        }
        write_json(self.out / "manifest.json", manifest)
        return manifest


def _parse_all(records) -> dict:
    return {r["id"]: parse_method(r["source"], r["id"]) for r in records}


def _load_vocab(path) -> Vocabulary:
    return Vocabulary.from_dict(read_json(path))


def _eye_config(cfg: dict) -> EyeModelConfig:
    return EyeModelConfig(seed=cfg["seed"], **{k: cfg[k] for k in _EYE_KEYS})


def _read_attention(path) -> dict:
    return {r["method_id"]: np.asarray(r["ptgt_hat"], dtype=np.float64)
            for r in read_jsonl(path, ("method_id", "node_labels", "ptgt_hat"))}


def _read_ptgt(path) -> list[PtgtVector]:
    return [PtgtVector(r["method_id"], r["programmer_id"], tuple(r["ptgt"]))
            for r in read_jsonl(path, ("method_id", "programmer_id", "ptgt"))]


# --------------------------------------------------------------------------
# corpus-prepare


def split_by_project(sizes: dict, ratios=(0.9, 0.05, 0.05)) -> list[list[str]]:
    """Greedy bin packing: largest project first into the split furthest below target."""
    if len(sizes) < len(ratios):
        raise ConfigError(f"need at least {len(ratios)} projects to split by project, "
                          f"got {len(sizes)}")
    total = sum(sizes.values())
    bins: list[list[str]] = [[] for _ in ratios]
    filled = [0] * len(ratios)
    for proj in sorted(sizes, key=lambda p: (-sizes[p], p)):
        k = max(range(len(ratios)), key=lambda i: (ratios[i] * total - filled[i], -i))
        bins[k].append(proj)
        filled[k] += sizes[proj]
    # every split needs a project: take the smallest from the split holding the most
    for k in range(len(bins)):
        if not bins[k]:
            donor = max(range(len(bins)), key=lambda i: (len(bins[i]), -i))
            proj = min(bins[donor], key=lambda p: (sizes[p], p))
            bins[donor].remove(proj)
            bins[k].append(proj)
    return [sorted(b) for b in bins]


def cmd_corpus_prepare(run: Run) -> None:
    cfg = run.cfg
    _require(cfg, "corpus")
    if not 0 < cfg["top_fraction"] <= 1:
        raise ConfigError("top_fraction must be in (0, 1]")
    ratios = tuple(float(x) for x in cfg["split_ratios"].split(","))
    if len(ratios) != 3 or abs(sum(ratios) - 1) > 1e-9 or min(ratios) <= 0:
        raise ConfigError("split_ratios must be three positive numbers summing to 1")
    records = read_corpus(cfg["corpus"])
    stats = Counter(read=len(records))
    excluded = {p.strip() for p in cfg["exclude_projects"].split(",") if p.strip()}
    kept = [r for r in records if r["project"] not in excluded]
    stats["excluded_project"] = len(records) - len(kept)
    if cfg["dedup"]:
        seen, unique = set(), []
        for r in sorted(kept, key=lambda r: r["id"]):
            if r["source"] not in seen:
                seen.add(r["source"])
                unique.append(r)
        stats["duplicates"] = len(kept) - len(unique)
        kept = unique
    parsed = []
    for r in kept:
        try:
            parse_method(r["source"], r["id"])
        except ParseError as exc:
            logger.warning("skipping %s: %s", r["id"], exc)
            stats["parse_failed"] += 1
            continue
        if not summary_tokens(r["summary"], cfg["max_summary_len"]):
            stats["empty_summary"] += 1
            continue
        parsed.append((len(visible_token_stream(r["source"])), r))
    n_keep = max(1, round(len(parsed) * cfg["top_fraction"])) if parsed else 0
    parsed.sort(key=lambda t: (-t[0], t[1]["id"]))
    kept = sorted((r for _, r in parsed[:n_keep]), key=lambda r: r["id"])
    sizes = Counter(r["project"] for r in kept)
    splits = split_by_project(dict(sizes), ratios)
    where = {p: name for name, projs in zip(("train", "val", "test"), splits) for p in projs}
    parts = defaultdict(list)
    for r in kept:
        parts[where[r["project"]]].append(r)
    for name in ("train", "val", "test"):
        write_jsonl(run.path(f"{name}.jsonl"), parts[name])
    train_graphs = [parse_method(r["source"], r["id"]) for r in parts["train"]]
    write_json(run.path("ast_vocab.json"), build_vocab(train_graphs, cfg["vocab_size"]).to_dict())
    words = [summary_tokens(r["summary"], cfg["max_summary_len"]) for r in parts["train"]]
    write_json(run.path("summary_vocab.json"),
               build_summary_vocab(words, cfg["summary_vocab_size"]).to_dict())
    run.results = {"counts": dict(sorted(stats.items())), "kept": len(kept),
                   "splits": {n: {"projects": s, "methods": len(parts[n])}
                              for n, s in zip(("train", "val", "test"), splits)}}
    print(f"kept {len(kept)} of {len(records)} methods: "
          + ", ".join(f"{n}={len(parts[n])}" for n in ("train", "val", "test")))


# --------------------------------------------------------------------------
# gaze


def _column_map(spec: str) -> dict:
    out = {}
    for item in filter(None, (s.strip() for s in spec.split(","))):
        if "=" not in item:
            raise ConfigError(f"column_map entry {item!r} is not canonical=file_column")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def cmd_gaze_ingest(run: Run) -> None:
    cfg = run.cfg
    _require(cfg, "fixations", "corpus")
    ingest = ingest_fixations(cfg["fixations"], _column_map(cfg["column_map"]),
                              cfg["min_duration"])
    graphs = _parse_all(read_corpus(cfg["corpus"]))
    ds = build_gaze_dataset(ingest.records, graphs, check_text=cfg["check_text"])
    bad = [v for v in ds.ptgt if abs(sum(v.ptgt) - 1.0) > 1e-9]
    if bad:
        raise EmptyGazeError(f"ptgt does not sum to 1 for {bad[0].method_id}")
    write_jsonl(run.path("ptgt.jsonl"), [v.to_record() for v in ds.ptgt])
    inter = inter_programmer_correlation(ds.ptgt)
    write_json(run.path("inter_programmer.json"), inter)
    run.results = {"fixations": len(ingest.records), "dropped_short": ingest.dropped_short,
                   "vectors": len(ds.ptgt), "samples": len(ds.samples),
                   "excluded_methods": ds.excluded, "empty_pairs": [list(p) for p in ds.empty],
                   "inter_programmer_mean": float(np.mean(list(inter.values()))) if inter else None}
    print(f"{len(ds.ptgt)} ptgt vectors from {len(ingest.records)} fixations "
          f"({ingest.dropped_short} short fixations dropped, {len(ds.excluded)} methods excluded)")


def _gaze_inputs(cfg: dict):
    _require(cfg, "ptgt", "corpus")
    vectors = _read_ptgt(cfg["ptgt"])
    graphs = _parse_all(read_corpus(cfg["corpus"]))
    missing = sorted({v.method_id for v in vectors} - set(graphs))
    if missing:
        raise KeyError(f"ptgt methods missing from corpus: {missing[:5]}")
    used = sorted({v.method_id for v in vectors})
    vocab = _load_vocab(cfg["ast_vocab"]) if cfg.get("ast_vocab") else \
        build_vocab([graphs[m] for m in used])
    methods = {m: encode_method(graphs[m], vocab, cfg["m_cap"]) for m in used}
    samples = []
    for v in vectors:
        samples.extend(align_to_ast(v, graphs[v.method_id], methods[v.method_id].order,
                                    cfg["m_cap"]))
    return vectors, samples, methods, vocab


def cmd_train_eye(run: Run) -> None:
    cfg = run.cfg
    config = _eye_config(cfg)
    _, samples, methods, vocab = _gaze_inputs(cfg)
    every = cfg["checkpoint_every"]

    def snapshot(epoch, net, loss):
        if every and epoch % every == 0:
            save_eye_checkpoint(run.path(f"eye_epoch{epoch:03d}.ckpt"), net, epoch=epoch)

    result = train_eye(config, samples, methods, vocab, on_epoch=snapshot)
    save_eye_checkpoint(run.path("eye.ckpt"), result.net, epoch=config.epochs)
    run.results = {"model": config.name, "samples": len(samples), "initial_loss": result.initial_loss,
                   "losses": result.losses}
    print(f"{config.name}: {len(samples)} samples, final training MSE {result.losses[-1]:.6g}")


def cmd_eval_eye(run: Run) -> None:
    cfg = run.cfg
    config = _eye_config(cfg)
    vectors, samples, methods, vocab = _gaze_inputs(cfg)
    split = lambda s: [x.strip() for x in s.split(",") if x.strip()] or None
    cv = cross_validate(config, samples, methods, vocab, split(cfg["programmers"]),
                        split(cfg["methods"]), cfg["eval_every"])
    best = cv.best_epoch()
    scores = cv.at_epoch(best)
    inter = inter_programmer_correlation(vectors, sorted({m for _, m in scores}))
    table = correlation_table(scores, inter)
    with open(run.path("table.txt"), "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    nan = lambda v: None if math.isnan(v) else v
    run.results = {
        "model": config.name, "folds": len(scores), "epochs": cv.epochs,
        "mean_curve": [nan(v) for v in cv.mean_curve()], "best_epoch": best,
        "scores_at_best": {f"{p}/{m}": nan(v) for (p, m), v in sorted(scores.items())},
        "inter_programmer": inter,
    }
    print(f"{len(scores)} folds, best epoch {best}\n{table}")


def cmd_predict_attn(run: Run) -> None:
    cfg = run.cfg
    _require(cfg, "checkpoint", "corpus")
    net = load_eye_checkpoint(cfg["checkpoint"])
    records = []
    for path in cfg["corpus"].split(","):
        records.extend(read_corpus(path.strip()))
    lo, hi = math.inf, -math.inf
    out = []
    for r in sorted(records, key=lambda r: r["id"]):
        enc = encode_method(parse_method(r["source"], r["id"]), net.vocab, net.config.m_cap)
        values = predict_attention_vector(net, enc)
        lo, hi = min(lo, float(values.min())), max(hi, float(values.max()))
        out.append({"method_id": r["id"], "node_labels": enc.labels,
                    "ptgt_hat": [float(v) for v in values]})
    write_jsonl(run.path("attention.jsonl"), out)
    run.results = {"methods": len(out), "min": lo, "max": hi}
    print(f"attention for {len(out)} methods, raw range [{lo:.6g}, {hi:.6g}]")


# --------------------------------------------------------------------------
# summarization


def _examples(records, ast_vocab, summary_vocab, config: SummaryModelConfig, attention=None):
    out = []
    for r in records:
        enc = encode_method(parse_method(r["source"], r["id"]), ast_vocab, config.max_ast_len)
        ids = np.asarray(enc.sequence.ids[: enc.length])
        words = summary_tokens(r["summary"], config.max_summary_len)
        att = None
        if attention is not None:
            if r["id"] not in attention:
                raise KeyError(f"no attention for method {r['id']}")
            att = normalize_attention(attention[r["id"]], r["id"])
            if len(att) != len(ids):
                raise AlignError(f"{r['id']}: {len(att)} attention values vs {len(ids)} AST "
                                 "positions (eye m_cap and max_ast_len must agree)")
        out.append(SummaryExample(r["id"], ids, encode_summary(words, summary_vocab,
                                                               config.max_summary_len), att))
    return out


def _sum_config(cfg: dict, variant: str, ast_vocab, summary_vocab) -> SummaryModelConfig:
    return SummaryModelConfig(variant=variant, ast_vocab_size=len(ast_vocab),
                              summary_vocab_size=len(summary_vocab), seed=cfg["seed"],
                              **{k: cfg[k] for k in _SUM_KEYS})


def _train_sum(cfg: dict, variant: str, attention, ckpt_path):
    _require(cfg, "train", "ast_vocab", "summary_vocab")
    ast_vocab = _load_vocab(cfg["ast_vocab"])
    summary_vocab = _load_vocab(cfg["summary_vocab"])
    config = _sum_config(cfg, variant, ast_vocab, summary_vocab)
    examples = _examples(read_corpus(cfg["train"]), ast_vocab, summary_vocab, config, attention)
    result = train_summarizer(config, examples)
    save_summary_checkpoint(ckpt_path, result.net, ast_vocab, summary_vocab)
    return result


def cmd_train_sum(run: Run) -> None:
    cfg = run.cfg
    variant = cfg["variant"]
    attention = None
    if variant == "augmented":
        _require(cfg, "attention")
        attention = _read_attention(cfg["attention"])
    result = _train_sum(cfg, variant, attention, run.path("summarizer.ckpt"))
    run.results = {"variant": variant, "output_width": result.net.output_width,
                   "losses": result.losses}
    print(f"{variant} summarizer: final loss {result.losses[-1]:.6g}")


def _evaluate(net, ast_vocab, summary_vocab, records, attention, name: str):
    cfg = net.config
    examples = _examples(records, ast_vocab, summary_vocab, cfg, attention)
    preds, batch = [], 64
    for k in range(0, len(examples), batch):
        chunk = examples[k:k + batch]
        att = [e.attention for e in chunk] if cfg.variant == "augmented" else None
        preds.extend(generate_batch(net, [e.ast_ids for e in chunk], att))
    hyps = [[summary_vocab.decode(i) for i in p] for p in preds]
    refs = [summary_tokens(r["summary"], cfg.max_summary_len) for r in records]
    rows = [{"method_id": r["id"], "predicted": " ".join(h), "reference": " ".join(ref)}
            for r, h, ref in zip(records, hyps, refs)]
    report = evaluate_summaries(hyps, refs, {"name": name, "variant": cfg.variant,
                                             "method_ids": [r["id"] for r in records]})
    return rows, report


def cmd_eval_sum(run: Run) -> None:
    cfg = run.cfg
    _require(cfg, "checkpoint", "test")
    net, ast_vocab, summary_vocab = load_summary_checkpoint(cfg["checkpoint"])
    attention = None
    if net.config.variant == "augmented":
        _require(cfg, "attention")
        attention = _read_attention(cfg["attention"])
    records = read_corpus(cfg["test"])
    rows, report = _evaluate(net, ast_vocab, summary_vocab, records, attention,
                             cfg["name"] or net.config.variant)
    write_jsonl(run.path("predictions.jsonl"), rows)
    with open(run.path("report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    run.results = {"mean_meteor": report.mean_meteor, "bleu": report.bleu, "n": len(rows)}
    print(f"{report.metadata['name']}: METEOR {100 * report.mean_meteor:.2f}  "
          f"BLEU {report.bleu:.2f}  (n={len(rows)})")


def cmd_control_random(run: Run) -> None:
    cfg = run.cfg
    _require(cfg, "train", "test", "attention")
    eye = _read_attention(cfg["attention"])
    lo = min(float(v.min()) for v in eye.values())
    hi = max(float(v.max()) for v in eye.values())
    seeds = [int(s) for s in cfg["seeds"].split(",") if s.strip()]
    train, test = read_corpus(cfg["train"]), read_corpus(cfg["test"])
    ast_vocab = _load_vocab(cfg["ast_vocab"])
    lengths = {}
    for r in train + test:
        enc = encode_method(parse_method(r["source"], r["id"]), ast_vocab, cfg["max_ast_len"])
        lengths[r["id"]] = enc.length
    per_seed = {}
    for seed in seeds:
        vectors = random_attention_corpus(lengths, lo, hi, seed)
        attention = {m: v.as_array() for m, v in vectors.items()}
        write_jsonl(run.path(f"attention_seed{seed}.jsonl"),
                    [{"method_id": m, "node_labels": [], "ptgt_hat": list(v.values)}
                     for m, v in sorted(vectors.items())])
        result = _train_sum(cfg, "augmented", attention, run.out / f"summarizer_seed{seed}.ckpt")
        run.outputs.append(f"summarizer_seed{seed}.ckpt")
        net, av, sv = load_summary_checkpoint(run.out / f"summarizer_seed{seed}.ckpt")
        rows, report = _evaluate(net, av, sv, test, attention, f"random-{seed}")
        write_jsonl(run.path(f"predictions_seed{seed}.jsonl"), rows)
        per_seed[str(seed)] = {"mean_meteor": report.mean_meteor, "bleu": report.bleu,
                               "final_loss": result.losses[-1]}
        print(f"seed {seed}: METEOR {100 * report.mean_meteor:.2f}  BLEU {report.bleu:.2f}")
    summary = {}
    for metric in ("mean_meteor", "bleu"):
        vals = [r[metric] for r in per_seed.values()]
        summary[metric] = {"min": min(vals), "mean": float(np.mean(vals)), "max": max(vals)}
    write_json(run.path("control_report.json"),
               {"lo": lo, "hi": hi, "seeds": per_seed, "summary": summary})
    run.results = {"lo": lo, "hi": hi, "summary": summary}
    m = summary["mean_meteor"]
    print(f"random controls METEOR min/mean/max: {100 * m['min']:.2f} / "
          f"{100 * m['mean']:.2f} / {100 * m['max']:.2f}")


# --------------------------------------------------------------------------
# heatmap and report


def cmd_heatmap(run: Run) -> None:
    cfg = run.cfg
    _require(cfg, "corpus", "method_id", "attention")
    records = {r["id"]: r for r in read_corpus(cfg["corpus"])}
    mid = cfg["method_id"]
    if mid not in records:
        raise KeyError(f"method {mid} not in corpus")
    src = records[mid]["source"]
    graph = parse_method(src, mid)
    order = linearize(graph)
    node_values = None
    if cfg["attention_source"] == "human":
        vecs = [v for v in _read_ptgt(cfg["attention"]) if v.method_id == mid
                and (not cfg["programmer"] or v.programmer_id == cfg["programmer"])]
        if not vecs:
            raise KeyError(f"no human attention for method {mid}")
        values = np.mean([v.ptgt for v in vecs], axis=0)
    elif cfg["attention_source"] == "predicted":
        att = _read_attention(cfg["attention"])
        if mid not in att:
            raise KeyError(f"no predicted attention for method {mid}")
        node_values = att[mid]
        visible = [k for k, i in enumerate(order) if graph.nodes[i].visible]
        fill = float(np.mean(node_values))
        # tokens past the model's node cap have no prediction; show them neutral
        values = np.array([node_values[k] if k < len(node_values) else fill for k in visible])
    else:
        raise ConfigError("attention_source must be 'human' or 'predicted'")
    doc = render_heatmap(src, values, f"{mid} ({cfg['attention_source']})", graph, node_values)
    with open(run.path(f"heatmap_{mid}.html"), "w", encoding="utf-8") as fh:
        fh.write(doc)
    print(f"wrote heatmap_{mid}.html")


def cmd_report(run: Run) -> None:
    cfg = run.cfg
    _require(cfg, "reports")
    reports = [MetricReport.from_dict(read_json(p.strip())) for p in cfg["reports"].split(",")]
    lines = [f"{'model':<20}{'METEOR':>9}{'BLEU':>9}{'n':>6}"]
    for rep in reports:
        lines.append(f"{rep.metadata.get('name', '?'):<20}{100 * rep.mean_meteor:>9.2f}"
                     f"{rep.bleu:>9.2f}{len(rep.meteor_scores):>6}")
    tests = {}
    base = reports[0]
    for rep in reports[1:]:
        if rep.metadata.get("method_ids") != base.metadata.get("method_ids"):
            raise AlignError("reports cover different test methods; cannot pair them")
        name = f"{rep.metadata.get('name')} vs {base.metadata.get('name')}"
        try:
            t = paired_t_test(rep.meteor_scores, base.meteor_scores)
            tests[name] = asdict(t)
            lines.append(f"paired t-test (METEOR) {name}: t={t.t:.3f} df={t.df} p={t.p:.4g}")
        except DegenerateTest as exc:
            tests[name] = None
            lines.append(f"paired t-test (METEOR) {name}: undefined ({exc})")
    if cfg["control"]:
        ctl = read_json(cfg["control"])["summary"]
        for metric, scale in (("mean_meteor", 100), ("bleu", 1)):
            s = ctl[metric]
            lines.append(f"random control {metric}: min {scale * s['min']:.2f} "
                         f"mean {scale * s['mean']:.2f} max {scale * s['max']:.2f}")
    text = "\n".join(lines)
    with open(run.path("report.txt"), "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    run.results = {"paired_tests": tests}
    print(text)


HELP = {
    "corpus-prepare": "dedup, length-filter and split a method corpus by project",
    "gaze-ingest": "turn a fixation CSV into per-token ptgt vectors",
    "train-eye": "train a gaze (ptgt) prediction model",
    "eval-eye": "leave-one-programmer-and-method-out correlation table",
    "predict-attn": "export predicted attention for every node of a corpus",
    "train-sum": "train a baseline or attention-augmented summarizer",
    "eval-sum": "generate summaries and score them (METEOR, BLEU)",
    "control-random": "summarizers trained on seeded random attention",
    "heatmap": "render one method's attention as HTML",
    "report": "compare evaluation reports with paired t-tests",
}

HANDLERS = {
    "corpus-prepare": cmd_corpus_prepare, "gaze-ingest": cmd_gaze_ingest,
    "train-eye": cmd_train_eye, "eval-eye": cmd_eval_eye, "predict-attn": cmd_predict_attn,
    "train-sum": cmd_train_sum, "eval-sum": cmd_eval_sum, "control-random": cmd_control_random,
    "heatmap": cmd_heatmap, "report": cmd_report,
}


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value settings file")
    common.add_argument("--seed", type=int, help="random seed (default 0)")
    common.add_argument("--out", default=".", help="output directory (default: current)")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="gazesum",
                                     description="Gaze-guided code summarization pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, keys in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=HELP[name])
        for key, default in keys.items():
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=None, metavar="V",
                           help=f"(default: {default!r})")
    return parser


def exit_code(command: str, exc: BaseException) -> int:
    base = EXIT_BASE[command]
    for cls, off in EXIT_OFFSETS:
        if isinstance(exc, cls):
            return base + off
    return base + 9


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    command = args.command
    try:
        file_values = read_config_file(args.config) if args.config else {}
        flags = {k: getattr(args, k) for k in COMMANDS[command]}
        cfg = resolve_config(command, file_values, flags, args.seed)
        run = Run(command, cfg, Path(args.out))
        HANDLERS[command](run)
        run.finish()
    except Exception as exc:  # mapped to the subcommand's exit-code range
        if args.verbose:
            logger.exception("%s failed", command)
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"gazesum {command}: error: {msg}", file=sys.stderr)
        return exit_code(command, exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
