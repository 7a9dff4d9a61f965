"""Fixation ingestion, per-token gaze aggregation and ptgt targets."""
from __future__ import annotations

import csv
import difflib
import logging
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .codeparse import DEFAULT_M_CAP, AstGraph, linearize
from .exceptions import AlignError, EmptyGazeError, IngestError

logger = logging.getLogger(__name__)

FIXATION_COLUMNS = ("programmer_id", "method_id", "token_index", "token_text", "duration_ms")
MIN_FIXATION_MS = 100.0


@dataclass(frozen=True)
class FixationRecord:
    programmer_id: str
    method_id: str
    token_index: int
    token_text: str
    duration_ms: float


@dataclass(frozen=True)
class GazeVector:
    method_id: str
    programmer_id: str
    g: tuple


@dataclass(frozen=True)
class PtgtVector:
    method_id: str
    programmer_id: str
    ptgt: tuple

    def to_record(self) -> dict:
        return {"method_id": self.method_id, "programmer_id": self.programmer_id,
                "ptgt": [float(v) for v in self.ptgt]}


@dataclass(frozen=True)
class PtgtSample:
    method_id: str
    programmer_id: str
    focal_node_index: int
    target: float


@dataclass
class IngestResult:
    records: list
    dropped_short: int = 0


def ingest_fixations(path, column_map: Mapping[str, str] | None = None,
                     min_duration: float = MIN_FIXATION_MS) -> IngestResult:
    """Read a fixation CSV; rows shorter than ``min_duration`` ms are dropped.

    ``column_map`` maps canonical column names to the names used in the file,
    which lets exports with a different header be read directly.
    """
    column_map = dict(column_map or {})
    wanted = {c: column_map.get(c, c) for c in FIXATION_COLUMNS}
    records = []
    dropped = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError("empty fixation file", 1) from None
        header = [h.strip() for h in header]
        missing = [src for src in wanted.values() if src not in header]
        if missing:
            raise IngestError(f"missing column(s) {missing}", 1)
        col = {c: header.index(src) for c, src in wanted.items()}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise IngestError(f"expected {len(header)} fields, got {len(row)}", lineno)
            try:
                rec = FixationRecord(
                    programmer_id=row[col["programmer_id"]].strip(),
                    method_id=row[col["method_id"]].strip(),
                    token_index=int(row[col["token_index"]]),
                    token_text=row[col["token_text"]],
                    duration_ms=float(row[col["duration_ms"]]),
                )
            except ValueError as exc:
                raise IngestError(f"malformed row: {exc}", lineno) from None
            if rec.duration_ms < 0 or rec.token_index < 0:
                raise IngestError("negative duration or token index", lineno)
            if rec.duration_ms < min_duration:
                dropped += 1
                continue
            records.append(rec)
    if dropped:
        logger.warning("dropped %d fixation(s) shorter than %g ms", dropped, min_duration)
    return IngestResult(records, dropped)


def group_records(records: Iterable[FixationRecord]) -> dict:
    """Group by (programmer_id, method_id), preserving first-seen order."""
    groups: dict = defaultdict(list)
    for r in records:
        groups[(r.programmer_id, r.method_id)].append(r)
    return dict(groups)


def aggregate_gaze(records: Sequence[FixationRecord], n_tokens: int,
                   method_id: str | None = None, programmer_id: str | None = None) -> GazeVector:
    """Total gaze per visible token; regressions add into the revisited token."""
    if records:
        method_id = records[0].method_id if method_id is None else method_id
        programmer_id = records[0].programmer_id if programmer_id is None else programmer_id
    totals = [0.0] * n_tokens
    for r in records:
        if not 0 <= r.token_index < n_tokens:
            raise AlignError(f"{r}: token_index outside method with {n_tokens} tokens")
        totals[r.token_index] += r.duration_ms
    return GazeVector(method_id or "", programmer_id or "", tuple(totals))


def compute_ptgt(gaze: GazeVector, exact: bool = False) -> PtgtVector:
    """Percent total gaze time per token. ``exact=True`` returns Fractions."""
    if exact:
        g = [Fraction(v) for v in gaze.g]
        total = sum(g, Fraction(0))
    else:
        g = [float(v) for v in gaze.g]
        total = float(np.sum(g)) if g else 0.0
    if not g or total <= 0:
        raise EmptyGazeError(f"no gaze recorded for {gaze.programmer_id}/{gaze.method_id}")
    return PtgtVector(gaze.method_id, gaze.programmer_id, tuple(v / total for v in g))


def align_to_ast(ptgt: PtgtVector, graph: AstGraph, order: Sequence[int] | None = None,
                 m_cap: int = DEFAULT_M_CAP) -> list[PtgtSample]:
    """One sample per visible node inside the first ``m_cap`` preorder positions."""
    order = linearize(graph) if order is None else order
    visible_positions = [k for k, i in enumerate(order) if graph.nodes[i].visible]
    if len(visible_positions) != len(ptgt.ptgt):
        raise AlignError(
            f"{ptgt.method_id}: {len(ptgt.ptgt)} gaze tokens vs "
            f"{len(visible_positions)} visible AST nodes")
    samples = []
    beyond = 0
    for pos, value in zip(visible_positions, ptgt.ptgt):
        if pos >= m_cap:
            beyond += 1
            continue
        samples.append(PtgtSample(ptgt.method_id, ptgt.programmer_id, pos, float(value)))
    if beyond:
        logger.warning("%s/%s: %d visible token(s) past position %d not sampled",
                       ptgt.programmer_id, ptgt.method_id, beyond, m_cap)
    return samples


def check_token_texts(records: Sequence[FixationRecord], visible_labels: Sequence[str]):
    """Raise AlignError (with a token diff) when fixation tokens disagree with the parse."""
    seen = {}
    bad = set()
    for r in records:
        text = r.token_text.strip().lower()
        seen.setdefault(r.token_index, text)
        if r.token_index >= len(visible_labels) or visible_labels[r.token_index] != text:
            bad.add(r.token_index)
            seen[r.token_index] = text
    if bad:
        file_stream = [seen.get(i, "?") for i in range(max(seen) + 1)]
        diff = "\n".join(difflib.unified_diff(
            list(visible_labels), file_stream, "parser", "fixations", lineterm="", n=1))
        raise AlignError(f"{records[0].method_id}: token mismatch at index "
                         f"{sorted(bad)[:5]}\n{diff}")


@dataclass
class GazeDataset:
    ptgt: list            # PtgtVector per (programmer, method)
    samples: list         # PtgtSample
    excluded: dict        # method_id -> reason
    empty: list           # (programmer, method) pairs with zero total gaze


def build_gaze_dataset(records: Iterable[FixationRecord], graphs: Mapping[str, AstGraph],
                       m_cap: int = DEFAULT_M_CAP, check_text: bool = True) -> GazeDataset:
    """Aggregate, normalize and align every (programmer, method) pair.

    Methods whose fixation tokens disagree with the parser are excluded.
    """
    out = GazeDataset([], [], {}, [])
    orders = {}
    for (prog, mid), recs in sorted(group_records(records).items()):
        if mid in out.excluded:
            continue
        graph = graphs.get(mid)
        if graph is None:
            out.excluded[mid] = "method not in corpus"
            continue
        if mid not in orders:
            orders[mid] = linearize(graph)
        labels = graph.visible_labels(orders[mid])
        try:
            if check_text:
                check_token_texts(recs, labels)
            gaze = aggregate_gaze(recs, len(labels), mid, prog)
        except AlignError as exc:
            logger.warning("excluding %s: %s", mid, exc)
            out.excluded[mid] = str(exc)
            continue
        try:
            vec = compute_ptgt(gaze)
        except EmptyGazeError:
            out.empty.append((prog, mid))
            continue
        out.ptgt.append(vec)
    out.ptgt = [v for v in out.ptgt if v.method_id not in out.excluded]
    for vec in out.ptgt:
        out.samples.extend(align_to_ast(vec, graphs[vec.method_id], orders[vec.method_id], m_cap))
    return out


def inter_programmer_correlation(vectors: Iterable[PtgtVector],
                                 methods: Iterable[str] | None = None) -> dict:
    """Per programmer: mean Pearson r of their ptgt against the all-programmer average.

    Computed per method then averaged over ``methods`` (default: every
    method with at least two programmers).
    """
    from .evalmetrics import pearson
    from .exceptions import DegenerateCorrelation

    by_method: dict = defaultdict(dict)
    for v in vectors:
        by_method[v.method_id][v.programmer_id] = np.asarray(v.ptgt, dtype=float)
    chosen = sorted(methods) if methods is not None else sorted(
        m for m, d in by_method.items() if len(d) >= 2)
    scores: dict = defaultdict(list)
    for m in chosen:
        progs = by_method[m]
        mean = np.mean(np.stack(list(progs.values())), axis=0)
        for p, vec in progs.items():
            try:
                scores[p].append(pearson(vec, mean))
            except DegenerateCorrelation:
                pass
    return {p: float(np.mean(v)) for p, v in sorted(scores.items()) if v}
