"""Input checks shared by the estimator wrappers."""
from __future__ import annotations

import numpy as np

from .codeparse import EncodedMethod
from .exceptions import AlignError, ConfigError


def check_sources(X) -> list[str]:
    if isinstance(X, str):
        raise TypeError("expected a sequence of method sources, got a single string")
    sources = list(X)
    if not sources:
        raise ValueError("empty input")
    bad = [i for i, s in enumerate(sources) if not isinstance(s, str)]
    if bad:
        raise TypeError(f"non-string sources at positions {bad[:5]}")
    return sources


def check_focal_pairs(X, m_cap: int) -> list[tuple[EncodedMethod, int]]:
    """Validate ``(EncodedMethod, focal index)`` pairs against the encoder capacity."""
    pairs = list(X)
    if not pairs:
        raise ValueError("empty input")
    for k, pair in enumerate(pairs):
        if len(pair) != 2 or not isinstance(pair[0], EncodedMethod):
            raise TypeError(f"item {k}: expected (EncodedMethod, focal_index)")
        enc, focal = pair
        if enc.sequence.m_cap != m_cap:
            raise ConfigError(f"item {k}: encoded with m_cap {enc.sequence.m_cap}, expected {m_cap}")
        if not 0 <= int(focal) < enc.length:
            raise ValueError(f"item {k}: focal index {focal} outside 0..{enc.length - 1}")
    return pairs


def check_attention(attention, ids, variant: str):
    """Attention must be given exactly for the augmented variant, one vector per method."""
    if variant != "augmented":
        if attention is not None:
            raise ConfigError("baseline summarizer takes no attention")
        return None
    if attention is None:
        raise ConfigError("augmented summarizer needs attention vectors")
    att = [np.asarray(a, dtype=np.float64) for a in attention]
    if len(att) != len(ids):
        raise ValueError(f"{len(att)} attention vectors for {len(ids)} methods")
    for k, (a, s) in enumerate(zip(att, ids)):
        if a.ndim != 1 or len(a) != len(s):
            raise AlignError(f"item {k}: attention length {a.shape} vs {len(s)} AST positions")
    return att
