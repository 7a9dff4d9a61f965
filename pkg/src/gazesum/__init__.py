"""Gaze-guided neural code summarization: parsing, gaze models, summarizers, metrics."""
__version__ = "0.1.0"

from .codeparse import (AstGraph, AstNode, EncodedMethod, NodeSequence, Vocabulary, adjacency,
                        build_vocab, encode_method, linearize, parse_method)
from .estimators import AstEncoder, CodeSummarizer, EyeGazeRegressor
from .evalmetrics import MetricReport, corpus_bleu, meteor, paired_t_test, pearson
from .exceptions import *  # noqa: F401,F403

__all__ = [
    "AstGraph", "AstNode", "EncodedMethod", "NodeSequence", "Vocabulary", "adjacency",
    "build_vocab", "encode_method", "linearize", "parse_method", "AstEncoder",
    "CodeSummarizer", "EyeGazeRegressor", "MetricReport", "corpus_bleu", "meteor",
    "paired_t_test", "pearson",
]
