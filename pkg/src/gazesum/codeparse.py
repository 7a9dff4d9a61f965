"""Java-subset method parser emitting an srcML-style tag tree.

The tree mirrors the srcML taxonomy closely enough that its preorder
linearization reads like srcML output, e.g.::

    decl_stmt decl type name pawn name pawn2 init = expr operator new ...

Identifiers are split into lowercased subtokens, each a visible leaf.
"""
from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .exceptions import ConfigError, ParseError

logger = logging.getLogger(__name__)

PAD, UNK = 0, 1
DEFAULT_M_CAP = 400

# srcML tags this parser may emit for structural (non-visible) nodes.
STRUCTURAL_TAGS = frozenset({
    "unit", "function", "specifier", "type", "name", "parameter_list",
    "parameter", "block", "decl_stmt", "decl", "init", "expr", "operator",
    "call", "argument_list", "argument", "literal", "if", "condition",
    "then", "else", "for", "while", "return", "comment",
    # srcML tags outside the core list, needed for the supported subset
    "expr_stmt", "throws", "control", "incr", "index", "range", "break",
    "continue", "throw", "empty_stmt",
})

MODIFIERS = frozenset({
    "public", "private", "protected", "static", "final", "abstract",
    "synchronized", "native", "strictfp", "default", "transient", "volatile",
})

_LITERAL_WORDS = frozenset({"true", "false", "null"})
_NOT_TYPE = frozenset({
    "return", "new", "if", "else", "for", "while", "do", "switch", "case",
    "break", "continue", "throw", "try", "catch", "finally", "true", "false",
    "null", "this", "super", "instanceof", "assert", "synchronized", "class",
})
_UNSUPPORTED_STMT = frozenset({
    "try", "switch", "do", "synchronized", "assert", "class", "interface",
    "enum", "yield",
})
_CLOSERS = {")": "(", "]": "[", "}": "{"}
_OPENERS = {"(": ")", "[": "]", "{": "}"}

_TOKEN_RE = re.compile(
    r"""
     (?P<ws>\s+)
    |(?P<comment>//[^\n]*|/\*.*?\*/)
    |(?P<string>"(?:[^"\\\n]|\\.)*")
    |(?P<char>'(?:[^'\\\n]|\\.)+')
    |(?P<number>0[xX][0-9a-fA-F_]+[lL]?
        |(?:\d[\d_]*(?:\.[\d_]*)?|\.\d[\d_]*)(?:[eE][+-]?\d+)?[fFdDlL]?)
    |(?P<word>[A-Za-z_$][A-Za-z0-9_$]*)
    |(?P<op>>>>=|<<=|>>=|>>>|\.\.\.|->|::|\+\+|--|&&|\|\||==|!=|<=|>=
        |\+=|-=|\*=|/=|%=|&=|\|=|\^=|<<|>>|[-+*/%=<>!~?:&|^.,;(){}\[\]@])
    """,
    re.S | re.X,
)
_IDENT_RE = re.compile(r"^[A-Za-z_$][A-Za-z0-9_$]*$")
_PIECE_RE = re.compile(r"[A-Z]+(?=[A-Z][a-z])\d*|[A-Z]?[a-z]+\d*|[A-Z]+\d*|\d+")


# --------------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class AstNode:
    label: str
    visible: bool = False
    source_span: tuple[int, int, int] | None = None  # (line, column, length)

    def __post_init__(self):
        if self.visible != (self.source_span is not None):
            raise ValueError(f"node {self.label!r}: visible iff source_span present")


@dataclass(frozen=True)
class AstGraph:
    nodes: tuple[AstNode, ...]
    edges: tuple[tuple[int, int], ...]
    method_id: str = ""
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(tuple(e) for e in self.edges))
        n = len(self.nodes)
        if n == 0:
            raise ValueError("AstGraph needs at least one node")
        parent = [-1] * n
        children: list[list[int]] = [[] for _ in range(n)]
        for p, c in self.edges:
            if not (0 <= p < n and 0 <= c < n):
                raise ValueError(f"edge ({p}, {c}) out of range for {n} nodes")
            if parent[c] != -1:
                raise ValueError(f"node {c} has more than one parent")
            parent[c] = p
            children[p].append(c)
        roots = [i for i in range(n) if parent[i] == -1]
        if len(roots) != 1:
            raise ValueError(f"expected exactly one root, found {len(roots)}")
        seen = 0
        stack = [roots[0]]
        while stack:
            i = stack.pop()
            seen += 1
            if seen > n:
                break
            stack.extend(children[i])
        if seen != n:
            raise ValueError("edges do not form a single rooted tree")
        object.__setattr__(self, "_children", tuple(tuple(c) for c in children))
        object.__setattr__(self, "_parent", tuple(parent))
        object.__setattr__(self, "_root", roots[0])

    @property
    def root(self) -> int:
        return self._root

    def children(self, i: int) -> tuple[int, ...]:
        return self._children[i]

    def parent(self, i: int) -> int:
        return self._parent[i]

    def __len__(self):
        return len(self.nodes)

    @property
    def labels(self) -> list[str]:
        return [n.label for n in self.nodes]

    def visible_labels(self, order: Sequence[int] | None = None) -> list[str]:
        order = linearize(self) if order is None else order
        return [self.nodes[i].label for i in order if self.nodes[i].visible]

    def dump(self) -> str:
        """Indented tag tree, one node per line; ``*`` marks visible nodes."""
        lines = []
        stack = [(self.root, 0)]
        while stack:
            i, depth = stack.pop()
            node = self.nodes[i]
            mark = "*" if node.visible else ""
            lines.append(f"{'  ' * depth}{mark}{node.label}")
            stack.extend((c, depth + 1) for c in reversed(self._children[i]))
        return "\n".join(lines)


@dataclass(frozen=True)
class NodeSequence:
    ids: np.ndarray
    visibility: np.ndarray
    length: int
    truncated: bool = False

    def __post_init__(self):
        for arr in (self.ids, self.visibility):
            arr.setflags(write=False)

    @property
    def m_cap(self) -> int:
        return len(self.ids)

    @property
    def pad_length(self) -> int:
        return len(self.ids) - self.length


class Vocabulary:
    """Token <-> id tables with reserved ids at the front (PAD=0, UNK=1)."""

    def __init__(self, tokens: Iterable[str], max_size: int,
                 specials: Sequence[str] = ("<pad>", "<unk>")):
        self.specials = tuple(specials)
        self.max_size = max_size
        self.id_to_token: list[str] = list(self.specials)
        for tok in tokens:
            if tok in self.specials:
                continue
            if len(self.id_to_token) >= max_size:
                break
            self.id_to_token.append(tok)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ConfigError("duplicate tokens in vocabulary")

    @classmethod
    def from_counts(cls, counts: Counter, max_size: int,
                    specials: Sequence[str] = ("<pad>", "<unk>")) -> "Vocabulary":
        if max_size < len(specials):
            raise ConfigError(f"max_size {max_size} smaller than reserved ids")
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls((t for t, _ in ranked), max_size, specials)

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def encode(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def decode(self, idx: int) -> str:
        return self.id_to_token[idx]

    def to_dict(self) -> dict:
        return {"tokens": self.id_to_token, "max_size": self.max_size,
                "specials": list(self.specials)}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        specials = d.get("specials", ["<pad>", "<unk>"])
        return cls(d["tokens"][len(specials):], d["max_size"], specials)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.id_to_token == other.id_to_token

    def __repr__(self):
        return f"Vocabulary(size={len(self)}, max_size={self.max_size})"


# --------------------------------------------------------------------------
# lexing


@dataclass(frozen=True)
class Token:
    kind: str  # word | number | string | char | op | eof
    text: str
    line: int
    column: int


_EOF = Token("eof", "", -1, -1)


def tokenize(source: str) -> list[Token]:
    """Lexical tokens of ``source`` with comments and whitespace removed."""
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ParseError(f"unexpected character {source[pos]!r}",
                             line, pos - line_start + 1)
        kind = m.lastgroup
        text = m.group()
        if kind not in ("ws", "comment"):
            tokens.append(Token(kind, text, line, pos - line_start + 1))
        newlines = text.count("\n")
        if newlines:
            line += newlines
            line_start = pos + text.rindex("\n") + 1
        pos = m.end()
    return tokens


def split_identifier(token: str) -> list[str]:
    """Split on camelCase humps and underscores, lowercasing each piece.

    >>> split_identifier("getColumnNamesWithPrefix")
    ['get', 'column', 'names', 'with', 'prefix']
    """
    return [p for p, _ in _split_offsets(token)]


def _split_offsets(token: str) -> list[tuple[str, int]]:
    if not _IDENT_RE.match(token):
        return [(token, 0)]
    pieces = [(m.group().lower(), m.start()) for m in _PIECE_RE.finditer(token)]
    return pieces or [(token.lower(), 0)]


def _visible_pieces(tok: Token) -> list[tuple[str, tuple[int, int, int]]]:
    if tok.kind == "word":
        return [(p, (tok.line, tok.column + off, len(p)))
                for p, off in _split_offsets(tok.text)]
    if tok.kind in ("string", "char"):
        quote = tok.text[0]
        out = [(quote, (tok.line, tok.column, 1))]
        body = tok.text[1:-1]
        for m in re.finditer(r"\S+", body):
            out.append((m.group().lower(), (tok.line, tok.column + 1 + m.start(),
                                            len(m.group()))))
        out.append((quote, (tok.line, tok.column + len(tok.text) - 1, 1)))
        return out
    return [(tok.text, (tok.line, tok.column, len(tok.text)))]


def visible_token_stream(source: str) -> list[str]:
    """Lowercased, identifier-split lexical stream a reader sees on screen."""
    return [label for tok in tokenize(source) for label, _ in _visible_pieces(tok)]


# --------------------------------------------------------------------------
# parsing


class _B:
    __slots__ = ("label", "children", "span")

    def __init__(self, label, children=None, span=None):
        self.label = label
        self.children = list(children or [])
        self.span = span


def _leaves(tok: Token) -> list[_B]:
    return [_B(label, span=span) for label, span in _visible_pieces(tok)]


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.toks = tokens
        self.pos = 0
        self.warnings: list[str] = []

    # token helpers
    def peek(self, k: int = 0) -> Token:
        i = self.pos + k
        return self.toks[i] if i < len(self.toks) else _EOF

    def tok(self, i: int) -> Token:
        return self.toks[i] if i < len(self.toks) else _EOF

    def at(self, text: str) -> bool:
        t = self.peek()
        return t.kind in ("op", "word") and t.text == text

    def advance(self) -> Token:
        t = self.peek()
        if t.kind == "eof":
            raise ParseError("unexpected end of input")
        self.pos += 1
        return t

    def expect(self, text: str) -> Token:
        t = self.peek()
        if not self.at(text):
            found = t.text or "end of input"
            raise ParseError(f"expected {text!r}, found {found!r}", t.line, t.column)
        self.pos += 1
        return t

    def error(self, msg: str):
        t = self.peek()
        return ParseError(msg, t.line if t.kind != "eof" else None,
                          t.column if t.kind != "eof" else None)

    def warn(self, what: str):
        t = self.peek()
        self.warnings.append(f"{what} at line {t.line}" if t.kind != "eof" else what)

    def match(self, i: int) -> int:
        """Index of the bracket closing the opener at ``i``."""
        opener = self.tok(i).text
        closer = _OPENERS[opener]
        depth = 0
        j = i
        while True:
            t = self.tok(j)
            if t.kind == "eof":
                raise ParseError(f"unbalanced {opener!r}", self.tok(i).line,
                                 self.tok(i).column)
            if t.kind == "op":
                if t.text in _OPENERS:
                    depth += 1
                elif t.text in _CLOSERS:
                    depth -= 1
                    if depth == 0:
                        if t.text != closer:
                            raise ParseError(f"mismatched {t.text!r}", t.line, t.column)
                        return j
            j += 1

    def flat(self, start: int, end: int, reason: str) -> _B:
        """Degrade tokens[start:end] into one flat ``expr`` node."""
        self.warnings.append(f"degraded {reason} at line {self.tok(start).line}")
        node = _B("expr")
        for t in self.toks[start:end]:
            node.children.extend(_leaves(t))
        self.pos = end
        return node

    # method header
    def unit(self) -> _B:
        fn = self.function()
        if self.peek().kind != "eof":
            raise self.error(f"trailing input {self.peek().text!r} after method")
        return _B("unit", [fn])

    def function(self) -> _B:
        fn = _B("function")
        while True:
            if self.at("@"):
                fn.children.append(self.annotation())
            elif self.peek().kind == "word" and self.peek().text in MODIFIERS:
                fn.children.append(_B("specifier", _leaves(self.advance())))
            else:
                break
        if self.at("<"):
            fn.children.append(self.flat(self.pos, self.generic_end(self.pos) + 1,
                                         "type parameters"))
        if self.peek().kind != "word":
            raise self.error("expected method return type or name")
        if not self.tok(self.pos + 1).text == "(":
            fn.children.append(self.type_())
        if self.peek().kind != "word":
            raise self.error("expected method name")
        fn.children.append(self.name_node(self.advance()))
        fn.children.append(self.parameter_list())
        while self.at("[") and self.peek(1).text == "]":
            fn.children.append(_B("index", _leaves(self.advance()) + _leaves(self.advance())))
        if self.at("throws"):
            fn.children.append(self.throws())
        if self.at(";"):
            raise self.error("method declaration has no body")
        fn.children.append(self.block())
        return fn

    def annotation(self) -> _B:
        start = self.pos
        self.expect("@")
        self.qualified_end()
        if self.at("("):
            self.pos = self.match(self.pos) + 1
        return self.flat(start, self.pos, "annotation")

    def qualified_end(self):
        if self.peek().kind != "word":
            raise self.error("expected identifier")
        self.pos += 1
        while self.at(".") and self.peek(1).kind == "word":
            self.pos += 2

    def generic_end(self, i: int) -> int:
        depth = 0
        while True:
            t = self.tok(i)
            if t.kind == "eof":
                raise ParseError("unterminated generic arguments")
            if t.text == "<":
                depth += 1
            elif t.text in (">", ">>", ">>>"):
                depth -= len(t.text)
                if depth <= 0:
                    return i
            i += 1

    def name_node(self, tok: Token) -> _B:
        return _B("name", _leaves(tok))

    def qualified(self) -> _B:
        if self.peek().kind != "word":
            raise self.error("expected identifier")
        parts = [self.name_node(self.advance())]
        while self.at(".") and self.peek(1).kind == "word":
            parts.append(_B("operator", _leaves(self.advance())))
            parts.append(self.name_node(self.advance()))
        return parts[0] if len(parts) == 1 else _B("name", parts)

    def type_(self) -> _B:
        node = _B("type")
        while self.at("final") or self.at("@"):
            if self.at("@"):
                node.children.append(self.annotation())
            else:
                node.children.append(_B("specifier", _leaves(self.advance())))
        name = self.qualified()
        if self.at("<"):
            name = _with_child(name, self.flat(self.pos, self.generic_end(self.pos) + 1,
                                               "generic arguments"))
        while self.at("[") and self.peek(1).text == "]":
            name = _with_child(name, _B("index", _leaves(self.advance()) + _leaves(self.advance())))
        node.children.append(name)
        if self.at("..."):
            node.children.extend(_leaves(self.advance()))
        return node

    def parameter_list(self) -> _B:
        node = _B("parameter_list", _leaves(self.expect("(")))
        if not self.at(")"):
            while True:
                decl = _B("decl", [self.type_()])
                if self.peek().kind != "word":
                    raise self.error("expected parameter name")
                decl.children.append(self.name_node(self.advance()))
                node.children.append(_B("parameter", [decl]))
                if not self.at(","):
                    break
                node.children.extend(_leaves(self.advance()))
        node.children.extend(_leaves(self.expect(")")))
        return node

    def throws(self) -> _B:
        node = _B("throws", _leaves(self.expect("throws")))
        while True:
            node.children.append(_B("argument", [_B("expr", [self.qualified()])]))
            if not self.at(","):
                break
            node.children.extend(_leaves(self.advance()))
        return node

    # statements
    def block(self) -> _B:
        node = _B("block", _leaves(self.expect("{")))
        while not self.at("}"):
            if self.peek().kind == "eof":
                raise self.error("unterminated block")
            node.children.extend(self.statement())
        node.children.extend(_leaves(self.expect("}")))
        return node

    def statement(self) -> list[_B]:
        t = self.peek()
        if t.kind == "eof":
            raise self.error("expected statement")
        text = t.text
        if t.kind == "op":
            if text == "{":
                return [self.block()]
            if text == ";":
                return [_B("empty_stmt", _leaves(self.advance()))]
            if text == "@":
                return [self.annotation()] + self.statement()
        if t.kind == "word":
            if text == "if":
                return [self.if_()]
            if text == "for":
                return [self.for_()]
            if text == "while":
                return [self.while_()]
            if text == "return":
                node = _B("return", _leaves(self.advance()))
                if not self.at(";"):
                    node.children.append(self.expr())
                node.children.extend(_leaves(self.expect(";")))
                return [node]
            if text in ("break", "continue"):
                node = _B(text, _leaves(self.advance()))
                if self.peek().kind == "word":
                    node.children.append(self.name_node(self.advance()))
                node.children.extend(_leaves(self.expect(";")))
                return [node]
            if text == "throw":
                node = _B("throw", _leaves(self.advance()))
                node.children.append(self.expr())
                node.children.extend(_leaves(self.expect(";")))
                return [node]
            if text in _UNSUPPORTED_STMT:
                return [self.degraded_statement()]
            if self.peek(1).text == ":" and text not in _NOT_TYPE:
                label = self.flat(self.pos, self.pos + 2, "statement label")
                return [label] + self.statement()
            if self.is_decl_start(self.pos):
                return [self.decl_stmt()]
        node = _B("expr_stmt", [self.expr()])
        node.children.extend(_leaves(self.expect(";")))
        return [node]

    def degraded_statement(self) -> _B:
        start = self.pos
        kw = self.peek().text
        depth = 0
        while True:
            t = self.advance()
            if t.kind == "op" and t.text in _OPENERS:
                depth += 1
            elif t.kind == "op" and t.text in _CLOSERS:
                depth -= 1
                if depth == 0 and t.text == "}":
                    nxt = self.peek().text
                    if kw == "try" and nxt in ("catch", "finally"):
                        continue
                    if kw == "do" and nxt == "while":
                        continue
                    break
            elif t.text == ";" and depth == 0:
                break
        return self.flat(start, self.pos, f"{kw} statement")

    def scan_type(self, i: int) -> int | None:
        t = self.tok(i)
        if t.kind != "word" or t.text in _NOT_TYPE:
            return None
        i += 1
        while self.tok(i).text == "." and self.tok(i + 1).kind == "word":
            i += 2
        if self.tok(i).text == "<":
            depth = 0
            while True:
                t = self.tok(i)
                if t.text == "<":
                    depth += 1
                elif t.text in (">", ">>", ">>>"):
                    depth -= len(t.text)
                elif not (t.kind == "word" or t.text in (",", ".", "?", "&", "[", "]")):
                    return None
                i += 1
                if depth <= 0:
                    break
        while self.tok(i).text == "[" and self.tok(i + 1).text == "]":
            i += 2
        if self.tok(i).text == "...":
            i += 1
        return i

    def is_decl_start(self, i: int) -> bool:
        while self.tok(i).text == "final":
            i += 1
        end = self.scan_type(i)
        if end is None:
            return False
        name = self.tok(end)
        return (name.kind == "word" and name.text not in _NOT_TYPE
                and self.tok(end + 1).text in ("=", ";", ",", "[", ":"))

    def decl_stmt(self) -> _B:
        node = _B("decl_stmt", self.decls())
        node.children.extend(_leaves(self.expect(";")))
        return node

    def decls(self) -> list[_B]:
        out = []
        decl = _B("decl", [self.type_()])
        while True:
            if self.peek().kind != "word":
                raise self.error("expected variable name")
            name = self.name_node(self.advance())
            while self.at("[") and self.peek(1).text == "]":
                name = _with_child(name, _B("index", _leaves(self.advance()) + _leaves(self.advance())))
            decl.children.append(name)
            if self.at("="):
                init = _B("init", _leaves(self.advance()))
                init.children.append(self.expr())
                decl.children.append(init)
            elif self.at(":"):
                rng = _B("range", _leaves(self.advance()))
                rng.children.append(self.expr())
                decl.children.append(rng)
            out.append(decl)
            if not self.at(","):
                return out
            out.extend(_leaves(self.advance()))
            decl = _B("decl")

    def if_(self) -> _B:
        node = _B("if", _leaves(self.expect("if")))
        node.children.append(self.paren_condition())
        node.children.append(_B("then", self.statement()))
        if self.at("else"):
            els = _B("else", _leaves(self.advance()))
            els.children.extend(self.statement())
            node.children.append(els)
        return node

    def paren_condition(self) -> _B:
        cond = _B("condition", _leaves(self.expect("(")))
        cond.children.append(self.expr())
        cond.children.extend(_leaves(self.expect(")")))
        return cond

    def while_(self) -> _B:
        node = _B("while", _leaves(self.expect("while")))
        node.children.append(self.paren_condition())
        node.children.extend(self.statement())
        return node

    def for_(self) -> _B:
        node = _B("for", _leaves(self.expect("for")))
        control = _B("control", _leaves(self.expect("(")))
        init = _B("init")
        if self.is_decl_start(self.pos):
            init.children.extend(self.decls())
        else:
            while not self.at(";"):
                init.children.append(self.expr())
                if not self.at(","):
                    break
                init.children.extend(_leaves(self.advance()))
        control.children.append(init)
        if init.children and init.children[-1].label == "decl" and any(
                c.label == "range" for c in init.children[-1].children):
            control.children.extend(_leaves(self.expect(")")))
            node.children.append(control)
            node.children.extend(self.statement())
            return node
        init.children.extend(_leaves(self.expect(";")))
        cond = _B("condition")
        if not self.at(";"):
            cond.children.append(self.expr())
        cond.children.extend(_leaves(self.expect(";")))
        incr = _B("incr")
        while not self.at(")"):
            incr.children.append(self.expr())
            if not self.at(","):
                break
            incr.children.extend(_leaves(self.advance()))
        control.children.extend([cond, incr])
        control.children.extend(_leaves(self.expect(")")))
        node.children.append(control)
        node.children.extend(self.statement())
        return node

    # expressions
    def extent(self, i: int) -> int:
        """End index of the expression starting at ``i`` (exclusive)."""
        depth = 0
        while True:
            t = self.tok(i)
            if t.kind == "eof":
                return i
            if t.kind == "op":
                if t.text in _OPENERS:
                    depth += 1
                elif t.text in _CLOSERS:
                    if depth == 0:
                        return i
                    depth -= 1
                elif depth == 0 and t.text in (";", ","):
                    return i
            i += 1

    def expr(self) -> _B:
        start = self.pos
        end = self.extent(start)
        if end == start:
            raise self.error("expected expression")
        if any(t.text in ("->", "::") for t in self.toks[start:end] if t.kind == "op"):
            return self.flat(start, end, "lambda or method reference")
        node = _B("expr", self.terms(end))
        return node

    def terms(self, end: int) -> list[_B]:
        out: list[_B] = []
        while self.pos < end:
            t = self.peek()
            if t.kind in ("number", "string", "char") or (
                    t.kind == "word" and t.text in _LITERAL_WORDS):
                out.append(_B("literal", _leaves(self.advance())))
            elif t.kind == "word" and t.text == "new":
                out.append(_B("operator", _leaves(self.advance())))
                out.extend(self.creation())
            elif t.kind == "word" and t.text == "instanceof":
                out.append(_B("operator", _leaves(self.advance())))
            elif t.kind == "word":
                out.extend(self.name_or_call())
            elif t.text == "(":
                close = self.match(self.pos)
                out.extend(_leaves(self.advance()))
                out.extend(self.terms(close))
                out.extend(_leaves(self.expect(")")))
            elif t.text == "{":
                out.append(self.array_init())
            elif t.text in _CLOSERS or t.text in (";", ","):
                raise self.error(f"unexpected {t.text!r} in expression")
            else:
                out.append(_B("operator", _leaves(self.advance())))
        return out

    def index_suffixes(self, node: _B) -> _B:
        while self.at("["):
            idx = _B("index", _leaves(self.advance()))
            if not self.at("]"):
                idx.children.append(self.expr())
            idx.children.extend(_leaves(self.expect("]")))
            node = _with_child(node, idx)
        return node

    def name_or_call(self) -> list[_B]:
        name = self.index_suffixes(self.qualified())
        if self.at("("):
            call = _B("call", [name, self.argument_list()])
            return [self.index_suffixes(call)] if self.at("[") else [call]
        return [name]

    def creation(self) -> list[_B]:
        name = self.qualified()
        if self.at("<"):
            name = _with_child(name, self.flat(self.pos, self.generic_end(self.pos) + 1,
                                               "generic arguments"))
        if self.at("("):
            out = [_B("call", [name, self.argument_list()])]
            if self.at("{"):
                out.append(self.flat(self.pos, self.match(self.pos) + 1, "anonymous class"))
            return out
        if self.at("["):
            out = [self.index_suffixes(name)]
            if self.at("{"):
                out.append(self.array_init())
            return out
        raise self.error("expected '(' or '[' after 'new' type")

    def argument_list(self) -> _B:
        node = _B("argument_list", _leaves(self.expect("(")))
        if not self.at(")"):
            while True:
                node.children.append(_B("argument", [self.expr()]))
                if not self.at(","):
                    break
                node.children.extend(_leaves(self.advance()))
        node.children.extend(_leaves(self.expect(")")))
        return node

    def array_init(self) -> _B:
        node = _B("block", _leaves(self.expect("{")))
        while not self.at("}"):
            node.children.append(self.expr())
            if not self.at(","):
                break
            node.children.extend(_leaves(self.advance()))
        node.children.extend(_leaves(self.expect("}")))
        return node


def _with_child(node: _B, child: _B) -> _B:
    """Attach a suffix (index, generic args) the way srcML nests it in names."""
    if node.label == "name" and all(not c.children and c.span for c in node.children):
        return _B("name", [node, child])
    node.children.append(child)
    return node


def _freeze(root: _B, method_id: str, warnings: list[str]) -> AstGraph:
    nodes: list[AstNode] = []
    edges: list[tuple[int, int]] = []
    stack: list[tuple[_B, int]] = [(root, -1)]
    while stack:
        b, parent = stack.pop()
        idx = len(nodes)
        nodes.append(AstNode(b.label, b.span is not None, b.span))
        if parent >= 0:
            edges.append((parent, idx))
        stack.extend((c, idx) for c in reversed(b.children))
    # parents are emitted before children, so edge order per parent is source order
    return AstGraph(tuple(nodes), tuple(edges), method_id, tuple(warnings))


def parse_method(source: str, method_id: str = "") -> AstGraph:
    """Parse one Java method declaration into an srcML-style tree.

    Constructs outside the supported subset (annotations, lambdas, generic
    arguments, try/switch/do statements) become flat ``expr`` nodes and are
    listed in ``graph.warnings``.
    """
    parser = _Parser(tokenize(source))
    root = parser.unit()
    if parser.warnings:
        logger.debug("%s: %s", method_id, "; ".join(parser.warnings))
    return _freeze(root, method_id, parser.warnings)


# --------------------------------------------------------------------------
# graph utilities


def linearize(graph: AstGraph) -> list[int]:
    """Preorder DFS: parent first, children in source order."""
    order = []
    stack = [graph.root]
    while stack:
        i = stack.pop()
        order.append(i)
        stack.extend(reversed(graph.children(i)))
    return order


def adjacency(graph: AstGraph, order: Sequence[int] | None = None,
              m_cap: int = DEFAULT_M_CAP, self_loops: bool = True) -> np.ndarray:
    """Symmetric 0/1 matrix over linearized positions, zero beyond the true length."""
    order = linearize(graph) if order is None else order
    if len(order) > m_cap:
        logger.warning("%s: %d nodes truncated to %d", graph.method_id, len(order), m_cap)
    position = {node: k for k, node in enumerate(order[:m_cap])}
    adj = np.zeros((m_cap, m_cap))
    for p, c in graph.edges:
        if p in position and c in position:
            i, j = position[p], position[c]
            adj[i, j] = adj[j, i] = 1.0
    if self_loops:
        n = min(len(order), m_cap)
        adj[np.arange(n), np.arange(n)] = 1.0
    return adj


def build_vocab(corpus: Iterable[AstGraph], max_size: int = 10_000) -> Vocabulary:
    """Most frequent node labels (ties lexicographic); ``max_size`` includes PAD/UNK."""
    counts: Counter = Counter()
    empty = True
    for graph in corpus:
        empty = False
        counts.update(n.label for n in graph.nodes)
    if empty:
        raise ConfigError("cannot build a vocabulary from an empty corpus")
    return Vocabulary.from_counts(counts, max_size)


def encode_sequence(graph: AstGraph, vocab: Vocabulary, m_cap: int = DEFAULT_M_CAP,
                    order: Sequence[int] | None = None) -> NodeSequence:
    order = linearize(graph) if order is None else order
    truncated = len(order) > m_cap
    kept = order[:m_cap]
    ids = np.full(m_cap, PAD, dtype=np.int64)
    vis = np.zeros(m_cap, dtype=bool)
    for k, node in enumerate(kept):
        ids[k] = vocab.encode(graph.nodes[node].label)
        vis[k] = graph.nodes[node].visible
    return NodeSequence(ids, vis, len(kept), truncated)


@dataclass(frozen=True)
class EncodedMethod:
    """A parsed method ready for the models: sequence, adjacency and the graph."""
    method_id: str
    graph: AstGraph
    order: tuple[int, ...]
    sequence: NodeSequence
    adjacency: np.ndarray = field(repr=False)

    @property
    def length(self) -> int:
        return self.sequence.length

    @property
    def labels(self) -> list[str]:
        return [self.graph.nodes[i].label for i in self.order[: self.length]]


def encode_method(graph: AstGraph, vocab: Vocabulary, m_cap: int = DEFAULT_M_CAP,
                  self_loops: bool = True) -> EncodedMethod:
    order = tuple(linearize(graph))
    seq = encode_sequence(graph, vocab, m_cap, order)
    adj = adjacency(graph, order, m_cap, self_loops)
    adj.setflags(write=False)
    return EncodedMethod(graph.method_id, graph, order, seq, adj)
