"""Tokenizer for the pseudocode dialect (also used on single statement texts)."""
from __future__ import annotations

import re
from dataclasses import dataclass

from ..errors import ListingSyntaxError

KEYWORDS = frozenset({"int", "char", "void", "if", "else", "while", "return"})

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>//[^\n]*)
  | (?P<int>0[xX][0-9a-fA-F]+|[0-9]+)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>&&|\|\||==|!=|<=|>=|[-+*/%<>=!(){}\[\];,])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # "int", "string", "ident", "keyword", "op", "eof"
    text: str
    line: int
    column: int


def tokenize(text: str) -> list:
    """Split ``text`` into tokens; comments and whitespace are dropped.

    The returned list always ends with an ``eof`` token.
    """
    tokens = []
    pos, line, line_start = 0, 1, 0
    n = len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            raise ListingSyntaxError(line, col, "token", text[pos])
        kind = m.lastgroup
        val = m.group()
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind in ("ws", "comment"):
            pass
        elif kind == "ident":
            tokens.append(Token("keyword" if val in KEYWORDS else "ident", val, line, col))
        else:
            tokens.append(Token(kind, val, line, col))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


def token_texts(text: str) -> list:
    return [t.text for t in tokenize(text)[:-1]]
