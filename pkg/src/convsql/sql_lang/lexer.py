"""Lexer for the supported SQL subset."""

from __future__ import annotations

import re
from typing import NamedTuple

from ..errors import SqlParseError

KEYWORDS = {
    "SELECT", "DISTINCT", "FROM", "JOIN", "ON", "AS", "WHERE", "AND", "OR",
    "NOT", "IN", "LIKE", "BETWEEN", "GROUP", "BY", "HAVING", "ORDER", "ASC",
    "DESC", "LIMIT", "INTERSECT", "UNION", "EXCEPT",
    "COUNT", "SUM", "AVG", "MIN", "MAX",
}

# reserved surface forms for masking purposes: keywords plus operators/punctuation
RESERVED_WORDS = frozenset(k.lower() for k in KEYWORDS) | {
    "=", "!=", "<>", "<", "<=", ">", ">=", "(", ")", ",", ".",
}


class Tok(NamedTuple):
    kind: str  # "kw" | "ident" | "num" | "str" | "sym"
    text: str


_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>\d+\.\d+|\d+)"
    r"|(?P<str>'(?:[^']|'')*'|\"(?:[^\"]|\"\")*\")"
    r"|(?P<word>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<sym><>|!=|<=|>=|[=<>(),.*])"
    r")")


def lex_sql(text: str) -> list[Tok]:
    out: list[Tok] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            if text[pos:].strip() == "":
                break
            raise SqlParseError(f"cannot lex SQL at offset {pos}: {text[pos:pos + 20]!r}")
        pos = m.end()
        if m.group("num"):
            out.append(Tok("num", m.group("num")))
        elif m.group("str"):
            raw = m.group("str")
            quote = raw[0]
            out.append(Tok("str", raw[1:-1].replace(quote * 2, quote)))
        elif m.group("word"):
            word = m.group("word")
            if word.upper() in KEYWORDS:
                out.append(Tok("kw", word.upper()))
            else:
                out.append(Tok("ident", word))
        elif m.group("sym"):
            sym = m.group("sym")
            out.append(Tok("sym", "!=" if sym == "<>" else sym))
    return out
