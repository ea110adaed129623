"""Word-level normalization shared by utterances, schema names, and cell values.

One normalizer backs every surface that participates in matching: a token
produced from an utterance can only ever be compared against names and cell
values that went through the same splitting/lowercasing.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

_WORD_RUN = re.compile(r"[A-Za-z0-9]+")
# boundaries inside an alphanumeric run: camelCase, ACRONYMWord, letter<->digit
_SUBWORD = re.compile(
    r"[A-Z]+(?![a-z0-9])|[A-Z][a-z0-9]*|[a-z]+|[0-9]+"
)


@dataclass(frozen=True)
class Token:
    text: str
    start: int  # char offset into the source string, for display
    end: int


TokenSeq = tuple[Token, ...]


def normalize_tokens(text: str) -> TokenSeq:
    """Lowercased word tokens; punctuation dropped, snake/camel/digit splits applied.

    "Teacher_ID" -> [teacher, id]; "What channel was it on?" -> [what, channel,
    was, it, on]. Offsets index into the original string.
    """
    out: list[Token] = []
    for run in _WORD_RUN.finditer(text):
        for sub in _SUBWORD.finditer(run.group(0)):
            start = run.start() + sub.start()
            out.append(Token(sub.group(0).lower(), start, start + len(sub.group(0))))
    return tuple(out)


def token_texts(tokens: TokenSeq) -> tuple[str, ...]:
    return tuple(t.text for t in tokens)


def normalize_value(text: str) -> str:
    """Normal form for cell values and value-match lookups.

    Runs the token normalizer and joins with single spaces, which lowercases,
    trims, and collapses internal whitespace in one step.
    """
    return " ".join(token_texts(normalize_tokens(text)))


def name_words(name: str) -> tuple[str, ...]:
    """Normalized word sequence of a table/column display name."""
    return token_texts(normalize_tokens(name))
