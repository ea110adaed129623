"""Word-level vocabulary with reserved special tokens."""

from __future__ import annotations

from typing import Iterable

PAD, UNK, CLS_TOK, SEP_TOK, MASK_TOK, SQL_TOK = (
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[SQL]")
SPECIALS = (PAD, UNK, CLS_TOK, SEP_TOK, MASK_TOK, SQL_TOK)


class Vocab:
    def __init__(self, words: Iterable[str]):
        self._words: list[str] = list(SPECIALS)
        seen = set(self._words)
        for w in words:
            if w not in seen:
                seen.add(w)
                self._words.append(w)
        self._ids = {w: i for i, w in enumerate(self._words)}

    def __len__(self) -> int:
        return len(self._words)

    def __contains__(self, word: str) -> bool:
        return word in self._ids

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @property
    def mask_id(self) -> int:
        return self._ids[MASK_TOK]

    @property
    def sql_slot_id(self) -> int:
        return self._ids[SQL_TOK]

    def id_of(self, word: str) -> int:
        return self._ids.get(word, self.unk_id)

    def word_of(self, idx: int) -> str:
        return self._words[idx]

    def encode(self, words: Iterable[str]) -> tuple[list[int], int]:
        """Token ids plus the count of out-of-vocabulary words mapped to UNK."""
        ids, unk = [], 0
        for w in words:
            i = self._ids.get(w)
            if i is None:
                unk += 1
                ids.append(self.unk_id)
            else:
                ids.append(i)
        return ids, unk

    def to_list(self) -> list[str]:
        return list(self._words[len(SPECIALS):])

    @classmethod
    def from_list(cls, words: list[str]) -> "Vocab":
        return cls(words)
