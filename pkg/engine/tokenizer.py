"""Tokenizéry: bajtový (UTF-8 bajty plus BOS, EOS a PAD) a slovný s pevným slovníkom."""
from __future__ import annotations

import unicodedata
from typing import Iterable, Protocol, Sequence

from exceptions import ConfigError


class Tokenizer(Protocol):
    vocab_size: int
    bos_id: int
    eos_id: int
    pad_id: int

    def encode(self, text: str) -> list[int]: ...

    def decode(self, ids: Sequence[int]) -> str: ...


class ByteTokenizer:
    """UTF-8 bajty (po NFC) + tri špeciálne tokeny; vietnamská diakritika bez externých súborov."""

    BYTE_VOCAB = 256

    def __init__(self):
        self.bos_id = self.BYTE_VOCAB
        self.eos_id = self.BYTE_VOCAB + 1
        self.pad_id = self.BYTE_VOCAB + 2
        self.vocab_size = self.BYTE_VOCAB + 3

    def encode(self, text: str) -> list[int]:
        return list(unicodedata.normalize("NFC", text).encode("utf-8"))

    def decode(self, ids: Sequence[int]) -> str:
        data = bytes(i for i in ids if 0 <= i < self.BYTE_VOCAB)
        # neuplne UTF-8 sekvencie na konci generovania sa zahodia
        return data.decode("utf-8", errors="ignore")


class WhitespaceTokenizer:
    """Slová oddelené medzerami s pevným slovníkom; neznáme slovo -> UNK. Pre malé testy metrík."""

    SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")

    def __init__(self, words: Sequence[str]):
        self.pad_id, self.bos_id, self.eos_id, self.unk_id = range(len(self.SPECIALS))
        self.words = list(self.SPECIALS)
        for word in words:
            word = unicodedata.normalize("NFC", word)
            if not word or word.split() != [word]:
                raise ConfigError(f"vocabulary entry {word!r} must be a single non-empty word")
            if word not in self.words:
                self.words.append(word)
        self.index = {w: i for i, w in enumerate(self.words)}
        self.vocab_size = len(self.words)

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "WhitespaceTokenizer":
        words = {w for text in texts for w in unicodedata.normalize("NFC", text).split()}
        return cls(sorted(words))

    def encode(self, text: str) -> list[int]:
        return [self.index.get(w, self.unk_id) for w in unicodedata.normalize("NFC", text).split()]

    def decode(self, ids: Sequence[int]) -> str:
        return " ".join(self.words[i] for i in ids if i >= len(self.SPECIALS) and i < self.vocab_size)
