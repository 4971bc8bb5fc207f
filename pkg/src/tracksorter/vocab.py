"""Module-key <-> token-id vocabulary with the two special tokens."""
from __future__ import annotations

from pathlib import Path
from typing import Iterable

from .trackml_io import ModuleKey

SOS = 0
SEP = 1
SPECIAL_NAMES = {SOS: "[SOS]", SEP: "[SEP]"}
N_SPECIAL = 2


class OutOfVocabularyError(KeyError):
    pass


class Vocabulary:
    """Tokens 0 and 1 are [SOS] and [SEP]; modules follow in sorted key order."""

    def __init__(self, modules: Iterable[ModuleKey]):
        keys = sorted({tuple(int(v) for v in k) for k in modules})
        if not keys:
            raise ValueError("build_vocabulary: empty module set")
        self._keys: list[ModuleKey] = keys
        self._index = {k: i + N_SPECIAL for i, k in enumerate(keys)}

    @property
    def size(self) -> int:
        return len(self._keys) + N_SPECIAL

    def __len__(self) -> int:
        return self.size

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._keys == other._keys

    @property
    def module_keys(self) -> list[ModuleKey]:
        return list(self._keys)

    def encode(self, key: ModuleKey) -> int:
        try:
            return self._index[tuple(key)]
        except KeyError:
            raise OutOfVocabularyError(f"unknown module key {key}") from None

    def decode(self, token: int) -> ModuleKey | str:
        if token in SPECIAL_NAMES:
            return SPECIAL_NAMES[token]
        if not N_SPECIAL <= token < self.size:
            raise OutOfVocabularyError(f"unknown token {token}")
        return self._keys[token - N_SPECIAL]

    def save(self, path) -> None:
        lines = [f"{SOS},-1,-1,-1", f"{SEP},-1,-1,-1"]
        lines += [f"{i + N_SPECIAL},{v},{l},{m}" for i, (v, l, m) in enumerate(self._keys)]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        keys = {}
        for n, line in enumerate(Path(path).read_text().splitlines(), 1):
            if not line.strip():
                continue
            try:
                tok, v, l, m = (int(x) for x in line.split(","))
            except ValueError:
                raise ValueError(f"{path}:{n}: malformed vocabulary line") from None
            if tok >= N_SPECIAL:
                keys[tok] = (v, l, m)
        vocab = cls(keys.values())
        if any(vocab.encode(k) != t for t, k in keys.items()):
            raise ValueError(f"{path}: token ids are not in sorted-key order")
        return vocab


def build_vocabulary(modules: Iterable[ModuleKey]) -> Vocabulary:
    return Vocabulary(modules)
