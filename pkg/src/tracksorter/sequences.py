"""Input/target token sequences for track pairs.

The input is every hit of both tracks in ascending (r, z, module) order; the
target lists the inner track's hits, [SEP], the outer track's hits, [SEP].
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .trackml_io import SpacePoint, Track
from .vocab import SEP, SOS, Vocabulary


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[int, ...]
    kind: str  # "input" | "target"

    def __post_init__(self):
        if self.kind == "input" and any(t in (SOS, SEP) for t in self.tokens):
            raise ValueError("input sequence must not contain special tokens")
        if self.kind == "target" and (not self.tokens or self.tokens[-1] != SEP):
            raise ValueError("target sequence must end with [SEP]")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class TrackPair:
    a: Track
    b: Track

    def __post_init__(self):
        if self.a.particle_id == self.b.particle_id:
            raise ValueError("a track pair needs two different particles")

    def ordered(self) -> tuple[Track, Track]:
        """(inner, outer): smaller minimum r first, ties by particle_id."""
        ka = (self.a.min_r, self.a.particle_id)
        kb = (self.b.min_r, self.b.particle_id)
        return (self.a, self.b) if ka <= kb else (self.b, self.a)


def pair_tracks(tracks: Sequence[Track], seed: int) -> list[TrackPair]:
    """Each track once as ``a``; partner drawn uniformly from the others."""
    n = len(tracks)
    if n < 2:
        raise ValueError("pair_tracks: need at least 2 tracks")
    rng = np.random.default_rng(seed)
    pairs = []
    for i, t in enumerate(tracks):
        j = int(rng.integers(n - 1))
        pairs.append(TrackPair(t, tracks[j + (j >= i)]))
    return pairs


def _tokens(points, vocab: Vocabulary) -> list[int]:
    return [vocab.encode(p.module_key) for p in points]


def build_input(pair: TrackPair, vocab: Vocabulary) -> TokenSequence:
    points = sorted(pair.a.points + pair.b.points, key=SpacePoint.sort_key)
    return TokenSequence(tuple(_tokens(points, vocab)), "input")


def build_target(pair: TrackPair, vocab: Vocabulary) -> TokenSequence:
    first, second = pair.ordered()
    toks = []
    for track in (first, second):
        toks += _tokens(sorted(track.points, key=SpacePoint.sort_key), vocab)
        toks.append(SEP)
    return TokenSequence(tuple(toks), "target")


def build_cbow_corpus(pairs: Sequence[TrackPair], vocab: Vocabulary) -> list[list[int]]:
    if not pairs:
        raise ValueError("build_cbow_corpus: no pairs")
    return [list(build_target(p, vocab).tokens) for p in pairs]


@dataclass(frozen=True)
class Example:
    """One serialized training record plus the truth needed for evaluation."""

    input: tuple[int, ...]
    target: tuple[int, ...]
    pts: tuple[float, float] = (0.0, 0.0)  # pT of the two target segments, in order

    def truth_tracks(self) -> list[list[int]]:
        out, cur = [], []
        for t in self.target:
            if t == SEP:
                out.append(cur)
                cur = []
            else:
                cur.append(t)
        return out


def make_example(pair: TrackPair, vocab: Vocabulary) -> Example:
    first, second = pair.ordered()
    return Example(build_input(pair, vocab).tokens, build_target(pair, vocab).tokens, (first.pt, second.pt))


def _fmt(tokens) -> str:
    return " ".join(str(t) for t in tokens)


def save_dataset(examples: Sequence[Example], path) -> None:
    """``input_tokens|target_tokens`` per line; pT of each target track as a third field."""
    lines = [f"{_fmt(e.input)}|{_fmt(e.target)}|{e.pts[0]!r} {e.pts[1]!r}" for e in examples]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_dataset(path) -> list[Example]:
    out = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split("|")
        if len(fields) not in (2, 3):
            raise ValueError(f"{path}:{n}: expected 'input|target[|pts]'")
        try:
            inp = tuple(int(x) for x in fields[0].split())
            tgt = tuple(int(x) for x in fields[1].split())
            pts = tuple(float(x) for x in fields[2].split()) if len(fields) == 3 else (0.0, 0.0)
        except ValueError:
            raise ValueError(f"{path}:{n}: malformed record") from None
        TokenSequence(inp, "input")
        TokenSequence(tgt, "target")
        out.append(Example(inp, tgt, pts))
    return out
