"""Count-masked greedy search and candidate splitting.

Every token may be emitted at most as many times as it occurs in the input;
[SEP] has a fixed budget and may never follow another [SEP]. Decoding stops
once every input token has been emitted and the last emission is [SEP].
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .vocab import SEP, SOS

SEP_BUDGET = 100

# maps the emitted prefix (starting with [SOS]) to next-token logits [V]
LogitFn = Callable[[list[int]], np.ndarray]


@dataclass(frozen=True)
class DecodeConfig:
    sep_budget: int = SEP_BUDGET
    max_steps: int | None = None  # default: input_len + sep_budget + 1

    def steps_for(self, input_len: int) -> int:
        steps = input_len + self.sep_budget + 1 if self.max_steps is None else self.max_steps
        if steps < input_len + 1:
            raise ValueError("max_steps must be >= input_len + 1")
        return steps


@dataclass
class DecodeResult:
    tokens: list[int]  # emitted tokens, [SOS] excluded
    truncated: bool = False

    def candidates(self) -> list[list[int]]:
        return split_tracks(self.tokens)


class CountMask:
    def __init__(self, input_tokens: Sequence[int], vocab_size: int, sep_budget: int = SEP_BUDGET):
        toks = np.asarray(list(input_tokens), dtype=np.int64)
        if toks.size and ((toks == SOS) | (toks == SEP)).any():
            raise ValueError("count mask: special token in input")
        if toks.size and (toks.min() < 0 or toks.max() >= vocab_size):
            raise ValueError("count mask: token outside vocabulary")
        self.remaining = np.bincount(toks, minlength=vocab_size).astype(np.int64)
        self.remaining[SOS] = 0
        self.remaining[SEP] = sep_budget
        self.modules_left = int(toks.size)

    def allowed(self, last_token: int) -> np.ndarray:
        ok = self.remaining > 0
        if last_token == SEP:
            ok[SEP] = False
        return ok

    def consume(self, token: int) -> None:
        if self.remaining[token] <= 0:
            raise AssertionError(f"token {token} emitted with no remaining count")
        self.remaining[token] -= 1
        if token != SEP:
            self.modules_left -= 1


def init_count_mask(input_tokens: Sequence[int], vocab_size: int, sep_budget: int = SEP_BUDGET) -> CountMask:
    return CountMask(input_tokens, vocab_size, sep_budget)


def choose(logits: np.ndarray, allowed: np.ndarray) -> int | None:
    """Argmax over allowed entries; ties go to the lowest token id."""
    if not allowed.any():
        return None
    masked = np.where(allowed, logits, -np.inf)
    # NaN logits never win
    masked = np.where(np.isnan(masked), -np.inf, masked)
    best = masked.max()
    if best == -np.inf:
        return int(np.flatnonzero(allowed)[0])
    return int(np.flatnonzero(masked == best)[0])


def _finished(mask: CountMask, out: list[int]) -> bool:
    return mask.modules_left == 0 and bool(out) and out[-1] == SEP


def greedy_decode(logit_fn, input_tokens: Sequence[int], cfg: DecodeConfig = DecodeConfig(),
                  vocab_size: int | None = None) -> DecodeResult:
    """Greedy search with a model or any ``prefix -> logits`` callable."""
    from .model import TrackSorter

    input_tokens = list(input_tokens)
    if not input_tokens:
        raise ValueError("greedy_decode: empty input")
    max_steps = cfg.steps_for(len(input_tokens))
    if isinstance(logit_fn, TrackSorter):
        vocab_size = logit_fn.cfg.vocab_size
        max_steps = min(max_steps, logit_fn.cfg.max_len - 1)
        logit_fn = model_logit_fn(logit_fn, input_tokens)
    if vocab_size is None:
        raise ValueError("greedy_decode: vocab_size required for a scripted logit provider")
    mask = CountMask(input_tokens, vocab_size, cfg.sep_budget)
    out: list[int] = []
    while not _finished(mask, out):
        if len(out) >= max_steps:
            return DecodeResult(_force_stop(out), truncated=True)
        last = out[-1] if out else SOS
        tok = choose(np.asarray(logit_fn([SOS] + out)), mask.allowed(last))
        if tok is None:  # only possible once the [SEP] budget is spent
            return DecodeResult(_force_stop(out), truncated=True)
        mask.consume(tok)
        out.append(tok)
    return DecodeResult(out)


def _force_stop(out: list[int]) -> list[int]:
    return out if out and out[-1] == SEP else out + [SEP]


def model_logit_fn(model, input_tokens: Sequence[int]) -> LogitFn:
    with T.no_grad():
        memory = model.encode(input_tokens)

    def fn(prefix: list[int]) -> np.ndarray:
        with T.no_grad():
            return model.decode_logits(memory, prefix).data[-1]

    return fn


def greedy_decode_batch(model, inputs: Sequence[Sequence[int]], cfg: DecodeConfig = DecodeConfig()) -> list[DecodeResult]:
    """Decode many inputs in lock-step; same masking rules as :func:`greedy_decode`."""
    from .model import make_batch

    inputs = [list(x) for x in inputs]
    if not inputs:
        return []
    if any(not x for x in inputs):
        raise ValueError("greedy_decode: empty input")
    vocab_size = model.cfg.vocab_size
    masks = [CountMask(x, vocab_size, cfg.sep_budget) for x in inputs]
    # the [SOS]-led prefix must fit the positional table
    limits = [min(cfg.steps_for(len(x)), model.cfg.max_len - 1) for x in inputs]
    outs: list[list[int]] = [[] for _ in inputs]
    truncated = [False] * len(inputs)
    done = [False] * len(inputs)
    src = make_batch([(x, [SEP]) for x in inputs])
    with T.no_grad():
        memory, key_mask = model.encode_batch(src.src, src.src_len)
        while not all(done):
            active = [i for i, d in enumerate(done) if not d]
            width = max(len(outs[i]) for i in active) + 1
            prefix = np.full((len(active), width), SOS, dtype=np.int64)
            for row, i in enumerate(active):
                prefix[row, 1 : len(outs[i]) + 1] = outs[i]
            logits = model.decode_batch(T.Tensor(memory.data[active]), key_mask[active], prefix).data
            for row, i in enumerate(active):
                out, mask = outs[i], masks[i]
                last = out[-1] if out else SOS
                tok = choose(logits[row, len(out)], mask.allowed(last))
                if tok is None:
                    outs[i] = _force_stop(out)
                    truncated[i] = done[i] = True
                    continue
                mask.consume(tok)
                out.append(tok)
                if _finished(mask, out):
                    done[i] = True
                elif len(out) >= limits[i]:
                    outs[i] = _force_stop(out)
                    truncated[i] = done[i] = True
    return [DecodeResult(o, t) for o, t in zip(outs, truncated)]


def split_tracks(output: Sequence[int]) -> list[list[int]]:
    tracks, cur = [], []
    for t in output:
        if t == SEP:
            if cur:
                tracks.append(cur)
            cur = []
        else:
            cur.append(int(t))
    if cur:
        tracks.append(cur)
    return tracks


def write_decodes(results: Sequence[DecodeResult], path) -> None:
    lines = []
    for r in results:
        line = ";".join(" ".join(str(t) for t in c) for c in r.candidates())
        if r.truncated:
            line += " TRUNC" if line else "TRUNC"
        lines.append(line)
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_decodes(path) -> list[tuple[list[list[int]], bool]]:
    out = []
    for line in Path(path).read_text().splitlines():
        trunc = line.endswith("TRUNC")
        if trunc:
            line = line[: -len("TRUNC")].rstrip()
        cands = [[int(t) for t in seg.split()] for seg in line.split(";") if seg.strip()]
        out.append((cands, trunc))
    return out
