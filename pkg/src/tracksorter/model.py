"""Encoder-decoder transformer that sorts hit tokens into per-track groups."""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .cbow import EmbeddingMatrix
from .tensor import Tensor
from .vocab import SEP, SOS


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 1
    d_ff: int = 256
    n_encoder_layers: int = 6
    n_decoder_layers: int = 6
    max_len: int = 256
    tie_output_to_embedding: bool = True
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.vocab_size < 3 or self.max_len < 1:
            raise ValueError("vocab_size must be >= 3 and max_len >= 1")


def expected_param_count(cfg: ModelConfig) -> int:
    d, f, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
    attn = 4 * (d * d + d)
    ffn = d * f + f + f * d + d
    enc_layer = attn + ffn + 2 * 2 * d
    dec_layer = 2 * attn + ffn + 3 * 2 * d
    n = v * d + cfg.n_encoder_layers * enc_layer + cfg.n_decoder_layers * dec_layer + v
    if not cfg.tie_output_to_embedding:
        n += d * v
    return n


def positional_encoding(max_len: int, d_model: int, dtype=np.float64) -> np.ndarray:
    if d_model % 2:
        raise ValueError("positional_encoding: d_model must be even")
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    freq = 10000.0 ** (np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    pe = np.empty((max_len, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(pos / freq)
    pe[:, 1::2] = np.cos(pos / freq)
    return pe.astype(dtype)


def _attn_names(prefix: str) -> list[str]:
    return [f"{prefix}.{n}" for n in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")]


def _ffn_names(prefix: str) -> list[str]:
    return [f"{prefix}.{n}" for n in ("w1", "b1", "w2", "b2")]


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
    shapes: dict[str, tuple[int, ...]] = {"embed": (v, d)}

    def attn(prefix):
        for name in _attn_names(prefix):
            shapes[name] = (d, d) if name.rsplit(".", 1)[1].startswith("w") else (d,)

    def ffn(prefix):
        w1, b1, w2, b2 = _ffn_names(prefix)
        shapes.update({w1: (d, f), b1: (f,), w2: (f, d), b2: (d,)})

    def norm(prefix):
        shapes.update({f"{prefix}.gain": (d,), f"{prefix}.bias": (d,)})

    for i in range(cfg.n_encoder_layers):
        attn(f"enc{i}.self")
        norm(f"enc{i}.ln1")
        ffn(f"enc{i}.ff")
        norm(f"enc{i}.ln2")
    for i in range(cfg.n_decoder_layers):
        attn(f"dec{i}.self")
        norm(f"dec{i}.ln1")
        attn(f"dec{i}.cross")
        norm(f"dec{i}.ln2")
        ffn(f"dec{i}.ff")
        norm(f"dec{i}.ln3")
    if not cfg.tie_output_to_embedding:
        shapes["out.weight"] = (d, v)
    shapes["out.bias"] = (v,)
    return shapes


class TrackSorter:
    """Parameters plus forward passes. Parameters live in ``self.params``."""

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor]):
        shapes = param_shapes(cfg)
        if set(shapes) != set(params):
            raise ValueError("parameter names do not match the configuration")
        for name, shape in shapes.items():
            if params[name].shape != shape:
                raise ValueError(f"{name}: shape {params[name].shape} != {shape}")
        self.cfg = cfg
        self.params = {name: params[name] for name in shapes}
        self.dtype = self.params["embed"].dtype
        self._pe = positional_encoding(cfg.max_len, cfg.d_model, self.dtype)
        self._causal = np.tril(np.ones((cfg.max_len, cfg.max_len), dtype=bool))

    def param_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def astype(self, dtype) -> "TrackSorter":
        return TrackSorter(self.cfg, {k: Tensor(v.data.astype(dtype), requires_grad=True)
                                      for k, v in self.params.items()})

    # ------------------------------------------------------------------ blocks

    def _linear(self, x: Tensor, w: str, b: str) -> Tensor:
        return T.add(T.matmul(x, self.params[w]), self.params[b])

    def _attention(self, prefix: str, xq: Tensor, xkv: Tensor, mask: np.ndarray) -> Tensor:
        wq, bq, wk, bk, wv, bv, wo, bo = _attn_names(prefix)
        q = self._linear(xq, wq, bq)
        k = self._linear(xkv, wk, bk)
        v = self._linear(xkv, wv, bv)
        h = self.cfg.n_heads
        dh = self.cfg.d_model // h
        if h > 1:
            b, tq, _ = q.shape
            tk = k.shape[1]
            q = T.transpose(T.reshape(q, (b, tq, h, dh)), (0, 2, 1, 3))
            k = T.transpose(T.reshape(k, (b, tk, h, dh)), (0, 2, 1, 3))
            v = T.transpose(T.reshape(v, (b, tk, h, dh)), (0, 2, 1, 3))
            mask = mask[:, None]
        scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(dh))
        out = T.matmul(T.softmax(scores, mask=mask), v)
        if h > 1:
            out = T.reshape(T.transpose(out, (0, 2, 1, 3)), (b, tq, self.cfg.d_model))
        return self._linear(out, wo, bo)

    def _norm(self, x: Tensor, prefix: str) -> Tensor:
        return T.layer_norm(x, self.params[f"{prefix}.gain"], self.params[f"{prefix}.bias"], self.cfg.ln_eps)

    def _ffn(self, x: Tensor, prefix: str) -> Tensor:
        w1, b1, w2, b2 = _ffn_names(prefix)
        return self._linear(T.relu(self._linear(x, w1, b1)), w2, b2)

    def _embed(self, ids: np.ndarray) -> Tensor:
        if ids.shape[1] > self.cfg.max_len:
            raise ValueError(f"sequence length {ids.shape[1]} exceeds max_len {self.cfg.max_len}")
        x = T.scale(T.embedding_lookup(self.params["embed"], ids), math.sqrt(self.cfg.d_model))
        pe = np.broadcast_to(self._pe[: ids.shape[1]], x.shape)
        return T.add(x, Tensor(pe))

    # ------------------------------------------------------------------ batched

    def encode_batch(self, src: np.ndarray, src_len: np.ndarray | None = None) -> tuple[Tensor, np.ndarray]:
        """Encode right-padded ``src[B, T]``; returns memory and key mask ``[B, T]``."""
        src = np.asarray(src, dtype=np.int64)
        b, t = src.shape
        if src_len is None:
            src_len = np.full(b, t)
        key_mask = np.arange(t)[None, :] < np.asarray(src_len)[:, None]
        attn_mask = np.broadcast_to(key_mask[:, None, :], (b, t, t))
        x = self._embed(src)
        for i in range(self.cfg.n_encoder_layers):
            x = self._norm(T.add(x, self._attention(f"enc{i}.self", x, x, attn_mask)), f"enc{i}.ln1")
            x = self._norm(T.add(x, self._ffn(x, f"enc{i}.ff")), f"enc{i}.ln2")
        return x, key_mask

    def decode_batch(self, memory: Tensor, key_mask: np.ndarray, tgt_in: np.ndarray) -> Tensor:
        """Logits ``[B, T, V]`` for decoder inputs ``tgt_in[B, T]``."""
        tgt_in = np.asarray(tgt_in, dtype=np.int64)
        b, t = tgt_in.shape
        if t == 0:
            raise ValueError("decode: empty prefix")
        self_mask = np.broadcast_to(self._causal[:t, :t], (b, t, t))
        cross_mask = np.broadcast_to(key_mask[:, None, :], (b, t, key_mask.shape[1]))
        y = self._embed(tgt_in)
        for i in range(self.cfg.n_decoder_layers):
            y = self._norm(T.add(y, self._attention(f"dec{i}.self", y, y, self_mask)), f"dec{i}.ln1")
            y = self._norm(T.add(y, self._attention(f"dec{i}.cross", y, memory, cross_mask)), f"dec{i}.ln2")
            y = self._norm(T.add(y, self._ffn(y, f"dec{i}.ff")), f"dec{i}.ln3")
        if self.cfg.tie_output_to_embedding:
            w_out = T.transpose(self.params["embed"])
        else:
            w_out = self.params["out.weight"]
        return T.add(T.matmul(y, w_out), self.params["out.bias"])

    # ------------------------------------------------------------------ single sequence

    def encode(self, input_tokens: Sequence[int]) -> Tensor:
        memory, _ = self.encode_batch(np.asarray([list(input_tokens)], dtype=np.int64))
        return T.reshape(memory, memory.shape[1:])

    def decode_logits(self, memory: Tensor, prefix_tokens: Sequence[int]) -> Tensor:
        prefix = list(prefix_tokens)
        if not prefix:
            raise ValueError("decode: empty prefix")
        if prefix[0] != SOS:
            raise ValueError("decode: prefix must start with [SOS]")
        mem = memory if memory.data.ndim == 3 else T.reshape(memory, (1, *memory.shape))
        key_mask = np.ones((1, mem.shape[1]), dtype=bool)
        logits = self.decode_batch(mem, key_mask, np.asarray([prefix], dtype=np.int64))
        return T.reshape(logits, logits.shape[1:])


def init_model(cfg: ModelConfig, embed_init: EmbeddingMatrix | None = None, seed: int = 0,
               dtype=np.float32) -> TrackSorter:
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if name == "embed":
            arr = rng.normal(0.0, 0.02, size=shape)
        elif len(shape) == 2:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            arr = rng.uniform(-limit, limit, size=shape)
        elif leaf == "gain":
            arr = np.ones(shape)
        else:
            arr = np.zeros(shape)
        params[name] = Tensor(arr.astype(dtype), requires_grad=True)
    if embed_init is not None:
        if embed_init.vectors.shape != (cfg.vocab_size, cfg.d_model):
            raise ValueError(
                f"embedding init shape {embed_init.vectors.shape} != {(cfg.vocab_size, cfg.d_model)}"
            )
        params["embed"] = Tensor(np.array(embed_init.vectors, dtype=dtype), requires_grad=True)
    return TrackSorter(cfg, params)


# ---------------------------------------------------------------------- batching and loss


@dataclass
class Batch:
    src: np.ndarray  # [B, Ts], right-padded with 0
    src_len: np.ndarray  # [B]
    tgt_in: np.ndarray  # [B, Tt], [SOS] + target[:-1], right-padded with 0
    tgt_out: np.ndarray  # [B, Tt], target, right-padded with 0 (ignored)

    @property
    def n_tokens(self) -> int:
        return int((self.tgt_out != PAD).sum())


PAD = SOS  # never a target, so it doubles as the ignored pad id


def make_batch(pairs: Sequence[tuple[Sequence[int], Sequence[int]]], src_width: int | None = None,
               tgt_width: int | None = None) -> Batch:
    n = len(pairs)
    ts = max(len(s) for s, _ in pairs) if src_width is None else src_width
    tt = max(len(t) for _, t in pairs) if tgt_width is None else tgt_width
    src = np.full((n, ts), PAD, dtype=np.int64)
    tgt_in = np.full((n, tt), PAD, dtype=np.int64)
    tgt_out = np.full((n, tt), PAD, dtype=np.int64)
    src_len = np.zeros(n, dtype=np.int64)
    for i, (s, t) in enumerate(pairs):
        if not t or t[-1] != SEP:
            raise ValueError("target must end with [SEP]")
        src[i, : len(s)] = s
        src_len[i] = len(s)
        tgt_out[i, : len(t)] = t
        tgt_in[i, 0] = SOS
        tgt_in[i, 1 : len(t)] = t[:-1]
    return Batch(src, src_len, tgt_in, tgt_out)


def batch_logits(model: TrackSorter, batch: Batch) -> Tensor:
    memory, key_mask = model.encode_batch(batch.src, batch.src_len)
    return model.decode_batch(memory, key_mask, batch.tgt_in)


def batch_loss(model: TrackSorter, batch: Batch) -> Tensor:
    return T.cross_entropy(batch_logits(model, batch), batch.tgt_out, ignore_id=PAD)


def teacher_forced_loss(model: TrackSorter, input_tokens: Sequence[int], target_tokens: Sequence[int]) -> Tensor:
    return batch_loss(model, make_batch([(list(input_tokens), list(target_tokens))]))


def token_accuracy(model: TrackSorter, batch: Batch) -> tuple[int, int]:
    """(correct, total) teacher-forced next-token predictions."""
    with T.no_grad():
        logits = batch_logits(model, batch).data
    pred = logits.argmax(axis=-1)
    valid = batch.tgt_out != PAD
    return int(((pred == batch.tgt_out) & valid).sum()), int(valid.sum())


# ---------------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"TSRT"
CKPT_VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    moments: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    step: int = 0
    epoch: int = -1
    val_loss: float = math.inf

    @classmethod
    def from_model(cls, model: TrackSorter, **kw) -> "Checkpoint":
        return cls(model.cfg, {k: v.data.astype(np.float32) for k, v in model.params.items()}, **kw)

    def to_model(self, dtype=np.float32) -> TrackSorter:
        return TrackSorter(self.config, {k: Tensor(v.astype(dtype), requires_grad=True)
                                         for k, v in self.params.items()})

    def to_bytes(self) -> bytes:
        header = json.dumps(
            {"model": asdict(self.config), "step": self.step, "epoch": self.epoch,
             "val_loss": self.val_loss if math.isfinite(self.val_loss) else None},
            sort_keys=True,
        ).encode()
        out = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(header)), header]
        out.append(_blocks(self.params.items()))
        moment_blocks = []
        for name, (m, v) in self.moments.items():
            moment_blocks += [(f"m/{name}", m), (f"v/{name}", v)]
        out.append(_blocks(moment_blocks))
        return b"".join(out)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        if raw[:4] != CKPT_MAGIC:
            raise ValueError("not a TrackSorter checkpoint")
        version, hlen = struct.unpack_from("<II", raw, 4)
        if version != CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        off = 12
        header = json.loads(raw[off : off + hlen])
        off += hlen
        params, off = _read_blocks(raw, off)
        flat, off = _read_blocks(raw, off)
        if off != len(raw):
            raise ValueError("trailing bytes in checkpoint")
        moments = {k[2:]: (flat[k], flat["v/" + k[2:]]) for k in flat if k.startswith("m/")}
        val = header["val_loss"]
        return cls(ModelConfig(**header["model"]), params, moments, header["step"], header["epoch"],
                   math.inf if val is None else val)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())


def _blocks(items) -> bytes:
    items = list(items)
    out = [struct.pack("<I", len(items))]
    for name, arr in items:
        arr = np.ascontiguousarray(arr, dtype="<f4")
        bname = name.encode()
        out.append(struct.pack("<I", len(bname)) + bname)
        out.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def _read_blocks(raw: bytes, off: int):
    (n,) = struct.unpack_from("<I", raw, off)
    off += 4
    out = {}
    for _ in range(n):
        (ln,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off : off + ln].decode()
        off += ln
        (ndim,) = struct.unpack_from("<I", raw, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if shape else 1
        out[name] = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(shape).astype(np.float32)
        off += 4 * size
    return out, off
