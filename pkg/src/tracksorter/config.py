"""Flat ``key = value`` run configuration.

Every key has a default; unknown keys are rejected. Lines starting with
``#`` are comments. Lists are comma separated; ``none`` means unset.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt(parse: Callable[[str], Any]) -> Callable[[str], Any]:
    def inner(s: str):
        return None if s.strip().lower() in ("", "none") else parse(s)

    return inner


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip())


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _fmt(v: Any) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class Key:
    default: Any
    parse: Callable[[str], Any]
    doc: str


KEYS: dict[str, Key] = {
    "seed": Key(0, int, "master seed; every stage derives its seed from it"),
    # data
    "data.source": Key("toy", str, "toy | trackml"),
    "data.train": Key(None, _opt(str), "directory of TrackML-layout training events (default: <out>/data/train)"),
    "data.val": Key(None, _opt(str), "validation event directory (default: <out>/data/val)"),
    "data.test": Key(None, _opt(str), "test event directory (default: <out>/data/test)"),
    "data.detector": Key(None, _opt(str), "detectors.csv listing all modules (default: <out>/data/detectors.csv if present)"),
    "data.volumes": Key((8, 13, 17), _ints, "volumes kept for TrackML data"),
    "select.min_unique_layers": Key(6, int, "minimum distinct (volume, layer) pairs per track"),
    "select.test_max_avg_pt": Key(5.0, _opt(float), "strict upper cut on mean per-hit pT for the test split (GeV)"),
    # toy detector
    "toy.n_layers": Key(8, int, "barrel layers"),
    "toy.layer_spacing": Key(50.0, float, "layer radius step in mm (radius of layer i = (i + 1) * step)"),
    "toy.sectors": Key(32, int, "azimuthal sectors per layer"),
    "toy.pt_min": Key(0.5, float, "minimum track pT (GeV)"),
    "toy.pt_max": Key(5.0, float, "maximum track pT (GeV)"),
    "toy.n_train": Key(2000, int, "training tracks (one pair per track)"),
    "toy.n_val": Key(200, int, "validation tracks"),
    "toy.n_test": Key(200, int, "test tracks"),
    # embeddings
    "cbow.enabled": Key(True, _bool, "initialise the token embedding from CBOW vectors"),
    "cbow.window": Key(20, int, "context tokens on each side"),
    "cbow.epochs": Key(20, int, "passes over the corpus"),
    "cbow.negatives": Key(5, int, "negative samples per target"),
    "cbow.learning_rate": Key(0.025, float, "initial SGD step (decays linearly)"),
    # model
    "model.d_model": Key(32, int, "embedding / model width (CBOW dim follows it)"),
    "model.n_heads": Key(1, int, "attention heads"),
    "model.d_ff": Key(64, int, "feed-forward width"),
    "model.n_encoder_layers": Key(2, int, "encoder layers"),
    "model.n_decoder_layers": Key(2, int, "decoder layers"),
    "model.max_len": Key(256, int, "longest supported sequence"),
    "model.tie_output_to_embedding": Key(True, _bool, "reuse the embedding table as output projection"),
    # training
    "train.epochs": Key(40, int, "training epochs"),
    "train.base_lr": Key(1e-3, float, "initial learning rate"),
    "train.min_lr": Key(1e-5, float, "final learning rate of the cosine schedule"),
    "train.batch_size": Key(32, int, "pairs per batch"),
    "train.clip_norm": Key(None, _opt(float), "global gradient-norm clip (none = off)"),
    # decoding / evaluation
    "decode.sep_budget": Key(100, int, "initial [SEP] count in the count mask"),
    "decode.max_steps": Key(None, _opt(int), "hard cap on emitted tokens (none = input_len + sep_budget + 1)"),
    "decode.chunk_size": Key(64, int, "inputs decoded together (fixed, so results do not depend on --workers)"),
    "eval.threshold": Key(0.75, float, "double-majority matching fraction"),
    "eval.multiset": Key(True, _bool, "count repeated module hits (multiset overlap)"),
    "eval.length_edges": Key(tuple(float(x) for x in range(6, 22)), _floats, "track-length bin edges"),
    "eval.pt_edges": Key((0.0, 0.5, 1.0, 2.0, 3.0, 5.0), _floats, "pT bin edges (GeV)"),
}

# Full-scale setup (TrackML, 6+6 layers, d=64); usable via --config with these lines.
FULL_SCALE_OVERRIDES = {
    "data.source": "trackml",
    "model.d_model": "64",
    "model.d_ff": "256",
    "model.n_encoder_layers": "6",
    "model.n_decoder_layers": "6",
    "cbow.epochs": "100",
    "train.epochs": "371",
}


class RunConfig:
    def __init__(self, values: dict[str, Any] | None = None):
        self.values = {k: v.default for k, v in KEYS.items()}
        for k, v in (values or {}).items():
            if k not in KEYS:
                raise ConfigError(f"unknown config key {k!r}")
            self.values[k] = v

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def set(self, key: str, raw: str) -> None:
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            self.values[key] = KEYS[key].parse(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None

    def update_from_lines(self, lines: Iterable[str], source: str = "<config>") -> None:
        for n, line in enumerate(lines, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{n}: expected 'key = value'")
            key, raw = (x.strip() for x in line.split("=", 1))
            try:
                self.set(key, raw)
            except ConfigError as exc:
                raise ConfigError(f"{source}:{n}: {exc}") from None

    @classmethod
    def load(cls, path=None, overrides: Iterable[str] = ()) -> "RunConfig":
        cfg = cls()
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise ConfigError(f"config file not found: {p}")
            cfg.update_from_lines(p.read_text().splitlines(), str(p))
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, raw = item.split("=", 1)
            cfg.set(key.strip(), raw.strip())
        return cfg

    def dumps(self) -> str:
        return "".join(f"{k} = {_fmt(self.values[k])}\n" for k in KEYS)

    def write(self, path) -> None:
        Path(path).write_text(self.dumps())

    @staticmethod
    def describe() -> str:
        return "".join(f"# {v.doc}\n{k} = {_fmt(v.default)}\n" for k, v in KEYS.items())
