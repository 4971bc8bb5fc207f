"""Pipeline stages behind the CLI. Each stage reads and writes files in a run directory."""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import cbow, decoder, evaluator, plotting, sequences, toygen, trackml_io, trainer
from .config import RunConfig
from .model import Checkpoint, ModelConfig, init_model
from .vocab import Vocabulary, build_vocabulary

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")

_SEED_OFFSETS = {"toy.train": 1, "toy.val": 2, "toy.test": 3, "pair.train": 11, "pair.val": 12,
                 "pair.test": 13, "cbow": 21, "init": 31, "train": 41}


class StageInputError(FileNotFoundError):
    """A stage needs an artifact that an earlier stage has not produced."""


def stage_seed(cfg: RunConfig, name: str) -> int:
    return cfg["seed"] * 100 + _SEED_OFFSETS[name]


class RunDir:
    def __init__(self, root):
        self.root = Path(root)

    def path(self, *parts: str) -> Path:
        return self.root.joinpath(*parts)

    def need(self, *parts: str) -> Path:
        p = self.path(*parts)
        if not p.exists():
            raise StageInputError(f"missing stage input {p}")
        return p

    def out(self, *parts: str) -> Path:
        p = self.path(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def echo_config(self, cfg: RunConfig, stage: str) -> None:
        cfg.write(self.out(f"config.{stage}.txt"))


# ---------------------------------------------------------------------- configs


def toy_config(cfg: RunConfig) -> toygen.ToyConfig:
    det = toygen.ToyDetector(
        tuple(cfg["toy.layer_spacing"] * (i + 1) for i in range(cfg["toy.n_layers"])), cfg["toy.sectors"]
    )
    return toygen.ToyConfig(det, cfg["toy.pt_min"], cfg["toy.pt_max"])


def model_config(cfg: RunConfig, vocab_size: int) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab_size, d_model=cfg["model.d_model"], n_heads=cfg["model.n_heads"], d_ff=cfg["model.d_ff"],
        n_encoder_layers=cfg["model.n_encoder_layers"], n_decoder_layers=cfg["model.n_decoder_layers"],
        max_len=cfg["model.max_len"], tie_output_to_embedding=cfg["model.tie_output_to_embedding"],
    )


def train_config(cfg: RunConfig) -> trainer.TrainConfig:
    return trainer.TrainConfig(
        epochs=cfg["train.epochs"], base_lr=cfg["train.base_lr"], min_lr=cfg["train.min_lr"],
        batch_size=cfg["train.batch_size"], seed=stage_seed(cfg, "train"), clip_norm=cfg["train.clip_norm"],
    )


def cbow_config(cfg: RunConfig) -> cbow.CbowConfig:
    return cbow.CbowConfig(dim=cfg["model.d_model"], window=cfg["cbow.window"], epochs=cfg["cbow.epochs"],
                           negatives=cfg["cbow.negatives"], learning_rate=cfg["cbow.learning_rate"],
                           seed=stage_seed(cfg, "cbow"))


def decode_config(cfg: RunConfig) -> decoder.DecodeConfig:
    return decoder.DecodeConfig(cfg["decode.sep_budget"], cfg["decode.max_steps"])


def match_criteria(cfg: RunConfig) -> evaluator.MatchCriteria:
    return evaluator.MatchCriteria(cfg["eval.threshold"], cfg["eval.multiset"])


def bins(cfg: RunConfig) -> evaluator.Bins:
    return evaluator.Bins(tuple(cfg["eval.length_edges"]), tuple(cfg["eval.pt_edges"]))


# ---------------------------------------------------------------------- stages


def toy_gen(cfg: RunConfig, run: RunDir) -> None:
    tcfg = toy_config(cfg)
    for split in SPLITS:
        ev = toygen.generate_event(tcfg, cfg[f"toy.n_{split}"], stage_seed(cfg, f"toy.{split}"))
        trackml_io.write_event(ev, run.path("data", split), prefix="event000000000")
    with run.out("data", "detectors.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["volume_id", "layer_id", "module_id"])
        w.writerows(sorted(tcfg.detector.modules()))
    run.echo_config(cfg, "toy-gen")


def _event_prefixes(directory: Path) -> list[Path]:
    if not directory.is_dir():
        raise StageInputError(f"missing event directory {directory}")
    hits = sorted(directory.glob("*-hits.csv"))
    if not hits:
        raise StageInputError(f"no *-hits.csv files in {directory}")
    return [h.with_name(h.name[: -len("-hits.csv")]) for h in hits]


def _split_dir(cfg: RunConfig, run: RunDir, split: str) -> Path:
    given = cfg[f"data.{split}"]
    return Path(given) if given else run.path("data", split)


def ingest(cfg: RunConfig, run: RunDir) -> None:
    """Load events, keep analysis tracks, write one hit per row per split."""
    modules: set = set()
    for split in SPLITS:
        rows = []
        for ev_index, prefix in enumerate(_event_prefixes(_split_dir(cfg, run, split))):
            ev = trackml_io.load_event(*(Path(f"{prefix}-{k}.csv") for k in ("hits", "truth", "particles")),
                                       event_id=ev_index)
            if cfg["data.source"] == "trackml":
                ev = trackml_io.filter_volumes(ev, cfg["data.volumes"])
            modules |= ev.all_modules
            cut = cfg["select.test_max_avg_pt"] if split == "test" else None
            for t in trackml_io.select_tracks(ev, cfg["select.min_unique_layers"], cut):
                for p in t.points:
                    rows.append([ev_index, t.particle_id, repr(t.pt), p.hit_id, repr(p.r), repr(p.z), *p.module_key])
        with run.out("tracks", f"{split}.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["event", "particle_id", "track_pt", "hit_id", "r", "z", "volume_id", "layer_id", "module_id"])
            w.writerows(rows)
        log.info("ingest %s: %d hits", split, len(rows))
    with run.out("tracks", "modules.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["volume_id", "layer_id", "module_id"])
        w.writerows(sorted(modules))
    run.echo_config(cfg, "ingest")


def read_tracks(path: Path) -> dict[int, list[trackml_io.Track]]:
    """event -> tracks, from an ingest ``tracks/<split>.csv``."""
    groups: dict[tuple[int, int], list] = {}
    pts: dict[tuple[int, int], float] = {}
    with path.open(newline="") as fh:
        for rec in csv.DictReader(fh):
            key = (int(rec["event"]), int(rec["particle_id"]))
            mk = (int(rec["volume_id"]), int(rec["layer_id"]), int(rec["module_id"]))
            groups.setdefault(key, []).append(
                trackml_io.SpacePoint(int(rec["hit_id"]), mk, float(rec["r"]), float(rec["z"]), key[1])
            )
            pts[key] = float(rec["track_pt"])
    out: dict[int, list[trackml_io.Track]] = {}
    for key in sorted(groups):
        out.setdefault(key[0], []).append(trackml_io.make_track(key[1], groups[key], pts[key]))
    return out


def _module_set(cfg: RunConfig, run: RunDir) -> set:
    det = cfg["data.detector"]
    if det:
        vols = cfg["data.volumes"] if cfg["data.source"] == "trackml" else None
        return trackml_io.read_detector_modules(det, vols)
    default = run.path("data", "detectors.csv")
    if cfg["data.source"] == "toy" and default.exists():
        return trackml_io.read_detector_modules(default)
    return trackml_io.read_detector_modules(run.need("tracks", "modules.csv"))


def build_vocab(cfg: RunConfig, run: RunDir) -> None:
    """Write the vocabulary and the tokenised pair datasets."""
    vocab = build_vocabulary(_module_set(cfg, run))
    vocab.save(run.out("vocab.txt"))
    for split in SPLITS:
        examples = []
        for _event, tracks in read_tracks(run.need("tracks", f"{split}.csv")).items():
            if len(tracks) < 2:
                continue
            for pair in sequences.pair_tracks(tracks, stage_seed(cfg, f"pair.{split}")):
                examples.append(sequences.make_example(pair, vocab))
        sequences.save_dataset(examples, run.out("datasets", f"{split}.txt"))
        log.info("build-vocab %s: %d pairs", split, len(examples))
    run.echo_config(cfg, "build-vocab")


def _load_vocab(run: RunDir) -> Vocabulary:
    return Vocabulary.load(run.need("vocab.txt"))


def train_embed(cfg: RunConfig, run: RunDir) -> None:
    vocab = _load_vocab(run)
    corpus = [list(e.target) for e in sequences.load_dataset(run.need("datasets", "train.txt"))]
    history: list[float] = []
    emb = cbow.train_cbow(corpus, vocab.size, cbow_config(cfg), history)
    emb.save(run.out("embed.bin"))
    with run.out("embed_log.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        w.writerows([i, repr(v)] for i, v in enumerate(history))
    run.echo_config(cfg, "train-embed")


def _pairs(path: Path):
    return [(e.input, e.target) for e in sequences.load_dataset(path)]


def train_model(cfg: RunConfig, run: RunDir) -> Checkpoint:
    vocab = _load_vocab(run)
    emb = cbow.EmbeddingMatrix.load(run.need("embed.bin")) if cfg["cbow.enabled"] else None
    model = init_model(model_config(cfg, vocab.size), emb, seed=stage_seed(cfg, "init"))
    ckpt = trainer.train(model, _pairs(run.need("datasets", "train.txt")), _pairs(run.need("datasets", "val.txt")),
                         train_config(cfg), log_path=run.out("train_log.csv"))
    ckpt.save(run.out("checkpoint.bin"))
    run.echo_config(cfg, "train")
    return ckpt


def _decode_chunk(args):
    ckpt_bytes, inputs, dcfg = args
    model = Checkpoint.from_bytes(ckpt_bytes).to_model()
    return decoder.greedy_decode_batch(model, inputs, dcfg)


def decode(cfg: RunConfig, run: RunDir, workers: int = 1) -> list[decoder.DecodeResult]:
    raw = run.need("checkpoint.bin").read_bytes()
    inputs = [list(e.input) for e in sequences.load_dataset(run.need("datasets", "test.txt"))]
    size = cfg["decode.chunk_size"]
    jobs = [(raw, inputs[i : i + size], decode_config(cfg)) for i in range(0, len(inputs), size)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            chunks = list(pool.map(_decode_chunk, jobs))
    else:
        chunks = [_decode_chunk(j) for j in jobs]
    results = [r for c in chunks for r in c]
    decoder.write_decodes(results, run.out("decodes.txt"))
    n_trunc = sum(r.truncated for r in results)
    if n_trunc:
        log.warning("decode: %d of %d inputs force-stopped", n_trunc, len(results))
    run.echo_config(cfg, "decode")
    return results


def _eval_events(examples, decodes):
    return [
        ([evaluator.TruthTrack(tuple(t), pt) for t, pt in zip(e.truth_tracks(), e.pts)], cands)
        for e, (cands, _trunc) in zip(examples, decodes)
    ]


def _eval_chunk(args):
    events, crit, b = args
    return evaluator.efficiency(events, crit, b)


def evaluate(cfg: RunConfig, run: RunDir, workers: int = 1) -> evaluator.EfficiencyTable:
    examples = sequences.load_dataset(run.need("datasets", "test.txt"))
    decodes = decoder.read_decodes(run.need("decodes.txt"))
    if len(examples) != len(decodes):
        raise ValueError(f"decodes.txt has {len(decodes)} lines for {len(examples)} test pairs")
    events = _eval_events(examples, decodes)
    crit, b = match_criteria(cfg), bins(cfg)
    if workers > 1 and len(events) > 1:
        step = -(-len(events) // workers)
        jobs = [(events[i : i + step], crit, b) for i in range(0, len(events), step)]
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_eval_chunk, jobs))
        table = parts[0]
        for part in parts[1:]:
            for row, other in zip(table.rows, part.rows):
                row.total += other.total
                row.matched += other.matched
    else:
        table = evaluator.efficiency(events, crit, b)
    table.write_csv(run.out("efficiency.csv"))
    run.echo_config(cfg, "eval")
    return table


def plot(cfg: RunConfig, run: RunDir) -> None:
    table = evaluator.EfficiencyTable.read_csv(run.need("efficiency.csv"))
    plotting.write_efficiency_svg(table, run.out("efficiency.svg"))
    run.echo_config(cfg, "plot")
