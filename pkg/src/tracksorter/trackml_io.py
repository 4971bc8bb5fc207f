"""TrackML event ingestion: hits/truth/particles CSVs to tracks of space points."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

ModuleKey = tuple[int, int, int]

HITS_COLUMNS = ("hit_id", "x", "y", "z", "volume_id", "layer_id", "module_id")
TRUTH_COLUMNS = ("hit_id", "particle_id", "tx", "ty", "tz", "tpx", "tpy", "tpz", "weight")
PARTICLES_COLUMNS = ("particle_id", "vx", "vy", "vz", "px", "py", "pz", "q", "nhits")


class TrackMLFormatError(ValueError):
    """A TrackML CSV file is missing, malformed or inconsistent."""


@dataclass(frozen=True)
class RawHit:
    hit_id: int
    x: float
    y: float
    z: float
    volume_id: int
    layer_id: int
    module_id: int

    @property
    def module_key(self) -> ModuleKey:
        return (self.volume_id, self.layer_id, self.module_id)


@dataclass(frozen=True)
class SpacePoint:
    hit_id: int
    module_key: ModuleKey
    r: float
    z: float
    particle_id: int
    pt: float = 0.0  # per-hit truth transverse momentum (GeV)

    @property
    def volume_id(self) -> int:
        return self.module_key[0]

    @property
    def layer(self) -> tuple[int, int]:
        return self.module_key[:2]

    def sort_key(self) -> tuple:
        return (self.r, self.z, self.module_key)


@dataclass(frozen=True)
class Track:
    particle_id: int
    points: tuple[SpacePoint, ...]
    pt: float

    @property
    def n_unique_layers(self) -> int:
        return len({p.layer for p in self.points})

    @property
    def min_r(self) -> float:
        return self.points[0].r

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class Event:
    event_id: int
    tracks: tuple[Track, ...]
    all_modules: frozenset = field(default_factory=frozenset)


def transverse(a: float, b: float) -> float:
    """sqrt(a^2 + b^2); used for both r(x, y) and pT(px, py)."""
    return math.hypot(a, b)


def make_track(particle_id: int, points: Iterable[SpacePoint], pt: float | None = None) -> Track:
    """Build a Track with points in (r, z, module_key) order.

    When ``pt`` is omitted the mean per-hit truth pT is used.
    """
    pts = tuple(sorted(points, key=SpacePoint.sort_key))
    if any(p.particle_id != particle_id for p in pts):
        raise ValueError(f"make_track: mixed particle ids in track {particle_id}")
    if pt is None:
        pt = sum(p.pt for p in pts) / len(pts) if pts else 0.0
    return Track(particle_id, pts, pt)


def _read_csv(path: Path, columns: tuple[str, ...]):
    if not path.is_file():
        raise TrackMLFormatError(f"missing file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TrackMLFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        missing = [c for c in columns if c not in header]
        if missing:
            raise TrackMLFormatError(f"{path}:1: missing columns {missing}")
        idx = [header.index(c) for c in columns]
        for row in reader:
            if not row:
                continue
            try:
                yield reader.line_num, [row[i] for i in idx]
            except IndexError:
                raise TrackMLFormatError(
                    f"{path}:{reader.line_num}: expected {len(header)} fields, got {len(row)}"
                ) from None


def _parse(path: Path, line: int, values: list[str], kinds: str) -> list:
    try:
        return [int(v) if k == "i" else float(v) for v, k in zip(values, kinds)]
    except ValueError:
        raise TrackMLFormatError(f"{path}:{line}: malformed row {values}") from None


def read_hits(path) -> dict[int, RawHit]:
    path = Path(path)
    hits: dict[int, RawHit] = {}
    for line, vals in _read_csv(path, HITS_COLUMNS):
        hit_id, x, y, z, vol, lay, mod = _parse(path, line, vals, "ifffiii")
        if hit_id in hits:
            raise TrackMLFormatError(f"{path}:{line}: duplicate hit_id {hit_id}")
        if mod < 0:
            raise TrackMLFormatError(f"{path}:{line}: negative module_id")
        hits[hit_id] = RawHit(hit_id, x, y, z, vol, lay, mod)
    return hits


def read_truth(path) -> dict[int, tuple[int, float]]:
    """hit_id -> (particle_id, per-hit truth pT)."""
    path = Path(path)
    truth: dict[int, tuple[int, float]] = {}
    for line, vals in _read_csv(path, TRUTH_COLUMNS):
        hit_id, pid, _tx, _ty, _tz, tpx, tpy, _tpz, _w = _parse(path, line, vals, "iifffffff")
        truth[hit_id] = (pid, transverse(tpx, tpy))
    return truth


def read_particles(path) -> dict[int, float]:
    """particle_id -> production pT."""
    path = Path(path)
    out: dict[int, float] = {}
    for line, vals in _read_csv(path, PARTICLES_COLUMNS):
        pid, _vx, _vy, _vz, px, py, _pz, _q, _n = _parse(path, line, vals, "iffffffii")
        out[pid] = transverse(px, py)
    return out


def read_module_keys(hits_path) -> set[ModuleKey]:
    return {h.module_key for h in read_hits(hits_path).values()}


def read_detector_modules(path, volumes: Iterable[int] | None = None) -> set[ModuleKey]:
    """Module keys from a TrackML ``detectors.csv`` (only the id columns are used)."""
    path = Path(path)
    keep = None if volumes is None else set(volumes)
    keys: set[ModuleKey] = set()
    for line, vals in _read_csv(path, ("volume_id", "layer_id", "module_id")):
        key = tuple(_parse(path, line, vals, "iii"))
        if keep is None or key[0] in keep:
            keys.add(key)
    return keys


def load_event(hits_path, truth_path, particles_path, event_id: int = 0) -> Event:
    """Join hits with truth by hit_id, drop noise, and group into tracks."""
    hits = read_hits(hits_path)
    truth = read_truth(truth_path)
    read_particles(particles_path)  # validated; track pT comes from per-hit truth
    orphans = sorted(set(truth) - set(hits))
    if orphans:
        raise TrackMLFormatError(f"{truth_path}: hit_id {orphans[0]} absent from hits file")
    by_pid: dict[int, list[SpacePoint]] = {}
    for hit_id, h in hits.items():
        if hit_id not in truth:
            raise TrackMLFormatError(f"{hits_path}: hit_id {hit_id} has no truth row")
        pid, pt = truth[hit_id]
        if pid == 0:
            continue
        sp = SpacePoint(hit_id, h.module_key, transverse(h.x, h.y), h.z, pid, pt)
        by_pid.setdefault(pid, []).append(sp)
    tracks = tuple(make_track(pid, pts) for pid, pts in sorted(by_pid.items()))
    modules = frozenset(h.module_key for h in hits.values())
    return Event(event_id, tracks, modules)


def filter_volumes(event: Event, volumes: Iterable[int]) -> Event:
    volumes = set(volumes)
    if not volumes:
        raise ValueError("filter_volumes: volumes must be nonempty")
    tracks = []
    for t in event.tracks:
        pts = [p for p in t.points if p.volume_id in volumes]
        if not pts:
            continue
        tracks.append(t if len(pts) == len(t.points) else replace(t, points=tuple(pts)))
    modules = frozenset(k for k in event.all_modules if k[0] in volumes)
    return Event(event.event_id, tuple(tracks), modules)


def select_tracks(event: Event, min_unique_layers: int, max_avg_pt: float | None = None) -> list[Track]:
    if min_unique_layers < 1:
        raise ValueError("select_tracks: min_unique_layers must be >= 1")
    return [
        t
        for t in event.tracks
        if t.n_unique_layers >= min_unique_layers and (max_avg_pt is None or t.pt < max_avg_pt)
    ]


def write_event(event: Event, out_dir, prefix: str = "event") -> tuple[Path, Path, Path]:
    """Write ``event`` in the TrackML three-file CSV layout.

    Positions are placed on the x axis (x = r, y = 0); per-hit truth momentum
    likewise (tpx = pT). Round-trips through :func:`load_event`.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = tuple(out_dir / f"{prefix}-{kind}.csv" for kind in ("hits", "truth", "particles"))
    points = sorted((p for t in event.tracks for p in t.points), key=lambda p: p.hit_id)
    with paths[0].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HITS_COLUMNS)
        for p in points:
            w.writerow([p.hit_id, repr(p.r), "0.0", repr(p.z), *p.module_key])
    with paths[1].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRUTH_COLUMNS)
        for p in points:
            w.writerow([p.hit_id, p.particle_id, repr(p.r), "0.0", repr(p.z), repr(p.pt), "0.0", "0.0", "0.0"])
    with paths[2].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PARTICLES_COLUMNS)
        for t in event.tracks:
            w.writerow([t.particle_id, "0.0", "0.0", "0.0", repr(t.pt), "0.0", "0.0", 1, len(t.points)])
    return paths
