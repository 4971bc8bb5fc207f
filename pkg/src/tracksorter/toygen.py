"""Synthetic barrel detector for desk-scale training with exact ground truth.

Tracks are arcs from the origin: the azimuth at radius R is
``phi0 + curvature * R``, and the hit lands in the sector containing that
azimuth on every layer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .trackml_io import Event, ModuleKey, SpacePoint, Track

# pT [GeV] = PT_CONSTANT / |curvature [1/mm]|; 0.3 * B / 2 with B = 2 T, in GeV/mm
PT_CONSTANT = 3e-4


@dataclass(frozen=True)
class ToyDetector:
    layer_radii: tuple[float, ...] = tuple(50.0 * (i + 1) for i in range(8))
    sectors_per_layer: int = 32

    def __post_init__(self):
        radii = tuple(float(r) for r in self.layer_radii)
        object.__setattr__(self, "layer_radii", radii)
        if not radii or any(r <= 0 for r in radii) or any(b <= a for a, b in zip(radii, radii[1:])):
            raise ValueError("layer_radii must be positive and strictly increasing")
        if self.sectors_per_layer < 1:
            raise ValueError("sectors_per_layer must be >= 1")

    @property
    def n_layers(self) -> int:
        return len(self.layer_radii)

    @property
    def sector_width(self) -> float:
        return 2 * math.pi / self.sectors_per_layer

    def module_key(self, layer: int, sector: int) -> ModuleKey:
        return (0, layer, layer * self.sectors_per_layer + sector)

    def modules(self) -> set[ModuleKey]:
        return {self.module_key(l, s) for l in range(self.n_layers) for s in range(self.sectors_per_layer)}

    def sector(self, phi: float) -> int:
        return int(math.floor((phi % (2 * math.pi)) / self.sector_width)) % self.sectors_per_layer


@dataclass(frozen=True)
class ToyTrackParams:
    phi0: float
    curvature: float
    pt_constant: float = PT_CONSTANT

    @property
    def pt(self) -> float:
        return math.inf if self.curvature == 0 else self.pt_constant / abs(self.curvature)


class TrackLoopsError(ValueError):
    """Curvature is too large for the track to reach the outermost layer."""


def generate_track(det: ToyDetector, params: ToyTrackParams, particle_id: int = 1, first_hit_id: int = 1) -> Track:
    r_out = det.layer_radii[-1]
    # a half turn before the outer layer counts as looping
    if abs(params.curvature) * r_out > math.pi:
        raise TrackLoopsError(
            f"curvature {params.curvature} turns by more than pi before r={r_out}"
        )
    points = []
    for layer, radius in enumerate(det.layer_radii):
        s = det.sector(params.phi0 + params.curvature * radius)
        points.append(
            SpacePoint(first_hit_id + layer, det.module_key(layer, s), radius, 0.0, particle_id, params.pt)
        )
    return Track(particle_id, tuple(points), params.pt)


@dataclass(frozen=True)
class ToyConfig:
    detector: ToyDetector = field(default_factory=ToyDetector)
    pt_min: float = 0.5
    pt_max: float = 5.0


def sample_params(rng: np.random.Generator, cfg: ToyConfig) -> ToyTrackParams:
    """phi0 uniform; pT log-uniform in [pt_min, pt_max]; random charge sign."""
    phi0 = float(rng.uniform(0.0, 2 * math.pi))
    pt = float(math.exp(rng.uniform(math.log(cfg.pt_min), math.log(cfg.pt_max))))
    sign = 1.0 if rng.random() < 0.5 else -1.0
    return ToyTrackParams(phi0, sign * PT_CONSTANT / pt)


def generate_event(det: ToyDetector | ToyConfig, n_tracks: int, seed: int, event_id: int = 0) -> Event:
    if n_tracks < 1:
        raise ValueError("n_tracks must be >= 1")
    cfg = det if isinstance(det, ToyConfig) else ToyConfig(detector=det)
    rng = np.random.default_rng(seed)
    tracks = []
    next_hit = 1
    for pid in range(1, n_tracks + 1):
        t = generate_track(cfg.detector, sample_params(rng, cfg), pid, next_hit)
        next_hit += len(t.points)
        tracks.append(t)
    return Event(event_id, tuple(tracks), frozenset(cfg.detector.modules()))
