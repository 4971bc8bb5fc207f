"""Double-majority matching and binned tracking efficiency."""
from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence


@dataclass(frozen=True)
class MatchCriteria:
    threshold: float = 0.75
    multiset: bool = True

    def __post_init__(self):
        if not 0 < self.threshold <= 1:
            raise ValueError("threshold must be in (0, 1]")


def overlap(candidate: Sequence[int], truth: Sequence[int], multiset: bool = True) -> int:
    if multiset:
        return sum((Counter(candidate) & Counter(truth)).values())
    return len(set(candidate) & set(truth))


def match(candidate: Sequence[int], truth: Sequence[int], c: MatchCriteria = MatchCriteria()) -> bool:
    """Both ``shared/|candidate|`` and ``shared/|truth|`` reach the threshold."""
    if not candidate or not truth:
        raise ValueError("match: empty candidate or truth")
    shared = overlap(candidate, truth, c.multiset)
    n_cand = len(candidate) if c.multiset else len(set(candidate))
    n_truth = len(truth) if c.multiset else len(set(truth))
    # integer comparison: shared / n >= threshold without float rounding at the boundary
    return _at_least(shared, n_cand, c.threshold) and _at_least(shared, n_truth, c.threshold)


def _at_least(num: int, den: int, threshold: float) -> bool:
    return Fraction(num, den) >= Fraction(threshold).limit_denominator(10**9)


@dataclass(frozen=True)
class TruthTrack:
    tokens: tuple[int, ...]
    pt: float

    @property
    def length(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Bins:
    length_edges: tuple[float, ...] = tuple(range(6, 22))  # one bin per integer 6..20
    pt_edges: tuple[float, ...] = (0.0, 0.5, 1.0, 2.0, 3.0, 5.0)

    def __post_init__(self):
        for edges in (self.length_edges, self.pt_edges):
            if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
                raise ValueError("bin edges must be strictly increasing (at least 2)")


@dataclass
class EfficiencyBin:
    bin_type: str
    low: float
    high: float
    total: int = 0
    matched: int = 0

    @property
    def efficiency(self) -> float:
        return self.matched / self.total if self.total else math.nan


@dataclass
class EfficiencyTable:
    rows: list[EfficiencyBin] = field(default_factory=list)

    def by_type(self, bin_type: str) -> list[EfficiencyBin]:
        return [r for r in self.rows if r.bin_type == bin_type]

    @property
    def overall(self) -> EfficiencyBin:
        return self.by_type("all")[0]

    def populated(self, bin_type: str) -> list[EfficiencyBin]:
        return [r for r in self.by_type(bin_type) if r.total]

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_type", "bin_low", "bin_high", "total", "matched", "efficiency"])
            for r in self.rows:
                eff = "nan" if not r.total else f"{r.efficiency:.6f}"
                w.writerow([r.bin_type, _fmt_edge(r.low), _fmt_edge(r.high), r.total, r.matched, eff])

    @classmethod
    def read_csv(cls, path) -> "EfficiencyTable":
        rows = []
        with Path(path).open(newline="") as fh:
            for rec in csv.DictReader(fh):
                rows.append(EfficiencyBin(rec["bin_type"], float(rec["bin_low"]), float(rec["bin_high"]),
                                          int(rec["total"]), int(rec["matched"])))
        return cls(rows)


def _fmt_edge(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:g}"


def _make_bins(bin_type: str, edges: Sequence[float]) -> list[EfficiencyBin]:
    rows = [EfficiencyBin(bin_type, -math.inf, edges[0])]
    rows += [EfficiencyBin(bin_type, lo, hi) for lo, hi in zip(edges, edges[1:])]
    rows.append(EfficiencyBin(bin_type, edges[-1], math.inf))
    return rows


def _locate(rows: list[EfficiencyBin], value: float) -> EfficiencyBin:
    for r in rows:
        if r.low <= value < r.high:
            return r
    return rows[-1]  # +inf and nan land in overflow


def efficiency(events: Sequence[tuple[Sequence[TruthTrack], Sequence[Sequence[int]]]],
               c: MatchCriteria = MatchCriteria(), bins: Bins = Bins()) -> EfficiencyTable:
    """A truth track is found if any candidate of its event matches it.

    Tracks outside the bin range go to underflow/overflow bins, so every
    per-type total equals the overall total.
    """
    overall = EfficiencyBin("all", -math.inf, math.inf)
    by_len = _make_bins("length", bins.length_edges)
    by_pt = _make_bins("pt", bins.pt_edges)
    for truths, candidates in events:
        cands = [list(x) for x in candidates if len(x)]
        for t in truths:
            found = any(match(cand, t.tokens, c) for cand in cands)
            for row in (overall, _locate(by_len, t.length), _locate(by_pt, t.pt)):
                row.total += 1
                row.matched += found
    return EfficiencyTable([overall, *by_len, *by_pt])
