import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tracksorter import evaluator as E


def brute_shared(candidate, truth):
    """Multiset intersection by removing matched elements one at a time."""
    pool = list(truth)
    shared = 0
    for t in candidate:
        if t in pool:
            pool.remove(t)
            shared += 1
    return shared


def brute_match(candidate, truth):
    s = brute_shared(candidate, truth)
    return 4 * s >= 3 * len(candidate) and 4 * s >= 3 * len(truth)


def test_three_of_four_matches():
    assert E.match([2, 3, 4, 9], [2, 3, 4, 5])


def test_two_of_four_fails():
    assert not E.match([2, 3, 8, 9], [2, 3, 4, 5])


def test_both_directions_needed():
    # all 4 truth hits found, but they are only 4 of 8 candidate hits
    assert not E.match([2, 3, 4, 5, 6, 7, 8, 9], [2, 3, 4, 5])
    assert not E.match([2, 3, 4, 5], [2, 3, 4, 5, 6, 7, 8, 9])


def test_duplicates_counted_as_multiset():
    assert E.overlap([5, 5, 5, 2], [5, 2, 2, 7]) == 2
    assert not E.match([5, 5, 5, 2], [5, 2, 2, 7])
    assert E.match([5, 5, 5, 2], [5, 5, 2, 7])  # 5, 5, 2 shared
    assert E.match([5, 5, 2, 7], [5, 5, 2, 8])
    assert E.overlap([5, 5, 5, 2], [5, 2, 2, 7], multiset=False) == 2


def test_threshold_one_requires_identical_multisets():
    c = E.MatchCriteria(threshold=1.0)
    assert E.match([4, 2, 3], [2, 3, 4], c)
    assert not E.match([2, 3], [2, 3, 4], c)
    with pytest.raises(ValueError):
        E.MatchCriteria(threshold=0)


def test_empty_inputs_rejected():
    with pytest.raises(ValueError):
        E.match([], [2])


tokens = st.lists(st.integers(2, 8), min_size=1, max_size=12)


@given(tokens, tokens)
def test_match_is_symmetric(a, b):
    assert E.match(a, b) == E.match(b, a)


@given(tokens, tokens)
def test_agrees_with_brute_force(a, b):
    assert E.overlap(a, b) == brute_shared(a, b)
    assert E.match(a, b) == brute_match(a, b)


def test_boundary_lengths():
    # 12 hits, 9 shared: exactly 0.75 both ways
    truth = list(range(2, 14))
    assert E.match(truth[:9] + [50, 51, 52], truth)
    assert not E.match(truth[:8] + [50, 51, 52, 53], truth)


def _events():
    truths = [E.TruthTrack((2, 3, 4, 5, 6, 7), 0.7), E.TruthTrack((8, 9, 10, 11, 12, 13, 14), 2.5)]
    candidates = [[2, 3, 4, 5, 6], [8, 9, 30, 31, 32, 33, 34]]
    return [(truths, candidates)]


def test_one_of_two_found():
    table = E.efficiency(_events())
    assert table.overall.total == 2 and table.overall.efficiency == 0.5


def test_bins_follow_length_and_pt():
    table = E.efficiency(_events())
    by_len = {r.low: (r.total, r.matched) for r in table.populated("length")}
    assert by_len == {6.0: (1, 1), 7.0: (1, 0)}
    by_pt = {(r.low, r.high): (r.total, r.matched) for r in table.populated("pt")}
    assert by_pt == {(0.5, 1.0): (1, 1), (2.0, 3.0): (1, 0)}


def test_out_of_range_tracks_go_to_flow_bins():
    events = [([E.TruthTrack((2, 3), 9.0), E.TruthTrack(tuple(range(2, 30)), -1.0)], [[2, 3]])]
    table = E.efficiency(events)
    for kind in ("length", "pt"):
        assert sum(r.total for r in table.by_type(kind)) == table.overall.total
    lens = table.by_type("length")
    assert lens[0].total == 1 and lens[-1].total == 1
    assert table.by_type("pt")[-1].low == 5.0 and table.by_type("pt")[-1].total == 1


def test_no_candidates_means_zero():
    table = E.efficiency([([E.TruthTrack((2, 3, 4, 5, 6, 7), 1.0)], [[], []])])
    assert table.overall.efficiency == 0.0
    assert math.isnan(E.efficiency([]).overall.efficiency)


def test_csv_round_trip(tmp_path):
    table = E.efficiency(_events())
    path = tmp_path / "efficiency.csv"
    table.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "bin_type,bin_low,bin_high,total,matched,efficiency"
    assert lines[1] == "all,-inf,inf,2,1,0.500000"
    again = E.EfficiencyTable.read_csv(path)
    assert [(r.bin_type, r.low, r.high, r.total, r.matched) for r in again.rows] == [
        (r.bin_type, r.low, r.high, r.total, r.matched) for r in table.rows
    ]


def test_bins_validation():
    with pytest.raises(ValueError):
        E.Bins(length_edges=(5,))
    with pytest.raises(ValueError):
        E.Bins(pt_edges=(1.0, 1.0, 2.0))


def test_random_efficiency_matches_oracle():
    rng = np.random.default_rng(7)
    events = []
    for _ in range(30):
        truths = [E.TruthTrack(tuple(rng.integers(2, 12, size=rng.integers(4, 10))), float(rng.uniform(0, 6)))
                  for _ in range(3)]
        cands = [list(rng.integers(2, 12, size=rng.integers(1, 10))) for _ in range(3)]
        events.append((truths, cands))
    want = sum(any(brute_match(c, t.tokens) for c in cands) for truths, cands in events for t in truths)
    assert E.efficiency(events).overall.matched == want
