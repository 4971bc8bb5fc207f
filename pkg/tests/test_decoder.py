from collections import Counter

import numpy as np
import pytest
from conftest import micro_config, randomized_model
from hypothesis import given, settings
from hypothesis import strategies as st

from tracksorter import decoder as D
from tracksorter.vocab import SEP, SOS


def scripted(target, vocab_size):
    """Logit provider that prefers the next token of ``target``."""
    def fn(prefix):
        logits = np.zeros(vocab_size)
        k = len(prefix) - 1
        if k < len(target):
            logits[target[k]] = 1.0
        return logits
    return fn


def sep_lover(vocab_size):
    def fn(prefix):
        logits = np.zeros(vocab_size)
        logits[SEP] = 10.0
        return logits
    return fn


def test_count_mask_for_repeated_token():
    mask = D.init_count_mask([5, 7, 5], 10)
    assert mask.remaining[5] == 2 and mask.remaining[7] == 1
    assert mask.remaining[SOS] == 0 and mask.remaining[SEP] == D.SEP_BUDGET
    assert np.flatnonzero(mask.allowed(SOS)).tolist() == [SEP, 5, 7]
    assert np.flatnonzero(mask.allowed(SEP)).tolist() == [5, 7]
    mask.consume(7)
    assert 7 not in np.flatnonzero(mask.allowed(5))


def test_sep_preferring_trace():
    out = D.greedy_decode(sep_lover(10), [5, 7, 5], vocab_size=10)
    assert out.tokens == [SEP, 5, SEP, 5, SEP, 7, SEP]
    assert out.candidates() == [[5], [5], [7]] and not out.truncated


def test_scripted_provider_reproduces_target():
    target = [4, 2, 6, SEP, 3, 5, SEP]
    out = D.greedy_decode(scripted(target, 8), [2, 3, 4, 5, 6], vocab_size=8)
    assert out.tokens == target


def test_disallowed_preference_falls_back_to_lowest_allowed():
    # provider insists on token 9, which is not in the input
    def fn(prefix):
        logits = np.full(10, -1.0)
        logits[9] = 5.0
        return logits
    out = D.greedy_decode(fn, [4, 3], vocab_size=10)
    assert out.tokens == [SEP, 3, SEP, 4, SEP]


def test_nan_logits_never_chosen():
    logits = np.array([0.0, np.nan, 1.0, np.nan])
    assert D.choose(logits, np.array([False, True, True, True])) == 2
    assert D.choose(np.full(4, np.nan), np.array([False, False, True, True])) == 2
    assert D.choose(logits, np.zeros(4, bool)) is None


def test_tie_goes_to_lowest_id():
    assert D.choose(np.array([0, 0, 3, 3, 3.0]), np.array([1, 1, 0, 1, 1], bool)) == 3


def test_truncation_forces_trailing_sep():
    out = D.greedy_decode(sep_lover(6), [2, 3, 4], D.DecodeConfig(max_steps=4), vocab_size=6)
    assert out.truncated and out.tokens == [SEP, 2, SEP, 3, SEP]
    out = D.greedy_decode(scripted([2, 3, 4, 5], 6), [2, 3, 4, 5], D.DecodeConfig(max_steps=5), vocab_size=6)
    assert out.tokens == [2, 3, 4, 5, SEP] and not out.truncated
    with pytest.raises(ValueError):
        D.DecodeConfig(max_steps=2).steps_for(3)


def test_exhausted_sep_budget_stops():
    out = D.greedy_decode(sep_lover(8), [2, 3, 4, 5], D.DecodeConfig(sep_budget=2), vocab_size=8)
    # remaining hits still come out; the closing [SEP] is forced past the budget
    assert out.truncated
    assert out.tokens == [SEP, 2, SEP, 3, 4, 5, SEP]


def test_input_validation():
    with pytest.raises(ValueError):
        D.greedy_decode(sep_lover(8), [], vocab_size=8)
    with pytest.raises(ValueError):
        D.greedy_decode(sep_lover(8), [2, SEP], vocab_size=8)
    with pytest.raises(ValueError):
        D.greedy_decode(sep_lover(8), [2, 9], vocab_size=8)
    with pytest.raises(ValueError):
        D.greedy_decode(sep_lover(8), [2])


def test_split_tracks():
    assert D.split_tracks([2, 3, SEP, 4, SEP]) == [[2, 3], [4]]
    assert D.split_tracks([SEP, 2, SEP]) == [[2]]
    assert D.split_tracks([2, 3]) == [[2, 3]]
    assert D.split_tracks([]) == []


def check_invariants(inp, result, max_steps):
    toks = result.tokens
    assert Counter(t for t in toks if t != SEP) == Counter(inp)
    assert all(not (a == SEP and b == SEP) for a, b in zip(toks, toks[1:]))
    assert len(toks) <= max_steps and toks[-1] == SEP
    assert SOS not in toks and not result.truncated


inputs = st.lists(st.integers(2, 10), min_size=1, max_size=12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), inputs)
def test_random_model_decode_invariants(seed, inp):
    model = randomized_model(micro_config(), seed, dtype=np.float32, scale=1.0)
    result = D.greedy_decode(model, inp)
    check_invariants(inp, result, D.DecodeConfig().steps_for(len(inp)))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), inputs)
def test_random_logit_decode_invariants(seed, inp):
    rng = np.random.default_rng(seed)
    result = D.greedy_decode(lambda prefix: rng.normal(size=11), inp, vocab_size=11)
    check_invariants(inp, result, D.DecodeConfig().steps_for(len(inp)))


def test_batch_matches_single():
    model = randomized_model(micro_config(), 3, dtype=np.float64)
    rng = np.random.default_rng(0)
    batch = [list(rng.integers(2, 11, size=n)) for n in (1, 5, 9, 3, 12)]
    got = D.greedy_decode_batch(model, batch)
    assert [r.tokens for r in got] == [D.greedy_decode(model, x).tokens for x in batch]
    assert D.greedy_decode_batch(model, []) == []


def test_decodes_file_round_trip(tmp_path):
    results = [D.DecodeResult([2, 3, SEP, 4, SEP]), D.DecodeResult([5, SEP], truncated=True),
               D.DecodeResult([SEP], truncated=True)]
    path = tmp_path / "decodes.txt"
    D.write_decodes(results, path)
    assert path.read_text() == "2 3;4\n5 TRUNC\nTRUNC\n"
    assert D.read_decodes(path) == [([[2, 3], [4]], False), ([[5]], True), ([], True)]


def test_decode_capped_by_model_length():
    model = randomized_model(micro_config(max_len=6), 0, dtype=np.float32)
    inp = [2, 3, 4, 5, 6, 7]
    single = D.greedy_decode(model, inp)
    assert single.truncated and single.tokens[-1] == SEP and len(single.tokens) <= 6
    assert D.greedy_decode_batch(model, [inp])[0] == single
