import statistics

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from btss.session import KeyEvent, Session
from btss.thresholds import (ThresholdError, ThresholdSet, classify_ikis, derive_thresholds,
                             exclusion_reason, filter_sessions, thresholds_from_ikis)


def keys(*spec):
    return [KeyEvent.insert(t, g) for g, t in spec]


def test_within_word_pair():
    assert classify_ikis(keys(("a", 0), ("b", 100))) == ([100], [])


def test_between_word_pair():
    assert classify_ikis(keys(("a", 0), (" ", 100), ("b", 400))) == ([], [300])


def test_gap_before_delimiter_discarded():
    assert classify_ikis(keys(("a", 0), (",", 50), (" ", 80), ("b", 200))) == ([], [120])


def test_deletion_is_non_alphanumeric():
    ks = [KeyEvent.insert(0, "a"), KeyEvent.delete(40, "a"), KeyEvent.insert(90, "b"),
          KeyEvent.insert(150, "c")]
    assert classify_ikis(ks) == ([60], [50])
    # dropping deletions re-pairs a(0) with b(90)
    assert classify_ikis(ks, include_deletions=False) == ([90, 60], [])


def brute_force(ks):
    within, between = [], []
    for i in range(len(ks) - 1):
        a, b = ks[i], ks[i + 1]
        if b.action == "insert" and b.glyph.isalnum():
            if a.action == "insert" and a.glyph.isalnum():
                within.append(b.time - a.time)
            else:
                between.append(b.time - a.time)
    return within, between


def test_random_streams_match_pairwise_classifier():
    rng = np.random.default_rng(1)
    for _ in range(200):
        t = 0
        ks = []
        for _ in range(20):
            t += int(rng.integers(1, 500))
            g = "ab c,9."[int(rng.integers(7))]
            ks.append(KeyEvent.delete(t, g) if rng.random() < 0.1 else KeyEvent.insert(t, g))
        assert classify_ikis(ks) == brute_force(ks)


def test_formula_example():
    t = thresholds_from_ikis([100, 200, 300], [200, 300, 400])
    assert (t.kbi_ms, t.pub_ms) == (400, 900)
    assert (t.median_within_iki, t.median_between_iki) == (200, 300)
    assert (t.n_within, t.n_between) == (3, 3)


def test_even_count_uses_mean_of_middle_two():
    t = thresholds_from_ikis([100, 201], [10, 20, 31, 41])
    assert t.median_within_iki == 150.5 and t.kbi_ms == 301
    assert t.median_between_iki == 25.5 and t.pub_ms == 76.5


def test_underivable_thresholds():
    with pytest.raises(ThresholdError, match="within"):
        thresholds_from_ikis([], [100])
    with pytest.raises(ThresholdError, match="between"):
        thresholds_from_ikis([100], [])
    with pytest.raises(ThresholdError):
        derive_thresholds(Session("s", keys=(KeyEvent.insert(0, "a"),)))


def test_derive_from_session():
    s = Session.from_events("s", keys(("a", 0), ("b", 100), (" ", 150), ("c", 450), ("d", 500)))
    t = derive_thresholds(s)
    assert (t.kbi_ms, t.pub_ms) == (150, 900)


def test_threshold_set_invariants():
    with pytest.raises(ThresholdError):
        ThresholdSet.from_values(0, 100)
    t = ThresholdSet.from_values(374, 891)
    assert t.median_within_iki * 2 == 374 and t.median_between_iki * 3 == 891
    assert ThresholdSet.from_dict(t.to_dict()) == t


@pytest.mark.parametrize("kbi, pub, reason", [
    (1808, 4230, ""),
    (2000, 6000, ""),
    (2001, 500, "kbi>2000"),
    (300, 6001, "pub>6000"),
    (2001, 6001, "kbi>2000;pub>6000"),
])
def test_filter_boundaries(kbi, pub, reason):
    assert exclusion_reason(ThresholdSet.from_values(kbi, pub)) == reason


def test_filter_partition():
    sets = [ThresholdSet.from_values(k, p) for k, p in [(1808, 4230), (2001, 500), (300, 6001)]]
    res = filter_sessions(sets)
    assert res.kept == sets[:1]
    assert [r for _, r in res.excluded] == ["kbi>2000", "pub>6000"]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 2000), min_size=1, max_size=15),
       st.lists(st.integers(1, 2000), min_size=1, max_size=15),
       st.integers(1, 20))
def test_thresholds_scale_with_ikis(within, between, c):
    a = thresholds_from_ikis(within, between)
    b = thresholds_from_ikis([c * x for x in within], [c * x for x in between])
    assert b.kbi_ms == c * a.kbi_ms and b.pub_ms == c * a.pub_ms
    assert a.kbi_ms == 2 * statistics.median(within)
    assert a.pub_ms == 3 * statistics.median(between)
