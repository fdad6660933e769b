import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from btss.segmentation import (ActivityUnit, KeyRun, SegmentHierarchy, au_table,
                               build_activity_units, build_keystroke_runs,
                               build_production_units, cluster_pauses_and_kbs, segment)
from btss.session import FixationEvent, KeyEvent, Session, parse_session, parse_session_text, \
    serialize_session
from btss.thresholds import ThresholdSet
from helpers import random_session
from reference_segmenter import implementation_tuples, reference_segment

T = ThresholdSet.from_values(374, 891)


def ins(*times, glyph="a"):
    return [KeyEvent.insert(t, glyph) for t in times]


def test_keystroke_runs_split_at_kbi():
    runs = build_keystroke_runs(ins(0, 100, 600), 374)
    assert [(r.start, r.end) for r in runs] == [(0, 101), (600, 601)]


def test_gap_equal_to_kbi_splits():
    assert len(build_keystroke_runs(ins(0, 374), 374)) == 2
    assert len(build_keystroke_runs(ins(0, 373), 374)) == 1


def test_single_key_one_ms_run():
    assert build_keystroke_runs(ins(5), 374) == [KeyRun(5, 6, 0, 0)]


def test_reading_au_then_typing():
    s = Session.from_events("s", ins(1000), [FixationEvent(0, 1000, "TT", 1, 1)])
    aus = build_activity_units(s, build_keystroke_runs(s.keys, 374))
    assert [(a.au_type, a.start, a.dur) for a in aus] == [(2, 0, 1000), (4, 1000, 1)]


def test_fixation_split_across_four_aus(example_path):
    h = segment(parse_session(example_path), T)
    parts = [(a.id, p.dur) for a in h.aus for p in a.parts if p.fix_index == 8]
    assert parts == [(9, 786), (10, 188), (11, 453), (12, 73)]
    assert sum(d for _, d in parts) == 1500


def au(i, t, start, dur, run):
    return ActivityUnit(id=i, au_type=t, start=start, dur=dur, ins=int(run is not None),
                        run=run)


def test_short_gaze_gap_absorbed():
    aus = [au(1, 4, 0, 1, 0), au(2, 2, 1, 200, None), au(3, 4, 201, 1, 1)]
    kbs, pauses = cluster_pauses_and_kbs(aus, T)
    assert [k.au_ids for k in kbs] == [(1, 2, 3)] and pauses == []


def test_pause_kinds_by_duration():
    aus = [au(1, 4, 0, 1, 0), au(2, 2, 1, 811, None), au(3, 4, 812, 1, 1),
           au(4, 2, 813, 1000, None), au(5, 8, 1813, 219, None), au(6, 4, 2032, 1, 2)]
    kbs, pauses = cluster_pauses_and_kbs(aus, T)
    assert [(p.kind, p.dur, p.au_ids) for p in pauses] == [("KBI", 811, (2,)),
                                                           ("PUB", 1219, (4, 5))]
    pus = build_production_units(kbs, pauses)
    assert [(u.kb_ids, u.internal_kbi_ids) for u in pus] == [((1, 2), (1,)), ((3,), ())]


def test_single_kb_single_pu():
    aus = [au(1, 4, 0, 1, 0)]
    kbs, pauses = cluster_pauses_and_kbs(aus, T)
    assert len(build_production_units(kbs, pauses)) == 1


def test_single_keystroke_session():
    h = segment(Session.from_events("s", ins(10)), T)
    assert (len(h.aus), len(h.kbs), len(h.pus)) == (1, 1, 1)
    assert h.span == (10, 11)


def test_keystrokes_only_session_has_types_4_and_8():
    s = Session.from_events("s", ins(0, 100, 900, 950, 3000, 3010))
    h = segment(s, T)
    assert {a.au_type for a in h.aus} == {4, 8}


def test_leading_and_trailing_pauses_outside_pus():
    s = Session.from_events("s", ins(2000, 2100),
                            [FixationEvent(0, 1500, "ST", 1, 1),
                             FixationEvent(2200, 1000, "TT", 1, 1)])
    h = segment(s, T)
    assert [(p.kind, p.start, p.dur) for p in h.pauses] == [("PUB", 0, 2000),
                                                             ("PUB", 2101, 1099)]
    assert len(h.pus) == 1 and h.pus[0].internal_kbi_ids == ()
    assert [k for k, _ in h.top_level_units()] == ["pause", "PU", "pause"]


def test_tgnbr_counted_at_delimiter():
    s = Session.from_events("s", [KeyEvent.insert(0, "a"), KeyEvent.insert(50, "b"),
                                  KeyEvent.insert(100, " "), KeyEvent.insert(1000, "c")])
    h = segment(s, T)
    assert [a.tgnbr for a in h.aus if a.is_typing] == [1, 1]


def test_worked_example_replay(example_path):
    h = segment(parse_session(example_path), T)
    cols, rows = au_table(h)
    assert len(rows) == 13
    assert [r[3] for r in rows] == [4, 6, 2, 8, 4, 8, 2, 6, 2, 6, 2, 6, 5]
    assert [r[5] for r in rows] == [1296, 204, 357, 862, 1, 217, 845, 1, 811, 188, 453, 73, 677]
    assert h.pus[0].dur == 1500
    pub = h.pauses[0]
    assert (pub.kind, pub.dur, len(pub.au_ids)) == ("PUB", 1219, 2)
    assert [(p.kind, p.dur) for p in h.pauses if p.kind == "KBI"][0] == ("KBI", 811)
    assert rows[8][1:3] == ["", "KBI"]
    assert [u.kb_ids for u in h.pus] == [(1,), (2,), (3, 4, 5)]


def test_hierarchy_json_round_trip(example_path):
    h = segment(parse_session(example_path), T)
    assert SegmentHierarchy.from_dict(h.to_dict()) == h


def test_invalid_session_rejected():
    s = Session("s", keys=(KeyEvent.insert(5, "a"), KeyEvent.insert(1, "b")))
    with pytest.raises(ValueError):
        segment(s, T)


def test_random_sessions_match_reference():
    rng = np.random.default_rng(2024)
    for i in range(200):
        s = random_session(rng, sid=f"r{i}")
        kbi = int(rng.integers(50, 400))
        t = ThresholdSet.from_values(kbi, kbi + int(rng.integers(1, 900)))
        assert implementation_tuples(segment(s, t)) == reference_segment(s, t.kbi_ms, t.pub_ms)


def check_invariants(s, h):
    lo, hi = h.span
    aus = h.aus
    assert aus[0].start == lo and aus[-1].end == hi
    assert all(a.end == b.start for a, b in zip(aus, aus[1:]))
    assert sum(a.dur for a in aus) == hi - lo
    clipped = sum(max(0, min(f.end, hi) - max(f.start, lo)) for f in s.fixes)
    assert sum(a.trt_s + a.trt_t for a in aus) == clipped
    assert sum(a.ins for a in aus) == s.n_insertions
    assert sum(a.dels for a in aus) == s.n_deletions
    for a in aus:
        assert a.trt_s + a.trt_t <= a.dur
        if a.au_type in (1, 2, 8):
            assert a.ins == a.dels == 0
        assert (a.au_type == 1) == (a.trt_s > 0 and a.trt_t == 0 and not a.is_typing)
        assert (a.au_type == 2) == (a.trt_t > 0 and a.trt_s == 0 and not a.is_typing)
        if a.au_type in (4, 8):
            assert a.trt_s == a.trt_t == 0
    # gaze flicker can leave a typing AU without keys; each key run still has some
    by_run = {}
    for a in aus:
        if a.is_typing:
            by_run[a.run] = by_run.get(a.run, 0) + a.ins + a.dels
    assert all(n >= 1 for n in by_run.values())
    member = h.membership()
    assert sorted(member) == [a.id for a in aus]
    for p in h.pauses:
        assert (p.kind == "PUB") == (p.dur >= h.thresholds.pub_ms)
        assert p.dur >= h.thresholds.kbi_ms
        assert all(h.au(a).au_type in (1, 2, 8) for a in p.au_ids)
    for seq in (aus, h.kbs, h.pauses, h.pus):
        assert [x.id for x in seq] == list(range(1, len(seq) + 1))
        assert all(x.start < y.start for x, y in zip(seq, seq[1:]))
    for k in h.kbs:
        times = [e.time for e in s.keys if k.start <= e.time < k.end]
        # a 1 ms keystroke leaves a pause of IKI - 1 before the next key
        assert times and all(b - a - 1 < h.thresholds.kbi_ms for a, b in zip(times, times[1:]))
    for u in h.pus:
        kb_set = set(u.kb_ids)
        between = [p for p in h.pauses if u.start < p.start < u.end]
        assert all(p.kind == "KBI" for p in between)
        assert {p.id for p in between} == set(u.internal_kbi_ids)
        assert kb_set
    for a, b in zip(h.pus, h.pus[1:]):
        gap = [p for p in h.pauses if a.end <= p.start < b.start]
        assert [p.kind for p in gap] == ["PUB"]


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(20, 400), st.integers(1, 1500))
def test_hierarchy_invariants(seed, kbi, extra):
    rng = np.random.default_rng(seed)
    s = random_session(rng, sid="p", nan_coords=0.1)
    h = segment(s, ThresholdSet.from_values(kbi, kbi + extra))
    check_invariants(s, h)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_segment_after_reparse_is_identical(seed):
    s = random_session(np.random.default_rng(seed))
    t = ThresholdSet.from_values(200, 700)
    assert segment(parse_session_text(serialize_session(s)), t) == segment(s, t)
