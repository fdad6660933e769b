import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from btss.session import (FixationEvent, KeyEvent, Session, SessionFormatError,
                          check_valid, is_alnum_glyph, parse_alignment_text, parse_session,
                          parse_session_text, serialize_alignment, serialize_session,
                          validate_session)
from helpers import random_session

HEADER = "time\tkind\taction\tglyph\talnum\tdur\twin\tx\ty\n"


def test_parse_three_rows():
    text = HEADER + ("0\tkey\tinsert\ta\t1\t\t\t\t\n"
                     "10\tfix\t\t\t\t50\tST\t100\t200\n"
                     "100\tkey\tinsert\tb\t1\t\t\t\t\n")
    s = parse_session_text(text)
    assert len(s.keys) == 2 and len(s.fixes) == 1
    assert s.fixes[0] == FixationEvent(10, 50, "ST", 100.0, 200.0)
    assert s.keys[1] == KeyEvent.insert(100, "b")


def test_unknown_window_tag_names_row_and_tag():
    text = HEADER + ("0\tkey\tinsert\ta\t1\t\t\t\t\n"
                     "10\tfix\t\t\t\t50\tXT\t100\t200\n")
    with pytest.raises(SessionFormatError, match=r"row 3.*'XT'"):
        parse_session_text(text)


@pytest.mark.parametrize("row, msg", [
    ("0\tkey\ttype\ta\t1\t\t\t\t", "action"),
    ("0\tbogus\t\t\t\t\t\t\t", "kind"),
    ("x\tkey\tinsert\ta\t1\t\t\t\t", "integer"),
    ("0\tkey\tinsert\tab\t1\t\t\t\t", "single text unit"),
    ("0\tkey\tinsert\ta\t2\t\t\t\t", "alnum"),
    ("0\tfix\t\t\t\t0\tST\t1\t1", "dur"),
])
def test_bad_rows(row, msg):
    with pytest.raises(SessionFormatError, match=msg):
        parse_session_text(HEADER + row + "\n")


def test_empty_key_stream_rejected():
    with pytest.raises(SessionFormatError, match="no keystrokes"):
        parse_session_text(HEADER + "10\tfix\t\t\t\t50\tST\t1\t1\n")


def test_missing_header_column():
    with pytest.raises(SessionFormatError, match="missing required column"):
        parse_session_text("time\tkind\n0\tkey\n")


def test_missing_coordinates_parse_as_nan():
    s = parse_session_text(HEADER + "0\tkey\tinsert\ta\t1\t\t\t\t\n"
                           "5\tfix\t\t\t\t50\tTT\t\t\n")
    assert math.isnan(s.fixes[0].x) and not s.fixes[0].has_coordinates


def test_same_ms_key_before_fixation():
    text = HEADER + ("10\tfix\t\t\t\t50\tST\t1\t1\n"
                     "10\tkey\tinsert\ta\t1\t\t\t\t\n")
    out = serialize_session(parse_session_text(text))
    rows = out.splitlines()[5:]
    assert rows[0].split("\t")[1] == "key" and rows[1].split("\t")[1] == "fix"


def test_overlapping_fixations_one_diagnostic():
    s = Session.from_events("s", [KeyEvent.insert(0, "a")],
                            [FixationEvent(0, 100, "ST", 1, 1), FixationEvent(50, 70, "ST", 1, 1)])
    diags = validate_session(s)
    assert len(diags) == 1 and diags[0].invariant == "fixations-disjoint"


def test_zero_keystrokes_one_diagnostic():
    diags = validate_session(Session("s"))
    assert len(diags) == 1 and diags[0].invariant == "keys-nonempty"


def test_well_formed_session_valid():
    s = random_session(np.random.default_rng(0))
    assert validate_session(s) == []
    assert check_valid(s) is s


def test_validation_is_pure():
    s = Session("s", keys=(KeyEvent.insert(5, "a"), KeyEvent.insert(1, "b")))
    assert validate_session(s) == validate_session(s)
    with pytest.raises(ValueError, match="keys-sorted"):
        check_valid(s)


def test_infinite_coordinate_flagged():
    s = Session.from_events("s", [KeyEvent.insert(0, "a")],
                            [FixationEvent(0, 10, "ST", math.inf, 1)])
    assert [d.invariant for d in validate_session(s)] == ["fixation-coordinates"]


def test_alnum_is_unicode_letter_or_digit():
    assert is_alnum_glyph("í") and is_alnum_glyph("7") and is_alnum_glyph("ß")
    assert not is_alnum_glyph(" ") and not is_alnum_glyph(",") and not is_alnum_glyph("\n")


def test_worked_example_fixture_round_trip(example_path):
    text = example_path.read_text(encoding="utf-8")
    s = parse_session(example_path)
    assert s.id == "BML12_P08_T5_snippet" and s.translator == "P08"
    assert serialize_session(s) == text


def test_alignment_round_trip():
    al = parse_alignment_text("st_tokens\ttt_tokens\n0\t0-1\n2-3\t4\n")
    assert al == (((0, 0), (0, 1)), ((2, 3), (4, 4)))
    assert parse_alignment_text(serialize_alignment(al)) == al


def test_sibling_alignment_file_picked_up(tmp_path, example_path):
    p = tmp_path / "x.tsv"
    p.write_text(example_path.read_text(encoding="utf-8"), encoding="utf-8")
    (tmp_path / "x.align.tsv").write_text("st_tokens\ttt_tokens\n0\t0\n", encoding="utf-8")
    assert parse_session(p).alignment == (((0, 0), (0, 0)),)


glyphs = st.sampled_from(list("ab1 ,\t\n\\é"))


@st.composite
def sessions(draw):
    n = draw(st.integers(1, 15))
    times = sorted(draw(st.lists(st.integers(0, 5000), min_size=n, max_size=n)))
    keys = [KeyEvent.insert(t, draw(glyphs)) if draw(st.booleans())
            else KeyEvent.delete(t, draw(glyphs)) for t in times]
    fixes = []
    t = draw(st.integers(0, 100))
    for _ in range(draw(st.integers(0, 8))):
        dur = draw(st.integers(1, 300))
        x = draw(st.one_of(st.just(math.nan), st.floats(-1e4, 1e4, allow_nan=False)))
        fixes.append(FixationEvent(t, dur, draw(st.sampled_from(["ST", "TT"])), x,
                                   draw(st.floats(-1e4, 1e4, allow_nan=False))))
        t += dur + draw(st.integers(0, 100))
    return Session.from_events("h", keys, fixes, translator="T")


@settings(max_examples=200, deadline=None)
@given(sessions())
def test_parse_serialize_identity(s):
    text = serialize_session(s)
    back = parse_session_text(text)
    assert serialize_session(back) == text
    assert back.keys == s.keys
    assert len(back.fixes) == len(s.fixes)
