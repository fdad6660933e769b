"""Session data model and the tab-separated event file format.

A session file is UTF-8, tab-separated, with optional ``# key=value``
metadata lines followed by a header row::

    # id=P08_T5
    # translator=P08
    # source_lang=en
    # target_lang=es
    time	kind	action	glyph	alnum	dur	win	x	y
    53843	key	insert	L	1
    55139	fix					204	TT	812	344

Key rows leave ``dur win x y`` empty, fixation rows leave
``action glyph alnum`` empty. For fixations ``time`` is the start.
Glyphs escape backslash, tab, newline and carriage return as ``\\\\``,
``\\t``, ``\\n`` and ``\\r``. Empty ``x``/``y`` mark missing coordinates.
"""

from __future__ import annotations

import math
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

COLUMNS = ("time", "kind", "action", "glyph", "alnum", "dur", "win", "x", "y")
ACTIONS = ("insert", "delete")
WINDOWS = ("ST", "TT")
METADATA_KEYS = ("id", "translator", "source_lang", "target_lang")

# keys sort before fixations starting in the same ms
_KIND_ORDER = {"key": 0, "fix": 1}


class SessionFormatError(ValueError):
    """Raised when an event or alignment file cannot be parsed."""


def is_alnum_glyph(glyph: str) -> bool:
    """True for a Unicode letter or digit."""
    return len(glyph) == 1 and unicodedata.category(glyph)[0] in "LN"


@dataclass(frozen=True)
class KeyEvent:
    time: int
    action: str
    glyph: str
    is_alnum: bool

    @classmethod
    def insert(cls, time: int, glyph: str) -> "KeyEvent":
        return cls(int(time), "insert", glyph, is_alnum_glyph(glyph))

    @classmethod
    def delete(cls, time: int, glyph: str) -> "KeyEvent":
        # backspace is a non-alphanumeric keystroke whatever it removes
        return cls(int(time), "delete", glyph, False)

    @property
    def end(self) -> int:
        return self.time + 1


@dataclass(frozen=True)
class FixationEvent:
    start: int
    dur: int
    window: str
    x: float = math.nan
    y: float = math.nan

    @property
    def end(self) -> int:
        return self.start + self.dur

    @property
    def has_coordinates(self) -> bool:
        return not (math.isnan(self.x) or math.isnan(self.y))


@dataclass(frozen=True)
class Diagnostic:
    invariant: str
    index: int | None
    message: str

    def __str__(self) -> str:
        where = "" if self.index is None else f" [event {self.index}]"
        return f"{self.invariant}{where}: {self.message}"


@dataclass(frozen=True)
class Session:
    id: str
    keys: tuple[KeyEvent, ...] = ()
    fixes: tuple[FixationEvent, ...] = ()
    translator: str = ""
    source_lang: str = ""
    target_lang: str = ""
    alignment: tuple[tuple[tuple[int, int], tuple[int, int]], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "keys", tuple(self.keys))
        object.__setattr__(self, "fixes", tuple(self.fixes))
        if self.alignment is not None:
            object.__setattr__(self, "alignment", tuple(
                (tuple(st), tuple(tt)) for st, tt in self.alignment))

    @classmethod
    def from_events(cls, id: str, keys: Iterable[KeyEvent] = (),
                    fixes: Iterable[FixationEvent] = (), **meta) -> "Session":
        """Build a session with events put in canonical order."""
        keys = sorted(keys, key=lambda k: k.time)
        fixes = sorted(fixes, key=lambda f: f.start)
        return cls(id=id, keys=tuple(keys), fixes=tuple(fixes), **meta)

    @property
    def span(self) -> tuple[int, int]:
        """[min event time, max event end)."""
        starts = [k.time for k in self.keys[:1]] + [f.start for f in self.fixes[:1]]
        ends = [k.end for k in self.keys[-1:]] + [f.end for f in self.fixes]
        if not starts:
            return (0, 0)
        return (min(starts), max(ends))

    @property
    def n_insertions(self) -> int:
        return sum(1 for k in self.keys if k.action == "insert")

    @property
    def n_deletions(self) -> int:
        return sum(1 for k in self.keys if k.action == "delete")


def validate_session(s: Session) -> list[Diagnostic]:
    """Check the Session invariants; an empty list means the session is valid."""
    diags = []
    if not s.keys:
        diags.append(Diagnostic("keys-nonempty", None, "session has no keystrokes"))
    prev = None
    for i, k in enumerate(s.keys):
        if k.time < 0:
            diags.append(Diagnostic("time-nonnegative", i, f"key time {k.time} < 0"))
        if prev is not None and k.time < prev:
            diags.append(Diagnostic("keys-sorted", i,
                                    f"key time {k.time} precedes {prev}"))
        if k.action not in ACTIONS:
            diags.append(Diagnostic("key-action", i, f"unknown action {k.action!r}"))
        if len(unicodedata.normalize("NFC", k.glyph)) != 1:
            diags.append(Diagnostic("glyph-single-unit", i,
                                    f"glyph {k.glyph!r} is not one text unit"))
        prev = k.time
    prev_end = None
    prev_start = None
    for i, f in enumerate(s.fixes):
        if f.start < 0:
            diags.append(Diagnostic("time-nonnegative", i, f"fixation start {f.start} < 0"))
        if f.dur <= 0:
            diags.append(Diagnostic("fixation-duration", i, f"dur {f.dur} <= 0"))
        if f.window not in WINDOWS:
            diags.append(Diagnostic("fixation-window", i, f"unknown window {f.window!r}"))
        if math.isinf(f.x) or math.isinf(f.y):
            diags.append(Diagnostic("fixation-coordinates", i, "non-finite coordinate"))
        if prev_start is not None and f.start < prev_start:
            diags.append(Diagnostic("fixations-sorted", i,
                                    f"fixation start {f.start} precedes {prev_start}"))
        elif prev_end is not None and f.start < prev_end:
            diags.append(Diagnostic("fixations-disjoint", i,
                                    f"fixation [{f.start},{f.end}) overlaps previous "
                                    f"ending at {prev_end}"))
        prev_start = f.start
        prev_end = f.end if prev_end is None else max(prev_end, f.end)
    return diags


def check_valid(s: Session) -> Session:
    """Raise ValueError listing every diagnostic if ``s`` is invalid."""
    diags = validate_session(s)
    if diags:
        raise ValueError(f"session {s.id!r} is invalid:\n  "
                         + "\n  ".join(str(d) for d in diags))
    return s


# -- text format -------------------------------------------------------------

_ESCAPES = {"\\": "\\\\", "\t": "\\t", "\n": "\\n", "\r": "\\r"}
_UNESCAPES = {"\\": "\\", "t": "\t", "n": "\n", "r": "\r"}


def escape_glyph(g: str) -> str:
    return "".join(_ESCAPES.get(c, c) for c in g)


def unescape_glyph(g: str) -> str:
    out = []
    it = iter(g)
    for c in it:
        if c == "\\":
            nxt = next(it, None)
            if nxt not in _UNESCAPES:
                raise ValueError(f"bad escape in glyph {g!r}")
            out.append(_UNESCAPES[nxt])
        else:
            out.append(c)
    return "".join(out)


def format_number(v: float) -> str:
    if math.isnan(v):
        return ""
    if float(v).is_integer():
        return str(int(v))
    return repr(float(v))


def _parse_int(text: str, row: int, col: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise SessionFormatError(f"row {row}: column {col!r} must be an integer, "
                                 f"got {text!r}") from None


def _parse_coord(text: str, row: int, col: str) -> float:
    if text == "":
        return math.nan
    try:
        return float(text)
    except ValueError:
        raise SessionFormatError(f"row {row}: column {col!r} must be a number, "
                                 f"got {text!r}") from None


def parse_session_text(text: str, default_id: str = "session") -> Session:
    """Parse the contents of an event file. Row numbers in errors are 1-based."""
    meta = {}
    header = None
    rows = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        line = line.rstrip("\r")
        if header is None:
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, _, value = body.partition("=")
                    meta[key.strip()] = value.strip()
                continue
            if not line.strip():
                continue
            header = line.split("\t")
            missing = [c for c in COLUMNS if c not in header]
            if missing:
                raise SessionFormatError(
                    f"row {lineno}: missing required column(s) {', '.join(missing)}")
            continue
        if line == "":
            continue
        cells = line.split("\t")
        if len(cells) > len(header):
            raise SessionFormatError(f"row {lineno}: {len(cells)} cells for "
                                     f"{len(header)} columns")
        cells += [""] * (len(header) - len(cells))
        rows.append((lineno, dict(zip(header, cells))))
    if header is None:
        raise SessionFormatError("row 1: missing header row")

    keys = []
    fixes = []
    for lineno, r in rows:
        kind = r["kind"]
        time = _parse_int(r["time"], lineno, "time")
        if time < 0:
            raise SessionFormatError(f"row {lineno}: negative time {time}")
        if kind == "key":
            if r["action"] not in ACTIONS:
                raise SessionFormatError(f"row {lineno}: unknown action tag {r['action']!r}")
            try:
                glyph = unescape_glyph(r["glyph"])
            except ValueError as e:
                raise SessionFormatError(f"row {lineno}: {e}") from None
            if len(unicodedata.normalize("NFC", glyph)) != 1:
                raise SessionFormatError(f"row {lineno}: glyph {r['glyph']!r} is not a "
                                         "single text unit (IME composition unsupported)")
            glyph = unicodedata.normalize("NFC", glyph)
            if r["alnum"] not in ("0", "1"):
                raise SessionFormatError(f"row {lineno}: alnum must be 0 or 1, "
                                         f"got {r['alnum']!r}")
            keys.append((time, len(keys), KeyEvent(time, r["action"], glyph,
                                                   r["alnum"] == "1")))
        elif kind == "fix":
            if r["win"] not in WINDOWS:
                raise SessionFormatError(f"row {lineno}: unknown window tag {r['win']!r}")
            dur = _parse_int(r["dur"], lineno, "dur")
            if dur <= 0:
                raise SessionFormatError(f"row {lineno}: fixation dur must be > 0")
            x = _parse_coord(r["x"], lineno, "x")
            y = _parse_coord(r["y"], lineno, "y")
            fixes.append((time, len(fixes), FixationEvent(time, dur, r["win"], x, y)))
        else:
            raise SessionFormatError(f"row {lineno}: unknown kind tag {kind!r}")
    if not keys:
        raise SessionFormatError("empty key stream: session has no keystrokes")
    keys.sort(key=lambda t: t[:2])
    fixes.sort(key=lambda t: t[:2])
    return Session(
        id=meta.get("id") or default_id,
        keys=tuple(k for _, _, k in keys),
        fixes=tuple(f for _, _, f in fixes),
        translator=meta.get("translator", ""),
        source_lang=meta.get("source_lang", ""),
        target_lang=meta.get("target_lang", ""),
    )


def parse_alignment_text(text: str):
    """Parse ``st_tokens<TAB>tt_tokens`` rows of inclusive index ranges (``3`` or ``3-5``)."""
    pairs = []
    seen_header = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        cells = line.split("\t")
        if not seen_header:
            seen_header = True
            if cells[:2] == ["st_tokens", "tt_tokens"]:
                continue
        if len(cells) != 2:
            raise SessionFormatError(f"alignment row {lineno}: expected 2 cells")
        try:
            pairs.append((_parse_range(cells[0]), _parse_range(cells[1])))
        except ValueError:
            raise SessionFormatError(f"alignment row {lineno}: bad range in {line!r}") from None
    return tuple(pairs)


def _parse_range(text: str) -> tuple[int, int]:
    lo, sep, hi = text.strip().partition("-")
    lo = int(lo)
    hi = int(hi) if sep else lo
    if hi < lo or lo < 0:
        raise ValueError(text)
    return (lo, hi)


def parse_session(path, alignment_path=None) -> Session:
    """Read a session event file (and an optional alignment file).

    If ``alignment_path`` is None, a sibling ``<stem>.align.tsv`` is used when
    it exists.
    """
    path = Path(path)
    s = parse_session_text(path.read_text(encoding="utf-8"), default_id=path.stem)
    if alignment_path is None:
        sibling = path.with_name(path.stem + ".align.tsv")
        alignment_path = sibling if sibling.exists() else None
    if alignment_path is not None:
        al = parse_alignment_text(Path(alignment_path).read_text(encoding="utf-8"))
        s = Session(s.id, s.keys, s.fixes, s.translator, s.source_lang,
                    s.target_lang, al)
    return s


def _rows(s: Session):
    events = [(k.time, 0, i, k) for i, k in enumerate(s.keys)]
    events += [(f.start, 1, i, f) for i, f in enumerate(s.fixes)]
    events.sort(key=lambda e: e[:3])
    for _, kind, _, ev in events:
        if kind == 0:
            yield (str(ev.time), "key", ev.action, escape_glyph(ev.glyph),
                   "1" if ev.is_alnum else "0", "", "", "", "")
        else:
            yield (str(ev.start), "fix", "", "", "", str(ev.dur), ev.window,
                   format_number(ev.x), format_number(ev.y))


def serialize_session(s: Session) -> str:
    """Canonical text form: fixed metadata lines, fixed column order, sorted rows."""
    lines = [f"# {key}={getattr(s, key)}" for key in METADATA_KEYS]
    lines.append("\t".join(COLUMNS))
    lines.extend("\t".join(row) for row in _rows(s))
    return "\n".join(lines) + "\n"


def serialize_alignment(alignment: Sequence) -> str:
    def fmt(r):
        return str(r[0]) if r[0] == r[1] else f"{r[0]}-{r[1]}"
    lines = ["st_tokens\ttt_tokens"]
    lines += [f"{fmt(st)}\t{fmt(tt)}" for st, tt in alignment]
    return "\n".join(lines) + "\n"


def write_session(s: Session, path) -> None:
    Path(path).write_text(serialize_session(s), encoding="utf-8")
