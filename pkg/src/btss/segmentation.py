"""Activity units, keystroke bursts and production units.

The session timeline is cut into activity units (AUs) wherever typing or
the gaze window changes. Keystrokes closer together than the KBI threshold
form key runs, inside which typing counts as continuously active. Runs of
non-typing AUs shorter than KBI are absorbed into the surrounding keystroke
burst; longer ones become KBI or PUB pauses, and PUBs delimit production
units.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

from .session import FixationEvent, KeyEvent, Session, check_valid
from .thresholds import ThresholdSet, derive_thresholds

TYPING_TYPES = (4, 5, 6)
PAUSE_TYPES = (1, 2, 8)
AU_TYPES = (1, 2, 4, 5, 6, 8)

_TYPE_FOR = {
    (True, None): 4, (True, "ST"): 5, (True, "TT"): 6,
    (False, None): 8, (False, "ST"): 1, (False, "TT"): 2,
}


class KeyRun(NamedTuple):
    start: int
    end: int
    first_key: int
    last_key: int


@dataclass(frozen=True)
class FixationPart:
    fix_index: int
    start: int
    dur: int
    window: str
    x: float
    y: float

    @property
    def end(self) -> int:
        return self.start + self.dur


@dataclass(frozen=True)
class ActivityUnit:
    id: int
    au_type: int
    start: int
    dur: int
    ins: int = 0
    dels: int = 0
    tgnbr: int = 0
    fix_s: int = 0
    trt_s: int = 0
    fix_t: int = 0
    trt_t: int = 0
    edit: str = ""
    run: int | None = None
    parts: tuple[FixationPart, ...] = ()

    @property
    def end(self) -> int:
        return self.start + self.dur

    @property
    def is_typing(self) -> bool:
        return self.au_type in TYPING_TYPES

    @property
    def gaze_time(self) -> int:
        return self.trt_s + self.trt_t


@dataclass(frozen=True)
class KeystrokeBurst:
    id: int
    start: int
    dur: int
    kind: str  # Ins | Del | Mixed
    au_ids: tuple[int, ...]

    @property
    def end(self) -> int:
        return self.start + self.dur


@dataclass(frozen=True)
class PauseSpan:
    id: int
    start: int
    dur: int
    kind: str  # KBI | PUB
    au_ids: tuple[int, ...]

    @property
    def end(self) -> int:
        return self.start + self.dur


@dataclass(frozen=True)
class ProductionUnit:
    id: int
    start: int
    dur: int
    kb_ids: tuple[int, ...]
    internal_kbi_ids: tuple[int, ...]

    @property
    def end(self) -> int:
        return self.start + self.dur


@dataclass(frozen=True)
class SegmentHierarchy:
    session_id: str
    thresholds: ThresholdSet
    aus: tuple[ActivityUnit, ...]
    kbs: tuple[KeystrokeBurst, ...]
    pauses: tuple[PauseSpan, ...]
    pus: tuple[ProductionUnit, ...]
    span: tuple[int, int] = (0, 0)
    _index: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        index = {
            "au": {a.id: a for a in self.aus},
            "kb": {k.id: k for k in self.kbs},
            "pause": {p.id: p for p in self.pauses},
        }
        object.__setattr__(self, "_index", index)

    def au(self, au_id: int) -> ActivityUnit:
        return self._index["au"][au_id]

    def kb(self, kb_id: int) -> KeystrokeBurst:
        return self._index["kb"][kb_id]

    def pause(self, pause_id: int) -> PauseSpan:
        return self._index["pause"][pause_id]

    def pu_au_ids(self, pu: ProductionUnit) -> list[int]:
        ids = [a for k in pu.kb_ids for a in self.kb(k).au_ids]
        ids += [a for p in pu.internal_kbi_ids for a in self.pause(p).au_ids]
        return sorted(ids)

    def top_level_units(self):
        """PUs and the pauses outside every PU, in time order.

        Yields ``("PU", pu)`` or ``("pause", pause)``; the units tile the span.
        """
        inside = {p for pu in self.pus for p in pu.internal_kbi_ids}
        units = [(pu.start, "PU", pu) for pu in self.pus]
        units += [(p.start, "pause", p) for p in self.pauses if p.id not in inside]
        units.sort(key=lambda u: u[0])
        return [(kind, u) for _, kind, u in units]

    def membership(self) -> dict[int, tuple[str, int]]:
        """AU id -> ("KB", kb id) or ("pause", pause id)."""
        out = {}
        for k in self.kbs:
            for a in k.au_ids:
                out[a] = ("KB", k.id)
        for p in self.pauses:
            for a in p.au_ids:
                out[a] = ("pause", p.id)
        return out

    def to_dict(self) -> dict:
        def au_dict(a):
            d = asdict(a)
            d["del"] = d.pop("dels")
            d["parts"] = [
                {**p, "x": _json_float(p["x"]), "y": _json_float(p["y"])}
                for p in d["parts"]]
            return d
        return {
            "session": self.session_id,
            "span": list(self.span),
            "thresholds": self.thresholds.to_dict(),
            "aus": [au_dict(a) for a in self.aus],
            "kbs": [{**asdict(k), "au_ids": list(k.au_ids)} for k in self.kbs],
            "pauses": [{**asdict(p), "au_ids": list(p.au_ids)} for p in self.pauses],
            "pus": [{**asdict(p), "kb_ids": list(p.kb_ids),
                     "internal_kbi_ids": list(p.internal_kbi_ids)} for p in self.pus],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SegmentHierarchy":
        aus = []
        for a in d["aus"]:
            a = dict(a)
            a["dels"] = a.pop("del")
            a["parts"] = tuple(FixationPart(**{**p, "x": _from_json_float(p["x"]),
                                                  "y": _from_json_float(p["y"])})
                               for p in a["parts"])
            aus.append(ActivityUnit(**a))
        return cls(
            session_id=d["session"],
            thresholds=ThresholdSet.from_dict(d["thresholds"]),
            aus=tuple(aus),
            kbs=tuple(KeystrokeBurst(**{**k, "au_ids": tuple(k["au_ids"])})
                      for k in d["kbs"]),
            pauses=tuple(PauseSpan(**{**p, "au_ids": tuple(p["au_ids"])})
                         for p in d["pauses"]),
            pus=tuple(ProductionUnit(**{**p, "kb_ids": tuple(p["kb_ids"]),
                                        "internal_kbi_ids": tuple(p["internal_kbi_ids"])})
                      for p in d["pus"]),
            span=tuple(d["span"]),
        )


def _json_float(v):
    return None if v != v else v


def _from_json_float(v):
    return float("nan") if v is None else v


def build_keystroke_runs(keys: Sequence[KeyEvent], kbi_ms: float) -> list[KeyRun]:
    """Maximal key runs whose successive IKIs are all below ``kbi_ms``."""
    runs = []
    if not keys:
        return runs
    first = 0
    for i in range(1, len(keys)):
        if keys[i].time - keys[i - 1].time >= kbi_ms:
            runs.append(KeyRun(keys[first].time, keys[i - 1].time + 1, first, i - 1))
            first = i
    runs.append(KeyRun(keys[first].time, keys[-1].time + 1, first, len(keys) - 1))
    return runs


def _pieces(span, runs, fixes):
    """Elementary (start, end, type, run index) intervals, merged when equal."""
    lo, hi = span
    bounds = {lo, hi}
    for r in runs:
        bounds.update((r.start, r.end))
    for f in fixes:
        bounds.update((max(lo, f.start), min(hi, f.end)))
    bounds = sorted(b for b in bounds if lo <= b <= hi)

    pieces = []
    ri = fi = 0
    for a, b in zip(bounds, bounds[1:]):
        while ri < len(runs) and runs[ri].end <= a:
            ri += 1
        run = ri if ri < len(runs) and runs[ri].start <= a else None
        while fi < len(fixes) and fixes[fi].end <= a:
            fi += 1
        win = fixes[fi].window if fi < len(fixes) and fixes[fi].start <= a else None
        au_type = _TYPE_FOR[(run is not None, win)]
        if pieces and pieces[-1][1] == a and pieces[-1][2] == au_type and pieces[-1][3] == run:
            pieces[-1][1] = b
        else:
            pieces.append([a, b, au_type, run])
    return pieces


def build_activity_units(s: Session, runs: Sequence[KeyRun]) -> list[ActivityUnit]:
    """Tile the session span with typed AUs and tally keys and fixation parts.

    Fixations crossing AU boundaries are split; each AU receives the part
    that overlaps it, so total reading time is conserved.
    """
    pieces = _pieces(s.span, runs, s.fixes)
    starts = [p[0] for p in pieces]
    n = len(pieces)
    ins = [0] * n
    dels = [0] * n
    tg = [0] * n
    edit = [[] for _ in range(n)]
    parts = [[] for _ in range(n)]

    buffer = []  # alnum flags of the reconstructed text, cursor at the end
    last_idx = None
    for k in s.keys:
        idx = bisect_right(starts, k.time) - 1
        last_idx = idx
        if k.action == "insert":
            ins[idx] += 1
            edit[idx].append(k.glyph)
            if not k.is_alnum and buffer and buffer[-1]:
                tg[idx] += 1
            buffer.append(k.is_alnum)
        else:
            dels[idx] += 1
            edit[idx].append(f"[{k.glyph}]")
            if buffer:
                buffer.pop()
    if buffer and buffer[-1] and last_idx is not None:
        tg[last_idx] += 1

    for fi, f in enumerate(s.fixes):
        idx = max(bisect_right(starts, f.start) - 1, 0)
        while idx < n and pieces[idx][0] < f.end:
            a = max(pieces[idx][0], f.start)
            b = min(pieces[idx][1], f.end)
            if b > a:
                parts[idx].append(FixationPart(fi, a, b - a, f.window, f.x, f.y))
            idx += 1

    aus = []
    for i, (a, b, au_type, run) in enumerate(pieces):
        ps = tuple(parts[i])
        st = [p for p in ps if p.window == "ST"]
        tt = [p for p in ps if p.window == "TT"]
        aus.append(ActivityUnit(
            id=i + 1, au_type=au_type, start=a, dur=b - a, ins=ins[i], dels=dels[i],
            tgnbr=tg[i], fix_s=len(st), trt_s=sum(p.dur for p in st),
            fix_t=len(tt), trt_t=sum(p.dur for p in tt), edit="".join(edit[i]),
            run=run, parts=ps))
    return aus


def _kb_kind(members: Sequence[ActivityUnit]) -> str:
    n_ins = sum(a.ins for a in members)
    n_del = sum(a.dels for a in members)
    if n_del == 0:
        return "Ins"
    if n_ins == 0:
        return "Del"
    return "Mixed"


def cluster_pauses_and_kbs(aus: Sequence[ActivityUnit], thresholds: ThresholdSet):
    """Group AUs into keystroke bursts and KBI/PUB pauses.

    Returns ``(kbs, pauses)``. Non-typing stretches shorter than KBI are
    absorbed into the adjacent burst (merging the bursts on both sides);
    leading and trailing stretches follow the same duration rules.
    """
    kbi, pub = thresholds.kbi_ms, thresholds.pub_ms
    blocks = []
    for a in aus:
        typing = a.run is not None
        if blocks and blocks[-1][0] == typing:
            blocks[-1][1].append(a)
        else:
            blocks.append((typing, [a]))

    kbs, pauses = [], []
    current = None
    carry = []

    def close():
        kbs.append(KeystrokeBurst(
            id=len(kbs) + 1, start=current[0].start,
            dur=current[-1].end - current[0].start, kind=_kb_kind(current),
            au_ids=tuple(a.id for a in current)))

    for typing, members in blocks:
        if typing:
            if current is None:
                current = carry + members
                carry = []
            else:
                current.extend(members)
            continue
        dur = members[-1].end - members[0].start
        if dur < kbi:
            if current is None:
                carry = list(members)
            else:
                current.extend(members)
            continue
        if current is not None:
            close()
            current = None
        pauses.append(PauseSpan(
            id=len(pauses) + 1, start=members[0].start, dur=dur,
            kind="PUB" if dur >= pub else "KBI",
            au_ids=tuple(a.id for a in members)))
    if current is not None:
        close()
    return kbs, pauses


def build_production_units(kbs: Sequence[KeystrokeBurst],
                           pauses: Sequence[PauseSpan]) -> list[ProductionUnit]:
    """Split the burst sequence at PUB pauses; KBIs between bursts stay inside."""
    items = sorted([(k.start, 0, k) for k in kbs] + [(p.start, 1, p) for p in pauses],
                   key=lambda t: (t[0], t[1]))
    pus = []
    current, kbis, pending = None, [], []

    def close():
        pus.append(ProductionUnit(
            id=len(pus) + 1, start=current[0].start,
            dur=current[-1].end - current[0].start,
            kb_ids=tuple(k.id for k in current), internal_kbi_ids=tuple(kbis)))

    for _, is_pause, item in items:
        if not is_pause:
            if current is None:
                current, kbis = [item], []
            else:
                current.append(item)
                kbis.extend(pending)
            pending = []
        elif current is None:
            continue
        elif item.kind == "PUB":
            close()
            current, pending = None, []
        else:
            pending.append(item.id)
    if current is not None:
        close()
    return pus


def segment(s: Session, thresholds: ThresholdSet | None = None,
            include_deletions: bool = True) -> SegmentHierarchy:
    """Build the AU/KB/PU hierarchy of a session.

    Thresholds are derived from the session's own IKIs unless given.
    Raises ValueError for an invalid session and ThresholdError when the
    thresholds cannot be derived.
    """
    check_valid(s)
    if thresholds is None:
        thresholds = derive_thresholds(s, include_deletions)
    runs = build_keystroke_runs(s.keys, thresholds.kbi_ms)
    aus = build_activity_units(s, runs)
    kbs, pauses = cluster_pauses_and_kbs(aus, thresholds)
    pus = build_production_units(kbs, pauses)
    return SegmentHierarchy(s.id, thresholds, tuple(aus), tuple(kbs), tuple(pauses),
                            tuple(pus), s.span)


AU_TABLE_COLUMNS = ("Id", "PU", "KB", "AU", "Time", "Dur", "Ins", "Del", "TGnbr",
                    "FixS", "TrtS", "FixT", "TrtT", "Edit")


def au_table(h: SegmentHierarchy, gaze_durations: dict | None = None):
    """Per-AU rows in the layout of the worked-example table.

    ``PU`` holds the PU number for burst AUs or ``PUB n``/``KBI`` for pause AUs;
    ``KB`` holds the burst kind on the first AU of each burst. With
    ``gaze_durations`` (AU id -> (L, R, S)) the rows gain Dur_L/Dur_R/Dur_S.
    """
    columns = AU_TABLE_COLUMNS + (("Dur_L", "Dur_R", "Dur_S") if gaze_durations is not None else ())
    member = h.membership()
    pu_of_kb = {k: pu.id for pu in h.pus for k in pu.kb_ids}
    pub_no = {p.id: i + 1 for i, p in enumerate(x for x in h.pauses if x.kind == "PUB")}
    rows = []
    for a in h.aus:
        kind, uid = member[a.id]
        if kind == "KB":
            kb = h.kb(uid)
            pu = pu_of_kb.get(uid, "")
            kb_col = kb.kind if kb.au_ids[0] == a.id else ""
        else:
            p = h.pause(uid)
            pu = f"PUB {pub_no[uid]}" if p.kind == "PUB" else ""
            kb_col = "KBI" if p.kind == "KBI" else ""
        row = [a.id, pu, kb_col, a.au_type, a.start, a.dur, a.ins, a.dels, a.tgnbr,
               a.fix_s, a.trt_s, a.fix_t, a.trt_t, a.edit if a.edit else "---"]
        if gaze_durations is not None:
            row += list(gaze_durations.get(a.id, (0, 0, 0)))
        rows.append(row)
    return columns, rows
