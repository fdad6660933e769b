"""Progression-graph export: structured drawing data plus a static SVG."""

from __future__ import annotations

import json
from typing import Sequence
from xml.sax.saxutils import escape

from .segmentation import SegmentHierarchy
from .session import Session
from .states import HofSpan

AU_COLORS = {
    1: "#1f4fd8",  # blue, ST reading
    2: "#9be39b",  # light green, TT reading
    4: "#f2d22e",  # yellow, typing
    5: "#d62728",  # red, typing + ST gaze
    6: "#1a7a1a",  # dark green, typing + TT gaze
    8: "#000000",  # black, no data
}
HOF_COLORS = {"H": "#e07b39", "O": "#5b8def", "F": "#6abf69"}


def _clip(lo, hi, start, end):
    a, b = max(lo, start), min(hi, end)
    return (a, b) if b > a else None


def export_progression(h: SegmentHierarchy, window: tuple[int, int] | None = None,
                       session: Session | None = None,
                       spans: Sequence[HofSpan] | None = None) -> dict:
    """Drawing data for the part of the session inside ``window``.

    Intervals overlapping the window are clipped to it. An empty window
    (end <= start) yields a document with no marks.
    """
    lo, hi = window if window is not None else h.span
    doc = {"session": h.session_id, "window": [lo, hi], "aus": [], "kbs": [],
           "pus": [], "pauses": [], "fixations": [], "keys": [], "hof": []}
    if hi <= lo:
        return doc
    for a in h.aus:
        c = _clip(lo, hi, a.start, a.end)
        if c:
            doc["aus"].append({"id": a.id, "type": a.au_type, "start": c[0], "end": c[1],
                               "color": AU_COLORS[a.au_type]})
        for p in a.parts:
            c = _clip(lo, hi, p.start, p.end)
            if c:
                doc["fixations"].append({"au": a.id, "fix": p.fix_index, "window": p.window,
                                         "start": c[0], "end": c[1]})
    for k in h.kbs:
        c = _clip(lo, hi, k.start, k.end)
        if c:
            doc["kbs"].append({"id": k.id, "kind": k.kind, "start": c[0], "end": c[1]})
    for p in h.pus:
        c = _clip(lo, hi, p.start, p.end)
        if c:
            doc["pus"].append({"id": p.id, "start": c[0], "end": c[1]})
    for p in h.pauses:
        c = _clip(lo, hi, p.start, p.end)
        if c:
            doc["pauses"].append({"id": p.id, "kind": p.kind, "start": c[0], "end": c[1]})
    if session is not None:
        for k in session.keys:
            if lo <= k.time < hi:
                doc["keys"].append({"time": k.time, "glyph": k.glyph, "action": k.action})
    for s in spans or ():
        c = _clip(lo, hi, s.start, s.end)
        if c:
            doc["hof"].append({"state": s.state, "start": c[0], "end": c[1]})
    return doc


def document_json(doc: dict) -> str:
    return json.dumps(doc, ensure_ascii=False, sort_keys=True, indent=1) + "\n"


def render_svg(doc: dict, width: int = 1200, height: int = 220) -> str:
    """Deterministic SVG for an exported document."""
    lo, hi = doc["window"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">']
    if hi <= lo:
        out.append("</svg>")
        return "\n".join(out) + "\n"
    scale = (width - 20) / (hi - lo)

    def x(t):
        return f"{10 + (t - lo) * scale:.2f}"

    def w(a, b):
        return f"{(b - a) * scale:.2f}"

    def rect(a, b, y, hgt, fill, extra=""):
        out.append(f'<rect x="{x(a)}" y="{y}" width="{w(a, b)}" height="{hgt}" '
                   f'fill="{fill}"{extra}/>')

    for p in doc["pus"]:
        rect(p["start"], p["end"], 10, 14, "#9e9e9e", ' fill-opacity="0.6"')
    for k in doc["kbs"]:
        rect(k["start"], k["end"], 28, 10, "#555555")
    for p in doc["pauses"]:
        rect(p["start"], p["end"], 28, 10, "#ffffff",
             f' stroke="#888888" data-kind="{p["kind"]}"')
    for s in doc["hof"]:
        rect(s["start"], s["end"], 42, 8, HOF_COLORS.get(s["state"], "#cccccc"))
    for f in doc["fixations"]:
        y = 60 if f["window"] == "ST" else 100
        rect(f["start"], f["end"], y, 30, "#1f4fd8" if f["window"] == "ST" else "#2ca02c",
             ' fill-opacity="0.5"')
    for k in doc["keys"]:
        color = "#000000" if k["action"] == "insert" else "#d62728"
        out.append(f'<text x="{x(k["time"])}" y="150" font-size="11" fill="{color}">'
                   f'{escape(k["glyph"])}</text>')
    for a in doc["aus"]:
        rect(a["start"], a["end"], height - 40, 20, a["color"])
        out.append(f'<text x="{x(a["start"])}" y="{height - 6}" font-size="9">{a["id"]}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
