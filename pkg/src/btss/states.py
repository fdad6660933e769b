"""Hesitation / Orientation / Flow states and translation phases.

HOF labels are assigned by rules to whole production units and to the
pauses lying between them, so a state never cuts through a PU.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from sklearn.base import BaseEstimator

from .gaze import LINEAR, REFIX, GazeRun
from .segmentation import SegmentHierarchy
from .session import Session

HOF_STATES = ("H", "O", "F")
PHASES = ("Orientation", "Drafting", "Revision")


@dataclass(frozen=True)
class HofRules:
    theta_o: float = 0.6  # linear-ST share of gaze time for Orientation
    theta_h: float = 0.5  # re-fixation share of gaze time for Hesitation
    theta_p: float = 2.0  # PUB length, in units of the PUB threshold, for Hesitation


@dataclass(frozen=True)
class HofSpan:
    state: str
    start: int
    dur: int
    pu_ids: tuple[int, ...]
    pause_ids: tuple[int, ...]

    @property
    def end(self) -> int:
        return self.start + self.dur


@dataclass(frozen=True)
class Phase:
    kind: str
    start: int
    end: int

    @property
    def dur(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class UnitFeatures:
    kind: str
    unit_id: int
    start: int
    dur: int
    keystrokes: int
    deletions: int
    gaze: int
    linear_st: int
    refix: int
    pause_kind: str | None


def unit_features(h: SegmentHierarchy, runs: Sequence[GazeRun]):
    """Per top-level unit tallies used by the rules, in time order."""
    by_au = {}
    for r in runs:
        by_au.setdefault(r.au_id, []).append(r)
    out = []
    for kind, u in h.top_level_units():
        au_ids = h.pu_au_ids(u) if kind == "PU" else list(u.au_ids)
        aus = [h.au(a) for a in au_ids]
        rr = [r for a in au_ids for r in by_au.get(a, ())]
        out.append(UnitFeatures(
            kind=kind, unit_id=u.id, start=u.start, dur=u.dur,
            keystrokes=sum(a.ins + a.dels for a in aus),
            deletions=sum(a.dels for a in aus),
            gaze=sum(a.gaze_time for a in aus),
            linear_st=sum(r.dur for r in rr if r.pattern == LINEAR and r.window == "ST"),
            refix=sum(r.dur for r in rr if r.pattern == REFIX),
            pause_kind=None if kind == "PU" else u.kind,
        ))
    return out


def classify_unit(f: UnitFeatures, pub_ms: float, rules: HofRules = HofRules()) -> str:
    if f.keystrokes == 0 and f.gaze > 0 and f.linear_st >= rules.theta_o * f.gaze:
        return "O"
    if f.deletions >= 1:
        return "H"
    if f.gaze > 0 and f.refix >= rules.theta_h * f.gaze:
        return "H"
    if f.pause_kind == "PUB" and f.dur >= rules.theta_p * pub_ms:
        return "H"
    return "F"


def label_units(h: SegmentHierarchy, runs: Sequence[GazeRun],
                rules: HofRules = HofRules()):
    """``[(UnitFeatures, state), ...]`` before merging."""
    return [(f, classify_unit(f, h.thresholds.pub_ms, rules))
            for f in unit_features(h, runs)]


def merge_spans(labelled) -> list[HofSpan]:
    spans = []
    for f, state in labelled:
        pu = (f.unit_id,) if f.kind == "PU" else ()
        pause = (f.unit_id,) if f.kind == "pause" else ()
        if spans and spans[-1].state == state:
            prev = spans[-1]
            spans[-1] = HofSpan(state, prev.start, f.start + f.dur - prev.start,
                                prev.pu_ids + pu, prev.pause_ids + pause)
        else:
            spans.append(HofSpan(state, f.start, f.dur, pu, pause))
    return spans


def label_hof(h: SegmentHierarchy, runs: Sequence[GazeRun],
              rules: HofRules | None = None) -> list[HofSpan]:
    """HOF spans tiling the session; adjacent same-state units are merged."""
    return merge_spans(label_units(h, runs, rules or HofRules()))


class HofLabeler(BaseEstimator):
    """Rule-based HOF labeller with the thresholds exposed as parameters."""

    def __init__(self, theta_o=0.6, theta_h=0.5, theta_p=2.0):
        self.theta_o = theta_o
        self.theta_h = theta_h
        self.theta_p = theta_p

    def fit(self, X=None, y=None):
        if not 0 <= self.theta_o <= 1 or not 0 <= self.theta_h <= 1:
            raise ValueError("theta_o and theta_h are shares in [0, 1]")
        if self.theta_p <= 0:
            raise ValueError("theta_p must be positive")
        return self

    @property
    def rules(self) -> HofRules:
        return HofRules(self.theta_o, self.theta_h, self.theta_p)

    def predict(self, h: SegmentHierarchy, runs: Sequence[GazeRun]) -> list[HofSpan]:
        self.fit()
        return label_hof(h, runs, self.rules)


# -- phases ------------------------------------------------------------------

def _final_text(keys):
    """Reconstructed final text as (char, is_alnum, insert key time) triples."""
    buf = []
    for k in keys:
        if k.action == "insert":
            buf.append((k.glyph, k.is_alnum, k.time))
        elif buf:
            buf.pop()
    return buf


def final_tokens(keys):
    """Tokens (maximal alphanumeric runs) of the final text with completion times.

    Returns ``[(text, completion_key_time), ...]``, where the completion time
    is the latest insertion among the token's surviving characters.
    """
    tokens = []
    cur = []
    for ch, alnum, t in _final_text(keys) + [("", False, 0)]:
        if alnum:
            cur.append((ch, t))
        elif cur:
            tokens.append(("".join(c for c, _ in cur), max(t for _, t in cur)))
            cur = []
    return tokens


def drafting_end(s: Session) -> tuple[int, bool]:
    """End of the drafting phase and whether it was approximated.

    With an alignment, drafting ends after the keystroke completing the last
    TT token aligned to the final ST token. Without one, the last token of the
    final text stands in for it (flagged as approximated).
    """
    tokens = final_tokens(s.keys)
    last_key_end = s.keys[-1].end
    if s.alignment:
        final_st = max(st[1] for st, _ in s.alignment)
        tt_idx = {i for st, tt in s.alignment if st[0] <= final_st <= st[1]
                  for i in range(tt[0], tt[1] + 1) if i < len(tokens)}
        if tt_idx:
            return max(tokens[i][1] for i in tt_idx) + 1, False
    if not tokens:
        return last_key_end, True
    return tokens[-1][1] + 1, True


def detect_phases(s: Session, h: SegmentHierarchy | None = None) -> list[Phase]:
    """Orientation, Drafting and Revision phases tiling the span (possibly empty)."""
    lo, hi = h.span if h is not None else s.span
    first_key = s.keys[0].time
    end, _ = drafting_end(s)
    end = min(max(end, first_key), hi)
    return [Phase("Orientation", lo, first_key), Phase("Drafting", first_key, end),
            Phase("Revision", end, hi)]
