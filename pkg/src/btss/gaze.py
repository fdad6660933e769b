"""Linear-reading / re-fixation / scattered gaze runs inside activity units."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields
from typing import Iterable, Sequence

from sklearn.base import BaseEstimator

from .segmentation import ActivityUnit
from .session import Diagnostic

log = logging.getLogger(__name__)

LINEAR, REFIX, SCATTERED = "Linear", "Refix", "Scattered"
PATTERNS = (LINEAR, REFIX, SCATTERED)


@dataclass(frozen=True)
class GazeGeometry:
    """Pixel tolerances for transition labelling.

    Only ``vertical_limit`` (150 px) is an empirical rule; the others are
    defaults for a Translog-style two-window layout.
    """
    line_tol: float = 40.0
    same_pos_radius: float = 30.0
    min_advance: float = 10.0
    regress_limit: float = 120.0
    max_saccade: float = 500.0
    vertical_limit: float = 150.0
    reading_direction: int = 1

    @classmethod
    def keys(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


@dataclass(frozen=True)
class GazeRun:
    au_id: int
    pattern: str
    start: int
    dur: int
    n_fix: int
    window: str


def classify_transition(dx: float, dy: float, geom: GazeGeometry = GazeGeometry()) -> str:
    """Label the move between two fixations. Re-fixation wins ties with linear."""
    dx *= geom.reading_direction
    ady = abs(dy)
    if ady > geom.vertical_limit or abs(dx) > geom.max_saccade:
        return SCATTERED
    if math.hypot(dx, dy) <= geom.same_pos_radius:
        return REFIX
    if ady <= geom.line_tol:
        if -geom.regress_limit <= dx < geom.min_advance:
            return REFIX
        if geom.min_advance <= dx <= geom.max_saccade:
            return LINEAR
    return SCATTERED


def classify_au(au: ActivityUnit, geom: GazeGeometry = GazeGeometry(),
                diagnostics: list | None = None) -> list[GazeRun]:
    parts = au.parts
    if not parts:
        return []
    if any(not (p.x == p.x and p.y == p.y) for p in parts):
        if diagnostics is not None:
            diagnostics.append(Diagnostic("gaze-coordinates", au.id,
                                          "missing fixation coordinates; gaze time "
                                          "reported as scattered"))
        log.warning("AU %d: missing fixation coordinates", au.id)
        return [GazeRun(au.id, SCATTERED, parts[0].start, sum(p.dur for p in parts),
                        len(parts), parts[0].window)]
    if len(parts) == 1:
        p = parts[0]
        return [GazeRun(au.id, REFIX, p.start, p.dur, 1, p.window)]

    # fixation i (i >= 1) joins the run of the transition ending at it;
    # fixation 0 joins the first transition's run
    labels = [classify_transition(b.x - a.x, b.y - a.y, geom)
              for a, b in zip(parts, parts[1:])]
    labels.insert(0, labels[0])
    runs = []
    start = 0
    for i in range(1, len(parts) + 1):
        if i == len(parts) or labels[i] != labels[start]:
            members = parts[start:i]
            runs.append(GazeRun(au.id, labels[start], members[0].start,
                                sum(p.dur for p in members), len(members),
                                members[0].window))
            start = i
    return runs


def classify_gaze(aus: Iterable[ActivityUnit], geometry: GazeGeometry | None = None,
                  diagnostics: list | None = None) -> list[GazeRun]:
    """Gaze runs for every AU, in AU order."""
    geom = geometry or GazeGeometry()
    out = []
    for au in aus:
        out.extend(classify_au(au, geom, diagnostics))
    return out


def pattern_durations(runs: Iterable[GazeRun]) -> dict[int, tuple[int, int, int]]:
    """AU id -> (Dur_L, Dur_R, Dur_S)."""
    acc = {}
    for r in runs:
        d = acc.setdefault(r.au_id, [0, 0, 0])
        d[PATTERNS.index(r.pattern)] += r.dur
    return {k: tuple(v) for k, v in acc.items()}


class GazeClassifier(BaseEstimator):
    """Estimator wrapper around :func:`classify_gaze`.

    Stateless: ``fit`` only validates the geometry. ``predict`` takes a
    sequence of AUs and returns their gaze runs; diagnostics for AUs with
    missing coordinates land in ``diagnostics_``.
    """

    def __init__(self, line_tol=40.0, same_pos_radius=30.0, min_advance=10.0,
                 regress_limit=120.0, max_saccade=500.0, vertical_limit=150.0,
                 reading_direction=1):
        self.line_tol = line_tol
        self.same_pos_radius = same_pos_radius
        self.min_advance = min_advance
        self.regress_limit = regress_limit
        self.max_saccade = max_saccade
        self.vertical_limit = vertical_limit
        self.reading_direction = reading_direction

    @property
    def geometry(self) -> GazeGeometry:
        return GazeGeometry(**{k: getattr(self, k) for k in GazeGeometry.keys()})

    def fit(self, X=None, y=None):
        if self.reading_direction not in (1, -1):
            raise ValueError("reading_direction must be 1 or -1")
        for k in GazeGeometry.keys():
            if k != "reading_direction" and getattr(self, k) < 0:
                raise ValueError(f"{k} must be >= 0")
        return self

    def predict(self, aus: Sequence[ActivityUnit]) -> list[GazeRun]:
        self.fit()
        self.diagnostics_ = []
        return classify_gaze(aus, self.geometry, self.diagnostics_)
