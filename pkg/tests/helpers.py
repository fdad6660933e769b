"""Random session builders shared by the test modules."""

from __future__ import annotations

import math

import numpy as np

from btss.session import FixationEvent, KeyEvent, Session

GLYPHS = "abcdefgh"
DELIMS = " ,."


def random_session(rng: np.random.Generator, max_events: int = 50, sid: str = "r",
                   nan_coords: float = 0.0) -> Session:
    """Small random session: keys with gaps spanning several thresholds and
    non-overlapping ST/TT fixations, some touching, some crossing key runs."""
    n_keys = int(rng.integers(2, max(3, max_events // 2)))
    n_fix = int(rng.integers(0, max_events - n_keys + 1))
    t = int(rng.integers(0, 300))
    keys = []
    for _ in range(n_keys):
        r = rng.random()
        if r < 0.12 and keys:
            keys.append(KeyEvent.delete(t, keys[-1].glyph))
        elif r < 0.35:
            keys.append(KeyEvent.insert(t, DELIMS[int(rng.integers(len(DELIMS)))]))
        else:
            keys.append(KeyEvent.insert(t, GLYPHS[int(rng.integers(len(GLYPHS)))]))
        t += int(rng.choice([rng.integers(1, 40), rng.integers(40, 200),
                             rng.integers(200, 900)]))
    end = t + int(rng.integers(0, 400))
    fixes = []
    f = int(rng.integers(0, 200))
    for _ in range(n_fix):
        if f >= end:
            break
        dur = int(rng.integers(1, 250))
        x = float(rng.integers(0, 1000))
        y = float(rng.integers(0, 600))
        if rng.random() < nan_coords:
            x = math.nan
        fixes.append(FixationEvent(f, dur, "ST" if rng.random() < 0.5 else "TT", x, y))
        f += dur + int(rng.choice([0, rng.integers(1, 150)]))
    return Session.from_events(sid, keys, fixes)
