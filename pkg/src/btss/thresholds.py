"""Session-specific pause thresholds derived from inter-keystroke intervals.

The keystroke-burst interruption threshold is twice the median within-word
IKI (alphanumeric key followed by alphanumeric key); the production-unit
break threshold is three times the median between-word IKI (non-alphanumeric
key followed by alphanumeric key).
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .session import KeyEvent, Session

KBI_FACTOR = 2
PUB_FACTOR = 3
MAX_KBI_MS = 2000
MAX_PUB_MS = 6000


class ThresholdError(ValueError):
    """The session does not have enough IKIs of a class to derive thresholds."""


@dataclass(frozen=True)
class ThresholdSet:
    kbi_ms: float
    pub_ms: float
    median_within_iki: float
    median_between_iki: float
    n_within: int = 0
    n_between: int = 0

    def __post_init__(self):
        if not (self.kbi_ms > 0 and self.pub_ms > 0):
            raise ThresholdError(f"thresholds must be positive, got "
                                 f"KBI={self.kbi_ms}, PUB={self.pub_ms}")

    @classmethod
    def from_values(cls, kbi_ms: float, pub_ms: float) -> "ThresholdSet":
        """Thresholds fixed by hand; the implied medians are back-computed."""
        return cls(kbi_ms, pub_ms, kbi_ms / KBI_FACTOR, pub_ms / PUB_FACTOR)

    def to_dict(self) -> dict:
        return {"kbi_ms": self.kbi_ms, "pub_ms": self.pub_ms,
                "median_within_iki": self.median_within_iki,
                "median_between_iki": self.median_between_iki,
                "n_within": self.n_within, "n_between": self.n_between}

    @classmethod
    def from_dict(cls, d: dict) -> "ThresholdSet":
        return cls(d["kbi_ms"], d["pub_ms"],
                   d.get("median_within_iki", d["kbi_ms"] / KBI_FACTOR),
                   d.get("median_between_iki", d["pub_ms"] / PUB_FACTOR),
                   d.get("n_within", 0), d.get("n_between", 0))


def classify_ikis(keys: Sequence[KeyEvent], include_deletions: bool = True):
    """Split consecutive-key gaps into within-word and between-word IKIs.

    A gap whose second key is not alphanumeric is discarded. With
    ``include_deletions=False`` deletion keystrokes are dropped from the
    stream before pairing.
    """
    if not include_deletions:
        keys = [k for k in keys if k.action != "delete"]
    if len(keys) < 2:
        raise ThresholdError(f"need at least 2 keystrokes, got {len(keys)}")
    within, between = [], []
    for prev, nxt in zip(keys, keys[1:]):
        if not nxt.is_alnum:
            continue
        (within if prev.is_alnum else between).append(nxt.time - prev.time)
    return within, between


def _as_number(x):
    return int(x) if float(x).is_integer() else float(x)


def thresholds_from_ikis(within: Sequence[float], between: Sequence[float]) -> ThresholdSet:
    if not within:
        raise ThresholdError("no within-word IKIs: KBI threshold underivable")
    if not between:
        raise ThresholdError("no between-word IKIs: PUB threshold underivable")
    mw = _as_number(statistics.median(within))
    mb = _as_number(statistics.median(between))
    return ThresholdSet(_as_number(KBI_FACTOR * mw), _as_number(PUB_FACTOR * mb),
                        mw, mb, len(within), len(between))


def derive_thresholds(s: Session | Sequence[KeyEvent],
                      include_deletions: bool = True) -> ThresholdSet:
    keys = s.keys if isinstance(s, Session) else s
    return thresholds_from_ikis(*classify_ikis(keys, include_deletions))


@dataclass
class FilterResult:
    kept: list = field(default_factory=list)
    excluded: list = field(default_factory=list)  # (item, reason)


def exclusion_reason(t: ThresholdSet, max_kbi: float = MAX_KBI_MS,
                     max_pub: float = MAX_PUB_MS) -> str:
    """Empty string if kept, else ``;``-joined rule names."""
    reasons = []
    if t.kbi_ms > max_kbi:
        reasons.append(f"kbi>{max_kbi:g}")
    if t.pub_ms > max_pub:
        reasons.append(f"pub>{max_pub:g}")
    return ";".join(reasons)


def filter_sessions(items: Iterable, max_kbi: float = MAX_KBI_MS,
                    max_pub: float = MAX_PUB_MS) -> FilterResult:
    """Keep items whose thresholds satisfy KBI <= max_kbi and PUB <= max_pub.

    Items are ThresholdSets or ``(key, ThresholdSet)`` pairs.
    """
    res = FilterResult()
    for item in items:
        t = item if isinstance(item, ThresholdSet) else item[1]
        reason = exclusion_reason(t, max_kbi, max_pub)
        if reason:
            res.excluded.append((item, reason))
        else:
            res.kept.append(item)
    return res
