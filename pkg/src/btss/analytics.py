"""Corpus statistics over segmented sessions: AU-type profiles, threshold
summaries, correlations, lognormal fits and HOF cross-tabulations."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .gaze import classify_gaze, pattern_durations
from .segmentation import AU_TYPES, SegmentHierarchy
from .states import HOF_STATES, PHASES, HofSpan, Phase
from .thresholds import ThresholdSet

SIGMA_FLOOR = 1e-9


@dataclass(frozen=True)
class AuTypeRow:
    au_type: int
    count: int
    occur_pct: float
    mean_dur: float
    rel_dur_l: float
    rel_dur_r: float
    rel_dur_s: float
    rel_dur_other: float
    mean_ins: float
    mean_del: float
    mean_tgnbr: float
    ms_per_key: float  # nan without keystrokes


@dataclass
class AuTypeTable:
    rows: dict[int, AuTypeRow]
    n_aus: int

    COLUMNS = ("Type", "Count", "Occur", "Dur", "RelDur_L", "RelDur_R", "RelDur_S",
               "RelDur_other", "Ins", "Del", "TGnbr", "ms_per_key")

    def as_rows(self):
        out = []
        for t in AU_TYPES:
            r = self.rows[t]
            out.append([t, r.count, r.occur_pct, r.mean_dur, r.rel_dur_l, r.rel_dur_r,
                        r.rel_dur_s, r.rel_dur_other, r.mean_ins, r.mean_del,
                        r.mean_tgnbr, r.ms_per_key])
        return out


def _mean(xs):
    return sum(xs) / len(xs) if xs else 0.0


def au_type_table(hierarchies: Sequence[SegmentHierarchy],
                  pattern_durs: Sequence[dict] | None = None) -> AuTypeTable:
    """Per-type occurrence share, mean duration, gaze-pattern shares and
    keystroke counts over every AU of the corpus.

    ``pattern_durs`` gives, per hierarchy, AU id -> (L, R, S) durations; by
    default they are computed with the default gaze geometry. RelDur values
    are means of per-AU percentages; ``other`` is the remainder of the AU not
    covered by any classified fixation.
    """
    if pattern_durs is None:
        pattern_durs = [pattern_durations(classify_gaze(h.aus)) for h in hierarchies]
    by_type = {t: [] for t in AU_TYPES}
    for h, pd in zip(hierarchies, pattern_durs):
        for a in h.aus:
            by_type[a.au_type].append((a, pd.get(a.id, (0, 0, 0))))
    n = sum(len(v) for v in by_type.values())
    rows = {}
    for t, items in by_type.items():
        if not items:
            rows[t] = AuTypeRow(t, 0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, math.nan)
            continue
        shares = [[100.0 * d / a.dur for d in lrs] for a, lrs in items]
        l, r, s = (_mean([x[i] for x in shares]) for i in range(3))
        keys = sum(a.ins + a.dels for a, _ in items)
        rows[t] = AuTypeRow(
            au_type=t, count=len(items), occur_pct=100.0 * len(items) / n,
            mean_dur=_mean([a.dur for a, _ in items]),
            rel_dur_l=l, rel_dur_r=r, rel_dur_s=s, rel_dur_other=100.0 - l - r - s,
            mean_ins=_mean([a.ins for a, _ in items]),
            mean_del=_mean([a.dels for a, _ in items]),
            mean_tgnbr=_mean([a.tgnbr for a, _ in items]),
            ms_per_key=sum(a.dur for a, _ in items) / keys if keys else math.nan)
    return AuTypeTable(rows, n)


@dataclass(frozen=True)
class Summary:
    n: int
    mean: float
    min: float
    median: float
    max: float
    std: float


def summarize(values: Sequence[float]) -> Summary:
    if not values:
        raise ValueError("cannot summarise an empty sequence")
    v = [float(x) for x in values]
    return Summary(len(v), statistics.fmean(v), min(v), statistics.median(v), max(v),
                   statistics.stdev(v) if len(v) > 1 else 0.0)


def threshold_summary(thresholds: Iterable[ThresholdSet]) -> dict[str, Summary]:
    """Summaries of KBI and PUB in ms and in natural-log ms."""
    ts = list(thresholds)
    kbi = [t.kbi_ms for t in ts]
    pub = [t.pub_ms for t in ts]
    return {
        "KBI": summarize(kbi), "PUB": summarize(pub),
        "LogKBI": summarize([math.log(x) for x in kbi]),
        "LogPUB": summarize([math.log(x) for x in pub]),
    }


def pearson_r(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d sequences of equal length")
    if len(x) < 2:
        raise ValueError("need at least two pairs")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise ValueError("zero variance: correlation undefined")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


@dataclass(frozen=True)
class LognormalFit:
    mu: float
    sigma: float
    n: int
    degenerate: bool = False

    def to_dict(self):
        return {"mu": self.mu, "sigma": self.sigma, "n": self.n,
                "degenerate": self.degenerate}

    def cdf(self, x):
        from scipy.stats import lognorm
        return lognorm.cdf(x, self.sigma, scale=math.exp(self.mu))


def fit_lognormal(durs: Sequence[float]) -> LognormalFit:
    """mu and sample sigma of log durations. A zero sigma is floored and flagged."""
    if len(durs) < 2:
        raise ValueError(f"need at least 2 durations, got {len(durs)}")
    if any(d <= 0 for d in durs):
        raise ValueError("durations must be positive")
    logs = np.log(np.asarray(durs, dtype=float))
    mu = float(logs.mean())
    sigma = float(logs.std(ddof=1))
    if sigma < SIGMA_FLOOR:
        return LognormalFit(mu, SIGMA_FLOOR, len(durs), True)
    return LognormalFit(mu, sigma, len(durs))


@dataclass
class CrossTab:
    """Row-normalised AU-count proportions plus per-cell duration summaries."""
    rows: tuple
    cols: tuple
    counts: dict = field(default_factory=dict)
    durations: dict = field(default_factory=dict)

    def proportions(self) -> dict:
        out = {}
        for r in self.rows:
            total = sum(self.counts.get((r, c), 0) for c in self.cols)
            out[r] = {c: (self.counts.get((r, c), 0) / total if total else 0.0)
                      for c in self.cols}
        return out

    def duration_summary(self, row, col) -> Summary | None:
        d = self.durations.get((row, col))
        return summarize(d) if d else None


def _locate(intervals, t):
    for label, lo, hi in intervals:
        if lo <= t < hi:
            return label
    return None


def crosstab(labelled: Iterable[tuple[SegmentHierarchy, Sequence[HofSpan], Sequence[Phase]]]):
    """HOF x AU-type and Phase x HOF tables over AUs.

    Each AU is attributed to the HOF span and the phase containing its start.
    Returns ``(hof_by_type, phase_by_hof)``.
    """
    hof_type = CrossTab(HOF_STATES, AU_TYPES)
    phase_hof = CrossTab(PHASES, HOF_STATES)
    for h, spans, phases in labelled:
        span_iv = [(s.state, s.start, s.end) for s in spans]
        phase_iv = [(p.kind, p.start, p.end) for p in phases]
        for a in h.aus:
            state = _locate(span_iv, a.start)
            if state is None:
                continue
            for tab, key in ((hof_type, (state, a.au_type)),
                             (phase_hof, (_locate(phase_iv, a.start), state))):
                if key[0] is None:
                    continue
                tab.counts[key] = tab.counts.get(key, 0) + 1
                tab.durations.setdefault(key, []).append(a.dur)
    return hof_type, phase_hof
