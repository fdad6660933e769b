"""Hierarchical Markov generator for synthetic translation sessions.

A HOF chain is walked step by step. Each step emits production units
separated by PUB pauses, each PU emits keystroke bursts separated by KBI
pauses, and each burst emits keystrokes with sub-KBI IKIs. Fixations tile
the bursts and pauses according to per-state AU-type emissions and gaze
pattern mixtures on a two-column page (ST left, TT right).

Intra-burst IKIs are assigned so that the session's own median within-word
and between-word IKIs reproduce the configured thresholds exactly.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_left
from functools import lru_cache
from statistics import NormalDist
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import special
from sklearn.base import BaseEstimator

from .analytics import fit_lognormal
from .gaze import LINEAR, PATTERNS, REFIX, classify_gaze
from .segmentation import AU_TYPES, SegmentHierarchy
from .session import FixationEvent, KeyEvent, Session
from .states import HOF_STATES, HofSpan
from .thresholds import ThresholdSet

LEXICON = ("la", "de", "que", "el", "en", "los", "del", "se", "las", "por", "un",
           "para", "con", "una", "su", "al", "lo", "como", "mas", "pero", "sus",
           "le", "ya", "este", "entre", "cuando", "todo", "esta", "ser", "son",
           "dos", "fue", "hay", "texto", "forma", "sociedad", "estudio", "grupo")
TYPING_EMIT = (4, 5, 6)
PAUSE_EMIT = (1, 2, 8)
_WINDOW = {1: "ST", 2: "TT", 4: None, 5: "ST", 6: "TT", 8: None}


@dataclass(frozen=True)
class Lognormal:
    mu: float
    sigma: float

    def to_dict(self):
        return {"mu": self.mu, "sigma": self.sigma}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["mu"]), float(d["sigma"]))

    def shifted(self, dlog: float) -> "Lognormal":
        return Lognormal(self.mu + dlog, self.sigma)


@dataclass(frozen=True)
class StateParams:
    pu_per_step_p: float      # geometric success probability, support >= 1
    kb_per_pu_p: float
    keys_per_kb_p: float      # extra keys beyond the minimum, geometric - 1
    within_iki: Lognormal
    between_iki: Lognormal
    kbi_pause: Lognormal
    pub_pause: Lognormal
    au_emission: tuple        # over AU types (1, 2, 4, 5, 6, 8)
    gaze_mix: tuple           # over (Linear, Refix, Scattered)
    fixation: Lognormal
    p_delete: float = 0.05

    def to_dict(self):
        d = asdict(self)
        d["au_emission"] = list(self.au_emission)
        d["gaze_mix"] = list(self.gaze_mix)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("within_iki", "between_iki", "kbi_pause", "pub_pause", "fixation"):
            d[k] = Lognormal.from_dict(d[k])
        d["au_emission"] = tuple(float(x) for x in d["au_emission"])
        d["gaze_mix"] = tuple(float(x) for x in d["gaze_mix"])
        return cls(**d)


@dataclass(frozen=True)
class PageGeometry:
    st_x0: float = 40.0
    tt_x0: float = 640.0
    col_width: float = 520.0
    y0: float = 80.0
    line_height: float = 32.0
    n_lines: int = 25


@dataclass(frozen=True)
class GeneratorParams:
    hof_transition: tuple     # 3x3, rows/cols in HOF_STATES order
    hof_init: tuple
    states: dict              # state -> StateParams
    kbi_ms: float
    pub_ms: float
    page: PageGeometry = PageGeometry()
    min_keys: int = 3
    seed: int | None = None

    def validate(self) -> None:
        T = np.asarray(self.hof_transition, dtype=float)
        if T.shape != (3, 3) or (T < 0).any() or not np.allclose(T.sum(1), 1, atol=1e-9):
            raise ValueError("hof_transition must be a 3x3 row-stochastic matrix")
        _check_simplex("hof_init", self.hof_init, 3)
        if set(self.states) != set(HOF_STATES):
            raise ValueError(f"states must cover {HOF_STATES}")
        for s, sp in self.states.items():
            _check_simplex(f"{s}.au_emission", sp.au_emission, 6)
            _check_simplex(f"{s}.gaze_mix", sp.gaze_mix, 3)
            if sum(sp.au_emission[i] for i in (2, 3, 4)) <= 0:
                raise ValueError(f"{s}.au_emission gives no mass to typing AU types")
            if sum(sp.au_emission[i] for i in (0, 1, 5)) <= 0:
                raise ValueError(f"{s}.au_emission gives no mass to pause AU types")
            for name in ("within_iki", "between_iki", "kbi_pause", "pub_pause", "fixation"):
                if not getattr(sp, name).sigma > 0:
                    raise ValueError(f"{s}.{name}.sigma must be > 0")
            for name in ("pu_per_step_p", "kb_per_pu_p", "keys_per_kb_p"):
                if not 0 < getattr(sp, name) <= 1:
                    raise ValueError(f"{s}.{name} must be in (0, 1]")
            if not 0 <= sp.p_delete < 1:
                raise ValueError(f"{s}.p_delete must be in [0, 1)")
        kbi, pub = self.effective_thresholds()
        if kbi < 4:
            raise ValueError("kbi_ms must be at least 4")
        if pub <= kbi:
            raise ValueError(f"impossible truncation: pub ({pub}) <= kbi ({kbi})")
        if self.min_keys < 3:
            raise ValueError("min_keys must be >= 3")
        if self.page.n_lines < 13:
            raise ValueError("page.n_lines must be >= 13 so scattered jumps can leave the line")

    def effective_thresholds(self) -> tuple[int, int]:
        """KBI snapped to an even and PUB to a multiple-of-3 integer, so both
        are reachable as 2x and 3x an integer median."""
        return 2 * int(round(self.kbi_ms / 2)), 3 * int(round(self.pub_ms / 3))

    @property
    def thresholds(self) -> ThresholdSet:
        return ThresholdSet.from_values(*self.effective_thresholds())

    def with_thresholds(self, kbi_ms: float, pub_ms: float) -> "GeneratorParams":
        """Copy with new thresholds; IKI and pause lognormals move with them."""
        dk = math.log(kbi_ms / self.kbi_ms)
        dp = math.log(pub_ms / self.pub_ms)
        states = {s: replace(sp, within_iki=sp.within_iki.shifted(dk),
                             kbi_pause=sp.kbi_pause.shifted(dk),
                             between_iki=sp.between_iki.shifted(dp),
                             pub_pause=sp.pub_pause.shifted(dp))
                  for s, sp in self.states.items()}
        return replace(self, states=states, kbi_ms=kbi_ms, pub_ms=pub_ms)

    def to_dict(self) -> dict:
        return {
            "hof_states": list(HOF_STATES),
            "hof_transition": [list(map(float, r)) for r in self.hof_transition],
            "hof_init": list(map(float, self.hof_init)),
            "states": {s: self.states[s].to_dict() for s in HOF_STATES},
            "kbi_ms": self.kbi_ms, "pub_ms": self.pub_ms,
            "page": asdict(self.page), "min_keys": self.min_keys, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorParams":
        if d.get("hof_states", list(HOF_STATES)) != list(HOF_STATES):
            raise ValueError(f"hof_states must be {list(HOF_STATES)}")
        p = cls(hof_transition=tuple(tuple(float(x) for x in r) for r in d["hof_transition"]),
                hof_init=tuple(float(x) for x in d["hof_init"]),
                states={s: StateParams.from_dict(v) for s, v in d["states"].items()},
                kbi_ms=d["kbi_ms"], pub_ms=d["pub_ms"],
                page=PageGeometry(**d.get("page", {})),
                min_keys=d.get("min_keys", 3), seed=d.get("seed"))
        p.validate()
        return p

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def _check_simplex(name, v, n):
    v = np.asarray(v, dtype=float)
    if v.shape != (n,) or (v < 0).any() or abs(v.sum() - 1) > 1e-9:
        raise ValueError(f"{name} must be a {n}-simplex (non-negative, sums to 1)")


def mixing_transition(pi: Sequence[float], stickiness: float) -> tuple:
    """``a*I + (1-a)*1 pi^T``: stationary distribution ``pi``, self-transition
    boosted by ``a``."""
    pi = np.asarray(pi, dtype=float)
    T = stickiness * np.eye(len(pi)) + (1 - stickiness) * np.outer(np.ones(len(pi)), pi)
    return tuple(tuple(float(x) for x in r) for r in T)


DEFAULT_OCCUPANCY = (0.24, 0.06, 0.70)  # H, O, F


def default_params(kbi_ms: float = 324, pub_ms: float = 897, stickiness: float = 0.3,
                   occupancy: Sequence[float] = DEFAULT_OCCUPANCY) -> GeneratorParams:
    """Hand-set parameters: fast fluent typing in F, slow and deletion-heavy H,
    ST linear reading in O."""
    ln = math.log
    f = StateParams(
        pu_per_step_p=0.6, kb_per_pu_p=0.5, keys_per_kb_p=0.3,
        within_iki=Lognormal(ln(150), 0.45), between_iki=Lognormal(ln(290), 0.45),
        kbi_pause=Lognormal(ln(480), 0.5), pub_pause=Lognormal(ln(1800), 0.7),
        au_emission=(0.15, 0.25, 0.25, 0.05, 0.20, 0.10),
        gaze_mix=(0.45, 0.35, 0.20), fixation=Lognormal(ln(230), 0.5), p_delete=0.03)
    h = replace(
        f, pu_per_step_p=0.7, kb_per_pu_p=0.45, keys_per_kb_p=0.4,
        within_iki=Lognormal(ln(175), 0.5), between_iki=Lognormal(ln(320), 0.5),
        kbi_pause=Lognormal(ln(560), 0.55), pub_pause=Lognormal(ln(3200), 0.8),
        au_emission=(0.10, 0.20, 0.30, 0.05, 0.15, 0.20),
        gaze_mix=(0.20, 0.55, 0.25), p_delete=0.2)
    o = replace(
        f, pu_per_step_p=0.8, kb_per_pu_p=0.6,
        pub_pause=Lognormal(ln(5000), 0.7),
        au_emission=(0.45, 0.10, 0.10, 0.15, 0.10, 0.10),
        gaze_mix=(0.75, 0.15, 0.10), fixation=Lognormal(ln(260), 0.45), p_delete=0.02)
    p = GeneratorParams(hof_transition=mixing_transition(occupancy, stickiness),
                        hof_init=tuple(float(x) for x in occupancy),
                        states={"H": h, "O": o, "F": f}, kbi_ms=kbi_ms, pub_ms=pub_ms)
    p.validate()
    return p


# -- sampling helpers ---------------------------------------------------------

_TINY = 1e-300
_NORMAL = NormalDist()


def ndtr(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2))


def ndtri(p: float) -> float:
    return _NORMAL.inv_cdf(p)


def _trunc_lognormal(rng, ln: Lognormal, lo: float, hi: float = math.inf) -> float:
    """Continuous draw from ``ln`` restricted to [lo, hi) by inverse CDF."""
    a = (math.log(lo) - ln.mu) / ln.sigma
    b = (math.log(hi) - ln.mu) / ln.sigma if math.isfinite(hi) else math.inf
    if a > 0:
        # upper tail: work with survival probabilities for precision
        sa, sb = float(ndtr(-a)), float(ndtr(-b)) if math.isfinite(b) else 0.0
        if sa <= sb:
            return lo if not math.isfinite(hi) else float(rng.uniform(lo, hi))
        z = -float(ndtri(max(float(rng.uniform(sb, sa)), _TINY)))
    else:
        fa, fb = float(ndtr(a)), float(ndtr(b)) if math.isfinite(b) else 1.0
        if fb <= fa:
            return float(rng.uniform(lo, hi)) if math.isfinite(hi) else lo
        z = float(ndtri(max(float(rng.uniform(fa, fb)), _TINY)))
    x = math.exp(ln.mu + ln.sigma * z)
    return min(max(x, lo), hi)


def _int_between(rng, ln: Lognormal, lo: int, hi: int | None) -> int:
    """Integer ms in [lo, hi - 1] (or >= lo), floor of a truncated draw."""
    x = _trunc_lognormal(rng, ln, lo, math.inf if hi is None else hi)
    d = int(math.floor(x))
    if hi is not None:
        d = min(d, hi - 1)
    return max(d, lo)


def truncated_lognormal_cdf(x, ln: Lognormal, lo: float, hi: float = math.inf):
    """CDF of the truncated lognormal used for pause durations."""
    x = np.asarray(x, dtype=float)
    z = (np.log(np.maximum(x, 1e-300)) - ln.mu) / ln.sigma
    a = (math.log(lo) - ln.mu) / ln.sigma
    b = (math.log(hi) - ln.mu) / ln.sigma if math.isfinite(hi) else math.inf
    Fa, Fb = ndtr(a), (ndtr(b) if math.isfinite(b) else 1.0)
    out = (special.ndtr(z) - Fa) / (Fb - Fa)
    return np.clip(np.where(x < lo, 0.0, out), 0.0, 1.0)


def _median_counts(t, lo_ok, eq_ok, hi_ok, fixed, n):
    """Split ``n`` free slots into (below, equal, above) ``t`` so that the
    combined multiset (with ``fixed`` = (below, equal, above) counts) has
    median exactly ``t``. Fewest equal slots first; None if impossible."""
    Lf, Ef, Af = fixed
    for e in range(0 if Ef else 1, n + 1):
        if e and not eq_ok:
            break
        r = n - e
        E = Ef + e
        if lo_ok and hi_ok:
            cands = [min(max((r + Lf - Af) // 2 + k, 0), r) for k in (0, 1)]
        elif lo_ok:
            cands = [0]
        elif hi_ok:
            cands = [r]
        else:
            cands = [0] if r == 0 else []
        for a in cands:
            L, A = Lf + r - a, Af + a
            if E >= 1 and abs(A - L) <= E - 1:
                return r - a, e, a
    return None


# -- the generator ------------------------------------------------------------

@dataclass
class SimulationTrace:
    """Ground truth recorded while generating a session."""
    kbi_ms: int
    pub_ms: int
    thresholds_exact: bool = True
    steps: list = field(default_factory=list)    # {state, start, end, n_pu}
    pauses: list = field(default_factory=list)   # {start, dur, kind, state, calibration}
    calibration_gaps: int = 0

    def to_dict(self):
        return {"thresholds": {"kbi_ms": self.kbi_ms, "pub_ms": self.pub_ms},
                "thresholds_exact": self.thresholds_exact,
                "calibration_gaps": self.calibration_gaps,
                "steps": self.steps, "pauses": self.pauses}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def occupancy(self) -> dict:
        n = len(self.steps)
        return {s: sum(st["state"] == s for st in self.steps) / n for s in HOF_STATES}


@dataclass
class _KB:
    state: str
    step: int
    n_keys: int
    internal: int = 0   # extra word boundaries requested
    glyphs: list = field(default_factory=list)  # (glyph, action, is_alnum)
    calibration: bool = False


def _sample_chain(rng, p: GeneratorParams, n: int) -> list[str]:
    T = np.asarray(p.hof_transition, dtype=float)
    s = int(rng.choice(3, p=np.asarray(p.hof_init, dtype=float)))
    out = [s]
    for _ in range(n - 1):
        s = int(rng.choice(3, p=T[s]))
        out.append(s)
    return [HOF_STATES[i] for i in out]


def _word(rng) -> str:
    return LEXICON[int(rng.integers(len(LEXICON)))]


class _Text:
    """Reconstructed text, used to name the glyph removed by a deletion."""

    def __init__(self):
        self.buf = []

    def insert(self, g):
        self.buf.append(g)
        return (g, "insert", g.isalnum())

    def delete(self):
        g = self.buf.pop()
        return (g, "delete", False)


def _glyphs_space_first(rng, kb: _KB, text: _Text, p_delete: float):
    """KB opening with a space: `` word word`` with occasional deletions."""
    out = [text.insert(" ")]
    typed_in_word = 0
    word, wi = _word(rng), 0
    while len(out) < kb.n_keys:
        if wi == len(word):
            out.append(text.insert(" "))
            word, wi, typed_in_word = _word(rng), 0, 0
            continue
        if typed_in_word >= 2 and rng.random() < p_delete:
            out.append(text.delete())
            typed_in_word -= 1
            wi -= 1
            continue
        out.append(text.insert(word[wi]))
        wi += 1
        typed_in_word += 1
    return out


def _glyphs_word_first(rng, kb: _KB, text: _Text, p_delete: float):
    """KB of whole words ending in a space; deletions only before the space."""
    out = []
    for i in range(kb.internal + 1):
        if i:
            out.append(text.insert(" "))
        for ch in _word(rng):
            out.append(text.insert(ch))
    while len(out) < kb.n_keys - 1:
        for ch in _word(rng)[:2]:
            out.append(text.insert(ch))
    n_del = int(rng.binomial(len(out) - 2, p_delete)) if len(out) > 2 else 0
    for _ in range(n_del):
        out.append(text.delete())
    out.append(text.insert(" "))
    return out


@lru_cache(maxsize=None)
def _far_lines(n_lines: int, line: int) -> tuple:
    return tuple(k for k in range(n_lines) if abs(k - line) >= 6)


def _fixations(rng, sp: StateParams, page: PageGeometry, window: str,
               lo: int, hi: int, out: list):
    x0 = page.st_x0 if window == "ST" else page.tt_x0
    line = int(rng.integers(page.n_lines))
    x = x0 + float(rng.uniform(0, 0.8 * page.col_width))
    total = sum(sp.gaze_mix)
    c0 = sp.gaze_mix[0] / total
    c1 = (sp.gaze_mix[0] + sp.gaze_mix[1]) / total
    t = lo
    while t < hi:
        # random numbers are drawn in blocks; one row per fixation
        n = 32
        z = rng.standard_normal(n).tolist()
        u = rng.random((n, 4)).tolist()
        for i in range(n):
            if t >= hi:
                break
            d = max(1, int(math.exp(sp.fixation.mu + sp.fixation.sigma * z[i])))
            d = min(d, hi - t)
            y = page.y0 + line * page.line_height + 10 * u[i][0] - 5
            out.append(FixationEvent(t, d, window, float(round(x)), float(round(y))))
            t += d
            pattern = LINEAR if u[i][1] < c0 else REFIX if u[i][1] < c1 else "S"
            if pattern == LINEAR:
                x += 35 + 55 * u[i][2]
                if x > x0 + page.col_width:
                    x = x0 + 30 * u[i][3]
                    line = (line + 1) % page.n_lines
            elif pattern == REFIX:
                x = max(x0, x - 60 + 65 * u[i][2])
            else:
                # jump at least 6 lines away, beyond the vertical tolerance
                far = _far_lines(page.n_lines, line)
                line = far[min(int(u[i][2] * len(far)), len(far) - 1)]
                x = x0 + page.col_width * u[i][3]


def _draw(rng, weights) -> int:
    """Index drawn with probability proportional to ``weights``."""
    u = rng.random() * sum(weights)
    acc = 0.0
    for i, x in enumerate(weights):
        acc += x
        if u < acc:
            return i
    return max(i for i, x in enumerate(weights) if x > 0)


def _emit(rng, sp: StateParams, types: tuple) -> int:
    return types[_draw(rng, [sp.au_emission[AU_TYPES.index(t)] for t in types])]


def simulate_with_trace(p: GeneratorParams, n_hof_steps: int, seed: int | None = None,
                        session_id: str = "sim", translator: str = ""):
    """Generate one session and its ground-truth trace."""
    p.validate()
    if n_hof_steps < 1:
        raise ValueError("n_hof_steps must be >= 1: an empty session cannot be generated")
    seed = p.seed if seed is None else seed
    rng = np.random.Generator(np.random.PCG64(seed))
    kbi, pub = p.effective_thresholds()
    w, b = kbi // 2, pub // 3
    space_first = b < kbi
    trace = SimulationTrace(kbi, pub)

    # 1. HOF chain and unit skeleton; pauses[i] precedes kbs[i + 1]
    chain = _sample_chain(rng, p, n_hof_steps)
    kbs: list[_KB] = []
    pauses: list[tuple[int, str, str]] = []   # (dur, kind, state)
    step_first_kb = []
    for step, state in enumerate(chain):
        sp = p.states[state]
        step_first_kb.append(len(kbs))
        n_pu = int(rng.geometric(sp.pu_per_step_p))
        for u in range(n_pu):
            n_kb = int(rng.geometric(sp.kb_per_pu_p))
            for k in range(n_kb):
                if kbs:
                    if k == 0:
                        # PUB before a PU belongs to the state that precedes it
                        prev_state = kbs[-1].state
                        pauses.append((_int_between(rng, p.states[prev_state].pub_pause,
                                                    pub, None), "PUB", prev_state))
                    else:
                        pauses.append((_int_between(rng, sp.kbi_pause, kbi, pub),
                                       "KBI", state))
                n_keys = p.min_keys + int(rng.geometric(sp.keys_per_kb_p)) - 1
                kbs.append(_KB(state, step, n_keys))

    # 2. between-word balance when pauses land in the between-IKI set
    n_cal = 0
    if not space_first:
        ikis = [d + 1 for d, _, _ in pauses]
        fixed = (sum(i < b for i in ikis), sum(i == b for i in ikis), sum(i > b for i in ikis))
        Lf, Ef, Af = fixed
        E = max(Ef, 1)
        n_cal = E - Ef
        if Lf > Af + E - 1:
            n_cal += Lf - Af - E + 1
        else:
            for _ in range(Af - Lf - (E - 1)):
                kbs[int(rng.integers(len(kbs)))].internal += 1

    # 3. glyphs
    text = _Text()
    for kb in kbs:
        sp = p.states[kb.state]
        kb.glyphs = (_glyphs_space_first if space_first else _glyphs_word_first)(
            rng, kb, text, sp.p_delete)
    for _ in range(n_cal):
        cal = _KB(kbs[-1].state, kbs[-1].step, 2, calibration=True)
        cal.glyphs = [text.insert("a"), text.insert(" ")]
        kbs.append(cal)
        pauses.append((b - 1, "CAL", cal.state))
    trace.calibration_gaps = n_cal

    # 4. gaps: (kb index, class) for intra gaps; pause gaps carry fixed values
    keys_g = []       # (glyph, action, alnum, kb index)
    for i, kb in enumerate(kbs):
        keys_g.extend((g, a, al, i) for g, a, al in kb.glyphs)
    gap_val = [0] * (len(keys_g) - 1)
    slots = {"within": [], "between": []}
    other = []
    fixed_b = [0, 0, 0]
    for j in range(len(keys_g) - 1):
        prev, nxt = keys_g[j], keys_g[j + 1]
        cls = None if not nxt[2] else ("within" if prev[2] else "between")
        if prev[3] != nxt[3]:
            gap_val[j] = pauses[nxt[3] - 1][0] + 1
            if cls == "between":
                v = gap_val[j]
                fixed_b[0 if v < b else 1 if v == b else 2] += 1
            elif cls == "within":  # pragma: no cover - excluded by construction
                raise AssertionError("pause gap classified as within-word")
            continue
        if cls is None:
            other.append(j)
        else:
            slots[cls].append(j)

    exact = True
    for cls, t, fixed in (("within", w, (0, 0, 0)), ("between", b, tuple(fixed_b))):
        js = slots[cls]
        counts = _median_counts(t, t >= 2, t <= kbi - 1, t + 1 <= kbi - 1,
                                (fixed[0], fixed[1], fixed[2]), len(js))
        if counts is None:
            exact = False
            counts = (len(js), 0, 0) if t > kbi - 1 else (len(js) // 2, 0, len(js) - len(js) // 2)
        sides = ["lo"] * counts[0] + ["eq"] * counts[1] + ["hi"] * counts[2]
        order = rng.permutation(len(js))
        for side, j in zip(sides, (js[k] for k in order)):
            sp = p.states[kbs[keys_g[j][3]].state]
            ln = sp.within_iki if cls == "within" else sp.between_iki
            if side == "eq":
                gap_val[j] = t
            elif side == "lo":
                gap_val[j] = _int_between(rng, ln, 1, min(t, kbi))
            else:
                gap_val[j] = _int_between(rng, ln, t + 1, kbi)
    for j in other:
        sp = p.states[kbs[keys_g[j][3]].state]
        gap_val[j] = _int_between(rng, sp.within_iki, 1, kbi)
    trace.thresholds_exact = exact

    # 5. times, keys, fixations
    keys = []
    t = 0
    kb_bounds = {}
    for j, (g, a, al, i) in enumerate(keys_g):
        if j:
            t += gap_val[j - 1]
        keys.append(KeyEvent(t, a, g, al))
        lo, _ = kb_bounds.get(i, (t, t))
        kb_bounds[i] = (lo, t)
    fixes = []
    for i, kb in enumerate(kbs):
        sp = p.states[kb.state]
        lo, last = kb_bounds[i]
        win = _WINDOW[_emit(rng, sp, TYPING_EMIT)]
        if win:
            _fixations(rng, sp, p.page, win, lo, last + 1, fixes)
        if i + 1 < len(kbs):
            nxt = kb_bounds[i + 1][0]
            dur, kind, pstate = pauses[i]
            cal = kind == "CAL"
            if cal:
                kind = "KBI" if dur >= kbi else None
            if kind is not None:
                trace.pauses.append({"start": last + 1, "dur": nxt - last - 1, "kind": kind,
                                     "state": pstate, "calibration": cal})
            psp = p.states[pstate]
            win = _WINDOW[_emit(rng, psp, PAUSE_EMIT)]
            if win:
                _fixations(rng, psp, p.page, win, last + 1, nxt, fixes)

    end = keys[-1].time + 1
    starts = [kb_bounds[i][0] for i in step_first_kb] + [end]
    for step, state in enumerate(chain):
        n_pu = sum(1 for d, k, _ in pauses[step_first_kb[step]:
                                           (step_first_kb[step + 1] if step + 1 < len(chain)
                                            else len(kbs)) - 1]
                   if k == "PUB") + 1
        trace.steps.append({"state": state, "start": starts[step], "end": starts[step + 1],
                            "n_pu": n_pu})
    session = Session(id=session_id, keys=tuple(keys), fixes=tuple(fixes),
                      translator=translator)
    return session, trace


def simulate_session(p: GeneratorParams, n_hof_steps: int, seed: int | None = None,
                     session_id: str = "sim") -> Session:
    return simulate_with_trace(p, n_hof_steps, seed, session_id)[0]


def correlated_thresholds(n: int, seed: int | None, log_kbi=(5.78, 0.38),
                          log_pub=(6.80, 0.47), r: float = 0.72):
    """``n`` (kbi, pub) pairs whose logs have exactly the given sample means,
    sample standard deviations and Pearson correlation."""
    if n < 3:
        raise ValueError("need at least 3 sessions for a correlated corpus")
    rng = np.random.Generator(np.random.PCG64(seed))
    Z = rng.standard_normal((n, 2))
    Z -= Z.mean(0)
    C = np.cov(Z, rowvar=False)
    Z = Z @ np.linalg.inv(np.linalg.cholesky(C)).T
    target = np.array([[log_kbi[1] ** 2, r * log_kbi[1] * log_pub[1]],
                       [r * log_kbi[1] * log_pub[1], log_pub[1] ** 2]])
    X = Z @ np.linalg.cholesky(target).T + np.array([log_kbi[0], log_pub[0]])
    out = []
    for lk, lp in np.exp(X):
        kbi = max(4, 2 * int(round(lk / 2)))
        pub = 3 * int(round(lp / 3))
        if pub <= kbi + 3:
            pub = 3 * (kbi // 3 + 2)
        out.append((kbi, pub))
    return out


def simulate_corpus(p: GeneratorParams, n_sessions: int, n_hof_steps: int,
                    seed: int | None = 0, translators: int | None = None,
                    correlation: float | None = 0.72, **threshold_kw):
    """Sessions with per-session thresholds drawn from a correlated log-normal
    pair distribution. Returns ``[(session, trace), ...]``."""
    if correlation is None:
        pairs = [p.effective_thresholds()] * n_sessions
    else:
        pairs = correlated_thresholds(n_sessions, seed, r=correlation, **threshold_kw)
    seeds = np.random.SeedSequence(seed).spawn(n_sessions)
    out = []
    width = len(str(n_sessions))
    for i, ((kbi, pub), ss) in enumerate(zip(pairs, seeds)):
        sid = f"sim{i:0{width}d}"
        tr = f"T{i % translators:02d}" if translators else ""
        sub_seed = int(ss.generate_state(1)[0])
        out.append(simulate_with_trace(p.with_thresholds(kbi, pub), n_hof_steps, sub_seed,
                                       sid, tr))
    return out


def verify_round_trip(h: SegmentHierarchy, trace: SimulationTrace) -> dict:
    """Compare a re-segmented hierarchy against the generation trace.

    Returns per-kind counts of generated pauses recovered with the same start,
    duration and kind, and whether every step start opens a PU.
    """
    seg = {(q.start, q.dur): q.kind for q in h.pauses}
    res = {"KBI": [0, 0], "PUB": [0, 0]}
    for q in trace.pauses:
        res[q["kind"]][1] += 1
        if seg.get((q["start"], q["dur"])) == q["kind"]:
            res[q["kind"]][0] += 1
    pu_starts = {u.start for u in h.pus}
    aligned = all(st["start"] in pu_starts for st in trace.steps)
    n_pu = sum(st["n_pu"] for st in trace.steps)
    return {"KBI": tuple(res["KBI"]), "PUB": tuple(res["PUB"]), "steps_aligned": aligned,
            "n_pu": (len(h.pus), n_pu), "extra_pauses": len(h.pauses) - len(trace.pauses)}


def occupancy_from_segmentation(h: SegmentHierarchy, trace: SimulationTrace) -> dict:
    """HOF occupancy as the share of generation steps per state, counting a
    step only when its PUs are recovered by segmentation inside its span."""
    pu_starts = sorted(u.start for u in h.pus)
    start_set = set(pu_starts)
    counts = dict.fromkeys(HOF_STATES, 0)
    total = 0
    for st in trace.steps:
        inside = bisect_left(pu_starts, st["end"]) - bisect_left(pu_starts, st["start"])
        if st["start"] in start_set and inside == st["n_pu"]:
            counts[st["state"]] += 1
            total += 1
    return {s: counts[s] / total if total else 0.0 for s in HOF_STATES}


# -- fitting --------------------------------------------------------------------

def _geom_p(mean: float) -> float:
    return float(min(1.0, max(1e-3, 1.0 / mean))) if mean > 0 else 1.0


def _smoothed(counts, alpha=0.5):
    c = np.asarray(counts, dtype=float) + alpha
    return tuple(float(x) for x in c / c.sum())


def _fit_or(values, fallback: Lognormal) -> Lognormal:
    vals = [v for v in values if v > 0]
    if len(vals) < 2:
        return fallback
    f = fit_lognormal(vals)
    return Lognormal(f.mu, f.sigma)


def fit_generator_params(corpus: Sequence[tuple[Session, SegmentHierarchy, Sequence[HofSpan]]],
                         alpha: float = 0.5, min_keys: int = 3) -> GeneratorParams:
    """Maximum-likelihood parameters with additive smoothing from labelled sessions.

    One generation step corresponds to one PU in the fitted model, so the
    transition matrix counts successive PU labels within each session.
    Lognormals fall back to a pooled fit when a state has fewer than two values.
    """
    if not corpus:
        raise ValueError("cannot fit generator parameters to an empty corpus")
    trans = np.zeros((3, 3))
    init = np.zeros(3)
    acc = {s: {"kb_per_pu": [], "keys_per_kb": [], "within": [], "between": [],
               "kbi": [], "pub": [], "types": np.zeros(6), "gaze": np.zeros(3),
               "fix": [], "ins": 0, "dels": 0} for s in HOF_STATES}
    kbis, pubs = [], []
    for s, h, spans in corpus:
        kbis.append(h.thresholds.kbi_ms)
        pubs.append(h.thresholds.pub_ms)
        ivs = [(sp.start, sp.end, sp.state) for sp in spans]

        def state_at(t):
            for lo, hi, st in ivs:
                if lo <= t < hi:
                    return st
            return None
        seq = [state_at(u.start) for u in h.pus]
        seq = [x for x in seq if x is not None]
        if seq:
            init[HOF_STATES.index(seq[0])] += 1
        for a, c in zip(seq, seq[1:]):
            trans[HOF_STATES.index(a), HOF_STATES.index(c)] += 1
        for u in h.pus:
            st = state_at(u.start)
            if st is None:
                continue
            acc[st]["kb_per_pu"].append(len(u.kb_ids))
            for q in u.internal_kbi_ids:
                acc[st]["kbi"].append(h.pause(q).dur)
        for q in h.pauses:
            st = state_at(q.start)
            if q.kind == "PUB" and st is not None:
                acc[st]["pub"].append(q.dur)
        times = [k.time for k in s.keys]
        for kb in h.kbs:
            st = state_at(kb.start)
            if st is None:
                continue
            ks = s.keys[bisect_left(times, kb.start):bisect_left(times, kb.end)]
            acc[st]["keys_per_kb"].append(len(ks))
            for prev, nxt in zip(ks, ks[1:]):
                if nxt.is_alnum and nxt.time - prev.time < h.thresholds.kbi_ms:
                    acc[st]["within" if prev.is_alnum else "between"].append(
                        nxt.time - prev.time)
        runs = classify_gaze(h.aus)
        for a in h.aus:
            st = state_at(a.start)
            if st is None:
                continue
            acc[st]["types"][AU_TYPES.index(a.au_type)] += 1
            acc[st]["ins"] += a.ins
            acc[st]["dels"] += a.dels
            acc[st]["fix"].extend(p.dur for p in a.parts)
        for r in runs:
            st = state_at(r.start)
            if st is not None:
                acc[st]["gaze"][PATTERNS.index(r.pattern)] += r.dur

    kbi = float(np.median(kbis))
    pub = float(np.median(pubs))
    base = default_params(kbi, max(pub, kbi + 6)).states["F"]
    pooled = {k: sum((acc[s][k] for s in HOF_STATES), [])
              for k in ("within", "between", "kbi", "pub", "fix")}
    fb = {k: _fit_or(pooled[k], getattr(base, attr)) for k, attr in
          (("within", "within_iki"), ("between", "between_iki"), ("kbi", "kbi_pause"),
           ("pub", "pub_pause"), ("fix", "fixation"))}
    states = {}
    for st in HOF_STATES:
        a = acc[st]
        kb_mean = float(np.mean(a["kb_per_pu"])) if a["kb_per_pu"] else 1.0
        key_mean = float(np.mean(a["keys_per_kb"])) if a["keys_per_kb"] else min_keys
        keystrokes = a["ins"] + a["dels"]
        states[st] = StateParams(
            pu_per_step_p=1.0,
            kb_per_pu_p=_geom_p(kb_mean),
            keys_per_kb_p=_geom_p(max(key_mean - min_keys + 1, 1.0)),
            within_iki=_fit_or(a["within"], fb["within"]),
            between_iki=_fit_or(a["between"], fb["between"]),
            kbi_pause=_fit_or(a["kbi"], fb["kbi"]),
            pub_pause=_fit_or(a["pub"], fb["pub"]),
            au_emission=_smoothed(a["types"], alpha),
            gaze_mix=_smoothed(a["gaze"], alpha),
            fixation=_fit_or(a["fix"], fb["fix"]),
            p_delete=(a["dels"] + alpha) / (keystrokes + 2 * alpha))
    T = trans + alpha
    T = T / T.sum(1, keepdims=True)
    p = GeneratorParams(hof_transition=tuple(tuple(float(x) for x in r) for r in T),
                        hof_init=_smoothed(init, alpha), states=states,
                        kbi_ms=kbi, pub_ms=max(pub, kbi + 6), min_keys=min_keys)
    p.validate()
    return p


class HierarchicalSessionGenerator(BaseEstimator):
    """Estimator facade: ``fit`` on labelled sessions, ``sample`` new ones."""

    def __init__(self, n_hof_steps=100, alpha=0.5, random_state=None):
        self.n_hof_steps = n_hof_steps
        self.alpha = alpha
        self.random_state = random_state

    def fit(self, corpus, y=None):
        self.params_ = fit_generator_params(corpus, alpha=self.alpha)
        return self

    def sample(self, n_sessions=1, seed=None):
        from sklearn.utils.validation import check_is_fitted
        check_is_fitted(self, "params_")
        seed = self.random_state if seed is None else seed
        return [s for s, _ in simulate_corpus(self.params_, n_sessions, self.n_hof_steps,
                                              seed=seed, correlation=None)]
