"""Translator styles: relative inverse coefficients of variation and
must-link constrained K-means over translators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .segmentation import SegmentHierarchy

FEATURES = ("ins", "del", "dur", "kbi", "pub")
STYLE_LABELS = ("rapid", "deliberate", "confident", "balanced", "cautious")
EPS = 1e-9


@dataclass(frozen=True)
class RawFeatureStats:
    session_id: str
    translator: str
    n_typing: int
    ins_mean: float
    ins_std: float
    del_mean: float
    del_std: float
    dur_mean: float
    dur_std: float
    kbi: float
    pub: float

    @property
    def degenerate(self) -> bool:
        return self.n_typing < 2


@dataclass(frozen=True)
class PopulationStats:
    n: int
    ins_mean: float
    ins_std: float
    del_mean: float
    del_std: float
    dur_mean: float
    dur_std: float
    kbi_mean: float
    pub_mean: float


@dataclass(frozen=True)
class StyleFeatureVector:
    session_id: str
    translator: str
    rel_icv: tuple[float, float, float, float, float]


@dataclass(frozen=True)
class StyleAssignment:
    session_id: str
    translator: str
    cluster: int
    label: str
    centroid: tuple[float, ...]


def _mean_std(values):
    n = len(values)
    if n == 0:
        return 0.0, 0.0
    m = sum(values) / n
    if n < 2:
        return m, 0.0
    return m, math.sqrt(sum((v - m) ** 2 for v in values) / (n - 1))


def session_features(h: SegmentHierarchy, translator: str = "") -> RawFeatureStats:
    """Mean and sample std of Ins, Del and Dur over typing AUs, plus KBI/PUB.

    Fewer than two typing AUs gives zero std and ``degenerate == True``.
    """
    typing = [a for a in h.aus if a.is_typing]
    im, isd = _mean_std([a.ins for a in typing])
    dm, dsd = _mean_std([a.dels for a in typing])
    um, usd = _mean_std([a.dur for a in typing])
    return RawFeatureStats(h.session_id, translator, len(typing), im, isd, dm, dsd,
                           um, usd, float(h.thresholds.kbi_ms), float(h.thresholds.pub_ms))


def _pooled(ns, means, stds):
    """Mean and sample std of the union of groups given per-group moments."""
    N = sum(ns)
    if N == 0:
        return 0.0, 0.0
    M = sum(n * m for n, m in zip(ns, means)) / N
    if N < 2:
        return M, 0.0
    ss = sum((n - 1) * s * s + n * (m - M) ** 2 for n, m, s in zip(ns, means, stds))
    return M, math.sqrt(max(ss, 0.0) / (N - 1))


def population_stats(raws: Sequence[RawFeatureStats]) -> PopulationStats:
    if not raws:
        raise ValueError("population statistics need at least one session")
    ns = [r.n_typing for r in raws]
    out = {}
    for f in ("ins", "del", "dur"):
        out[f] = _pooled(ns, [getattr(r, f + "_mean") for r in raws],
                         [getattr(r, f + "_std") for r in raws])
    return PopulationStats(
        n=len(raws), ins_mean=out["ins"][0], ins_std=out["ins"][1],
        del_mean=out["del"][0], del_std=out["del"][1],
        dur_mean=out["dur"][0], dur_std=out["dur"][1],
        kbi_mean=sum(r.kbi for r in raws) / len(raws),
        pub_mean=sum(r.pub for r in raws) / len(raws))


def _floor(pop_mean: float) -> float:
    return EPS * pop_mean if pop_mean > 0 else EPS


def icv(mean: float, std: float, floor: float) -> float:
    """mean/std with both floored, so zero variance stays finite and positive."""
    return max(mean, floor) / max(std, floor)


def relative_icv(raw: RawFeatureStats, pop: PopulationStats) -> StyleFeatureVector:
    """Session ICV over population ICV for Ins/Del/Dur; value over population
    mean for the scalar KBI and PUB."""
    rel = []
    for f in ("ins", "del", "dur"):
        floor = _floor(getattr(pop, f + "_mean"))
        s_icv = icv(getattr(raw, f + "_mean"), getattr(raw, f + "_std"), floor)
        p_icv = icv(getattr(pop, f + "_mean"), getattr(pop, f + "_std"), floor)
        rel.append(s_icv / p_icv)
    rel.append(raw.kbi / pop.kbi_mean)
    rel.append(raw.pub / pop.pub_mean)
    return StyleFeatureVector(raw.session_id, raw.translator, tuple(rel))


class RelativeICV(TransformerMixin, BaseEstimator):
    """Fit population statistics on a corpus of RawFeatureStats, then map
    sessions to their 5-dimensional relative-ICV vectors."""

    def fit(self, raws: Sequence[RawFeatureStats], y=None):
        self.population_ = population_stats(list(raws))
        return self

    def transform(self, raws: Sequence[RawFeatureStats]) -> np.ndarray:
        check_is_fitted(self, "population_")
        return np.array([relative_icv(r, self.population_).rel_icv for r in raws],
                        dtype=float).reshape(-1, len(FEATURES))


class ConstrainedKMeans(ClusterMixin, BaseEstimator):
    """K-means with must-link groups.

    All rows sharing a group id are forced into one cluster. The constraint is
    met exactly by running weighted Lloyd iterations on group means (weight =
    group size), which minimises the same row-level inertia as unconstrained
    K-means restricted to group-consistent assignments. Seeding is k-means++.
    """

    def __init__(self, n_clusters=5, n_init=10, max_iter=300, random_state=None):
        self.n_clusters = n_clusters
        self.n_init = n_init
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y=None, groups=None):
        X = check_array(X, dtype=float)
        if groups is None:
            groups = np.arange(len(X))
        groups = np.asarray(groups)
        if len(groups) != len(X):
            raise ValueError("groups must have one entry per row")
        uniq, inv = np.unique(groups, return_inverse=True)
        k = self.n_clusters
        if k > len(uniq):
            raise ValueError(f"n_clusters={k} exceeds the number of groups ({len(uniq)})")
        w = np.bincount(inv).astype(float)
        G = np.zeros((len(uniq), X.shape[1]))
        np.add.at(G, inv, X)
        G /= w[:, None]
        within = float(((X - G[inv]) ** 2).sum())

        rng = np.random.default_rng(self.random_state)
        best = None
        for _ in range(self.n_init):
            centers = _kmeanspp(G, w, k, rng)
            labels, centers, history = _lloyd(G, w, centers, self.max_iter)
            inertia = history[-1] + within
            if best is None or inertia < best[0] - 1e-12:
                best = (inertia, labels, centers, [h + within for h in history])
        self.inertia_, glabels, self.cluster_centers_, self.inertia_history_ = best
        self.groups_ = uniq
        self.group_labels_ = glabels
        self.labels_ = glabels[inv]
        self.n_iter_ = len(self.inertia_history_)
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=float)
        d = ((X[:, None, :] - self.cluster_centers_[None]) ** 2).sum(-1)
        return d.argmin(1)

    def fit_predict(self, X, y=None, groups=None):
        return self.fit(X, groups=groups).labels_


def _kmeanspp(G, w, k, rng):
    n = len(G)
    idx = [int(rng.choice(n, p=w / w.sum()))]
    d2 = ((G - G[idx[0]]) ** 2).sum(1)
    for _ in range(1, k):
        p = w * d2
        if p.sum() <= 0:
            # all remaining points coincide with a chosen center
            choices = [i for i in range(n) if i not in idx]
            nxt = int(rng.choice(choices))
        else:
            nxt = int(rng.choice(n, p=p / p.sum()))
        idx.append(nxt)
        d2 = np.minimum(d2, ((G - G[nxt]) ** 2).sum(1))
    return G[idx].copy()


def _lloyd(G, w, centers, max_iter):
    k = len(centers)
    labels = None
    history = []
    for _ in range(max_iter):
        d = ((G[:, None, :] - centers[None]) ** 2).sum(-1)
        new = d.argmin(1)
        history.append(float((w * d[np.arange(len(G)), new]).sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            m = labels == c
            if m.any():
                centers[c] = (w[m, None] * G[m]).sum(0) / w[m].sum()
            else:
                # empty cluster: move it onto the point farthest from its center
                far = int((w * d[np.arange(len(G)), labels]).argmax())
                centers[c] = G[far]
                labels = labels.copy()
                labels[far] = c
    d = ((G[:, None, :] - centers[None]) ** 2).sum(-1)
    labels = d.argmin(1)
    final = float((w * d[np.arange(len(G)), labels]).sum())
    if final < history[-1]:
        history.append(final)
    return labels, centers, history


def interpret_styles(centroids, global_mean=None) -> list[str]:
    """Name the five clusters from their centroid profiles.

    Greedy in priority order over the still-unnamed clusters: cautious (most
    Del), confident (least Del), deliberate (most Ins + PUB), rapid (least
    Ins + Dur + KBI), balanced (the remaining one, i.e. closest to average).
    """
    C = np.asarray(centroids, dtype=float)
    if C.shape != (5, len(FEATURES)):
        raise ValueError(f"expected 5 centroids of {len(FEATURES)} features, got {C.shape}")
    mean = C.mean(0) if global_mean is None else np.asarray(global_mean, dtype=float)
    i_ins, i_del, i_dur, i_kbi, i_pub = range(5)
    labels = [None] * 5
    left = list(range(5))

    def take(name, score):
        # max score; ties go to the lowest cluster index
        best = max(left, key=lambda c: (score(C[c]), -c))
        labels[best] = name
        left.remove(best)

    take("cautious", lambda c: c[i_del])
    take("confident", lambda c: -c[i_del])
    take("deliberate", lambda c: c[i_ins] + c[i_pub])
    take("rapid", lambda c: -(c[i_ins] + c[i_dur] + c[i_kbi]))
    take("balanced", lambda c: -float(((c - mean) ** 2).sum()))
    return labels


def constrained_kmeans(vectors: Sequence[StyleFeatureVector], k: int = 5,
                       seed: int | None = 0, n_init: int = 10):
    """Cluster sessions into styles with one cluster per translator."""
    X = np.array([v.rel_icv for v in vectors], dtype=float)
    groups = [v.translator or v.session_id for v in vectors]
    km = ConstrainedKMeans(n_clusters=k, n_init=n_init, random_state=seed)
    km.fit(X, groups=groups)
    names = (interpret_styles(km.cluster_centers_, X.mean(0)) if k == 5
             else [f"style{c}" for c in range(k)])
    return [StyleAssignment(v.session_id, v.translator, int(c), names[c],
                            tuple(float(x) for x in km.cluster_centers_[c]))
            for v, c in zip(vectors, km.labels_)], km
