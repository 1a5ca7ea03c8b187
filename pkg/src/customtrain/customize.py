"""Customized training: one sparse model per test cluster.

The test rows are partitioned either by known groups (each group's
training set is the union of every member's ``R`` nearest training rows)
or by cutting a complete-linkage dendrogram built on training and test
rows together. A penalized GLM is fit on each cluster's customized
training set and used for that cluster's test rows. Clusters with test
rows but no training rows abstain until :func:`resolve_rejections` climbs
the dendrogram to the nearest ancestor that does contain training rows.
"""

from __future__ import annotations

import copy
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cluster import (
    Dendrogram,
    cut_by_count,
    hclust_complete,
    knn_indices,
)
from .data import InputError, Standardizer, fit_standardizer
from .glm import (
    BINOMIAL,
    DEFAULT_MAX_ITER,
    DEFAULT_N_LAMBDA,
    DEFAULT_TOL,
    MULTINOMIAL,
    PROB_CLIP,
    GlmFamily,
    GlmFit,
    as_family,
    default_fractions,
    fit_glm_path,
    predict_glm,
)

DEFAULT_R = 10
GROUPED = "grouped"
JOINT = "joint"


@dataclass(frozen=True)
class Cluster:
    train_indices: np.ndarray
    test_indices: np.ndarray
    node: int | None = None
    group: int | None = None

    @property
    def rejected(self):
        return len(self.train_indices) == 0 and len(self.test_indices) > 0

    def to_dict(self):
        return {
            "train_indices": self.train_indices.tolist(),
            "test_indices": self.test_indices.tolist(),
            "node": self.node,
            "group": self.group,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["train_indices"], dtype=int),
                   np.asarray(d["test_indices"], dtype=int),
                   d.get("node"), d.get("group"))


@dataclass
class CustomizedPartition:
    """Test rows split into clusters, each with its customized training rows."""

    mode: str
    clusters: list[Cluster]
    n_train: int
    n_test: int
    R: int | None = None
    dendrogram: Dendrogram | None = None
    cut_height: float | None = None

    @property
    def G(self):
        return len(self.clusters)

    @property
    def rejected_clusters(self):
        return {k for k, c in enumerate(self.clusters) if c.rejected}

    def test_cluster_ids(self):
        ids = np.full(self.n_test, -1, dtype=int)
        for k, c in enumerate(self.clusters):
            ids[c.test_indices] = k
        return ids

    def to_dict(self):
        return {
            "mode": self.mode,
            "G": self.G,
            "R": self.R,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "cut_height": self.cut_height,
            "clusters": [c.to_dict() for c in self.clusters],
            "dendrogram": None if self.dendrogram is None else self.dendrogram.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        dend = d.get("dendrogram")
        return cls(
            mode=d["mode"],
            clusters=[Cluster.from_dict(c) for c in d["clusters"]],
            n_train=d["n_train"],
            n_test=d["n_test"],
            R=d.get("R"),
            dendrogram=None if dend is None else Dendrogram.from_dict(dend),
            cut_height=d.get("cut_height"),
        )


def build_grouped_partition(X_train, X_test, test_groups, R=DEFAULT_R):
    """One cluster per distinct test group (in ascending group order).

    A group's training set is the union of the ``R`` nearest training rows of
    each of its members; with fewer than ``R`` training rows every row is
    used.
    """
    X_train = np.asarray(X_train, dtype=float)
    if X_train.ndim != 2 or X_train.shape[0] == 0:
        raise InputError("training set is empty")
    groups = np.asarray(test_groups)
    X_test = np.asarray(X_test, dtype=float)
    if groups.shape != (X_test.shape[0],):
        raise InputError("need exactly one group label per test row")
    nn = knn_indices(X_test, X_train, R)
    clusters = []
    for g in np.unique(groups):
        members = np.flatnonzero(groups == g)
        clusters.append(Cluster(np.unique(nn[members]), members, group=g.item()))
    return CustomizedPartition(GROUPED, clusters, X_train.shape[0], X_test.shape[0], R=int(R))


def joint_dendrogram(X_train, X_test, standardize=False):
    """Complete-linkage dendrogram over the stacked training and test rows.

    Leaves ``0..n-1`` are training rows and ``n..n+m-1`` test rows.
    """
    stacked = np.vstack([np.asarray(X_train, float), np.asarray(X_test, float)])
    if standardize:
        stacked = fit_standardizer(stacked).apply(stacked)
    return hclust_complete(stacked)


def partition_from_dendrogram(dendrogram, n_train, G):
    total = dendrogram.leaf_count
    if not 1 <= G <= total:
        raise InputError(f"G must lie in 1..{total} (training plus test rows), got {G}")
    cut = cut_by_count(dendrogram, G)
    clusters = []
    for k in range(cut.G):
        members = cut.members(k)
        clusters.append(Cluster(members[members < n_train],
                                members[members >= n_train] - n_train,
                                node=cut.nodes[k]))
    return CustomizedPartition(JOINT, clusters, n_train, total - n_train,
                               dendrogram=dendrogram, cut_height=cut.height)


def build_joint_partition(X_train, X_test, G, standardize=False):
    """Cut the joint dendrogram of training and test rows into ``G`` clusters.

    Clusters without test rows are kept in the record but never fit;
    clusters with test rows but no training rows are rejected.
    """
    X_train = np.asarray(X_train, dtype=float)
    X_test = np.asarray(X_test, dtype=float)
    if G > X_train.shape[0] + X_test.shape[0]:
        raise InputError(f"G={G} exceeds the {X_train.shape[0] + X_test.shape[0]} "
                         "training plus test rows")
    dend = joint_dendrogram(X_train, X_test, standardize)
    return partition_from_dendrogram(dend, X_train.shape[0], G)


# -- per-cluster fitting --

def constant_classifier(family, label, n_features, n_train=0):
    """Intercept-only fit predicting ``label`` with probability ``1 - 1e-5``."""
    family = as_family(family)
    hi, lo = np.log(1 - PROB_CLIP), np.log(PROB_CLIP)
    if family.name == BINOMIAL:
        b = np.log((1 - PROB_CLIP) / PROB_CLIP)
        intercepts = np.array([b if label == 1 else -b])
        coefs = np.zeros((1, n_features))
    else:
        C = family.n_classes
        b = np.full(C, lo - np.log(C - 1))
        b[label] = hi
        intercepts = (b - b.mean())[None, :]
        coefs = np.zeros((1, C, n_features))
    return GlmFit(
        family=family,
        lambdas=np.zeros(1),
        intercepts=intercepts,
        coefs=coefs,
        standardizer=Standardizer(np.zeros(n_features), np.zeros(n_features)),
        n_train=n_train,
        converged=np.ones(1, dtype=bool),
        degenerate=True,
        saturated=True,
    )


@dataclass(frozen=True)
class FitSettings:
    """Shared knobs for every per-cluster fit."""

    fractions: np.ndarray = field(default_factory=lambda: default_fractions(DEFAULT_N_LAMBDA))
    lambda_min_ratio: float | None = None
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER

    def to_dict(self):
        return {"fractions": self.fractions.tolist(),
                "lambda_min_ratio": self.lambda_min_ratio,
                "tol": self.tol, "max_iter": self.max_iter}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["fractions"], dtype=float), d["lambda_min_ratio"],
                   d["tol"], d["max_iter"])


def fit_cluster(X, y, family, settings):
    """Penalty path on one customized training set.

    Classification sets holding a single class get a constant classifier.
    """
    family = as_family(family)
    if family.is_classification and len(np.unique(y)) == 1:
        return constant_classifier(family, int(y[0]), X.shape[1], len(y))
    return fit_glm_path(X, y, family, fractions=settings.fractions,
                        lambda_min_ratio=settings.lambda_min_ratio,
                        tol=settings.tol, max_iter=settings.max_iter)


def _map(fn, items, threads):
    if threads and threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


@dataclass(frozen=True)
class Resolution:
    """Refit for a rejected cluster on an ancestor's training rows."""

    cluster: int
    cut_height: float
    resolved_height: float
    node: int
    train_indices: np.ndarray
    fit: GlmFit

    def to_dict(self):
        return {
            "cluster": self.cluster,
            "d_G": self.cut_height,
            "d_prime": self.resolved_height,
            "node": self.node,
            "train_indices": self.train_indices.tolist(),
            "fit": self.fit.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["cluster"], d["d_G"], d["d_prime"], d["node"],
                   np.asarray(d["train_indices"], dtype=int), GlmFit.from_dict(d["fit"]))


@dataclass
class CtModel:
    """Fitted customized-training model.

    ``fits`` maps cluster id to its path fit; every cluster is predicted at
    the same position ``lambda_index`` on its own path.
    """

    partition: CustomizedPartition
    family: GlmFamily
    fits: dict[int, GlmFit]
    lambda_index: int
    settings: FitSettings
    resolutions: dict[int, Resolution] = field(default_factory=dict)

    @property
    def fraction(self):
        return float(self.settings.fractions[self.lambda_index])

    def to_dict(self):
        return {
            "family": self.family.to_dict(),
            "lambda_index": self.lambda_index,
            "lambda_fraction": self.fraction,
            "settings": self.settings.to_dict(),
            "partition": self.partition.to_dict(),
            "fits": {str(k): f.to_dict() for k, f in sorted(self.fits.items())},
            "rejections": [r.to_dict() for _, r in sorted(self.resolutions.items())],
        }

    @classmethod
    def from_dict(cls, d):
        family = GlmFamily(d["family"]["name"], d["family"]["n_classes"])
        return cls(
            partition=CustomizedPartition.from_dict(d["partition"]),
            family=family,
            fits={int(k): GlmFit.from_dict(v) for k, v in d["fits"].items()},
            lambda_index=d["lambda_index"],
            settings=FitSettings.from_dict(d["settings"]),
            resolutions={r["cluster"]: Resolution.from_dict(r) for r in d["rejections"]},
        )


def fraction_index(settings, fraction):
    idx = np.flatnonzero(np.isclose(settings.fractions, fraction, rtol=0, atol=1e-12))
    if len(idx) == 0:
        raise InputError(f"lambda fraction {fraction} is not on the fraction grid")
    return int(idx[0])


def fit_ct(partition, X_train, Y_train, family, fraction=None, *, lambda_index=None,
           settings=None, threads=1):
    """Fit one model per cluster that has both training and test rows.

    The penalty is chosen by a shared position on each cluster's own path:
    either ``fraction`` (which must lie on ``settings.fractions``) or a
    direct ``lambda_index``.
    """
    settings = settings or FitSettings()
    family = as_family(family)
    if lambda_index is None:
        lambda_index = 0 if fraction is None else fraction_index(settings, fraction)
    X_train = np.asarray(X_train, dtype=float)
    y = np.asarray(Y_train)
    todo = [k for k, c in enumerate(partition.clusters)
            if len(c.train_indices) and len(c.test_indices)]

    def work(k):
        rows = partition.clusters[k].train_indices
        return fit_cluster(X_train[rows], y[rows], family, settings)

    fits = dict(zip(todo, _map(work, todo, threads)))
    return CtModel(partition, family, fits, int(lambda_index), settings)


@dataclass
class CtPrediction:
    """Per-row predictions; rejected rows are masked out of ``values``.

    ``values`` holds fitted values (gaussian) or class codes; ``probabilities``
    the class probabilities for classification families. ``resolved_height``
    is the re-cut height used for rows predicted after resolution (NaN
    elsewhere).
    """

    values: np.ma.MaskedArray
    probabilities: np.ma.MaskedArray | None
    cluster_ids: np.ndarray
    rejected: np.ndarray
    resolved_height: np.ndarray


def predict_ct(model, X_test, class_weights=None):
    """Compose the per-cluster predictions into one vector over the test rows."""
    part = model.partition
    X_test = np.asarray(X_test, dtype=float)
    if X_test.shape[0] != part.n_test:
        raise InputError(f"model was fit for {part.n_test} test rows, got {X_test.shape[0]}")
    m = part.n_test
    fam = model.family
    values = np.zeros(m, dtype=int if fam.is_classification else float)
    probs = np.zeros((m, fam.n_classes)) if fam.is_classification else None
    rejected = np.zeros(m, dtype=bool)
    heights = np.full(m, np.nan)

    for k, c in enumerate(part.clusters):
        if not len(c.test_indices):
            continue
        if k in model.fits:
            fit = model.fits[k]
        elif k in model.resolutions:
            fit = model.resolutions[k].fit
            heights[c.test_indices] = model.resolutions[k].resolved_height
        else:
            rejected[c.test_indices] = True
            continue
        Xk = X_test[c.test_indices]
        if fam.is_classification:
            probs[c.test_indices] = predict_glm(fit, model.lambda_index, Xk, "probability")
            values[c.test_indices] = predict_glm(fit, model.lambda_index, Xk, "class",
                                                 class_weights)
        else:
            values[c.test_indices] = predict_glm(fit, model.lambda_index, Xk)

    mask2 = None if probs is None else np.repeat(rejected[:, None], fam.n_classes, axis=1)
    return CtPrediction(
        values=np.ma.MaskedArray(values, mask=rejected.copy()),
        probabilities=None if probs is None else np.ma.MaskedArray(probs, mask=mask2),
        cluster_ids=part.test_cluster_ids(),
        rejected=rejected,
        resolved_height=heights,
    )


def resolve_rejections(model, X_train, Y_train, min_train=1, threads=1):
    """Refit each rejected cluster on its nearest sufficiently large ancestor.

    Walking up from the rejected cluster's node, the first ancestor whose
    leaves include at least ``min_train`` training rows supplies the new
    training set; its merge height is the re-cut height. Only the rejected
    rows get new predictions; every other fit is left untouched.
    """
    part = model.partition
    rejected = sorted(part.rejected_clusters - set(model.resolutions))
    if not rejected:
        return model
    if part.mode != JOINT or part.dendrogram is None:
        raise InputError("rejections can only be resolved for joint partitions")
    dend = part.dendrogram
    parents = dend.parents()
    X_train = np.asarray(X_train, dtype=float)
    y = np.asarray(Y_train)

    def climb(k):
        v = part.clusters[k].node
        while True:
            v = int(parents[v])
            if v < 0:
                raise InputError(f"no ancestor of cluster {k} has {min_train} training rows")
            leaves = dend.leaves(v)
            train = leaves[leaves < part.n_train]
            if len(train) >= min_train:
                return v, train

    def work(k):
        node, train = climb(k)
        fit = fit_cluster(X_train[train], y[train], model.family, model.settings)
        return Resolution(k, float(part.cut_height), dend.height(node), node, train, fit)

    out = copy.copy(model)
    out.resolutions = dict(model.resolutions)
    for res in _map(work, rejected, threads):
        out.resolutions[res.cluster] = res
    return out


def fit_standard(X_train, Y_train, family, fraction=None, *, lambda_index=None,
                 settings=None):
    """Standard training: one path on the full training set."""
    settings = settings or FitSettings()
    if lambda_index is None:
        lambda_index = 0 if fraction is None else fraction_index(settings, fraction)
    fit = fit_cluster(np.asarray(X_train, float), np.asarray(Y_train), family, settings)
    return fit, int(lambda_index)


def predict_standard(fit, lambda_index, X_test, class_weights=None):
    if fit.family.is_classification:
        return predict_glm(fit, lambda_index, X_test, "class", class_weights)
    return predict_glm(fit, lambda_index, X_test)
