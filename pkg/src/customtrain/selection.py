"""Cross-validation over the number of clusters and the penalty position.

Held-out folds play the part of the test set: for fold ``j`` the remaining
training rows and the fold's rows are clustered jointly, every cluster is
fit on its training rows, and the fold loss is the sum of the per-cluster
losses. Held-out rows that land in a cluster without training rows are
charged the worst loss a single prediction can incur, so that values of
``G`` prone to rejections are not favored.
"""

from __future__ import annotations

import csv
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cluster import knn_indices
from .customize import (
    DEFAULT_R,
    FitSettings,
    build_grouped_partition,
    fit_cluster,
    joint_dendrogram,
    partition_from_dendrogram,
)
from .data import InputError
from .glm import as_family, predict_path
from .losses import (
    MISCLASSIFICATION,
    SQUARED_ERROR,
    LossSpec,
    evaluate_loss,
    expected_costs,
    weighted_class_decision,
)

__all__ = [
    "DEFAULT_G_GRID",
    "DEFAULT_FOLDS",
    "CvReport",
    "LossSpec",
    "cv_select",
    "cv_select_grouped",
    "evaluate_loss",
    "knn_baseline",
    "knn_cv_select",
    "make_folds",
    "weighted_class_decision",
]

DEFAULT_G_GRID = (1, 2, 3, 5, 10)
DEFAULT_FOLDS = 10
DEFAULT_K_GRID = (1, 3, 5, 10, 20, 50)


def make_folds(n, J=DEFAULT_FOLDS, seed=0, stratify_labels=None):
    """Seeded assignment of ``n`` rows to ``J`` folds.

    Fold sizes differ by at most one. With ``stratify_labels`` the rows of
    each class are dealt round-robin after shuffling, so every fold holds
    its share of each class to within one observation.
    """
    if not 2 <= J <= n:
        raise InputError(f"need 2 <= J <= n, got J={J}, n={n}")
    rng = np.random.default_rng(seed)
    if stratify_labels is None:
        order = rng.permutation(n)
    else:
        labels = np.asarray(stratify_labels)
        if labels.shape != (n,):
            raise InputError("need one stratification label per row")
        order = np.concatenate([rng.permutation(np.flatnonzero(labels == c))
                                for c in np.unique(labels)])
    folds = np.empty(n, dtype=int)
    folds[order] = np.arange(n) % J
    return folds


@dataclass
class CvReport:
    """Loss surface over ``G_grid x fractions`` and the selected cell.

    In grouped mode ``G_grid`` is ``(0,)``: the clusters are the test
    groups themselves and only the penalty position is tuned.
    """

    G_grid: tuple[int, ...]
    fractions: np.ndarray
    losses: np.ndarray
    invalid: np.ndarray
    selected_G: int
    selected_index: int
    J: int
    folds: np.ndarray
    seed: int
    loss: LossSpec
    mode: str = "joint"
    rejections: np.ndarray = field(default=None)

    @property
    def selected_fraction(self):
        return float(self.fractions[self.selected_index])

    @property
    def selected_loss(self):
        return float(self.losses[self.G_grid.index(self.selected_G), self.selected_index])

    def to_dict(self):
        return {
            "mode": self.mode,
            "G_grid": list(self.G_grid),
            "lambda_fractions": self.fractions.tolist(),
            "losses": [[float(v) if np.isfinite(v) else None for v in row]
                       for row in self.losses],
            "invalid": self.invalid.tolist(),
            "rejections": None if self.rejections is None else self.rejections.tolist(),
            "selected": {"G": self.selected_G, "lambda_index": self.selected_index,
                         "lambda_fraction": self.selected_fraction,
                         "loss": self.selected_loss},
            "J": self.J,
            "folds": self.folds.tolist(),
            "seed": self.seed,
            "loss": {"kind": self.loss.kind,
                     "class_weights": None if self.loss.class_weights is None
                     else list(self.loss.class_weights)},
        }

    def write_csv(self, path):
        """Plot-ready long table ``G,lambda_fraction,loss``."""
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["G", "lambda_fraction", "loss"])
            for a, G in enumerate(self.G_grid):
                for b, f in enumerate(self.fractions):
                    v = self.losses[a, b]
                    w.writerow([G, repr(float(f)), repr(float(v)) if np.isfinite(v) else ""])


def default_loss(family):
    return LossSpec(MISCLASSIFICATION if as_family(family).is_classification else SQUARED_ERROR)


def _path_losses(fit, X_ho, y_ho, loss, n_fractions):
    """Loss at every path position for one cluster's held-out rows."""
    if loss.kind == SQUARED_ERROR:
        pred = predict_path(fit, X_ho)
        per = ((pred - y_ho) ** 2).sum(axis=1)
    else:
        probs = predict_path(fit, X_ho, "probability")
        decision = np.argmin(expected_costs(probs, loss.class_weights), axis=-1)
        w = loss.weights(probs.shape[-1])[y_ho]
        per = ((decision != y_ho) * w).sum(axis=1)
    if len(per) == 1 and n_fractions > 1:
        per = np.repeat(per, n_fractions)
    return per


def _rejection_loss(y_ho, y_tr, loss, family):
    if loss.kind == SQUARED_ERROR:
        return float(np.sum((y_ho - np.mean(y_tr)) ** 2))
    return loss.worst_case() * len(y_ho)


def _select(G_grid, losses, invalid):
    """Minimal loss; ties to smaller G, then larger fraction (earlier index)."""
    best = None
    for a in np.argsort(G_grid, kind="stable"):
        if invalid[a]:
            continue
        b = int(np.argmin(losses[a]))
        if best is None or losses[a, b] < losses[best[0], best[1]]:
            best = (int(a), b)
    if best is None:
        raise InputError("every G in the grid exceeds the fold training size")
    return best


def _map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def cv_select(X_train, Y_train, family, G_grid=DEFAULT_G_GRID, settings=None,
              J=DEFAULT_FOLDS, seed=0, loss=None, stratify=False, folds=None,
              standardize_distances=False, threads=1):
    """Choose ``(G, lambda fraction)`` by J-fold cross-validation.

    Parameters
    ----------
    G_grid : sequence of int
        Candidate cluster counts. A value larger than some fold's training
        size marks the row invalid.
    settings : FitSettings
        Fraction grid and solver settings shared by every cluster fit.
    folds : array, optional
        Explicit fold assignment; otherwise drawn by :func:`make_folds`.

    Returns
    -------
    CvReport
    """
    settings = settings or FitSettings()
    family = as_family(family)
    loss = loss or default_loss(family)
    X = np.asarray(X_train, dtype=float)
    y = np.asarray(Y_train)
    n = X.shape[0]
    G_grid = tuple(int(g) for g in G_grid)
    if not G_grid or len(settings.fractions) == 0:
        raise InputError("grids must be nonempty")
    if folds is None:
        folds = make_folds(n, J, seed, y if stratify else None)
    folds = np.asarray(folds, dtype=int)
    fold_ids = np.unique(folds)
    J = len(fold_ids)
    L = len(settings.fractions)
    min_train = min(np.count_nonzero(folds != j) for j in fold_ids)
    invalid = np.array([G > min_train or G < 1 for G in G_grid])

    def one_fold(j):
        tr = np.flatnonzero(folds != j)
        ho = np.flatnonzero(folds == j)
        Xtr, ytr, Xho, yho = X[tr], y[tr], X[ho], y[ho]
        dend = joint_dendrogram(Xtr, Xho, standardize_distances)
        out = np.zeros((len(G_grid), L))
        rej = np.zeros(len(G_grid), dtype=int)
        cache = {}
        for a, G in enumerate(G_grid):
            if invalid[a]:
                continue
            part = partition_from_dendrogram(dend, len(tr), G)
            for c in part.clusters:
                if not len(c.test_indices):
                    continue
                if not len(c.train_indices):
                    out[a] += _rejection_loss(yho[c.test_indices], ytr, loss, family)
                    rej[a] += len(c.test_indices)
                    continue
                # identical subtrees recur across G values
                if c.node not in cache:
                    fit = fit_cluster(Xtr[c.train_indices], ytr[c.train_indices],
                                      family, settings)
                    cache[c.node] = _path_losses(fit, Xho[c.test_indices],
                                                 yho[c.test_indices], loss, L)
                out[a] += cache[c.node]
        return out, rej

    results = _map(one_fold, list(fold_ids), threads)
    losses = np.zeros((len(G_grid), L))
    rejections = np.zeros(len(G_grid), dtype=int)
    for out, rej in results:
        losses += out
        rejections += rej
    losses[invalid] = np.inf
    a, b = _select(G_grid, losses, invalid)
    return CvReport(G_grid, settings.fractions.copy(), losses, invalid, G_grid[a], b,
                    J, folds, seed, loss, rejections=rejections)


def cv_select_grouped(X_train, Y_train, train_groups, family, settings=None,
                      J=DEFAULT_FOLDS, seed=0, loss=None, R=DEFAULT_R, threads=1):
    """Tune the penalty position with leave-groups-out folds.

    Whole training groups are held out together and treated as test groups:
    each held-out group gets the union of its members' ``R`` nearest
    remaining training rows as its customized training set.
    """
    settings = settings or FitSettings()
    family = as_family(family)
    loss = loss or default_loss(family)
    X = np.asarray(X_train, dtype=float)
    y = np.asarray(Y_train)
    groups = np.asarray(train_groups)
    uniq, codes = np.unique(groups, return_inverse=True)
    if len(uniq) < 2:
        raise InputError("need at least two training groups for leave-groups-out folds")
    J = min(J, len(uniq))
    folds = make_folds(len(uniq), J, seed)[codes]
    L = len(settings.fractions)

    def one_fold(j):
        tr = np.flatnonzero(folds != j)
        ho = np.flatnonzero(folds == j)
        part = build_grouped_partition(X[tr], X[ho], codes[ho], R)
        out = np.zeros(L)
        for c in part.clusters:
            fit = fit_cluster(X[tr][c.train_indices], y[tr][c.train_indices],
                              family, settings)
            out += _path_losses(fit, X[ho][c.test_indices], y[ho][c.test_indices], loss, L)
        return out

    losses = np.zeros((1, L))
    for out in _map(one_fold, list(range(J)), threads):
        losses[0] += out
    invalid = np.zeros(1, dtype=bool)
    _, b = _select((0,), losses, invalid)
    return CvReport((0,), settings.fractions.copy(), losses, invalid, 0, b, J, folds,
                    seed, loss, mode="grouped", rejections=np.zeros(1, dtype=int))


def knn_baseline(X_train, Y_train, X_test, k, classification=False, n_classes=None,
                 loss=None):
    """k-nearest-neighbor predictions.

    Regression averages the neighbors' responses. Classification takes the
    class with the most votes (lowest class index on ties); with class
    weights in ``loss`` the vote shares are scored by expected cost
    instead.
    """
    X_train = np.asarray(X_train, dtype=float)
    y = np.asarray(Y_train)
    n = X_train.shape[0]
    if k < 1:
        raise InputError("k must be at least 1")
    if k > n:
        warnings.warn(f"k={k} exceeds the {n} training rows; using k={n}", stacklevel=2)
        k = n
    nn = knn_indices(X_test, X_train, k)
    if not classification:
        return y[nn].astype(float).mean(axis=1)
    C = n_classes or int(y.max()) + 1
    votes = np.zeros((nn.shape[0], C))
    for c in range(C):
        votes[:, c] = (y[nn] == c).sum(axis=1)
    weights = None if loss is None else loss.class_weights
    return np.argmin(expected_costs(votes / k, weights), axis=1)


def knn_cv_select(X_train, Y_train, k_grid=DEFAULT_K_GRID, J=DEFAULT_FOLDS, seed=0,
                  classification=False, n_classes=None, loss=None, folds=None):
    """Pick ``k`` by J-fold cross-validation; ties go to the smaller ``k``.

    Returns ``(best_k, losses)`` with one summed loss per grid value.
    """
    X = np.asarray(X_train, dtype=float)
    y = np.asarray(Y_train)
    if loss is None:
        loss = LossSpec(MISCLASSIFICATION if classification else SQUARED_ERROR)
    if folds is None:
        folds = make_folds(len(y), J, seed)
    k_grid = sorted(set(int(k) for k in k_grid))
    losses = np.zeros(len(k_grid))
    for j in np.unique(folds):
        tr, ho = folds != j, folds == j
        # neighbors for the largest k serve every smaller k
        kmax = min(k_grid[-1], int(tr.sum()))
        nn = knn_indices(X[ho], X[tr], kmax)
        ytr = y[tr]
        for a, k in enumerate(k_grid):
            kk = min(k, kmax)
            if classification:
                C = n_classes or int(y.max()) + 1
                votes = np.stack([(ytr[nn[:, :kk]] == c).sum(axis=1) for c in range(C)], 1)
                pred = np.argmin(expected_costs(votes / kk, loss.class_weights), axis=1)
            else:
                pred = ytr[nn[:, :kk]].astype(float).mean(axis=1)
            losses[a] += evaluate_loss(loss, pred, y[ho])
    best = int(np.argmin(losses))
    return k_grid[best], losses
