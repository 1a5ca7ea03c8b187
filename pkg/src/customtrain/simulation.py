"""Synthetic clustered-regression study.

Each instance draws class frequencies from a Dirichlet(2, 2, 2), three
class centers from ``N(0, sigma_c^2 I_p)``, features around the center of
each row's class with identity covariance, and a sparse 0/1 coefficient
vector per class with ``p/10`` ones. Responses are the class-specific
linear predictor plus standard normal noise.

Random streams
--------------
All randomness flows from ``numpy.random.SeedSequence(seed)``, spawned into
six independent PCG64 streams, in this order: class frequencies, centers,
class memberships (train then test), features (train then test),
coefficient supports (class 0, 1, 2), response noise (train then test).
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .customize import (
    FitSettings,
    build_joint_partition,
    fit_ct,
    fit_standard,
    predict_ct,
    predict_standard,
    resolve_rejections,
)
from .data import Dataset, InputError
from .glm import GAUSSIAN
from .selection import (
    DEFAULT_G_GRID,
    DEFAULT_K_GRID,
    cv_select,
    knn_baseline,
    knn_cv_select,
    make_folds,
)

SETTINGS = {
    "low_dim": {"n": 300, "m": 300, "p": 100},
    "high_dim": {"n": 200, "m": 200, "p": 300},
}
METHODS = ("CT", "ST", "KNN")
STREAMS = ("frequencies", "centers", "memberships", "features", "betas", "noise")


@dataclass(frozen=True)
class SimConfig:
    n: int
    m: int
    p: int
    sigma_c: float
    seed: int = 0
    n_classes: int = 3
    dirichlet_alpha: tuple[float, ...] = (2.0, 2.0, 2.0)

    def __post_init__(self):
        if self.p < 10 or self.p % 10:
            raise InputError(f"p must be a positive multiple of 10, got {self.p}")
        if self.n < 3 or self.m < 3:
            raise InputError("n and m must be at least 3")
        if self.sigma_c < 0:
            raise InputError("sigma_c must be nonnegative")
        if len(self.dirichlet_alpha) != self.n_classes:
            raise InputError("need one Dirichlet parameter per class")


@dataclass(frozen=True)
class SimInstance:
    train: Dataset
    test: Dataset
    class_probs: np.ndarray
    true_centers: np.ndarray
    true_betas: np.ndarray
    z_train: np.ndarray
    z_test: np.ndarray


def _streams(seed):
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.Generator(np.random.PCG64(c)) for name, c in zip(STREAMS, children)}


def generate_instance(config):
    rng = _streams(config.seed)
    K, p = config.n_classes, config.p
    probs = rng["frequencies"].dirichlet(config.dirichlet_alpha)
    centers = rng["centers"].normal(0.0, 1.0, size=(K, p)) * config.sigma_c
    z_train = rng["memberships"].choice(K, size=config.n, p=probs)
    z_test = rng["memberships"].choice(K, size=config.m, p=probs)
    X_train = centers[z_train] + rng["features"].standard_normal((config.n, p))
    X_test = centers[z_test] + rng["features"].standard_normal((config.m, p))
    betas = np.zeros((K, p))
    for k in range(K):
        betas[k, rng["betas"].choice(p, size=p // 10, replace=False)] = 1.0
    y_train = np.einsum("ij,ij->i", betas[z_train], X_train) + rng["noise"].standard_normal(config.n)
    y_test = np.einsum("ij,ij->i", betas[z_test], X_test) + rng["noise"].standard_normal(config.m)
    names = tuple(f"x{j + 1}" for j in range(p))
    return SimInstance(
        train=Dataset(X_train, y_train, names, response_name="y"),
        test=Dataset(X_test, y_test, names, response_name="y"),
        class_probs=probs,
        true_centers=centers,
        true_betas=betas,
        z_train=z_train,
        z_test=z_test,
    )


def oracle_mse(instance):
    """Test MSE of least squares per true class on the true support."""
    tr, te = instance.train, instance.test
    sq = 0.0
    for k, beta in enumerate(instance.true_betas):
        support = np.flatnonzero(beta)
        rows, trows = instance.z_train == k, instance.z_test == k
        if not trows.any():
            continue
        A = np.column_stack([np.ones(rows.sum()), tr.features[rows][:, support]])
        coef = np.linalg.lstsq(A, tr.response[rows], rcond=None)[0]
        At = np.column_stack([np.ones(trows.sum()), te.features[trows][:, support]])
        sq += np.sum((At @ coef - te.response[trows]) ** 2)
    return sq / te.n


@dataclass
class MethodResult:
    method: str
    mse: float
    G: int | None = None
    fraction: float | None = None
    k: int | None = None


def run_ct(instance, G_grid=DEFAULT_G_GRID, settings=None, J=10, seed=0, threads=1):
    """Cross-validated customized training, rejections resolved before scoring."""
    tr, te = instance.train, instance.test
    settings = settings or FitSettings()
    report = cv_select(tr.features, tr.response, GAUSSIAN, G_grid, settings, J, seed,
                       threads=threads)
    part = build_joint_partition(tr.features, te.features, report.selected_G)
    model = fit_ct(part, tr.features, tr.response, GAUSSIAN,
                   lambda_index=report.selected_index, settings=settings, threads=threads)
    model = resolve_rejections(model, tr.features, tr.response)
    pred = predict_ct(model, te.features)
    mse = float(np.mean((pred.values.filled(np.nan) - te.response) ** 2))
    return MethodResult("CT", mse, report.selected_G, report.selected_fraction), report


def run_st(instance, settings=None, J=10, seed=0, threads=1):
    tr, te = instance.train, instance.test
    settings = settings or FitSettings()
    report = cv_select(tr.features, tr.response, GAUSSIAN, (1,), settings, J, seed,
                       threads=threads)
    fit, idx = fit_standard(tr.features, tr.response, GAUSSIAN,
                            lambda_index=report.selected_index, settings=settings)
    mse = float(np.mean((predict_standard(fit, idx, te.features) - te.response) ** 2))
    return MethodResult("ST", mse, 1, report.selected_fraction), report


def run_knn(instance, k_grid=DEFAULT_K_GRID, J=10, seed=0):
    tr, te = instance.train, instance.test
    folds = make_folds(tr.n, J, seed)
    k, _ = knn_cv_select(tr.features, tr.response, k_grid, folds=folds)
    pred = knn_baseline(tr.features, tr.response, te.features, k)
    return MethodResult("KNN", float(np.mean((pred - te.response) ** 2)), k=k)


def run_study(setting, sigma_c_values, seeds, methods=METHODS, G_grid=DEFAULT_G_GRID,
              settings=None, J=10, k_grid=DEFAULT_K_GRID, threads=1, progress=None):
    """Run every method on every ``(sigma_c, seed)`` instance.

    ``setting`` is ``"low_dim"`` (n = m = 300, p = 100) or ``"high_dim"``
    (n = m = 200, p = 300). The instance seed also seeds each method's folds.
    Cells are independent and may run on ``threads`` workers; the returned
    rows are ordered by (sigma_c, seed, method) regardless.

    Returns
    -------
    list of dict
        One row per (sigma_c, seed, method) with keys ``setting, sigma_c,
        seed, method, mse, G_selected, lambda_fraction_selected``.
    """
    key = setting.replace("-", "_")
    if key not in SETTINGS:
        raise InputError(f"unknown setting {setting!r}; expected one of {sorted(SETTINGS)}")
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise InputError(f"unknown methods {sorted(unknown)}")
    if not len(sigma_c_values) or not len(seeds):
        raise InputError("sigma_c values and seeds must be nonempty")
    dims = SETTINGS[key]
    settings = settings or FitSettings()
    cells = [(float(s), int(seed)) for s in sigma_c_values for seed in seeds]

    def one_cell(cell):
        sigma_c, seed = cell
        t0 = time.perf_counter()
        inst = generate_instance(SimConfig(sigma_c=sigma_c, seed=seed, **dims))
        results = []
        for method in METHODS:
            if method not in methods:
                continue
            if method == "CT":
                results.append(run_ct(inst, G_grid, settings, J, seed)[0])
            elif method == "ST":
                results.append(run_st(inst, settings, J, seed)[0])
            else:
                results.append(run_knn(inst, k_grid, J, seed))
        if progress:
            progress(f"{key} sigma_c={sigma_c:g} seed={seed} "
                     f"({time.perf_counter() - t0:.1f}s)")
        return [
            {"setting": key, "sigma_c": sigma_c, "seed": seed, "method": r.method,
             "mse": r.mse, "G_selected": r.G,
             "lambda_fraction_selected": r.fraction}
            for r in results
        ]

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_cell = list(pool.map(one_cell, cells))
    else:
        per_cell = [one_cell(c) for c in cells]
    return [row for rows in per_cell for row in rows]


def summarize(rows):
    """Mean and standard error of the MSE per (setting, method, sigma_c)."""
    groups = {}
    for r in rows:
        groups.setdefault((r["setting"], r["method"], r["sigma_c"]), []).append(r["mse"])
    out = []
    for (setting, method, sigma_c), vals in sorted(groups.items()):
        v = np.asarray(vals)
        se = float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0
        out.append({"setting": setting, "method": method, "sigma_c": sigma_c,
                    "n_seeds": len(v), "mean_mse": float(v.mean()), "se_mse": se})
    return out


def percent_improvement(st_error, ct_error):
    """Relative improvement of CT over ST, in percent."""
    return (st_error - ct_error) / st_error * 100.0


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows_csv(path, rows, columns):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r[c]) for c in columns])


RESULT_COLUMNS = ("setting", "sigma_c", "seed", "method", "mse", "G_selected",
                  "lambda_fraction_selected")
SUMMARY_COLUMNS = ("setting", "method", "sigma_c", "n_seeds", "mean_mse", "se_mse")
