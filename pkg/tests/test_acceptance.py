"""Acceptance criteria, one test per criterion.

Each test records a ``PASS``/``FAIL`` line (shown in the pytest terminal
summary, or printed when this file is run as a script). Tolerances and
time budgets are pinned as module constants.
"""

import subprocess
import sys
import time
import warnings

import numpy as np
from scipy.special import expit

from customtrain.cluster import cut_by_count, cut_by_height, hclust_complete
from customtrain.customize import (
    FitSettings,
    build_joint_partition,
    fit_ct,
    fit_standard,
    predict_ct,
    predict_standard,
    resolve_rejections,
)
from customtrain.glm import (
    BINOMIAL,
    GAUSSIAN,
    ConvergenceWarning,
    GlmFamily,
    fit_glm_path,
    neg_loglik,
    neg_loglik_grad,
    predict_glm,
    soft_threshold,
)
from customtrain.losses import MISCLASSIFICATION, LossSpec, weighted_class_decision
from customtrain.simulation import SETTINGS, SimConfig, generate_instance, run_ct, run_st

from conftest import ACCEPTANCE_LINES
from oracles import grid_search, naive_complete_linkage, penalized_objective_np
from test_cluster import merge_sets
from test_glm import kkt_violation, make_problem

KKT_TOL = 1e-4
CLOSED_FORM_TOL = 1e-6
GRID_TOL = 1e-3
FD_STEP = 1e-5
FD_REL_TOL = 1e-6
CT_OVER_ST_SEPARATED = 0.6
CT_OVER_ST_UNCLUSTERED = 1.15
CANCER_THRESHOLD = 1 / 3

BUDGET_REDUCTION = 60
BUDGET_SOLVER = 120
BUDGET_CLUSTERING = 60
BUDGET_SIMULATION = 15 * 60


def record(name, ok, detail, elapsed=None, budget=None):
    if budget is not None:
        within = elapsed <= budget
        detail = f"{detail}; {elapsed:.1f}s of {budget}s budget"
        ok = ok and within
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def test_single_cluster_reduces_to_standard_training():
    t0 = time.perf_counter()
    settings = FitSettings(np.linspace(1, 0, 30))
    families = {"gaussian": GAUSSIAN, "binomial": BINOMIAL,
                "multinomial": GlmFamily.multinomial(3)}
    mismatches = 0
    for name, family in families.items():
        for seed in range(20):
            rng = np.random.default_rng(seed)
            fam = family if isinstance(family, str) else "multinomial"
            X, y = make_problem(rng, fam, 60, 6)
            Xte = rng.normal(size=(25, 6)) * 2
            part = build_joint_partition(X, Xte, 1)
            for k in (0, 10, 29):
                ct = predict_ct(fit_ct(part, X, y, family, lambda_index=k, settings=settings),
                                Xte)
                fit, idx = fit_standard(X, y, family, lambda_index=k, settings=settings)
                st = predict_standard(fit, idx, Xte)
                if not np.array_equal(ct.values.data, st) or ct.rejected.any():
                    mismatches += 1
    ok = record("G=1 reduces to ST", mismatches == 0,
                f"{mismatches} mismatching predictions over 3 families x 20 datasets x 3 penalties",
                time.perf_counter() - t0, BUDGET_REDUCTION)
    assert ok


def test_solver_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)

    worst_kkt = 0.0
    families = [GAUSSIAN, BINOMIAL, "multinomial"]
    done = 0
    while done < 50:
        fam = families[done % 3]
        n, p = int(rng.integers(15, 80)), int(rng.integers(1, 15))
        X, y = make_problem(rng, fam, n, p)
        if fam != GAUSSIAN and len(np.unique(y)) < 2:
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("error", ConvergenceWarning)
            fit = fit_glm_path(X, y, fam, n_lambda=10)
        worst_kkt = max(worst_kkt, max(kkt_violation(fit, X, y, k) for k in range(10)))
        done += 1

    n, p = 50, 8
    A = rng.normal(size=(n, p))
    A -= A.mean(axis=0)
    Q, _ = np.linalg.qr(A)
    X = Q * np.sqrt(n)
    y = X @ rng.normal(0, 2, size=p) + rng.normal(size=n)
    fit = fit_glm_path(X, y, GAUSSIAN, n_lambda=30)
    worst_closed = max(
        np.max(np.abs(fit.coefs[k] - soft_threshold(X.T @ (y - y.mean()) / n, lam)))
        for k, lam in enumerate(fit.lambdas))

    worst_grid = 0.0
    for fam in (GAUSSIAN, BINOMIAL):
        for p in (1, 2):
            for _ in range(3):
                X, y = make_problem(rng, fam, 30, p)
                fit = fit_glm_path(X, y, fam, n_lambda=6)
                Xs = fit.standardizer.apply(X)
                for k in (1, 3, 5):
                    b0, coef = fit.standardized(k)
                    ours = penalized_objective_np(fam, b0, coef, Xs, y, fit.lambdas[k])
                    ref, _ = grid_search(fam, Xs, y, fit.lambdas[k])
                    worst_grid = max(worst_grid, abs(ours - ref))

    worst_fd = 0.0
    for fam in families:
        for _ in range(10):
            n, p = int(rng.integers(3, 21)), int(rng.integers(1, 6))
            X, y = make_problem(rng, fam, n, p)
            shape = (3, p) if fam == "multinomial" else (p,)
            b0 = rng.normal(size=3) if fam == "multinomial" else float(rng.normal())
            coef = rng.normal(size=shape)
            _, g = neg_loglik_grad(fam, b0, coef, X, y)
            fd = np.zeros(shape)
            for idx in np.ndindex(shape):
                up, dn = coef.copy(), coef.copy()
                up[idx] += FD_STEP
                dn[idx] -= FD_STEP
                fd[idx] = (neg_loglik(fam, b0, up, X, y)
                           - neg_loglik(fam, b0, dn, X, y)) / (2 * FD_STEP)
            worst_fd = max(worst_fd, np.linalg.norm(g - fd) / np.linalg.norm(g))

    ok = (worst_kkt < KKT_TOL and worst_closed < CLOSED_FORM_TOL and worst_grid < GRID_TOL
          and worst_fd < FD_REL_TOL)
    ok = record("solver correctness", ok,
                f"KKT {worst_kkt:.1e} (<{KKT_TOL:g}), closed form {worst_closed:.1e} "
                f"(<{CLOSED_FORM_TOL:g}), grid {worst_grid:.1e} (<{GRID_TOL:g}), "
                f"finite diff {worst_fd:.1e} (<{FD_REL_TOL:g})",
                time.perf_counter() - t0, BUDGET_SOLVER)
    assert ok


def test_clustering_matches_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(31)
    bad_merges = bad_cuts = 0
    for _ in range(50):
        n = int(rng.integers(2, 31))
        X = rng.normal(size=(n, int(rng.integers(1, 4))))
        dend = hclust_complete(X)
        ref = [(frozenset([a, b]), h) for a, b, h in naive_complete_linkage(X)]
        bad_merges += merge_sets(dend) != ref
        for G in range(1, n + 1):
            a = cut_by_count(dend, G)
            b = cut_by_height(dend, a.height)
            bad_cuts += a.G != G or not np.array_equal(a.labels, b.labels)
    ok = record("complete linkage oracle", bad_merges == 0 and bad_cuts == 0,
                f"{bad_merges} of 50 dendrograms differ, {bad_cuts} inconsistent cuts",
                time.perf_counter() - t0, BUDGET_CLUSTERING)
    assert ok


def test_simulation_pattern():
    t0 = time.perf_counter()
    mse = {}
    for setting, sigmas in (("low_dim", (0.0, 5.0, 10.0)), ("high_dim", (10.0,))):
        for s in sigmas:
            for seed in range(10):
                inst = generate_instance(SimConfig(sigma_c=s, seed=seed, **SETTINGS[setting]))
                mse.setdefault((setting, s, "CT"), []).append(run_ct(inst, seed=seed)[0].mse)
                mse.setdefault((setting, s, "ST"), []).append(run_st(inst, seed=seed)[0].mse)
    m = {k: float(np.mean(v)) for k, v in mse.items()}
    sep = m["low_dim", 10.0, "CT"] / m["low_dim", 10.0, "ST"]
    flat = m["low_dim", 0.0, "CT"] / m["low_dim", 0.0, "ST"]
    high = m["high_dim", 10.0, "CT"] / m["high_dim", 10.0, "ST"]
    ok = sep < CT_OVER_ST_SEPARATED and flat <= CT_OVER_ST_UNCLUSTERED and high < 1.0
    ok = record("simulation pattern", ok,
                f"low-dim CT/ST at sigma_c=10 {sep:.3f} (<{CT_OVER_ST_SEPARATED}), "
                f"at sigma_c=0 {flat:.3f} (<={CT_OVER_ST_UNCLUSTERED}), "
                f"sigma_c=5 {m['low_dim', 5.0, 'CT'] / m['low_dim', 5.0, 'ST']:.3f}; "
                f"high-dim at sigma_c=10 {high:.3f} (<1)",
                time.perf_counter() - t0, BUDGET_SIMULATION)
    assert ok


def test_rejection_lifecycle():
    settings = FitSettings(np.linspace(1, 0, 10))
    Xtr, ytr = np.array([[0.0], [1.0]]), np.array([0.0, 1.0])

    Xte = np.array([[100.0], [101.0]])
    part = build_joint_partition(Xtr, Xte, 2)
    model = fit_ct(part, Xtr, ytr, GAUSSIAN, settings=settings)
    pred = predict_ct(model, Xte)
    expected = (pred.rejected.tolist() == [True, True] and bool(pred.values.mask.all())
                and part.rejected_clusters == {1}
                and part.clusters[1].test_indices.tolist() == [0, 1])
    resolved = predict_ct(resolve_rejections(model, Xtr, ytr), Xte)
    defined = not resolved.rejected.any() and np.all(np.isfinite(resolved.values.data))
    d_prime = resolved.resolved_height.tolist() == [101.0, 101.0]

    # with a test row next to the training rows, its prediction must not move
    Xte2 = np.array([[0.5], [100.0], [101.0]])
    model2 = fit_ct(build_joint_partition(Xtr, Xte2, 2), Xtr, ytr, GAUSSIAN, settings=settings)
    a = predict_ct(model2, Xte2)
    b = predict_ct(resolve_rejections(model2, Xtr, ytr), Xte2)
    unchanged = (a.rejected.tolist() == [False, True, True]
                 and a.values.data[0].tobytes() == b.values.data[0].tobytes())

    ok = record("rejection lifecycle", expected and defined and d_prime and unchanged,
                f"expected rejection {expected}, resolved defined {defined}, "
                f"d' = {resolved.resolved_height.tolist()} (root 101), "
                f"non-rejected bit-identical {unchanged}")
    assert ok


def test_asymmetric_loss_threshold():
    # class 0 = normal (weight 1), class 1 = cancer (weight 2)
    spec = LossSpec(MISCLASSIFICATION, (1.0, 2.0))
    sweep = np.linspace(0, 1, 3001)
    sweep = sweep[np.abs(sweep - CANCER_THRESHOLD) > 1e-9]
    P = np.column_stack([1 - sweep, sweep])
    decision = weighted_class_decision(P, spec)
    rule_ok = np.array_equal(decision == 1, sweep > CANCER_THRESHOLD)

    # the same flip through a fitted binomial model's class predictions
    fit = fit_glm_path(np.array([[0.0], [1.0], [2.0], [3.0]]), np.array([0, 0, 1, 1]),
                       BINOMIAL, n_lambda=1)
    eta = np.log(sweep[1:-1] / (1 - sweep[1:-1]))
    fit.intercepts[:] = 0.0
    fit.coefs[:] = 1.0
    cls = predict_glm(fit, 0, eta[:, None], "class", (1.0, 2.0))
    p1 = expit(eta)
    model_ok = np.array_equal(cls == 1, p1 > CANCER_THRESHOLD)
    ok = record("asymmetric loss", rule_ok and model_ok,
                f"cancer predicted exactly when p(cancer) > 1/3 over {len(sweep)} "
                f"probabilities: rule {rule_ok}, fitted model {model_ok}")
    assert ok


def _ct(*args):
    return subprocess.run([sys.executable, "-m", "customtrain.cli", *map(str, args)],
                          capture_output=True, text=True)


def test_cli_determinism(tmp_path):
    rng = np.random.default_rng(5)
    X = rng.normal(size=(90, 4))
    X[45:] += 5
    y = np.where(np.arange(90) < 45, X[:, 0], -X[:, 1]) + 0.1 * rng.normal(size=90)
    np.savetxt(tmp_path / "train.csv", np.column_stack([X[:70], y[:70]]), delimiter=",",
               header="a,b,c,d,y", comments="")
    np.savetxt(tmp_path / "test.csv", X[70:], delimiter=",", header="a,b,c,d", comments="")

    runs = {}
    for tag, threads in (("first", 1), ("second", 1), ("threads4", 4)):
        out = tmp_path / tag
        fit = _ct("cv-fit", "--train", tmp_path / "train.csv", "--test", tmp_path / "test.csv",
                  "--response", "y", "--seed", 3, "--threads", threads, "--out-dir", out / "fit")
        sim = _ct("simulate", "--setting", "low-dim", "--sigma-c", "0,10", "--seeds", 2,
                  "--methods", "CT,ST", "--g-grid", "1,3", "--lambda-count", 30,
                  "--threads", threads, "--out-dir", out / "sim")
        assert fit.returncode == 0, fit.stderr
        assert sim.returncode == 0, sim.stderr
        runs[tag] = {name: (out / name).read_bytes() for name in
                     ("fit/model.json", "fit/cv_report.json", "fit/cv_report.csv",
                      "sim/results.csv", "sim/summary.csv")}
    same = runs["first"] == runs["second"] == runs["threads4"]
    ok = record("determinism", same,
                "cv-fit and simulate outputs byte-identical across two runs and "
                f"--threads 1 vs 4: {same}")
    assert ok


if __name__ == "__main__":
    import tempfile
    from pathlib import Path

    failed = 0
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            try:
                if "tmp_path" in fn.__code__.co_varnames[:fn.__code__.co_argcount]:
                    with tempfile.TemporaryDirectory() as d:
                        fn(Path(d))
                else:
                    fn()
            except AssertionError:
                failed += 1
    sys.exit(1 if failed else 0)
