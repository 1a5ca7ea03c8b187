"""L1-regularized generalized linear models fit by coordinate descent.

Three families are supported: ``gaussian`` (squared error), ``binomial``
(logistic) and ``multinomial`` (symmetric softmax, one coefficient vector
per class). Every family minimizes

    -(1/n) sum_i v_i loglik_i(b0, beta) + lam * ||beta||_1

over a decreasing sequence of penalties, warm starting each solve from the
previous one. Features are standardized inside the fit; coefficients are
reported on the original feature scale.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ._cd import multinomial_lasso, wls_lasso
from .data import InputError, Standardizer, fit_standardizer
from .losses import weighted_class_decision

_NO_GRAM = np.zeros((0, 0))

PROB_CLIP = 1e-5
INTERCEPT_CLIP = 30.0
DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 100_000
DEFAULT_N_LAMBDA = 100

GAUSSIAN = "gaussian"
BINOMIAL = "binomial"
MULTINOMIAL = "multinomial"


class ConvergenceWarning(UserWarning):
    pass


def _logsumexp_rows(eta):
    top = eta.max(axis=1)
    return top + np.log(np.exp(eta - top[:, None]).sum(axis=1))


def softmax(eta, axis=1):
    e = np.exp(eta - eta.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


@dataclass(frozen=True)
class GlmFamily:
    name: str
    n_classes: int = 0

    def __post_init__(self):
        if self.name == GAUSSIAN:
            object.__setattr__(self, "n_classes", 0)
        elif self.name == BINOMIAL:
            object.__setattr__(self, "n_classes", 2)
        elif self.name == MULTINOMIAL:
            if self.n_classes < 2:
                raise InputError("multinomial family needs at least 2 classes")
        else:
            raise InputError(f"unknown family {self.name!r}")

    @classmethod
    def gaussian(cls):
        return cls(GAUSSIAN)

    @classmethod
    def binomial(cls):
        return cls(BINOMIAL)

    @classmethod
    def multinomial(cls, n_classes):
        return cls(MULTINOMIAL, n_classes)

    @property
    def is_classification(self):
        return self.name != GAUSSIAN

    def to_dict(self):
        return {"name": self.name, "n_classes": self.n_classes}


def as_family(family, n_classes=None):
    """Coerce a family name or :class:`GlmFamily` to a :class:`GlmFamily`."""
    if isinstance(family, GlmFamily):
        return family
    if family == MULTINOMIAL:
        return GlmFamily.multinomial(n_classes or 0)
    return GlmFamily(family)


def soft_threshold(z, gamma):
    """``sign(z) * max(|z| - gamma, 0)``, elementwise."""
    if np.any(np.asarray(gamma) < 0):
        raise InputError("threshold must be nonnegative")
    out = np.sign(z) * np.maximum(np.abs(z) - gamma, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def default_lambda_min_ratio(n, p):
    return 0.01 if n > p else 0.05


# -- likelihood pieces (evaluated on whatever feature scale is passed in) --

def _obs_weights(weights, n):
    return np.ones(n) if weights is None else np.asarray(weights, dtype=float)


def _linear_predictor(intercept, coef, X):
    coef = np.asarray(coef, dtype=float)
    if coef.ndim == 1:
        return intercept + X @ coef
    return np.asarray(intercept) + X @ coef.T


def neg_loglik(family, intercept, coef, X, y, weights=None):
    """Average negative log-likelihood ``-(1/n) sum v_i loglik_i``."""
    family = as_family(family, np.ndim(coef) == 2 and np.shape(coef)[0])
    X = np.asarray(X, dtype=float)
    v = _obs_weights(weights, X.shape[0])
    eta = _linear_predictor(intercept, coef, X)
    if family.name == GAUSSIAN:
        terms = 0.5 * (y - eta) ** 2
    elif family.name == BINOMIAL:
        terms = np.logaddexp(0.0, eta) - y * eta
    else:
        terms = _logsumexp_rows(eta) - eta[np.arange(len(y)), np.asarray(y, int)]
    return float(np.sum(v * terms) / X.shape[0])


def neg_loglik_grad(family, intercept, coef, X, y, weights=None):
    """Gradient of :func:`neg_loglik` as ``(d_intercept, d_coef)``."""
    family = as_family(family, np.ndim(coef) == 2 and np.shape(coef)[0])
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    v = _obs_weights(weights, n)
    eta = _linear_predictor(intercept, coef, X)
    if family.name == GAUSSIAN:
        resid = v * (y - eta)
    elif family.name == BINOMIAL:
        resid = v * (y - expit(eta))
    else:
        Y = np.eye(family.n_classes)[np.asarray(y, int)]
        resid = v[:, None] * (Y - softmax(eta, axis=1))
        return -resid.sum(axis=0) / n, -(resid.T @ X) / n
    return -resid.sum() / n, -(X.T @ resid) / n


def penalized_objective(family, intercept, coef, X, y, lam, weights=None):
    return neg_loglik(family, intercept, coef, X, y, weights) + lam * np.abs(coef).sum()


# -- penalty grid --

def lambda_max(features, response, family, weights=None):
    """Smallest penalty at which every coefficient is zero.

    ``features`` must already be standardized.
    """
    if family == MULTINOMIAL:
        family = as_family(family, int(np.max(response)) + 1)
    family = as_family(family)
    X = np.asarray(features, dtype=float)
    n = X.shape[0]
    v = _obs_weights(weights, n)
    if family.name == GAUSSIAN:
        ybar = np.sum(v * response) / v.sum()
        return float(np.max(np.abs(X.T @ (v * (response - ybar))), initial=0.0) / n)
    y = np.asarray(response, dtype=int)
    Y = np.eye(family.n_classes)[y]
    pbar = (v @ Y) / v.sum()
    if family.name == BINOMIAL:
        G = X.T @ (v * (Y[:, 1] - pbar[1]))
    else:
        G = X.T @ (v[:, None] * (Y - pbar))
    return float(np.max(np.abs(G), initial=0.0) / n)


def lambdas_from_fractions(lmax, fractions, lambda_min_ratio):
    """Penalties at positions ``fractions`` on the log-spaced path.

    A fraction of 1 is ``lmax`` (fully penalized); 0 is
    ``lmax * lambda_min_ratio``.
    """
    f = np.asarray(fractions, dtype=float)
    return lmax * lambda_min_ratio ** (1.0 - f)


def default_fractions(n_lambda=DEFAULT_N_LAMBDA):
    """Evenly spaced fractions from 1 (largest penalty) down to 0."""
    if n_lambda == 1:
        return np.ones(1)
    return np.linspace(1.0, 0.0, n_lambda)


def compute_lambda_path(features, response, family, n_lambda=DEFAULT_N_LAMBDA,
                        lambda_min_ratio=None, weights=None):
    """Log-spaced decreasing penalties from ``lambda_max`` downward.

    A constant response (or a single class) gives ``lambda_max == 0`` and the
    degenerate one-point path ``[0.0]``.
    """
    if n_lambda < 1:
        raise InputError("n_lambda must be at least 1")
    X = np.asarray(features, dtype=float)
    if lambda_min_ratio is None:
        lambda_min_ratio = default_lambda_min_ratio(*X.shape)
    if not 0 < lambda_min_ratio < 1:
        raise InputError("lambda_min_ratio must lie in (0, 1)")
    lmax = lambda_max(X, response, family, weights)
    if lmax <= 0.0:
        return np.zeros(1)
    return lambdas_from_fractions(lmax, default_fractions(n_lambda), lambda_min_ratio)


# -- fitted path --

@dataclass
class GlmFit:
    """A regularization path on the original feature scale.

    ``intercepts`` has shape ``(L,)`` (or ``(L, C)`` for multinomial) and
    ``coefs`` shape ``(L, p)`` (or ``(L, C, p)``).
    """

    family: GlmFamily
    lambdas: np.ndarray
    intercepts: np.ndarray
    coefs: np.ndarray
    standardizer: Standardizer
    n_train: int
    converged: np.ndarray
    fractions: np.ndarray | None = None
    lambda_min_ratio: float | None = None
    degenerate: bool = False
    saturated: bool = False
    feature_names: tuple[str, ...] | None = None
    n_sweeps: np.ndarray = field(default=None, repr=False)

    @property
    def n_lambda(self):
        return len(self.lambdas)

    @property
    def n_features(self):
        return self.coefs.shape[-1]

    def index(self, k):
        """Clamp a path index; degenerate one-point paths serve every index."""
        if k < 0 or (not self.degenerate and k >= self.n_lambda):
            raise InputError(f"lambda index {k} out of range 0..{self.n_lambda - 1}")
        return min(k, self.n_lambda - 1)

    def standardized(self, k):
        """``(intercept, coef)`` at path index ``k`` on the standardized scale."""
        k = self.index(k)
        s = self.standardizer
        coef = self.coefs[k] * s.scales
        intercept = self.intercepts[k] + self.coefs[k] @ s.means
        return intercept, coef

    def nonzero_count(self, k):
        c = self.coefs[self.index(k)]
        if c.ndim == 1:
            return int(np.count_nonzero(c))
        return int(np.count_nonzero(np.any(c != 0, axis=0)))

    def to_dict(self):
        def sparse(c):
            idx = np.flatnonzero(c)
            return [[int(j), float(c[j])] for j in idx]

        if self.family.name == MULTINOMIAL:
            coefs = [[sparse(row) for row in ck] for ck in self.coefs]
        else:
            coefs = [sparse(ck) for ck in self.coefs]
        return {
            "family": self.family.to_dict(),
            "n_features": self.n_features,
            "n_train": self.n_train,
            "lambdas": self.lambdas.tolist(),
            "fractions": None if self.fractions is None else self.fractions.tolist(),
            "lambda_min_ratio": self.lambda_min_ratio,
            "intercepts": self.intercepts.tolist(),
            "coefficients": coefs,
            "converged": self.converged.tolist(),
            "degenerate": self.degenerate,
            "saturated": self.saturated,
            "feature_names": None if self.feature_names is None else list(self.feature_names),
            "standardization": self.standardizer.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        family = GlmFamily(d["family"]["name"], d["family"]["n_classes"])
        p = d["n_features"]
        L = len(d["lambdas"])
        if family.name == MULTINOMIAL:
            coefs = np.zeros((L, family.n_classes, p))
            for k, per_class in enumerate(d["coefficients"]):
                for c, pairs in enumerate(per_class):
                    for j, val in pairs:
                        coefs[k, c, j] = val
        else:
            coefs = np.zeros((L, p))
            for k, pairs in enumerate(d["coefficients"]):
                for j, val in pairs:
                    coefs[k, j] = val
        names = d.get("feature_names")
        return cls(
            family=family,
            lambdas=np.asarray(d["lambdas"], dtype=float),
            intercepts=np.asarray(d["intercepts"], dtype=float),
            coefs=coefs,
            standardizer=Standardizer.from_dict(d["standardization"]),
            n_train=d["n_train"],
            converged=np.asarray(d["converged"], dtype=bool),
            fractions=None if d.get("fractions") is None else np.asarray(d["fractions"]),
            lambda_min_ratio=d.get("lambda_min_ratio"),
            degenerate=d["degenerate"],
            saturated=d["saturated"],
            feature_names=None if names is None else tuple(names),
        )


def _null_intercept(family, y, v):
    """Intercept of the coefficient-free model, clipped to the bounds."""
    if family.name == GAUSSIAN:
        return np.sum(v * y) / v.sum()
    Y = np.eye(family.n_classes)[y]
    pbar = np.clip((v @ Y) / v.sum(), PROB_CLIP, 1 - PROB_CLIP)
    if family.name == BINOMIAL:
        return float(np.clip(np.log(pbar[1] / (1 - pbar[1])), -INTERCEPT_CLIP, INTERCEPT_CLIP))
    b0 = np.log(pbar)
    return np.clip(b0 - b0.mean(), -INTERCEPT_CLIP, INTERCEPT_CLIP)


def _solve_binomial(Xs, y, v, lam, beta, b0, tol, budget):
    n = Xs.shape[0]
    used = 0
    obj = penalized_objective(BINOMIAL, b0, beta, Xs, y, lam, v)
    while used < budget:
        eta = b0 + Xs @ beta
        prob = np.clip(expit(eta), PROB_CLIP, 1 - PROB_CLIP)
        curv = prob * (1 - prob)
        z = eta + (y - prob) / curv
        beta_old, b0_old = beta.copy(), b0
        b0, sweeps, _ = wls_lasso(Xs, z, v * curv, lam, beta, b0, tol, budget - used,
                                  _NO_GRAM)
        used += sweeps
        b0 = float(np.clip(b0, -INTERCEPT_CLIP, INTERCEPT_CLIP))
        new_obj = penalized_objective(BINOMIAL, b0, beta, Xs, y, lam, v)
        halvings = 0
        while new_obj > obj and halvings < 30:
            beta[:] = 0.5 * (beta + beta_old)
            b0 = 0.5 * (b0 + b0_old)
            new_obj = penalized_objective(BINOMIAL, b0, beta, Xs, y, lam, v)
            halvings += 1
        obj = new_obj
        change = max(np.max(np.abs(beta - beta_old), initial=0.0), abs(b0 - b0_old))
        if change < tol:
            return b0, used, True
    return b0, used, False


def _solve_multinomial(Xs, y, v, lam, B, b0, present, tol, budget):
    return multinomial_lasso(Xs, y, v, lam, B, b0, present.astype(np.int64), tol, budget,
                             PROB_CLIP, INTERCEPT_CLIP)


def fit_glm_path(features, response, family, lambdas=None, *, fractions=None,
                 n_lambda=DEFAULT_N_LAMBDA, lambda_min_ratio=None, tol=DEFAULT_TOL,
                 max_iter=DEFAULT_MAX_ITER, class_weights=None, standardize=True,
                 feature_names=None):
    """Fit an L1-penalized GLM along a decreasing penalty path.

    Parameters
    ----------
    features : (n, p) array
    response : (n,) array
        Real values for ``gaussian``; class codes ``0..C-1`` otherwise.
    family : str or GlmFamily
    lambdas : decreasing array, optional
        Explicit penalties. By default the path is built from
        ``fractions`` (or ``n_lambda`` evenly spaced fractions) between
        ``lambda_max`` and ``lambda_max * lambda_min_ratio``.
    tol : float
        Convergence threshold on the largest absolute coefficient change
        in one sweep (or one reweighting step for classification).
    max_iter : int
        Coordinate sweep budget per penalty value.
    class_weights : sequence, optional
        Per-class observation weights in the likelihood. Unused unless given.
    standardize : bool
        Center and scale columns by the training rows before fitting.

    Returns
    -------
    GlmFit
        Non-converged penalties are flagged in ``converged`` and raise a
        :class:`ConvergenceWarning`; binomial input with a single class is
        returned with saturated intercepts.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim != 2:
        raise InputError("features must be a 2-D matrix")
    n, p = X.shape
    if n < 1:
        raise InputError("need at least one training row")
    n_classes = None
    if family == MULTINOMIAL:
        n_classes = int(np.max(response)) + 1
    family = as_family(family, n_classes)
    y = np.asarray(response, dtype=int if family.is_classification else float)
    if y.shape != (n,):
        raise InputError("response length does not match row count")
    if family.is_classification and (y.min() < 0 or y.max() >= family.n_classes):
        raise InputError("class codes outside 0..C-1")

    v = np.ones(n)
    if class_weights is not None:
        if not family.is_classification:
            raise InputError("class weights need a classification family")
        v = np.asarray(class_weights, dtype=float)[y]

    std = fit_standardizer(X) if standardize else Standardizer(np.zeros(p), np.ones(p))
    Xs = np.asfortranarray(std.apply(X))
    if lambda_min_ratio is None:
        lambda_min_ratio = default_lambda_min_ratio(n, p)

    lmax = lambda_max(Xs, y, family, v)
    if lambdas is not None:
        lambdas = np.atleast_1d(np.asarray(lambdas, dtype=float))
        if np.any(np.diff(lambdas) >= 0) or np.any(lambdas < 0):
            raise InputError("lambdas must be nonnegative and strictly decreasing")
        fractions = None
    else:
        if fractions is None:
            fractions = default_fractions(n_lambda)
        fractions = np.asarray(fractions, dtype=float)
        if np.any(np.diff(fractions) >= 0):
            raise InputError("fractions must be strictly decreasing")
        lambdas = lambdas_from_fractions(lmax, fractions, lambda_min_ratio)

    saturated = False
    degenerate = lmax <= 0.0
    if degenerate:
        lambdas = np.zeros(1)
        fractions = None if fractions is None else fractions[:1]
        if family.is_classification:
            saturated = len(np.unique(y)) == 1

    L = len(lambdas)
    C = family.n_classes
    shape = (L, C, p) if family.name == MULTINOMIAL else (L, p)
    coefs_std = np.zeros(shape)
    intercepts_std = np.zeros((L, C) if family.name == MULTINOMIAL else L)
    converged = np.ones(L, dtype=bool)
    sweeps_used = np.zeros(L, dtype=int)

    b0 = _null_intercept(family, y, v)
    if saturated:
        # one observed class: push its score to the bound
        if family.name == BINOMIAL:
            b0 = INTERCEPT_CLIP if y[0] == 1 else -INTERCEPT_CLIP
        else:
            b0 = np.full(C, -INTERCEPT_CLIP)
            b0[y[0]] = INTERCEPT_CLIP
    if family.name == MULTINOMIAL:
        beta = np.zeros((C, p))
        present = np.flatnonzero(np.bincount(y, minlength=C))
        absent = np.setdiff1d(np.arange(C), present)
        if len(absent) and not saturated:
            b0 = b0.copy()
            b0[absent] = -INTERCEPT_CLIP
    else:
        beta = np.zeros(p)

    gram = None
    for k, lam in enumerate(lambdas):
        if saturated or lam >= lmax:
            intercepts_std[k] = b0
            continue
        if family.name == GAUSSIAN:
            if gram is None:
                gram = (Xs.T @ (v[:, None] * Xs)) / n
            b0, sweeps, ok = wls_lasso(Xs, y, v, lam, beta, b0, tol, max_iter, gram)
        elif family.name == BINOMIAL:
            b0, sweeps, ok = _solve_binomial(Xs, y, v, lam, beta, b0, tol, max_iter)
        else:
            sweeps, ok = _solve_multinomial(Xs, y, v, lam, beta, b0, present, tol, max_iter)
        converged[k] = ok
        sweeps_used[k] = sweeps
        coefs_std[k] = beta
        intercepts_std[k] = b0

    if not converged.all():
        warnings.warn(f"{np.count_nonzero(~converged)} of {L} penalties did not "
                      f"converge within {max_iter} sweeps", ConvergenceWarning,
                      stacklevel=2)

    if family.name == MULTINOMIAL:
        intercepts_std = intercepts_std - intercepts_std.mean(axis=1, keepdims=True)

    safe = np.where(std.scales > 0, std.scales, 1.0)
    coefs = np.where(std.scales > 0, coefs_std / safe, 0.0)
    intercepts = intercepts_std - coefs @ std.means

    return GlmFit(
        family=family,
        lambdas=np.asarray(lambdas, dtype=float),
        intercepts=intercepts,
        coefs=coefs,
        standardizer=std,
        n_train=n,
        converged=converged,
        fractions=fractions,
        lambda_min_ratio=lambda_min_ratio,
        degenerate=degenerate,
        saturated=saturated,
        feature_names=None if feature_names is None else tuple(feature_names),
        n_sweeps=sweeps_used,
    )


def _check_features(fit, features):
    X = np.asarray(features, dtype=float)
    if X.ndim != 2 or X.shape[1] != fit.n_features:
        raise InputError(f"expected {fit.n_features} feature columns, "
                         f"got {X.shape[-1] if X.ndim else 0}")
    return X


def predict_glm(fit, lambda_index, features, mode="response", class_weights=None):
    """Predictions from one point on a fitted path.

    ``mode`` is ``"response"`` (mean of the response: fitted value for
    gaussian, class-1 probability for binomial, class probabilities for
    multinomial), ``"probability"`` (class probability matrix, classification
    only) or ``"class"`` (cost-weighted decision).
    """
    X = _check_features(fit, features)
    k = fit.index(lambda_index)
    eta = _linear_predictor(fit.intercepts[k], fit.coefs[k], X)
    return _from_linear_predictor(fit.family, eta, mode, class_weights)


def predict_path(fit, features, mode="response", class_weights=None):
    """Predictions at every path point, stacked on the leading axis."""
    X = _check_features(fit, features)
    out = []
    for k in range(fit.n_lambda):
        eta = _linear_predictor(fit.intercepts[k], fit.coefs[k], X)
        out.append(_from_linear_predictor(fit.family, eta, mode, class_weights))
    return np.stack(out)


def _from_linear_predictor(family, eta, mode, class_weights):
    if family.name == GAUSSIAN:
        if mode != "response":
            raise InputError(f"mode {mode!r} needs a classification family")
        return eta
    if family.name == BINOMIAL:
        p1 = expit(eta)
        if mode == "response":
            return p1
        probs = np.column_stack([1.0 - p1, p1])
    else:
        probs = softmax(eta, axis=1)
        if mode == "response":
            return probs
    if mode == "probability":
        return probs
    if mode == "class":
        from .losses import LossSpec, MISCLASSIFICATION
        spec = None if class_weights is None else LossSpec(MISCLASSIFICATION, class_weights)
        return weighted_class_decision(probs, spec)
    raise InputError(f"unknown prediction mode {mode!r}")
