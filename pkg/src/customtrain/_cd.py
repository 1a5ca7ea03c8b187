"""Compiled coordinate-descent kernel for weighted lasso subproblems."""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _soft(z, gamma):
    if z > gamma:
        return z - gamma
    if z < -gamma:
        return z + gamma
    return 0.0


@njit(cache=True, nogil=True)
def _sweep(X, w, r, beta, xv, lam, n, coords):
    dmax = 0.0
    for j in coords:
        if xv[j] <= 0.0:
            continue
        g = 0.0
        for i in range(n):
            g += w[i] * X[i, j] * r[i]
        old = beta[j]
        new = _soft(g / n + xv[j] * old, lam) / xv[j]
        if new != old:
            delta = new - old
            for i in range(n):
                r[i] -= X[i, j] * delta
            beta[j] = new
            if abs(delta) > dmax:
                dmax = abs(delta)
    return dmax


@njit(cache=True, nogil=True)
def _intercept_step(w, r, wsum, n):
    s = 0.0
    for i in range(n):
        s += w[i] * r[i]
    d = s / wsum
    if d != 0.0:
        for i in range(n):
            r[i] -= d
    return d


@njit(cache=True, nogil=True)
def _cholesky_solve(H, b):
    """Solve ``H x = b`` for symmetric positive definite ``H``.

    Returns ``(x, ok)``; ``ok`` is False when a pivot is not safely positive.
    """
    k = H.shape[0]
    Lf = np.zeros((k, k))
    scale = 0.0
    for i in range(k):
        scale = max(scale, H[i, i])
    for i in range(k):
        for j in range(i + 1):
            s = H[i, j]
            for t in range(j):
                s -= Lf[i, t] * Lf[j, t]
            if i == j:
                if s <= 1e-10 * scale:
                    return b, False
                Lf[i, i] = np.sqrt(s)
            else:
                Lf[i, j] = s / Lf[j, j]
    x = b.copy()
    for i in range(k):
        s = x[i]
        for t in range(i):
            s -= Lf[i, t] * x[t]
        x[i] = s / Lf[i, i]
    for i in range(k - 1, -1, -1):
        s = x[i]
        for t in range(i + 1, k):
            s -= Lf[t, i] * x[t]
        x[i] = s / Lf[i, i]
    return x, True


@njit(cache=True, nogil=True)
def _polish(X, z, w, lam, beta, active, n, wsum, gram):
    """Exact minimizer on the active set with the current signs held fixed.

    The candidate is accepted only if every active coefficient keeps its
    sign, in which case it cannot have a larger objective than the current
    point. Returns ``(b0, accepted)``; ``beta`` is updated only on success.
    ``gram`` is either the ``(p, p)`` matrix ``X' W X / n`` or empty.
    """
    k = len(active)
    zbar = 0.0
    for i in range(n):
        zbar += w[i] * z[i]
    zbar /= wsum
    means = np.zeros(k)
    for a in range(k):
        j = active[a]
        s = 0.0
        for i in range(n):
            s += w[i] * X[i, j]
        means[a] = s / wsum
    Xc = np.empty((n, k))
    for a in range(k):
        j = active[a]
        for i in range(n):
            Xc[i, a] = X[i, j] - means[a]
    H = np.zeros((k, k))
    rhs = np.zeros(k)
    have_gram = gram.shape[0] > 0
    c = wsum / n
    for a in range(k):
        s = 0.0
        for i in range(n):
            s += w[i] * Xc[i, a] * (z[i] - zbar)
        rhs[a] = s / n - lam * np.sign(beta[active[a]])
        for b in range(a + 1):
            if have_gram:
                v = gram[active[a], active[b]] - c * means[a] * means[b]
            else:
                v = 0.0
                for i in range(n):
                    v += w[i] * Xc[i, a] * Xc[i, b]
                v /= n
            H[a, b] = v
            H[b, a] = v
    sol, ok = _cholesky_solve(H, rhs)
    if not ok:
        return 0.0, False
    for a in range(k):
        if np.sign(sol[a]) != np.sign(beta[active[a]]):
            return 0.0, False
    b0 = zbar
    for a in range(k):
        beta[active[a]] = sol[a]
        b0 -= means[a] * sol[a]
    return b0, True


@njit(cache=True, nogil=True)
def _residual(X, z, beta, b0, n, p):
    r = np.empty(n)
    for i in range(n):
        r[i] = z[i] - b0
    for j in range(p):
        bj = beta[j]
        if bj != 0.0:
            for i in range(n):
                r[i] -= X[i, j] * bj
    return r


@njit(cache=True, nogil=True)
def wls_lasso(X, z, w, lam, beta, b0, tol, max_sweeps, gram):
    """Minimize (1/2n) sum_i w_i (z_i - b0 - x_i.beta)^2 + lam * |beta|_1.

    Cyclic coordinate descent with active-set iteration: a full sweep over
    all coordinates, then sweeps over the nonzero set until the largest
    change drops below ``tol``, then another full sweep to confirm. The
    intercept is unpenalized and updated once per sweep. While the active
    set is being iterated, the sign-fixed least-squares solution on that set
    is tried periodically; it replaces the iterate only when it keeps every
    sign; ``gram`` (``X' W X / n``, or an empty array) speeds that solve up.
    ``beta`` is updated in place. Returns
    ``(b0, sweeps_used, converged)``.
    """
    n, p = X.shape
    r = _residual(X, z, beta, b0, n, p)
    xv = np.zeros(p)
    for j in range(p):
        s = 0.0
        for i in range(n):
            s += w[i] * X[i, j] * X[i, j]
        xv[j] = s / n
    wsum = w.sum()
    everything = np.arange(p)
    sweeps = 0
    polish_every = 8
    while sweeps < max_sweeps:
        d0 = _intercept_step(w, r, wsum, n)
        b0 += d0
        dmax = max(abs(d0), _sweep(X, w, r, beta, xv, lam, n, everything))
        sweeps += 1
        if dmax < tol:
            return b0, sweeps, True
        active = np.flatnonzero(beta)
        inner = 0
        while sweeps < max_sweeps:
            d0 = _intercept_step(w, r, wsum, n)
            b0 += d0
            dmax = max(abs(d0), _sweep(X, w, r, beta, xv, lam, n, active))
            sweeps += 1
            inner += 1
            if dmax < tol:
                break
            if inner % polish_every == 0:
                now = np.flatnonzero(beta)
                if len(now) == len(active) and len(now) < n:
                    saved = beta.copy()
                    nb0, ok = _polish(X, z, w, lam, beta, now, n, wsum, gram)
                    if ok:
                        b0 = nb0
                        r = _residual(X, z, beta, b0, n, p)
                    else:
                        beta[:] = saved
                        polish_every *= 2
                active = now
    return b0, sweeps, False


@njit(cache=True, nogil=True)
def _scores(X, B, b0, n, p, C):
    eta = np.empty((n, C))
    for i in range(n):
        for c in range(C):
            s = b0[c]
            for j in range(p):
                s += X[i, j] * B[c, j]
            eta[i, c] = s
    return eta


@njit(cache=True, nogil=True)
def _multinomial_objective(eta, y, v, lam, B, n, C):
    total = 0.0
    for i in range(n):
        m = eta[i, 0]
        for c in range(1, C):
            m = max(m, eta[i, c])
        s = 0.0
        for c in range(C):
            s += np.exp(eta[i, c] - m)
        total += v[i] * (m + np.log(s) - eta[i, y[i]])
    return total / n + lam * np.abs(B).sum()


@njit(cache=True, nogil=True)
def multinomial_lasso(X, y, v, lam, B, b0, present, tol, budget, prob_clip, intercept_clip):
    """Penalized symmetric multinomial fit by per-class partial Newton steps.

    For each observed class in turn, the log-likelihood is replaced by its
    quadratic approximation in that class's scores (clipped probabilities
    keep the weights away from zero) and the weighted lasso subproblem is
    solved. A step that raises the objective is halved back toward the
    previous coefficients up to 30 times. Stops when one pass over the
    classes moves no coefficient by more than ``tol``. ``B`` and ``b0`` are
    updated in place. Returns ``(sweeps_used, converged)``.
    """
    n, p = X.shape
    C = B.shape[0]
    no_gram = np.zeros((0, 0))
    eta = _scores(X, B, b0, n, p, C)
    obj = _multinomial_objective(eta, y, v, lam, B, n, C)
    used = 0
    z = np.empty(n)
    w = np.empty(n)
    while used < budget:
        B_start = B.copy()
        b0_start = b0.copy()
        for c in present:
            eta = _scores(X, B, b0, n, p, C)
            for i in range(n):
                m = eta[i, 0]
                for k in range(1, C):
                    m = max(m, eta[i, k])
                s = 0.0
                for k in range(C):
                    s += np.exp(eta[i, k] - m)
                pc = np.exp(eta[i, c] - m) / s
                pc = min(max(pc, prob_clip), 1.0 - prob_clip)
                curv = pc * (1.0 - pc)
                target = 1.0 if y[i] == c else 0.0
                z[i] = eta[i, c] + (target - pc) / curv
                w[i] = v[i] * curv
            row_old = B[c].copy()
            b_old = b0[c]
            row = B[c].copy()
            bc, sweeps, _ = wls_lasso(X, z, w, lam, row, b0[c], tol,
                                      max(budget - used, 1), no_gram)
            used += sweeps
            B[c] = row
            b0[c] = min(max(bc, -intercept_clip), intercept_clip)
            new_obj = _multinomial_objective(_scores(X, B, b0, n, p, C), y, v, lam, B, n, C)
            halvings = 0
            while new_obj > obj and halvings < 30:
                for j in range(p):
                    B[c, j] = 0.5 * (B[c, j] + row_old[j])
                b0[c] = 0.5 * (b0[c] + b_old)
                new_obj = _multinomial_objective(_scores(X, B, b0, n, p, C), y, v, lam, B,
                                                 n, C)
                halvings += 1
            obj = new_obj
        change = 0.0
        for c in range(C):
            change = max(change, abs(b0[c] - b0_start[c]))
            for j in range(p):
                change = max(change, abs(B[c, j] - B_start[c, j]))
        if change < tol:
            return used, True
    return used, False
