"""Independent reference implementations used to cross-check the library.

Each oracle takes a different route from the code under test: dense
matrices instead of block slicing, brute-force minimisation instead of a
monotone chain, scipy.stats instead of scipy.special, Monte Carlo instead
of closed forms.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import stats
from scipy.optimize import brentq


# --- parameter space ---------------------------------------------------------


def dense_restriction(task_dims, shared_dim, i):
    """Matrix of the restriction to client i: rows (task_i, shared), columns the global vector."""
    m = len(task_dims)
    n = sum(task_dims) + shared_dim
    rows = task_dims[i] + shared_dim
    r = np.zeros((rows, n))
    off = sum(task_dims[:i])
    r[: task_dims[i], off : off + task_dims[i]] = np.eye(task_dims[i])
    r[task_dims[i] :, sum(task_dims) :] = np.eye(shared_dim) / math.sqrt(m)
    return r


def dense_virtual_average(task_dims, shared_dim, local_vectors):
    """sum_i R_i^T R_i-style recombination using dense matrices.

    local_vectors[i] is the client's (task_i, raw shared copy).  The raw copy is
    scaled into the view, then mapped back with the transpose.
    """
    m = len(task_dims)
    out = 0.0
    for i, v in enumerate(local_vectors):
        r = dense_restriction(task_dims, shared_dim, i)
        view = np.concatenate([v[: task_dims[i]], v[task_dims[i] :] / math.sqrt(m)])
        out = out + r.T @ view
    return out


# --- calculus ----------------------------------------------------------------


def central_difference(f, x, h=1e-6):
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h * max(1.0, abs(x[k]))
        g[k] = (f(x + e) - f(x - e)) / (2 * e[k])
    return g


def naive_global_loss(tasks, vector, task_dims, shared_dim):
    """Loop over samples one at a time, no vectorisation."""
    m = len(tasks)
    shared = vector[sum(task_dims) :]
    total = 0.0
    off = 0
    for i, t in enumerate(tasks):
        w = vector[off : off + task_dims[i]]
        off += task_dims[i]
        acc = 0.0
        for x, y in zip(t.features, t.labels):
            if t.model == "linear":
                z = sum(a * b for a, b in zip(x, np.concatenate([w, shared])))
            else:
                hidden = shared.reshape(t.task_dim, -1) @ x
                z = float(w @ hidden)
            if t.loss_kind == "quadratic":
                acc += 0.5 * (z - y) ** 2
            else:
                acc += math.log1p(math.exp(-abs(z))) + max(z, 0.0) - y * z
        val = acc / len(t.labels)
        if t.amplitude:
            val += t.amplitude * sum(math.sin(t.frequency * u) for u in np.concatenate([w, shared]))
        total += val
    return total / m


def gradient_descent_minimum(fun, grad, x0, lipschitz, steps=200_000, tol=1e-12):
    """Plain full-batch gradient descent with step 1/L until the gradient vanishes."""
    x = np.array(x0, dtype=np.float64)
    for _ in range(steps):
        g = grad(x)
        if np.linalg.norm(g) < tol:
            break
        x = x - g / lipschitz
    return x, fun(x)


# --- trade-off functions -----------------------------------------------------


def gaussian_tradeoff(mu, alpha):
    """G_mu via the normal distribution object rather than special functions."""
    alpha = np.asarray(alpha, dtype=np.float64)
    return stats.norm.cdf(stats.norm.ppf(1.0 - alpha) - mu)


def brute_lower_envelope(x, y):
    """Greatest convex minorant: at each point, the lowest chord between points on either side."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    out = y.copy()
    for k in range(1, x.size - 1):
        xi, yi = x[: k + 1, None], y[: k + 1, None]
        xj, yj = x[None, k:], y[None, k:]
        with np.errstate(invalid="ignore", divide="ignore"):
            t = (x[k] - xi) / (xj - xi)
            chord = (1 - t) * yi + t * yj
        chord[~np.isfinite(chord)] = np.inf
        out[k] = min(y[k], chord.min())
    return out


def inverse_by_root(f, alpha):
    """f^{-1}(a) = inf{t : f(t) <= a} for a continuous decreasing f, by bisection."""
    out = np.empty(len(alpha))
    for k, a in enumerate(alpha):
        if f(0.0) <= a:
            out[k] = 0.0
        elif f(1.0) > a:
            out[k] = 1.0
        else:
            out[k] = brentq(lambda t: f(t) - a, 0.0, 1.0, xtol=1e-14)
    return out


def subsampled_gaussian(mu, p, alpha):
    """Subsampling operator applied to G_mu, via root-finding and a brute-force envelope."""

    def fp(a):
        return p * float(gaussian_tradeoff(mu, a)) + (1 - p) * (1 - a)

    direct = np.array([fp(a) for a in alpha])
    inv = inverse_by_root(fp, alpha)
    return brute_lower_envelope(alpha, np.minimum(direct, inv))


def clt_mu(p, steps, sigma):
    return p * math.sqrt(steps * (math.exp(sigma**-2) - 1.0))


def delta_of_epsilon(mu, eps):
    """Closed-form (eps, delta) dual of G_mu with scipy.stats."""
    return stats.norm.cdf(-eps / mu + mu / 2) - math.exp(eps) * stats.norm.cdf(-eps / mu - mu / 2)


def empirical_lr_roc(null, alt, alphas):
    """Type-II errors of the threshold (likelihood-ratio) test at the given type-I levels.

    For a location shift to the right the likelihood ratio is increasing in the
    output, so the test rejects above the null's (1 - alpha) quantile.
    """
    null = np.sort(null)
    alt = np.sort(alt)
    n = null.size
    betas = []
    for a in alphas:
        k = int(math.ceil((1 - a) * n)) - 1
        thr = null[min(max(k, 0), n - 1)]
        betas.append(np.searchsorted(alt, thr, side="right") / alt.size)
    return np.array(betas)


def classical_gaussian_sigma(eps, delta):
    return math.sqrt(2.0 * math.log(1.25 / delta)) / eps
