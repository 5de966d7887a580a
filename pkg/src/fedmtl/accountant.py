"""Gaussian differential privacy accounting on numeric trade-off curves.

A trade-off curve maps a type-I error ``alpha`` to the smallest achievable
type-II error ``beta`` of a test that distinguishes neighbouring datasets.
Curves are stored as values on a fixed grid over [0, 1] and treated as the
piecewise-linear interpolant of those samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import log_ndtr, ndtr
from scipy.stats import norm

from . import plots

MIN_GRID = 257


def default_grid(n: int = 4097, refine: int = 400) -> np.ndarray:
    """Uniform grid plus log-spaced refinement near both endpoints."""
    if n < MIN_GRID:
        raise ValueError(f"grid needs at least {MIN_GRID} points")
    base = np.linspace(0.0, 1.0, n)
    if refine:
        near = np.logspace(-6, -2, refine)
        base = np.concatenate([base, near, 1.0 - near])
    return np.unique(base)


class CurveError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TradeoffCurve:
    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        a = np.array(self.grid, dtype=np.float64)
        b = np.array(self.values, dtype=np.float64)
        if a.ndim != 1 or a.shape != b.shape:
            raise CurveError("grid and values must be 1-d arrays of equal length")
        if a.size < MIN_GRID:
            raise CurveError(f"grid has {a.size} points, need >= {MIN_GRID}")
        if a[0] != 0.0 or a[-1] != 1.0 or np.any(np.diff(a) <= 0):
            raise CurveError("grid must be strictly increasing from 0 to 1")
        if not np.all(np.isfinite(b)):
            raise CurveError("curve values must be finite")
        # absorb round-off from interpolation and hull construction
        b = np.clip(b, 0.0, 1.0)
        a.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "grid", a)
        object.__setattr__(self, "values", b)

    def __call__(self, alpha) -> np.ndarray:
        return np.interp(alpha, self.grid, self.values)

    def violations(self, slack: float = 1e-9) -> list[str]:
        """Names of the curve invariants that fail (empty when valid)."""
        out = []
        b = self.values
        if np.any(np.diff(b) > slack):
            out.append("not non-increasing")
        # each interior sample must lie on or below the chord of its neighbours
        a = self.grid
        t = (a[1:-1] - a[:-2]) / (a[2:] - a[:-2])
        chord = (1.0 - t) * b[:-2] + t * b[2:]
        if np.any(b[1:-1] > chord + slack):
            out.append("not convex")
        if b.min() < 0 or b.max() > 1:
            out.append("outside [0, 1]")
        return out

    def inverse(self) -> "TradeoffCurve":
        return grid_inverse(self)

    def sup_distance(self, other: "TradeoffCurve") -> float:
        if self.grid.shape == other.grid.shape and np.array_equal(self.grid, other.grid):
            return float(np.max(np.abs(self.values - other.values)))
        grid = np.union1d(self.grid, other.grid)
        return float(np.max(np.abs(self(grid) - other(grid))))


def identity_curve(grid: np.ndarray | None = None) -> TradeoffCurve:
    grid = default_grid() if grid is None else grid
    return TradeoffCurve(grid, 1.0 - grid)


def gaussian_tradeoff(mu: float, grid: np.ndarray | None = None) -> TradeoffCurve:
    """G_mu(alpha) = Phi(Phi^{-1}(1 - alpha) - mu)."""
    if not mu >= 0:
        raise ValueError("mu must be >= 0")
    grid = default_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    if mu == 0:
        return identity_curve(grid)
    # isf keeps precision for alpha near 0; ndtr(inf - mu) = 1 at alpha = 0
    with np.errstate(over="ignore"):
        values = ndtr(norm.isf(grid) - mu)
    return TradeoffCurve(grid, values)


def grid_inverse(f: TradeoffCurve) -> TradeoffCurve:
    """f^{-1}(y) = inf{alpha in [0, 1] : f(alpha) <= y}, evaluated on f's grid."""
    a, b = f.grid, f.values
    y = a
    # first grid index whose value is <= y (b is non-increasing)
    j = np.searchsorted(-b, -y, side="left")
    out = np.ones_like(y)
    at_zero = j == 0
    out[at_zero] = 0.0
    mid = (j > 0) & (j < a.size)
    jm = j[mid]
    hi, lo = b[jm - 1], b[jm]
    frac = (hi - y[mid]) / (hi - lo)
    out[mid] = a[jm - 1] + frac * (a[jm] - a[jm - 1])
    return TradeoffCurve(a, out)


def lower_convex_envelope(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Greatest convex minorant of the points (x, y), evaluated back on x.

    Monotone-chain lower hull; ``x`` must be strictly increasing.
    """
    hull: list[int] = []
    for k in range(x.size):
        while len(hull) >= 2:
            i, j = hull[-2], hull[-1]
            # drop j when it lies on or above the chord from i to k
            cross = (x[j] - x[i]) * (y[k] - y[i]) - (y[j] - y[i]) * (x[k] - x[i])
            if cross <= 0:
                hull.pop()
            else:
                break
        hull.append(k)
    idx = np.asarray(hull)
    return np.interp(x, x[idx], y[idx])


def subsample(f: TradeoffCurve, p: float) -> TradeoffCurve:
    """Poisson-subsampling operator: the biconjugate of min{f_p, f_p^{-1}}."""
    if not 0 <= p <= 1:
        raise ValueError(f"sampling rate must be in [0, 1], got {p}")
    a = f.grid
    fp = TradeoffCurve(a, p * f.values + (1.0 - p) * (1.0 - a))
    m = np.minimum(fp.values, grid_inverse(fp).values)
    return TradeoffCurve(a, lower_convex_envelope(a, m))


@dataclass(frozen=True)
class PrivacyBudget:
    mu: float
    p: float | None = None
    steps: int | None = None
    sigma: float | None = None
    formula: str = "clt"

    def __post_init__(self) -> None:
        if not self.mu >= 0:
            raise ValueError("mu must be >= 0")

    @property
    def finite(self) -> bool:
        return math.isfinite(self.mu)

    def curve(self, grid: np.ndarray | None = None) -> TradeoffCurve:
        if not self.finite:
            raise ValueError("no finite budget")
        return gaussian_tradeoff(self.mu, grid)

    def then(self, other: "PrivacyBudget") -> "PrivacyBudget":
        """Sequential composition of two Gaussian budgets."""
        return PrivacyBudget(math.hypot(self.mu, other.mu), formula=self.formula)


MU_FORMULAS = ("clt", "paper")


def compose_clt(p: float, steps: int, sigma: float, formula: str = "clt") -> PrivacyBudget:
    """Asymptotic GDP parameter of ``steps`` subsampled Gaussian mechanisms.

    ``clt``: mu = p sqrt(T (e^{1/sigma^2} - 1)).
    ``paper``: the alternative form with p sqrt(T) in place of p, which
    carries an extra sqrt(T).  Kept only for side-by-side reporting.
    """
    if formula not in MU_FORMULAS:
        raise ValueError(f"unknown mu formula {formula!r}")
    if not 0 < p <= 1:
        raise ValueError("sampling rate must be in (0, 1]")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not sigma >= 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return PrivacyBudget(math.inf, p, steps, sigma, formula)
    inv = 1.0 / sigma**2
    growth = math.expm1(inv) if inv < 700 else math.inf
    mu = p * math.sqrt(steps * growth)
    if formula == "paper":
        mu *= math.sqrt(steps)
    return PrivacyBudget(mu, p, steps, sigma, formula)


def to_eps_delta(budget: PrivacyBudget | float, epsilon: float) -> float:
    """delta(eps) = Phi(-eps/mu + mu/2) - e^eps Phi(-eps/mu - mu/2)."""
    mu = budget.mu if isinstance(budget, PrivacyBudget) else float(budget)
    if not epsilon >= 0:
        raise ValueError("epsilon must be >= 0")
    if mu == 0:
        return 0.0
    if not math.isfinite(mu):
        return 1.0
    la = float(log_ndtr(-epsilon / mu + mu / 2))
    lb = epsilon + float(log_ndtr(-epsilon / mu - mu / 2))
    if lb >= la:
        return 0.0
    return max(0.0, math.exp(la) * -math.expm1(lb - la))


def delta_table(budget: PrivacyBudget, epsilons) -> list[tuple[float, float]]:
    return [(float(e), to_eps_delta(budget, e)) for e in epsilons]


def tradeoff_from_eps_delta(pairs, grid: np.ndarray | None = None) -> TradeoffCurve:
    """Trade-off curve implied by a family of (eps, delta) guarantees."""
    grid = default_grid() if grid is None else grid
    out = np.zeros_like(grid)
    for eps, delta in pairs:
        e = math.exp(eps)
        cand = np.maximum(1.0 - delta - e * grid, (1.0 - delta - grid) / e)
        np.maximum(out, cand, out=out)
    return TradeoffCurve(grid, out)


def emit_curve(curve: TradeoffCurve, path: str | Path, fmt: str | None = None, label: str = "trade-off") -> Path:
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".").lower()
    if fmt == "csv":
        lines = ["alpha,beta"] + [f"{a:.17g},{b:.17g}" for a, b in zip(curve.grid, curve.values)]
        path.write_text("\n".join(lines) + "\n")
    elif fmt == "svg":
        ident = [0.0, 1.0]
        svg = plots.line_plot(
            [
                plots.Series("identity (1 - alpha)", ident, [1.0, 0.0], dashed=True),
                plots.Series(label, curve.grid, curve.values),
            ],
            xlabel="Type I error",
            ylabel="Type II error",
            xlim=(0.0, 1.0),
            ylim=(0.0, 1.0),
            square=True,
        )
        path.write_text(svg)
    else:
        raise ValueError(f"unknown curve format {fmt!r} (csv or svg)")
    return path
