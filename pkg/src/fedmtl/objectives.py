"""Local objectives, synthetic multi-task problems and their analytic constants.

Two model families are supported, both with a scalar output ``z`` per sample:

* ``linear`` - each sample is split as ``x = [x_task | x_shared]`` and
  ``z = x_task . w_i + x_shared . s``.  Jointly convex for both losses.
* ``bilinear`` - hard parameter sharing in its smallest form: a shared
  linear map ``W`` (``hidden x p``, stored row-major as the shared block)
  feeds a task head ``h``: ``z = h . (W x)``.

Losses are ``quadratic`` (``0.5 (z - y)^2``) or ``logistic``
(``log(1 + e^z) - y z`` with ``y`` in {0, 1}).  An optional perturbation
``a * sum_k sin(omega * theta_k)`` over every local coordinate turns a
quadratic into a nonconvex objective whose gradient Lipschitz constant is
still known exactly.

Objectives always consume *raw* shared weights; the sqrt(1/M) scaling of a
:class:`~fedmtl.params.LocalView` is undone at the boundary.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import linalg, optimize

from .params import BlockLayout, GlobalParam, LayoutError, LocalView, restrict
from .rng import RngStream

LOSS_KINDS = ("quadratic", "logistic")
MODELS = ("linear", "bilinear")


class DataError(ValueError):
    """Raised for malformed client datasets."""


@dataclass(frozen=True, eq=False)
class TaskSpec:
    client_id: int
    features: np.ndarray
    labels: np.ndarray
    loss_kind: str = "quadratic"
    model: str = "linear"
    task_dim: int = 1
    shared_dim: int = 1
    amplitude: float = 0.0
    frequency: float = 0.0

    def __post_init__(self) -> None:
        x = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        y = np.atleast_1d(np.asarray(self.labels, dtype=np.float64))
        if x.shape[0] < 1:
            raise DataError("client dataset empty")
        if y.shape != (x.shape[0],):
            raise DataError(f"{x.shape[0]} feature rows but {y.shape[0]} labels")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}")
        p = x.shape[1]
        if self.model == "linear" and p != self.task_dim + self.shared_dim:
            raise LayoutError(f"linear model needs {self.task_dim}+{self.shared_dim} features, data has {p}")
        if self.model == "bilinear" and self.shared_dim != self.task_dim * p:
            raise LayoutError(f"bilinear model needs shared_dim = hidden*p = {self.task_dim * p}")
        if self.loss_kind == "logistic" and not np.all((y == 0) | (y == 1)):
            raise DataError("logistic labels must be 0 or 1")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def _check(self, w: np.ndarray, s: np.ndarray) -> None:
        if w.shape != (self.task_dim,) or s.shape != (self.shared_dim,):
            raise LayoutError(
                f"client {self.client_id}: got blocks {w.shape}/{s.shape}, "
                f"expected ({self.task_dim},)/({self.shared_dim},)"
            )

    def _scores(self, w: np.ndarray, s: np.ndarray):
        x = self.features
        if self.model == "linear":
            return x @ np.concatenate((w, s)), None
        hidden = s.reshape(self.task_dim, self.num_features) @ x.T  # (k, N)
        return w @ hidden, hidden

    def _value(self, z: np.ndarray, w: np.ndarray, s: np.ndarray) -> float:
        y = self.labels
        if self.loss_kind == "quadratic":
            r = z - y
            val = 0.5 * float(r @ r) / r.size
        else:
            val = float(np.logaddexp(0.0, z).sum() - y @ z) / z.size
        if self.amplitude:
            val += self.amplitude * (np.sin(self.frequency * w).sum() + np.sin(self.frequency * s).sum())
        return float(val)

    def _partials(self, z, hidden, w, s) -> tuple[np.ndarray, np.ndarray]:
        if self.loss_kind == "quadratic":
            r = z - self.labels
        else:
            r = _sigmoid(z) - self.labels
        r = r / self.num_samples
        x = self.features
        if self.model == "linear":
            g = r @ x
            g_w, g_s = g[: self.task_dim], g[self.task_dim :]
        else:
            g_w = hidden @ r
            g_s = np.outer(w, x.T @ r).ravel()
        if self.amplitude:
            af = self.amplitude * self.frequency
            g_w = g_w + af * np.cos(self.frequency * w)
            g_s = g_s + af * np.cos(self.frequency * s)
        return g_w, g_s

    def loss(self, w: np.ndarray, s: np.ndarray) -> float:
        """Mean per-sample loss at task block ``w`` and raw shared block ``s``."""
        self._check(w, s)
        return self._value(self._scores(w, s)[0], w, s)

    def grad(self, w: np.ndarray, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Partials with respect to the task block and the raw shared block."""
        self._check(w, s)
        z, hidden = self._scores(w, s)
        return self._partials(z, hidden, w, s)

    def value_and_grad(self, w: np.ndarray, s: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        """loss and grad from one forward pass; bitwise equal to calling both."""
        self._check(w, s)
        z, hidden = self._scores(w, s)
        return (self._value(z, w, s), *self._partials(z, hidden, w, s))

    def hessian(self, w: np.ndarray, s: np.ndarray) -> np.ndarray:
        """Local Hessian in (task, shared) coordinate order; linear model only."""
        if self.model != "linear":
            raise NotImplementedError("closed-form Hessian is only available for the linear model")
        self._check(w, s)
        x = self.features
        if self.loss_kind == "quadratic":
            h = x.T @ x / self.num_samples
        else:
            p = _sigmoid(x @ np.concatenate([w, s]))
            h = (x * (p * (1.0 - p))[:, None]).T @ x / self.num_samples
        if self.amplitude:
            theta = np.concatenate([w, s])
            h = h - np.diag(self.amplitude * self.frequency**2 * np.sin(self.frequency * theta))
        return h

    @cached_property
    def gram_max_eig(self) -> float:
        x = self.features
        return float(linalg.eigvalsh(x.T @ x / self.num_samples)[-1])

    def lipschitz(self) -> float:
        """Upper bound on the Lipschitz constant of the local gradient (linear model)."""
        if self.model != "linear":
            raise NotImplementedError("no global Lipschitz constant for the bilinear model")
        base = self.gram_max_eig if self.loss_kind == "quadratic" else 0.25 * self.gram_max_eig
        return base + abs(self.amplitude) * self.frequency**2


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def layout_of(tasks: Sequence[TaskSpec]) -> BlockLayout:
    if not tasks:
        raise LayoutError("no tasks")
    shared = {t.shared_dim for t in tasks}
    if len(shared) != 1:
        raise LayoutError(f"tasks disagree on shared_dim: {sorted(shared)}")
    for i, t in enumerate(tasks):
        if t.client_id != i:
            raise LayoutError(f"task at position {i} has client_id {t.client_id}")
    return BlockLayout(tuple(t.task_dim for t in tasks), shared.pop())


# --- contract-level wrappers over LocalView / GlobalParam ------------------


def local_loss(task: TaskSpec, v: LocalView) -> float:
    if v.client_id != task.client_id:
        raise LayoutError(f"view for client {v.client_id} passed to task {task.client_id}")
    return task.loss(v.task, v.raw_shared)


def local_gradient(task: TaskSpec, v: LocalView) -> tuple[np.ndarray, np.ndarray]:
    if v.client_id != task.client_id:
        raise LayoutError(f"view for client {v.client_id} passed to task {task.client_id}")
    return task.grad(v.task, v.raw_shared)


def _check_tasks(tasks: Sequence[TaskSpec], layout: BlockLayout) -> None:
    if len(tasks) != layout.num_clients:
        raise LayoutError(f"{len(tasks)} tasks for a layout with M={layout.num_clients}")


def global_loss(tasks: Sequence[TaskSpec], w: GlobalParam) -> float:
    """f(w) = (1/M) sum_i f_i(w_i, w_shared)."""
    _check_tasks(tasks, w.layout)
    s = w.shared
    return math.fsum(t.loss(w.task(i), s) for i, t in enumerate(tasks)) / len(tasks)


def global_loss_via_views(tasks: Sequence[TaskSpec], w: GlobalParam) -> float:
    _check_tasks(tasks, w.layout)
    return math.fsum(local_loss(t, restrict(w, i)) for i, t in enumerate(tasks)) / len(tasks)


def global_gradient(tasks: Sequence[TaskSpec], w: GlobalParam) -> GlobalParam:
    """Gradient of f: task block i is (1/M) d_i f_i, shared block is the mean shared partial."""
    layout = w.layout
    _check_tasks(tasks, layout)
    m = layout.num_clients
    out = np.empty(layout.total_dim)
    gs = np.zeros(layout.shared_dim)
    for i, t in enumerate(tasks):
        g_w, g_s = t.grad(w.task(i), w.shared)
        out[layout.task_slice(i)] = g_w / m
        gs += g_s
    out[layout.shared_slice] = gs / m
    return GlobalParam(layout, out)


def global_value_and_gradient(tasks: Sequence[TaskSpec], w: GlobalParam) -> tuple[float, GlobalParam]:
    """global_loss and global_gradient sharing one pass over the data."""
    layout = w.layout
    _check_tasks(tasks, layout)
    m = layout.num_clients
    out = np.empty(layout.total_dim)
    gs = np.zeros(layout.shared_dim)
    vals = []
    for i, t in enumerate(tasks):
        v, g_w, g_s = t.value_and_grad(w.task(i), w.shared)
        vals.append(v)
        out[layout.task_slice(i)] = g_w / m
        gs += g_s
    out[layout.shared_slice] = gs / m
    return math.fsum(vals) / m, GlobalParam(layout, out)


def global_hessian(tasks: Sequence[TaskSpec], w: GlobalParam) -> np.ndarray:
    layout = w.layout
    _check_tasks(tasks, layout)
    m = layout.num_clients
    n = layout.total_dim
    g = np.zeros((n, n))
    ss = layout.shared_slice
    for i, t in enumerate(tasks):
        h = t.hessian(w.task(i), w.shared) / m
        ti = layout.task_slice(i)
        d = t.task_dim
        g[ti, ti] += h[:d, :d]
        g[ti, ss] += h[:d, d:]
        g[ss, ti] += h[d:, :d]
        g[ss, ss] += h[d:, d:]
    return g


# --- constants ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ObjectiveConstants:
    L_per_client: tuple[float, ...]
    c: float | None = None
    B: float | None = None
    lam: float | None = None
    R0: float | None = None
    fstar: float | None = None
    minimizer: GlobalParam | None = None
    initial: GlobalParam | None = None
    lam_sample_max: float | None = None
    lam_normalized: float | None = None
    B_sample_max: float | None = None
    fstar_is_lower_bound: bool = False

    def __post_init__(self) -> None:
        if any(L < 0 for L in self.L_per_client):
            raise ValueError("Lipschitz constants must be nonnegative")
        if self.c is not None and self.c < 0:
            raise ValueError("strong convexity constant must be >= 0")
        if self.lam is not None and self.lam < 1:
            raise ValueError("gradient diversity bound must be >= 1")
        if self.B is not None and self.B < 0:
            raise ValueError("shared gradient bound must be >= 0")

    @property
    def L(self) -> float:
        return max(self.L_per_client)

    def replace(self, **kw) -> "ObjectiveConstants":
        from dataclasses import replace

        return replace(self, **kw)


@dataclass(frozen=True)
class SyntheticConfig:
    kind: str = "quadratic"
    num_clients: int = 5
    task_dim: int = 2
    shared_dim: int = 3
    eigen_range: tuple[float, float] = (1.0, 10.0)
    heterogeneity: float = 0.5
    samples_per_client: int = 60
    amplitude: float = 0.0
    frequency: float = 1.0
    init_scale: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "eigen_range", tuple(float(e) for e in self.eigen_range))
        if self.kind not in ("quadratic", "logistic", "nonconvex"):
            raise ValueError(f"unknown synthetic kind {self.kind!r}")
        if self.num_clients < 1 or self.task_dim < 1 or self.shared_dim < 1:
            raise ValueError("num_clients, task_dim and shared_dim must be >= 1")
        if self.heterogeneity < 0:
            raise ValueError("heterogeneity must be >= 0")
        if self.kind == "logistic" and self.samples_per_client < 1:
            raise ValueError("samples_per_client must be >= 1")


class InfeasibleProblem(ValueError):
    pass


def _random_rotation(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def _skew(rng: np.random.Generator, n: int) -> np.ndarray:
    a = rng.standard_normal((n, n))
    return (a - a.T) / 2.0


def generate_synthetic(cfg: SyntheticConfig, seed: int) -> tuple[list[TaskSpec], ObjectiveConstants]:
    """Multi-task problems with analytically known constants.

    Quadratic clients are ``f_i(theta) = 0.5 (theta - theta_i*)^T H_i (theta - theta_i*)``
    realised as least squares on a square design, so ``L_i = max eig H_i``
    exactly and the global minimiser is one linear solve away.
    """
    lo, hi = cfg.eigen_range
    if cfg.kind != "logistic" and not (0 < lo <= hi and math.isfinite(hi)):
        raise InfeasibleProblem(f"eigenvalue range {cfg.eigen_range} must satisfy 0 < lo <= hi < inf")
    m, dt, ds = cfg.num_clients, cfg.task_dim, cfg.shared_dim
    p = dt + ds
    layout = BlockLayout.uniform(m, dt, ds)
    root = RngStream(seed, "synthetic")
    base = root.at(client=-1).generator()
    theta0 = base.standard_normal(p)
    h = cfg.heterogeneity

    if cfg.kind == "logistic":
        tasks = []
        for i in range(m):
            g = root.at(client=i).generator()
            theta = theta0 + h * g.standard_normal(p)
            x = g.standard_normal((cfg.samples_per_client, p))
            y = (g.random(cfg.samples_per_client) < _sigmoid(x @ theta)).astype(float)
            tasks.append(TaskSpec(i, x, y, "logistic", "linear", dt, ds))
        L = tuple(t.lipschitz() for t in tasks)
        initial = _initial_point(cfg, layout, root)
        minimizer = _minimize_convex(tasks, layout)
        fstar = global_loss(tasks, minimizer)
        return tasks, ObjectiveConstants(L, c=0.0, fstar=fstar, minimizer=minimizer, initial=initial)

    spectrum = np.sort(np.concatenate([[lo, hi], base.uniform(lo, hi, max(p - 2, 0))]))[:p] if p > 1 else np.array([hi])
    q0 = _random_rotation(base, p)
    tasks = []
    for i in range(m):
        g = root.at(client=i).generator()
        q = linalg.expm(h * _skew(g, p)) @ q0 if h else q0
        theta = theta0 + h * g.standard_normal(p)
        x = math.sqrt(p) * (np.sqrt(spectrum)[:, None] * q.T)
        y = x @ theta
        amp = cfg.amplitude if cfg.kind == "nonconvex" else 0.0
        tasks.append(TaskSpec(i, x, y, "quadratic", "linear", dt, ds, amp, cfg.frequency if amp else 0.0))

    quad_tasks = tasks if cfg.kind == "quadratic" else [_without_perturbation(t) for t in tasks]
    zero = GlobalParam.zeros(layout)
    hess = global_hessian(quad_tasks, zero)
    grad0 = global_gradient(quad_tasks, zero).vector
    w_star = GlobalParam(layout, np.linalg.solve(hess, -grad0))
    eig = linalg.eigvalsh(hess)
    L = tuple(t.lipschitz() for t in tasks)
    initial = _initial_point(cfg, layout, root)
    fstar_quad = global_loss(quad_tasks, w_star)
    if cfg.kind == "quadratic":
        return tasks, ObjectiveConstants(L, c=float(eig[0]), fstar=fstar_quad, minimizer=w_star, initial=initial)
    # the perturbation contributes at least -a per coordinate of every f_i
    fstar_lb = fstar_quad - abs(cfg.amplitude) * p
    return tasks, ObjectiveConstants(
        L, c=None, fstar=fstar_lb, minimizer=w_star, initial=initial, fstar_is_lower_bound=True
    )


def _without_perturbation(t: TaskSpec) -> TaskSpec:
    return TaskSpec(t.client_id, t.features, t.labels, t.loss_kind, t.model, t.task_dim, t.shared_dim)


def _initial_point(cfg: SyntheticConfig, layout: BlockLayout, root: RngStream) -> GlobalParam:
    if cfg.init_scale == 0:
        return GlobalParam.zeros(layout)
    g = root.at(purpose="init").generator()
    return GlobalParam(layout, cfg.init_scale * g.standard_normal(layout.total_dim))


def _minimize_convex(tasks: Sequence[TaskSpec], layout: BlockLayout, start: GlobalParam | None = None) -> GlobalParam:
    """High-precision minimiser of a smooth convex global objective (Newton trust region)."""
    x0 = np.zeros(layout.total_dim) if start is None else start.vector

    def fun(v):
        return global_loss(tasks, GlobalParam(layout, v))

    def jac(v):
        return global_gradient(tasks, GlobalParam(layout, v)).vector

    def hess(v):
        return global_hessian(tasks, GlobalParam(layout, v))

    res = optimize.minimize(fun, x0, jac=jac, hess=hess, method="trust-exact", options={"gtol": 1e-13, "maxiter": 500})
    gnorm = float(np.linalg.norm(jac(res.x)))
    if not np.all(np.isfinite(res.x)) or gnorm > 1e-9:
        raise InfeasibleProblem(f"no finite minimiser found (gradient norm {gnorm:.3g}); data may be separable")
    # a vanishing gradient at a nearly flat point means the infimum is only approached at infinity
    curv = linalg.eigvalsh(hess(res.x))
    if curv[0] <= 1e-8 * max(curv[-1], linalg.eigvalsh(hess(x0))[-1]):
        raise InfeasibleProblem("objective is flat at the computed optimum; data may be separable")
    return GlobalParam(layout, res.x)


@dataclass(frozen=True, eq=False)
class ProbeRegion:
    """Box of half-width ``radius`` around ``center`` from which client states are drawn."""

    center: GlobalParam
    radius: float
    synchronized: bool = False


def _diversity_terms(tasks, tasks_w, shared_copies):
    m = len(tasks)
    s_bar = np.mean(shared_copies, axis=0)
    num = 0.0
    den_vec = np.zeros_like(s_bar)
    gmax = 0.0
    for i, t in enumerate(tasks):
        gi = t.grad(tasks_w[i], shared_copies[i])[1]
        num += float(gi @ gi)
        gmax = max(gmax, float(np.linalg.norm(gi)))
        den_vec += t.grad(tasks_w[i], s_bar)[1]
    return m * num, float(den_vec @ den_vec), gmax


def diversity_ratio(tasks: Sequence[TaskSpec], task_blocks, shared_copies) -> float:
    """M sum_i ||d_s f_i(v_i)||^2 / ||sum_i d_s f_i(R_i w_bar)||^2 at one client-state tuple."""
    num, den, _ = _diversity_terms(tasks, task_blocks, shared_copies)
    if den <= 1e-300 * max(num, 1.0):
        return math.inf
    return num / den


def estimate_constants(
    tasks: Sequence[TaskSpec],
    region: ProbeRegion,
    n_samples: int,
    seed: int,
    minimizer: GlobalParam | None = None,
    fstar: float | None = None,
    inflation: float = 1.1,
) -> ObjectiveConstants:
    """Sample-based estimates of the gradient diversity bound, B and R0."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    layout = layout_of(tasks)
    if region.center.layout != layout:
        raise LayoutError("probe region layout does not match tasks")
    m = layout.num_clients
    g = RngStream(seed, "probe").generator()
    lam_max, lam_norm_max, b_max = 1.0, 0.0, 0.0
    for k in range(n_samples):
        # the first tuple is the region centre itself
        r = 0.0 if k == 0 else region.radius
        tw = [region.center.task(i) + r * g.uniform(-1, 1, layout.task_dims[i]) for i in range(m)]
        if region.synchronized:
            s = region.center.shared + r * g.uniform(-1, 1, layout.shared_dim)
            sc = [s] * m
        else:
            sc = [region.center.shared + r * g.uniform(-1, 1, layout.shared_dim) for _ in range(m)]
        num, den, gmax = _diversity_terms(tasks, tw, sc)
        b_max = max(b_max, gmax)
        if den <= 1e-300 * max(num, 1.0):
            lam_max = math.inf
            continue
        lam_max = max(lam_max, num / den)
        lam_norm_max = max(lam_norm_max, num / den / m**2)

    try:
        L = tuple(t.lipschitz() for t in tasks)
    except NotImplementedError:
        L = tuple(math.nan for _ in tasks)
    r0 = None
    c = None
    if minimizer is not None:
        fs = global_loss(tasks, minimizer) if fstar is None else fstar
        r0, c = _level_set_radius(tasks, region.center, minimizer, fs, n_samples, seed)
    return ObjectiveConstants(
        L_per_client=tuple(0.0 if math.isnan(x) else x for x in L),
        c=c,
        B=inflation * b_max,
        lam=inflation * lam_max,
        R0=r0,
        fstar=fstar,
        minimizer=minimizer,
        initial=region.center,
        lam_sample_max=lam_max,
        lam_normalized=lam_norm_max,
        B_sample_max=b_max,
    )


def _is_pure_quadratic(tasks: Sequence[TaskSpec]) -> bool:
    return all(t.loss_kind == "quadratic" and t.model == "linear" and not t.amplitude for t in tasks)


def _level_set_radius(tasks, x0: GlobalParam, x_star: GlobalParam, fstar: float, n_dirs: int, seed: int):
    """max ||x - x*|| over {f(x) <= f(x0)}; closed form for quadratics, ray search otherwise."""
    layout = x0.layout
    level = global_loss(tasks, x0)
    gap = level - fstar
    if gap <= 0:
        return 0.0, None
    hess = global_hessian(tasks, x_star)
    eigval, eigvec = linalg.eigh(hess)
    if _is_pure_quadratic(tasks):
        return math.sqrt(2.0 * gap / eigval[0]), float(eigval[0])

    def f_along(u, t):
        return global_loss(tasks, GlobalParam(layout, x_star.vector + t * u)) - level

    g = RngStream(seed, "level-set").generator()
    d0 = x0.vector - x_star.vector
    dirs = [d0, *eigvec.T, *(-eigvec.T), *g.standard_normal((n_dirs, layout.total_dim))]
    best = 0.0
    for u in dirs:
        n = np.linalg.norm(u)
        if n == 0:
            continue
        u = u / n
        hi = max(1.0, best)
        while f_along(u, hi) < 0:
            hi *= 2.0
            if hi > 1e12:
                raise InfeasibleProblem("level set appears unbounded")
        t = optimize.brentq(lambda t: f_along(u, t), 0.0, hi, xtol=1e-12) if f_along(u, 0.0) < 0 else 0.0
        best = max(best, t)
    return best, None


# --- CSV ingestion -----------------------------------------------------------


@dataclass(frozen=True)
class CsvSchema:
    loss_kind: str = "quadratic"
    model: str = "linear"
    task_dim: int = 1
    hidden: int = 1
    header: bool = False
    delimiter: str = ","


def load_csv(paths: Sequence[str | Path] | str | Path, schema: CsvSchema) -> list[TaskSpec]:
    """One file per client; each row is a sample whose last column is the label."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    tasks = []
    width = None
    for cid, path in enumerate(paths):
        path = Path(path)
        try:
            with path.open(newline="") as fh:
                rows = list(csv.reader(fh, delimiter=schema.delimiter))
        except OSError as exc:
            raise DataError(f"{path}: cannot read ({exc})") from exc
        numbered = list(enumerate(rows, start=1))
        if schema.header:
            numbered = numbered[1:]
        numbered = [(n, r) for n, r in numbered if r and any(cell.strip() for cell in r)]
        if not numbered:
            raise DataError(f"{path}: client dataset empty")
        values = []
        for rno, row in numbered:
            if width is None:
                width = len(row)
            if len(row) != width:
                raise DataError(f"{path}:{rno}: expected {width} columns, found {len(row)}")
            parsed = []
            for cno, cell in enumerate(row, start=1):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DataError(f"{path}:{rno}:{cno}: cannot parse {cell!r} as a number") from None
            values.append(parsed)
        arr = np.asarray(values)
        x, y = arr[:, :-1], arr[:, -1]
        p = x.shape[1]
        if schema.model == "linear":
            td, sd = schema.task_dim, p - schema.task_dim
            if sd < 1:
                raise DataError(f"{path}: {p} features leave no shared columns for task_dim={td}")
        else:
            td, sd = schema.hidden, schema.hidden * p
        tasks.append(TaskSpec(cid, x, y, schema.loss_kind, schema.model, td, sd))
    return tasks
