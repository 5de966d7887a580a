"""Closed-form convergence bounds and Monte-Carlo checks against simulated runs.

Every bound shares one "perturbation" constant

    P = H^2 B^2 / (2 lam^2) + (2 H^2 + 1/(2 M L)) d (S sigma)^2 / lam^2

which is the per-step slack of the one-step expected decrease at step size
1/(lam L).  The rates follow from summing or unrolling that decrease.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .mechanism import DpConfig, clip
from .objectives import (
    ProbeRegion,
    SyntheticConfig,
    TaskSpec,
    diversity_ratio,
    estimate_constants,
    generate_synthetic,
    global_gradient,
    global_loss,
    layout_of,
)
from .params import ClientState, GlobalParam, drift, virtual_average
from .rng import RngStream, derive_seed
from .simulator import ConfigError, RunMetrics, SimConfig, run

KINDS = ("nonconvex_avg_grad", "convex_gap", "strongly_convex_gap", "sufficient_decay", "drift")


class BoundError(ValueError):
    pass


@dataclass(frozen=True)
class BoundInputs:
    lipschitz: float
    diversity: float
    grad_bound: float
    shared_dim: int
    sensitivity: float
    sigma: float
    num_clients: int
    sync_interval: int
    strong_convexity: float = 0.0
    level_radius: float = 0.0
    f0: float = 0.0
    fstar: float = 0.0

    def __post_init__(self) -> None:
        for name, v in asdict(self).items():
            if not math.isfinite(v):
                raise BoundError(f"{name} must be finite, got {v}")
        if self.diversity < 1:
            raise BoundError("diversity bound must be >= 1")
        if self.sync_interval < 1 or self.num_clients < 1 or self.shared_dim < 1:
            raise BoundError("sync_interval, num_clients and shared_dim must be >= 1")
        if self.lipschitz <= 0:
            raise BoundError("lipschitz must be > 0")
        if min(self.grad_bound, self.sensitivity, self.sigma, self.strong_convexity, self.level_radius) < 0:
            raise BoundError("grad_bound, sensitivity, sigma, strong_convexity and level_radius must be >= 0")

    @property
    def step_size(self) -> float:
        return 1.0 / (self.diversity * self.lipschitz)

    @property
    def scale(self) -> float:
        """lam M L, the common denominator of every rate."""
        return self.diversity * self.num_clients * self.lipschitz

    @property
    def noise_power(self) -> float:
        return self.shared_dim * (self.sensitivity * self.sigma) ** 2

    @property
    def perturbation(self) -> float:
        h2, lam = self.sync_interval**2, self.diversity
        ml = self.num_clients * self.lipschitz
        return h2 * self.grad_bound**2 / (2 * lam**2) + (2 * h2 + 1 / (2 * ml)) * self.noise_power / lam**2

    def hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **kw) -> "BoundInputs":
        return replace(self, **kw)


@dataclass(frozen=True)
class TheoremBound:
    kind: str
    value: float | tuple[float, ...]
    inputs_hash: str


def nonconvex_bound(inp: BoundInputs, steps: int) -> float:
    """Bound on the average squared gradient norm over the first ``steps`` iterates."""
    if steps < 1:
        raise BoundError("steps must be >= 1")
    return 2 * inp.scale * (inp.perturbation + (inp.f0 - inp.fstar) / steps)


def convex_radius(inp: BoundInputs) -> float:
    return math.sqrt(2 * inp.scale * inp.level_radius**2 * inp.perturbation)


def convex_bound(inp: BoundInputs, steps: int) -> float:
    if steps < 1:
        raise BoundError("steps must be >= 1")
    return 2 * inp.scale * inp.level_radius**2 / steps + convex_radius(inp)


def strongly_convex_radius(inp: BoundInputs) -> tuple[float, float]:
    """(plateau beta, contraction rate rho)."""
    if inp.strong_convexity <= 0:
        raise BoundError("strong convexity constant must be > 0")
    beta = inp.scale / inp.strong_convexity * inp.perturbation
    rho = 1.0 - inp.strong_convexity / inp.scale
    return beta, rho


def strongly_convex_envelope(inp: BoundInputs, steps) -> np.ndarray:
    """beta + rho^T (gap0 - beta): the bound on the expected gap after T steps."""
    beta, rho = strongly_convex_radius(inp)
    t = np.asarray(steps, dtype=float)
    return beta + np.power(rho, t) * (inp.f0 - inp.fstar - beta)


def decay_rhs(inp: BoundInputs, grad_norm_sq: float) -> float:
    return -grad_norm_sq / (2 * inp.scale) + inp.perturbation


def drift_bound(inp: BoundInputs, step_size: float | None = None) -> float:
    """Bound on (1/M) sum_i ||R_i w_bar - R_i v_i||^2 between synchronisations."""
    eta = inp.step_size if step_size is None else step_size
    return 4 * eta**2 * inp.sync_interval**2 * (inp.diversity * inp.grad_bound**2 + inp.noise_power)


def evaluate_all(inp: BoundInputs, steps: int) -> list[TheoremBound]:
    h = inp.hash()
    out = [
        TheoremBound("nonconvex_avg_grad", nonconvex_bound(inp, steps), h),
        TheoremBound("convex_gap", convex_bound(inp, steps), h),
        TheoremBound("drift", drift_bound(inp), h),
    ]
    if inp.strong_convexity > 0:
        out.append(TheoremBound("strongly_convex_gap", float(strongly_convex_envelope(inp, steps)), h))
    return out


# --- Monte-Carlo checks at a snapshot ----------------------------------------


@dataclass(frozen=True)
class McCheck:
    name: str
    observed: float
    std_error: float
    bound: float
    passed: bool
    # distance to the bound after the 3-SE allowance; >= 0 exactly when passed
    margin: float
    # False when the lemma's hypothesis fails at this snapshot
    applicable: bool = True

    @property
    def ok(self) -> bool:
        return self.passed or not self.applicable

    def to_dict(self) -> dict:
        return asdict(self)


def _local_partials(clients: Sequence[ClientState], tasks: Sequence[TaskSpec], clip_norm: float):
    a, b = [], []
    for c in sorted(clients, key=lambda c: c.client_id):
        g_w, g_s = tasks[c.client_id].grad(c.task, c.shared_copy)
        a.append(g_w)
        b.append(clip(g_s, clip_norm))
    return a, b


def _update_directions(clients, tasks, inp: BoundInputs, n_samples: int, seed: int, clip_norm: float):
    """Sampled one-client update directions g = (a_i e_i, (b_i + n)/M) in the global space."""
    if n_samples < 100:
        raise BoundError("n_samples must be >= 100")
    layout = layout_of(tasks)
    m = layout.num_clients
    a, b = _local_partials(clients, tasks, clip_norm)
    g = RngStream(seed, "decay").generator()
    idx = g.integers(0, m, size=n_samples)
    noise = (inp.sensitivity * inp.sigma) * g.standard_normal((n_samples, layout.shared_dim))
    dirs = np.zeros((n_samples, layout.total_dim))
    for k, i in enumerate(idx):
        dirs[k, layout.task_slice(int(i))] = a[i]
        dirs[k, layout.shared_slice] = (b[i] + noise[k]) / m
    return dirs


def check_sufficient_decay(
    clients: Sequence[ClientState],
    tasks: Sequence[TaskSpec],
    inp: BoundInputs,
    n_samples: int = 5000,
    seed: int = 0,
    step_size: float | None = None,
    clip_norm: float = math.inf,
) -> McCheck:
    """Expected one-step change of f from the virtual average versus the decay bound."""
    layout = layout_of(tasks)
    w_bar = virtual_average(clients, layout)
    eta = inp.step_size if step_size is None else step_size
    dirs = _update_directions(clients, tasks, inp, n_samples, seed, clip_norm)
    f_bar = global_loss(tasks, w_bar)
    vals = np.empty(n_samples)
    for k in range(n_samples):
        w = GlobalParam(layout, w_bar.vector - eta * dirs[k])
        vals[k] = global_loss(tasks, w) - f_bar
    mean, se = float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_samples))
    rhs = decay_rhs(inp, global_gradient(tasks, w_bar).norm_sq())
    return McCheck("sufficient_decay", mean, se, rhs, mean <= rhs + 3 * se, rhs + 3 * se - mean)


def lemma_gradient(clients, tasks) -> np.ndarray:
    """Sum of interpolated local gradients at the virtual average: (a_1, ..., a_M, mean b_i)."""
    layout = layout_of(tasks)
    w_bar = virtual_average(clients, layout)
    out = np.empty(layout.total_dim)
    shared = np.zeros(layout.shared_dim)
    for i, t in enumerate(tasks):
        g_w, g_s = t.grad(w_bar.task(i), w_bar.shared)
        out[layout.task_slice(i)] = g_w
        shared += g_s
    out[layout.shared_slice] = shared / layout.num_clients
    return out


def step_diagnostics(
    clients: Sequence[ClientState],
    tasks: Sequence[TaskSpec],
    inp: BoundInputs,
    n_samples: int = 5000,
    seed: int = 0,
    step_size: float | None = None,
    clip_norm: float = math.inf,
    lipschitz_per_client: Sequence[float] | None = None,
) -> dict[str, McCheck]:
    """Inner-product, second-moment and drift diagnostics at one snapshot."""
    layout = layout_of(tasks)
    m = layout.num_clients
    w_bar = virtual_average(clients, layout)
    lg = lemma_gradient(clients, tasks)
    lg_sq = float(lg @ lg)
    dirs = _update_directions(clients, tasks, inp, n_samples, seed, clip_norm)
    root_n = math.sqrt(n_samples)

    Ls = lipschitz_per_client or [inp.lipschitz] * m
    per_client_drift = 0.0
    for c in clients:
        dt = w_bar.task(c.client_id) - c.task
        ds = w_bar.shared - c.shared_copy
        per_client_drift += Ls[c.client_id] ** 2 * (float(dt @ dt) + float(ds @ ds) / m)

    inner = dirs @ lg
    inner_bound = lg_sq / m - per_client_drift / (2 * m)
    mi, si = float(inner.mean()), float(inner.std(ddof=1) / root_n)
    norms = np.einsum("ij,ij->i", dirs, dirs)
    norm_bound = (inp.noise_power + inp.diversity * lg_sq) / m
    mn, sn = float(norms.mean()), float(norms.std(ddof=1) / root_n)
    d_obs = drift(w_bar, clients) / m
    d_bound = drift_bound(inp, step_size)
    ordered = sorted(clients, key=lambda c: c.client_id)
    ratio = diversity_ratio(tasks, [c.task for c in ordered], [c.shared_copy for c in ordered])
    return {
        "inner_product": McCheck("inner_product", mi, si, inner_bound, mi + 3 * si >= inner_bound, mi + 3 * si - inner_bound),
        "update_norm": McCheck(
            "update_norm", mn, sn, norm_bound, mn - 3 * sn <= norm_bound, norm_bound - mn + 3 * sn, ratio <= inp.diversity
        ),
        "drift": McCheck("drift", d_obs, 0.0, d_bound, d_obs <= d_bound, d_bound - d_obs),
    }


# --- trace checks ------------------------------------------------------------


@dataclass
class TraceReport:
    kind: str
    steps: np.ndarray
    mean: np.ndarray
    std_error: np.ndarray
    bound: np.ndarray
    margin: np.ndarray
    passed: bool
    rule: str

    @property
    def min_margin(self) -> float:
        return float(np.min(self.margin)) if self.margin.size else math.nan

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "rule": self.rule,
            "passed": bool(self.passed),
            "min_margin": self.min_margin,
            "steps": self.steps.tolist(),
            "mean": self.mean.tolist(),
            "std_error": self.std_error.tolist(),
            "bound": self.bound.tolist(),
            "margin": self.margin.tolist(),
        }


TRACE_KINDS = ("nonconvex", "convex", "strongly_convex")


def _require_theory(runs: Sequence[RunMetrics]) -> None:
    if not runs:
        raise ConfigError("no runs to check")
    for r in runs:
        if r.config is None or not r.config.theory_mode:
            raise ConfigError("convergence traces must come from theory-mode runs")
        if r.diverged:
            raise ConfigError(f"run with seed {r.seed} diverged: {r.divergence_message}")


def _stack(runs: Sequence[RunMetrics], column: str) -> tuple[np.ndarray, np.ndarray]:
    steps = runs[0].steps
    for r in runs[1:]:
        if not np.array_equal(r.steps, steps):
            raise ConfigError("runs recorded different steps")
    return steps, np.stack([r.column(column) for r in runs])


def _mean_se(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = x.shape[0]
    se = x.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(x.shape[1:])
    return x.mean(axis=0), se


def check_convergence_trace(
    runs: Sequence[RunMetrics],
    inp: BoundInputs,
    kind: str,
    at_steps: Sequence[int] | None = None,
    n_se: float = 3.0,
) -> TraceReport:
    """Seed-averaged trace versus the matching rate bound; passes when mean + n_se SE <= bound."""
    if kind not in TRACE_KINDS:
        raise ValueError(f"kind must be one of {TRACE_KINDS}")
    _require_theory(runs)
    rule = f"mean + {n_se:g} SE <= bound"
    if kind == "nonconvex":
        steps, g = _stack(runs, "grad_norm_sq")
        if not np.array_equal(steps, np.arange(1, steps.size + 1)):
            raise ConfigError("the nonconvex check needs a record at every step")
        init = np.array([[r.initial_grad_norm_sq] for r in runs])
        # average over iterates 0..T-1 for T = 1..len
        full = np.concatenate([init, g[:, :-1]], axis=1)
        obs = np.cumsum(full, axis=1) / np.arange(1, steps.size + 1)
        bound = np.array([nonconvex_bound(inp, int(t)) for t in steps])
    else:
        steps, loss = _stack(runs, "loss")
        obs = loss - inp.fstar
        if kind == "convex":
            bound = np.array([convex_bound(inp, int(t)) for t in steps])
        else:
            bound = strongly_convex_envelope(inp, steps)
    if at_steps is not None:
        keep = np.isin(steps, np.asarray(at_steps))
        missing = set(int(s) for s in at_steps) - set(int(s) for s in steps[keep])
        if missing:
            raise ConfigError(f"steps {sorted(missing)} were not recorded")
        steps, obs, bound = steps[keep], obs[:, keep], bound[keep]
    mean, se = _mean_se(obs)
    margin = bound - (mean + n_se * se)
    return TraceReport(kind, steps, mean, se, bound, margin, bool(np.all(margin >= 0)), rule)


def check_drift_trace(runs: Sequence[RunMetrics], inp: BoundInputs, step_size: float | None = None) -> TraceReport:
    """Every recorded per-client drift of every run against the synchronisation bound."""
    _require_theory(runs)
    steps, d = _stack(runs, "drift")
    d = d / inp.num_clients
    bound = np.full(steps.shape, drift_bound(inp, step_size))
    worst = d.max(axis=0)
    mean, se = _mean_se(d)
    margin = bound - worst
    return TraceReport("drift", steps, mean, se, bound, margin, bool(np.all(margin >= 0)), "max over runs <= bound")


# --- end-to-end verification -------------------------------------------------


@dataclass(frozen=True)
class VerifyPlan:
    """Everything needed to run the full suite of checks on one synthetic problem."""

    problem: SyntheticConfig
    problem_seed: int = 0
    seed: int = 0
    replicas: int = 100
    steps: int = 10_000
    sync_interval: int = 1
    sigma: float = 0.0
    # None: set to the sampled shared-gradient bound so clipping rarely binds
    clip_norm: float | None = None
    checkpoints: tuple[int, ...] = (10, 100, 1000, 10_000)
    probe_radius: float = 1.0
    probe_samples: int = 200
    decay_checkpoints: int = 10
    decay_samples: int = 5000
    fstar_shift: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "checkpoints", tuple(int(c) for c in self.checkpoints))
        if self.replicas < 2:
            raise ConfigError("verification needs at least 2 replicas")
        if any(c < 1 or c > self.steps for c in self.checkpoints):
            raise ConfigError("checkpoints must lie in [1, steps]")

    @property
    def kind(self) -> str:
        return {"quadratic": "strongly_convex", "logistic": "convex", "nonconvex": "nonconvex"}[self.problem.kind]


@dataclass
class VerifyReport:
    plan: VerifyPlan
    inputs: BoundInputs
    step_size: float
    clip_norm: float
    traces: dict[str, TraceReport]
    decay: list[McCheck]
    diagnostics: list[dict[str, McCheck]]
    notes: list[str] = field(default_factory=list)
    runs: list[RunMetrics] = field(default_factory=list, repr=False)

    @property
    def checks(self) -> dict[str, bool]:
        out = {name: t.passed for name, t in self.traces.items()}
        out["sufficient_decay"] = all(c.ok for c in self.decay)
        for key in ("inner_product", "update_norm", "drift"):
            out[f"diag_{key}"] = all(d[key].ok for d in self.diagnostics)
        return out

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": self.checks,
            "inputs": asdict(self.inputs),
            "step_size": self.step_size,
            "clip_norm": self.clip_norm,
            "traces": {k: v.to_dict() for k, v in self.traces.items()},
            "sufficient_decay": [c.to_dict() for c in self.decay],
            "diagnostics": [{k: v.to_dict() for k, v in d.items()} for d in self.diagnostics],
            "notes": list(self.notes),
        }

    def summary_rows(self) -> list[tuple[str, float, float, float, str]]:
        """(check, bound, observed, margin, status) with status pass, FAIL or n/a."""

        def status(ok: bool, applicable: bool = True) -> str:
            return "n/a" if not applicable else "pass" if ok else "FAIL"

        rows = []
        for name, t in self.traces.items():
            k = int(np.argmin(t.margin))
            rows.append((name, float(t.bound[k]), float(t.mean[k]), float(t.margin[k]), status(t.passed)))
        for c in self.decay:
            rows.append((c.name, c.bound, c.observed, c.margin, status(c.passed, c.applicable)))
        for d in self.diagnostics:
            for c in d.values():
                rows.append((f"diag_{c.name}", c.bound, c.observed, c.margin, status(c.passed, c.applicable)))
        return rows


def decay_checkpoints(steps: int, count: int, sync_interval: int) -> tuple[int, ...]:
    """``count`` distinct log-spaced snapshot steps, moved off the step right after a sync so drift is visible.

    Fewer points come back only when ``steps`` is too short to hold them.
    """
    last = max(steps - 1, 1)
    out: list[int] = []
    for s in np.geomspace(1, last, count).astype(int):
        s = max(int(s), out[-1] + 1 if out else 1)
        while sync_interval > 1 and s % sync_interval == 1:
            s += 1
        if s > last:
            # walk back from the end for a free step
            s = last
            while sync_interval > 1 and s % sync_interval == 1:
                s -= 1
            if s < 1 or (out and s <= out[-1]):
                break
        out.append(s)
    return tuple(out)


def run_verification(plan: VerifyPlan, workers: int = 1) -> VerifyReport:
    tasks, consts = generate_synthetic(plan.problem, plan.problem_seed)
    layout = layout_of(tasks)
    m = layout.num_clients
    region = ProbeRegion(consts.initial, plan.probe_radius)
    est = estimate_constants(tasks, region, plan.probe_samples, plan.seed, consts.minimizer, consts.fstar)
    lam = est.lam
    L = consts.L
    eta = 1.0 / (lam * L)
    clip_norm = plan.clip_norm if plan.clip_norm is not None else est.B
    dp = DpConfig(clip_norm=clip_norm, sigma=plan.sigma)
    snaps = decay_checkpoints(plan.steps, plan.decay_checkpoints, plan.sync_interval)
    record_every = 1 if plan.kind == "nonconvex" else plan.steps

    runs = []
    for r in range(plan.replicas):
        cfg = SimConfig.theory(
            m,
            plan.steps,
            plan.sync_interval,
            eta,
            dp,
            seed=derive_seed(plan.seed, r),
            record_every=record_every,
            record_steps=plan.checkpoints,
            snapshot_steps=snaps if r == 0 else (),
        )
        runs.append(run(cfg, tasks, consts, workers=workers))

    b_traj = max(r.records[-1].shared_grad_max for r in runs if r.records)
    snap_clients = runs[0].snapshots
    for clients in snap_clients.values():
        _, b = _local_partials(clients, tasks, math.inf)
        b_traj = max(b_traj, max(float(np.linalg.norm(x)) for x in b))
    fstar = consts.fstar + plan.fstar_shift
    r0 = est.R0 if est.R0 is not None else 0.0
    inp = BoundInputs(
        lipschitz=L,
        diversity=lam,
        grad_bound=1.1 * b_traj,
        shared_dim=layout.shared_dim,
        sensitivity=dp.resolved_sensitivity(1, m),
        sigma=plan.sigma,
        num_clients=m,
        sync_interval=plan.sync_interval,
        strong_convexity=consts.c or 0.0,
        level_radius=r0,
        f0=global_loss(tasks, consts.initial),
        fstar=fstar,
    )

    traces = {plan.kind: check_convergence_trace(runs, inp, plan.kind, None if plan.kind == "nonconvex" else plan.checkpoints)}
    traces["drift"] = check_drift_trace(runs, inp, eta)
    decay, diags = [], []
    for k, step in enumerate(sorted(snap_clients)):
        clients = snap_clients[step]
        s = derive_seed(plan.seed, 10_000 + k)
        decay.append(check_sufficient_decay(clients, tasks, inp, plan.decay_samples, s, eta, clip_norm))
        diags.append(
            step_diagnostics(clients, tasks, inp, plan.decay_samples, s, eta, clip_norm, consts.L_per_client)
        )
    notes = [
        "convex radius evaluated with H^2 (the decay-step form); the alternative H form is smaller for H > 1",
        f"lambda = {lam:.6g} (sample max {est.lam_sample_max:.6g} inflated 10%)",
        f"B = {inp.grad_bound:.6g} (trajectory max inflated 10%)",
    ]
    skipped = [step for step, d in zip(sorted(snap_clients), diags) if not d["update_norm"].applicable]
    if skipped:
        notes.append(
            f"update-norm diagnostic not applicable at steps {skipped}: "
            f"measured diversity ratio exceeds lambda there (shared partials cancel near the optimum)"
        )
    if consts.fstar_is_lower_bound:
        notes.append("f* is a certified lower bound (nonconvex problem)")
    if plan.fstar_shift:
        notes.append(f"f* shifted by {plan.fstar_shift:+g} (falsification run)")
    return VerifyReport(plan, inp, eta, clip_norm, traces, decay, diags, notes, runs)
