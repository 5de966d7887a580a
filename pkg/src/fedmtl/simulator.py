"""In-process simulation of private federated multi-task training and its baselines.

Each client owns a task block and a private copy of the shared block.  A
round samples participating clients, lets each take one local gradient step,
and on synchronisation rounds averages the shared copies and broadcasts the
result to every client.  Metrics are always measured at the virtual average
(task blocks as held by the clients, shared block = mean of the copies).
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Mapping, Sequence

import numpy as np

from . import accountant
from .mechanism import DpConfig, add_noise, clip
from .objectives import ObjectiveConstants, TaskSpec, global_gradient, global_loss, global_value_and_gradient, layout_of
from .params import BlockLayout, ClientState, GlobalParam, LayoutError, drift, virtual_average
from .rng import DrawBank, derive_seed

METHODS = ("Local", "FedAvg", "DPFedAvg", "FedMTL", "DPFedMTL")
DP_METHODS = ("DPFedAvg", "DPFedMTL")
SAMPLING = ("poisson", "fixed")
AGGREGATION = ("round", "window", "all")
DIVISORS = ("realized", "k")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    method: str = "DPFedMTL"
    num_clients: int = 5
    clients_per_round: int = 1
    steps: int = 100
    sync_interval: int = 1
    step_size: float | None = None
    dp: DpConfig = field(default_factory=DpConfig)
    seed: int = 0
    record_every: int = 1
    # extra steps to record besides the record_every multiples
    record_steps: tuple[int, ...] = ()
    snapshot_steps: tuple[int, ...] = ()
    sampling: str = "poisson"
    aggregation: str = "round"
    divisor: str = "realized"
    overwrite_every_round: bool = False
    theory_mode: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "record_steps", tuple(sorted({int(s) for s in self.record_steps})))
        object.__setattr__(self, "snapshot_steps", tuple(sorted({int(s) for s in self.snapshot_steps})))
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.num_clients < 1:
            raise ConfigError("num_clients must be >= 1")
        if not 1 <= self.clients_per_round <= self.num_clients:
            raise ConfigError(
                f"clients_per_round must satisfy 1 <= K <= M (got K={self.clients_per_round}, M={self.num_clients})"
            )
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.sync_interval < 1:
            raise ConfigError("sync_interval must be >= 1")
        if self.step_size is not None and not (self.step_size >= 0 and math.isfinite(self.step_size)):
            raise ConfigError("step_size must be finite and >= 0")
        if self.record_every < 1:
            raise ConfigError("record_every must be >= 1")
        if self.sampling not in SAMPLING:
            raise ConfigError(f"sampling must be one of {SAMPLING}")
        if self.aggregation not in AGGREGATION:
            raise ConfigError(f"aggregation must be one of {AGGREGATION}")
        if self.divisor not in DIVISORS:
            raise ConfigError(f"divisor must be one of {DIVISORS}")
        if self.theory_mode:
            problems = []
            if self.clients_per_round != 1:
                problems.append("clients_per_round must be 1")
            if self.sampling != "poisson":
                problems.append("sampling must be poisson")
            if self.aggregation != "all":
                problems.append("aggregation must be 'all' (virtual average)")
            if self.method not in ("FedMTL", "DPFedMTL"):
                problems.append("method must be FedMTL or DPFedMTL")
            if problems:
                raise ConfigError("theory mode: " + "; ".join(problems))

    @property
    def sampling_rate(self) -> float:
        return self.clients_per_round / self.num_clients

    @classmethod
    def theory(cls, num_clients: int, steps: int, sync_interval: int, step_size: float, dp: DpConfig, seed: int = 0, **kw):
        """Regime of the convergence analysis: one expected client per step, virtual-average sync."""
        return cls(
            method=kw.pop("method", "DPFedMTL"),
            num_clients=num_clients,
            clients_per_round=1,
            steps=steps,
            sync_interval=sync_interval,
            step_size=step_size,
            dp=dp,
            seed=seed,
            sampling="poisson",
            aggregation="all",
            theory_mode=True,
            **kw,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["record_steps"] = list(self.record_steps)
        d["snapshot_steps"] = list(self.snapshot_steps)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SimConfig":
        d = dict(d)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown simulation keys: {sorted(unknown)}")
        if isinstance(d.get("dp"), Mapping):
            dp = dict(d["dp"])
            bad = set(dp) - set(DpConfig.__dataclass_fields__)
            if bad:
                raise ConfigError(f"unknown dp keys: {sorted(bad)}")
            try:
                d["dp"] = DpConfig(**dp)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        for k in ("record_steps", "snapshot_steps"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class StepRecord:
    step: int
    loss: float
    grad_norm_sq: float
    drift: float
    subset_size: int
    mu: float | None
    shared_grad_max: float

    FIELDS = ("step", "loss", "grad_norm_sq", "drift", "subset_size", "mu", "shared_grad_max")


@dataclass
class RunMetrics:
    records: list[StepRecord]
    initial_loss: float
    initial_grad_norm_sq: float
    final_clients: list[ClientState]
    seed: int
    config_hash: str
    diverged: bool = False
    divergence_message: str = ""
    skipped_rounds: list[int] = field(default_factory=list)
    snapshots: dict[int, list[ClientState]] = field(default_factory=dict)
    wall_time: float = 0.0
    steps_completed: int = 0
    config: SimConfig | None = None

    @property
    def final_loss(self) -> float:
        return self.records[-1].loss if self.records else self.initial_loss

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) if getattr(r, name) is not None else np.nan for r in self.records])

    @property
    def steps(self) -> np.ndarray:
        return np.array([r.step for r in self.records], dtype=int)


class Divergence(RuntimeError):
    pass


def poisson_sample(num_clients: int, clients_per_round: int, uniforms: np.ndarray) -> list[int]:
    """Each client joins independently with probability K/M (``uniforms`` has one draw per client)."""
    if not 1 <= clients_per_round <= num_clients:
        raise ConfigError("need 1 <= K <= M")
    p = clients_per_round / num_clients
    if p == 1:
        return list(range(num_clients))
    return [int(i) for i in np.flatnonzero(uniforms < p)]


def fixed_sample(num_clients: int, clients_per_round: int, uniforms: np.ndarray) -> list[int]:
    """A uniformly random subset of exactly K clients."""
    return sorted(int(i) for i in np.argsort(uniforms, kind="stable")[:clients_per_round])


def aggregate(selected: Sequence[ClientState], divisor: int | None = None) -> np.ndarray | None:
    """Mean of the selected clients' shared copies, summed in client-id order."""
    if not selected:
        return None
    ordered = sorted(selected, key=lambda c: c.client_id)
    total = np.zeros_like(ordered[0].shared_copy)
    for c in ordered:
        total += c.shared_copy
    return total / (len(ordered) if divisor is None else divisor)


def _aggregate_tasks(selected: Sequence[ClientState], divisor: int | None = None) -> np.ndarray:
    ordered = sorted(selected, key=lambda c: c.client_id)
    total = np.zeros_like(ordered[0].task)
    for c in ordered:
        total += c.task
    return total / (len(ordered) if divisor is None else divisor)


@dataclass
class _StepContext:
    method: str
    step_size: float
    dp: DpConfig
    sens: float


def local_step(
    client: ClientState,
    task: TaskSpec,
    ctx: _StepContext,
    noise: np.ndarray | None = None,
) -> tuple[ClientState, float]:
    """One local update.  Returns the new state and the shared-gradient norm seen.

    ``noise`` holds standard normals (shared-block length, or full length for
    DPFedAvg); it is ignored by non-private methods.
    """
    g_w, g_s = task.grad(client.task, client.shared_copy)
    gnorm = math.sqrt(float(g_s @ g_s))
    # a sum is non-finite iff some entry is (or it overflows, which is divergence anyway)
    if not (math.isfinite(gnorm) and math.isfinite(float(g_w.sum()))):
        raise Divergence(f"non-finite gradient at client {client.client_id}")
    eta = ctx.step_size
    if ctx.method == "DPFedMTL":
        g_s = add_noise(clip(g_s, ctx.dp.clip_norm), ctx.sens, ctx.dp.sigma, noise)
    elif ctx.method == "DPFedAvg":
        d = g_w.size
        full = add_noise(clip(np.concatenate([g_w, g_s]), ctx.dp.clip_norm), ctx.sens, ctx.dp.sigma, noise)
        g_w, g_s = full[:d], full[d:]
    new = ClientState(client.task - eta * g_w, client.shared_copy - eta * g_s, client.client_id)
    if not math.isfinite(float(new.task.sum()) + float(new.shared_copy.sum())):
        raise Divergence(f"non-finite parameters at client {client.client_id}")
    return new, gnorm


def initial_clients(layout: BlockLayout, w0: GlobalParam | None = None) -> list[ClientState]:
    w0 = GlobalParam.zeros(layout) if w0 is None else w0
    return [ClientState(w0.task(i).copy(), w0.shared.copy(), i) for i in range(layout.num_clients)]


def default_step_size(constants: ObjectiveConstants | None) -> float:
    if constants is None or constants.lam is None or not constants.L_per_client:
        raise ConfigError("step_size not given and constants (L, lambda) unavailable for the 1/(lambda L) default")
    return 1.0 / (constants.lam * constants.L)


def run(
    cfg: SimConfig,
    tasks: Sequence[TaskSpec],
    constants: ObjectiveConstants | None = None,
    initial: GlobalParam | None = None,
    workers: int = 1,
    config_hash: str | None = None,
) -> RunMetrics:
    layout = layout_of(tasks)
    m = layout.num_clients
    if m != cfg.num_clients:
        raise ConfigError(f"config has num_clients={cfg.num_clients} but {m} tasks were given")
    if cfg.method in ("FedAvg", "DPFedAvg") and len(set(layout.task_dims)) != 1:
        raise LayoutError("FedAvg baselines average whole vectors and need equal task dims")
    eta = cfg.step_size if cfg.step_size is not None else default_step_size(constants)
    if initial is None and constants is not None:
        initial = constants.initial
    sens = cfg.dp.resolved_sensitivity(cfg.clients_per_round, m)
    ctx = _StepContext(cfg.method, eta, cfg.dp, sens)
    private = cfg.method in DP_METHODS and cfg.dp.sigma > 0
    noise_width = layout.shared_dim + (layout.task_dims[0] if cfg.method == "DPFedAvg" else 0)
    noise_banks = [DrawBank(cfg.seed, "noise", i, noise_width) for i in range(m)] if private else None
    sample_bank = DrawBank(cfg.seed, "sample", -1, m, kind="uniform")
    sampler = poisson_sample if cfg.sampling == "poisson" else fixed_sample
    averages_tasks = cfg.method in ("FedAvg", "DPFedAvg")
    communicates = cfg.method != "Local"

    clients = initial_clients(layout, initial)
    server_shared = clients[0].shared_copy.copy()
    server_task = clients[0].task.copy()
    record_at = set(cfg.record_steps)
    start = time.perf_counter()
    w_bar = virtual_average(clients, layout)
    metrics = RunMetrics(
        records=[],
        initial_loss=global_loss(tasks, w_bar),
        initial_grad_norm_sq=global_gradient(tasks, w_bar).norm_sq(),
        final_clients=[],
        seed=cfg.seed,
        config_hash=config_hash or cfg.hash(),
        config=cfg,
    )
    if 0 in cfg.snapshot_steps:
        metrics.snapshots[0] = [c.copy() for c in clients]
    shared_max = 0.0
    window: set[int] = set()
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for t in range(cfg.steps):
            selected = sampler(m, cfg.clients_per_round, sample_bank.row(t))
            if communicates and cfg.overwrite_every_round:
                for i in selected:
                    clients[i].shared_copy = server_shared.copy()
                    if averages_tasks:
                        clients[i].task = server_task.copy()

            def step_one(i: int):
                z = noise_banks[i].row(t) if private else None
                return local_step(clients[i], tasks[i], ctx, z)

            try:
                results = list(pool.map(step_one, selected)) if pool else [step_one(i) for i in selected]
            except Divergence as exc:
                metrics.diverged = True
                metrics.divergence_message = f"step {t}: {exc}"
                break
            for i, (state, gnorm) in zip(selected, results):
                clients[i] = state
                shared_max = max(shared_max, gnorm)
            window.update(selected)

            if communicates and t % cfg.sync_interval == 0:
                if cfg.aggregation == "all":
                    group = clients
                elif cfg.aggregation == "window":
                    group = [clients[i] for i in sorted(window)]
                else:
                    group = [clients[i] for i in selected]
                if not group:
                    metrics.skipped_rounds.append(t)
                else:
                    div = cfg.clients_per_round if (cfg.divisor == "k" and cfg.aggregation != "all") else None
                    server_shared = aggregate(group, div)
                    if averages_tasks:
                        server_task = _aggregate_tasks(group, div)
                    for c in clients:
                        c.shared_copy = server_shared.copy()
                        if averages_tasks:
                            c.task = server_task.copy()
                window.clear()

            done = t + 1
            metrics.steps_completed = done
            if done in cfg.snapshot_steps:
                metrics.snapshots[done] = [c.copy() for c in clients]
            if done % cfg.record_every == 0 or done in record_at:
                rec = _record(tasks, clients, layout, done, len(selected), cfg, shared_max)
                metrics.records.append(rec)
                if not (math.isfinite(rec.loss) and math.isfinite(rec.grad_norm_sq)):
                    metrics.diverged = True
                    metrics.divergence_message = f"step {done}: non-finite loss"
                    break
    finally:
        if pool:
            pool.shutdown()
    metrics.final_clients = [c.copy() for c in clients]
    metrics.wall_time = time.perf_counter() - start
    return metrics


def _record(tasks, clients, layout, step, subset_size, cfg: SimConfig, shared_max) -> StepRecord:
    w_bar = virtual_average(clients, layout)
    with np.errstate(over="ignore", invalid="ignore"):
        loss, grad = global_value_and_gradient(tasks, w_bar)
        gsq = grad.norm_sq()
    mu = None
    if cfg.method in DP_METHODS:
        budget = accountant.compose_clt(cfg.sampling_rate, step, cfg.dp.sigma)
        mu = budget.mu if budget.finite else None
    return StepRecord(step, loss, gsq, drift(w_bar, clients), subset_size, mu, shared_max)


# --- sweeps ------------------------------------------------------------------

DP_KEYS = ("sigma", "clip_norm", "sensitivity")


def apply_point(base: SimConfig, point: Mapping[str, Any], seed: int) -> SimConfig:
    sim_kw, dp_kw = {}, {}
    for k, v in point.items():
        if k in DP_KEYS:
            dp_kw[k] = v
        elif k in SimConfig.__dataclass_fields__ and k not in ("dp", "seed"):
            sim_kw[k] = v
        else:
            raise ConfigError(f"cannot sweep over {k!r}")
    dp = replace(base.dp, **dp_kw) if dp_kw else base.dp
    return replace(base, dp=dp, seed=seed, **sim_kw)


def grid_points(grid: Mapping[str, Sequence[Any]]) -> list[dict]:
    """Cartesian product in key order, last key varying fastest."""
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ConfigError("sweep grid must be non-empty")
    points = [{}]
    for k, values in grid.items():
        points = [{**p, k: v} for p in points for v in values]
    return points


@dataclass
class SweepRun:
    index: int
    point: dict
    repeat: int
    config: SimConfig
    metrics: RunMetrics | None
    error: str = ""


@dataclass
class SweepSummary:
    index: int
    point: dict
    n_ok: int
    mean_final_loss: float
    std_final_loss: float


def sweep(
    grid: Mapping[str, Sequence[Any]] | Sequence[Mapping[str, Any]],
    base: SimConfig,
    tasks: Sequence[TaskSpec],
    repeats: int = 1,
    constants: ObjectiveConstants | None = None,
    workers: int = 1,
) -> tuple[list[SweepRun], list[SweepSummary]]:
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    points = grid_points(grid) if isinstance(grid, Mapping) else [dict(p) for p in grid]
    if not points:
        raise ConfigError("sweep grid must be non-empty")
    runs = []
    for gi, point in enumerate(points):
        for r in range(repeats):
            seed = derive_seed(base.seed, gi, r)
            try:
                cfg = apply_point(base, point, seed)
            except ValueError as exc:
                runs.append(SweepRun(gi, point, r, replace(base, seed=seed), None, str(exc)))
                continue
            try:
                met = run(cfg, tasks, constants, workers=workers)
                runs.append(SweepRun(gi, point, r, cfg, met, met.divergence_message))
            except (ValueError, ArithmeticError) as exc:
                runs.append(SweepRun(gi, point, r, cfg, None, str(exc)))
    return runs, summarize(runs, len(points))


def summarize(runs: Sequence[SweepRun], n_points: int) -> list[SweepSummary]:
    out = []
    for gi in range(n_points):
        mine = [r for r in runs if r.index == gi]
        finals = np.array([r.metrics.final_loss for r in mine if r.metrics is not None and not r.metrics.diverged])
        mean = float(finals.mean()) if finals.size else math.nan
        std = float(finals.std(ddof=1)) if finals.size > 1 else 0.0 if finals.size == 1 else math.nan
        out.append(SweepSummary(gi, mine[0].point if mine else {}, int(finals.size), mean, std))
    return out
