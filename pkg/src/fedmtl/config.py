"""Run configuration: schema validation, canonical form and hashing.

A config file is YAML (JSON is accepted as a subset) with sections::

    format_version: 1
    experiment: name
    seed: 0                      # master seed
    tasks:    {synthetic: {...}} or {csv: {paths: [...], ...}}
    layout:   {task_dims: [...], shared_dim: n}        # optional cross-check
    simulation: {method, num_clients, ..., dp: {clip_norm, sigma, sensitivity}}
    constants:  {probe_radius, probe_samples}            # for the default step size
    accountant: {epsilons, delta, mu_formula}
    sweep:    {grid: {key: [values]}, repeats: n}
    verify:   {replicas, checkpoints, ...}
    output:   {root: path}
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import yaml

from .mechanism import DpConfig
from .objectives import CsvSchema, SyntheticConfig
from .params import BlockLayout, LayoutError
from .simulator import ConfigError, SimConfig
from .theory import VerifyPlan

FORMAT_VERSION = 1
OUTPUT_ENV = "FEDMTL_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "runs"


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads exponent floats without a dot (1e-5) and inf/nan spellings."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
        |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
        |\.[0-9_]+(?:[eE][-+][0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$""",
        re.X,
    ),
    list("-+0123456789."),
)


def _jsonable(v):
    """Non-finite floats become the strings 'inf' / '-inf' so canonical JSON stays valid."""
    if isinstance(v, float) and not math.isfinite(v):
        if math.isnan(v):
            raise ConfigError("NaN is not allowed in configs")
        return "inf" if v > 0 else "-inf"
    if isinstance(v, Mapping):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def _number(v, where: str) -> float:
    if isinstance(v, bool):
        raise ConfigError(f"{where}: expected a number")
    if isinstance(v, str) and v.strip().lower() in ("inf", "+inf", "infinity"):
        return math.inf
    if isinstance(v, (int, float)):
        return float(v)
    raise ConfigError(f"{where}: expected a number, got {v!r}")


TOP_KEYS = ("format_version", "experiment", "seed", "tasks", "layout", "simulation", "constants", "accountant", "sweep", "verify", "output")


def _check_keys(d: Mapping, allowed, where: str) -> None:
    if not isinstance(d, Mapping):
        raise ConfigError(f"{where}: expected a mapping, got {type(d).__name__}")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(repr(k) for k in unknown)}")


def _names(cls) -> list[str]:
    return [f.name for f in fields(cls)]


def _build(cls, d: Mapping | None, where: str, **extra):
    d = dict(d or {})
    _check_keys(d, _names(cls), where)
    d.update(extra)
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class CsvSource:
    paths: tuple[str, ...]
    schema: CsvSchema = field(default_factory=CsvSchema)


@dataclass(frozen=True)
class ConstantsOptions:
    probe_radius: float = 1.0
    probe_samples: int = 200


@dataclass(frozen=True)
class AccountantOptions:
    epsilons: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0, 8.0)
    delta: float = 1e-5
    mu_formula: str = "clt"


@dataclass(frozen=True)
class SweepOptions:
    grid: dict
    repeats: int = 1


@dataclass(frozen=True)
class VerifyOptions:
    replicas: int = 100
    checkpoints: tuple[int, ...] = (10, 100, 1000, 10_000)
    probe_radius: float = 1.0
    probe_samples: int = 200
    decay_checkpoints: int = 10
    decay_samples: int = 5000
    fstar_shift: float = 0.0
    # use the sampled gradient bound as the clip norm instead of simulation.dp.clip_norm
    auto_clip: bool = True


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    simulation: SimConfig
    synthetic: SyntheticConfig | None = None
    csv: CsvSource | None = None
    seed: int = 0
    problem_seed: int | None = None
    layout: BlockLayout | None = None
    constants: ConstantsOptions = field(default_factory=ConstantsOptions)
    accountant: AccountantOptions = field(default_factory=AccountantOptions)
    sweep: SweepOptions | None = None
    verify: VerifyOptions | None = None
    output_root: str | None = None

    @property
    def effective_problem_seed(self) -> int:
        return self.seed if self.problem_seed is None else self.problem_seed

    def output_dir(self) -> Path:
        return Path(self.output_root or os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT_ROOT))

    def to_dict(self) -> dict:
        tasks: dict[str, Any]
        if self.synthetic is not None:
            syn = asdict(self.synthetic)
            syn["eigen_range"] = list(syn["eigen_range"])
            if self.problem_seed is not None:
                syn["seed"] = self.problem_seed
            tasks = {"synthetic": syn}
        else:
            tasks = {"csv": {"paths": list(self.csv.paths), "schema": asdict(self.csv.schema)}}
        sim = self.simulation.to_dict()
        sim.pop("seed")
        out = {
            "format_version": FORMAT_VERSION,
            "experiment": self.experiment,
            "seed": self.seed,
            "tasks": tasks,
            "simulation": sim,
            "constants": asdict(self.constants),
            "accountant": {**asdict(self.accountant), "epsilons": list(self.accountant.epsilons)},
        }
        if self.layout is not None:
            out["layout"] = self.layout.to_dict()
        if self.sweep is not None:
            out["sweep"] = {"grid": {k: list(v) for k, v in self.sweep.grid.items()}, "repeats": self.sweep.repeats}
        if self.verify is not None:
            out["verify"] = {**asdict(self.verify), "checkpoints": list(self.verify.checkpoints)}
        if self.output_root is not None:
            out["output"] = {"root": self.output_root}
        return out

    def canonical(self) -> str:
        return canonical_json(self.to_dict())

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def verify_plan(self) -> VerifyPlan:
        if not self.simulation.theory_mode:
            raise ConfigError(
                "verify needs simulation.theory_mode: true (one expected client per step, "
                "Poisson sampling, virtual-average aggregation)"
            )
        if self.synthetic is None:
            raise ConfigError("verify needs a synthetic task source with known constants")
        v = self.verify or VerifyOptions()
        sim = self.simulation
        return VerifyPlan(
            problem=self.synthetic,
            problem_seed=self.effective_problem_seed,
            seed=self.seed,
            replicas=v.replicas,
            steps=sim.steps,
            sync_interval=sim.sync_interval,
            sigma=sim.dp.sigma,
            clip_norm=None if v.auto_clip else sim.dp.clip_norm,
            checkpoints=v.checkpoints,
            probe_radius=v.probe_radius,
            probe_samples=v.probe_samples,
            decay_checkpoints=v.decay_checkpoints,
            decay_samples=v.decay_samples,
            fstar_shift=v.fstar_shift,
        )


def canonical_json(d: Mapping) -> str:
    return json.dumps(_jsonable(d), sort_keys=True, indent=2, allow_nan=False) + "\n"


def parse_config(raw: Mapping[str, Any]) -> RunConfig:
    _check_keys(raw, TOP_KEYS, "config")
    version = raw.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ConfigError(f"config: unsupported format_version {version!r} (expected {FORMAT_VERSION})")
    experiment = raw.get("experiment")
    if not isinstance(experiment, str) or not experiment or any(c in experiment for c in "/\\ "):
        raise ConfigError("config: 'experiment' must be a non-empty name without spaces or slashes")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("config: 'seed' must be a non-negative integer")

    tasks = raw.get("tasks")
    if not isinstance(tasks, Mapping) or len(tasks) != 1 or next(iter(tasks)) not in ("synthetic", "csv"):
        raise ConfigError("tasks: expected exactly one of 'synthetic' or 'csv'")
    synthetic = csv = None
    problem_seed = None
    if "synthetic" in tasks:
        syn = dict(tasks["synthetic"] or {})
        problem_seed = syn.pop("seed", None)
        if "eigen_range" in syn:
            syn["eigen_range"] = tuple(syn["eigen_range"])
        synthetic = _build(SyntheticConfig, syn, "tasks.synthetic")
    else:
        c = dict(tasks["csv"] or {})
        _check_keys(c, ("paths", "schema"), "tasks.csv")
        paths = c.get("paths")
        if not paths or isinstance(paths, str):
            raise ConfigError("tasks.csv.paths: expected a non-empty list of files")
        csv = CsvSource(tuple(str(p) for p in paths), _build(CsvSchema, c.get("schema"), "tasks.csv.schema"))

    sim_raw = dict(raw.get("simulation") or {})
    if "seed" in sim_raw:
        raise ConfigError("simulation.seed: use the top-level 'seed' (single master seed)")
    _check_keys(sim_raw, [n for n in _names(SimConfig) if n != "seed"], "simulation")
    dp_raw = dict(sim_raw.pop("dp", None) or {})
    for k in ("clip_norm", "sigma"):
        if k in dp_raw:
            dp_raw[k] = _number(dp_raw[k], f"simulation.dp.{k}")
    dp = _build(DpConfig, dp_raw, "simulation.dp")
    for k in ("record_steps", "snapshot_steps"):
        if k in sim_raw:
            sim_raw[k] = tuple(sim_raw[k])
    try:
        sim = SimConfig(dp=dp, seed=seed, **sim_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"simulation: {exc}") from None

    layout = None
    if raw.get("layout") is not None:
        try:
            layout = BlockLayout.from_dict(raw["layout"])
        except (LayoutError, KeyError, TypeError) as exc:
            raise ConfigError(f"layout: {exc}") from None
        if layout.num_clients != sim.num_clients:
            raise ConfigError(f"layout: {layout.num_clients} task blocks but simulation.num_clients={sim.num_clients}")
    if synthetic is not None:
        if synthetic.num_clients != sim.num_clients:
            raise ConfigError(
                f"tasks.synthetic.num_clients={synthetic.num_clients} disagrees with simulation.num_clients={sim.num_clients}"
            )
        if layout is not None and layout != BlockLayout.uniform(synthetic.num_clients, synthetic.task_dim, synthetic.shared_dim):
            raise ConfigError("layout: does not match the synthetic task dimensions")
    elif len(csv.paths) != sim.num_clients:
        raise ConfigError(f"tasks.csv.paths lists {len(csv.paths)} files but simulation.num_clients={sim.num_clients}")

    acc_raw = dict(raw.get("accountant") or {})
    if "epsilons" in acc_raw:
        acc_raw["epsilons"] = tuple(float(e) for e in acc_raw["epsilons"])
    acc = _build(AccountantOptions, acc_raw, "accountant")
    if acc.mu_formula not in ("clt", "paper"):
        raise ConfigError("accountant.mu_formula: expected 'clt' or 'paper'")

    sweep = None
    if raw.get("sweep") is not None:
        s = raw["sweep"]
        _check_keys(s, ("grid", "repeats"), "sweep")
        grid = s.get("grid")
        if not isinstance(grid, Mapping) or not grid or any(not isinstance(v, list) or not v for v in grid.values()):
            raise ConfigError("sweep.grid: must be a non-empty mapping of key -> non-empty list")
        allowed = set(_names(SimConfig)) - {"dp", "seed"} | {"sigma", "clip_norm", "sensitivity"}
        bad = sorted(set(grid) - allowed)
        if bad:
            raise ConfigError(f"sweep.grid: cannot sweep over {bad}")
        repeats = s.get("repeats", 1)
        if not isinstance(repeats, int) or repeats < 1:
            raise ConfigError("sweep.repeats: must be an integer >= 1")
        sweep = SweepOptions(dict(grid), repeats)

    verify = None
    if raw.get("verify") is not None:
        v = dict(raw["verify"])
        if "checkpoints" in v:
            v["checkpoints"] = tuple(int(c) for c in v["checkpoints"])
        verify = _build(VerifyOptions, v, "verify")

    output_root = None
    if raw.get("output") is not None:
        _check_keys(raw["output"], ("root",), "output")
        output_root = raw["output"].get("root")

    return RunConfig(
        experiment=experiment,
        simulation=sim,
        synthetic=synthetic,
        csv=csv,
        seed=seed,
        problem_seed=problem_seed,
        layout=layout,
        constants=_build(ConstantsOptions, raw.get("constants"), "constants"),
        accountant=acc,
        sweep=sweep,
        verify=verify,
        output_root=output_root,
    )


PRESET_PREFIX = "preset:"


def preset_names() -> list[str]:
    root = resources.files("fedmtl") / "presets"
    return sorted(p.name[: -len(".yaml")] for p in root.iterdir() if p.name.endswith(".yaml"))


def read_config_text(source: str | Path) -> str:
    source = str(source)
    if source.startswith(PRESET_PREFIX):
        name = source[len(PRESET_PREFIX) :]
        res = resources.files("fedmtl") / "presets" / f"{name}.yaml"
        if not res.is_file():
            raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
        return res.read_text()
    try:
        return Path(source).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {source}: {exc}") from None


def load_config(source: str | Path) -> RunConfig:
    try:
        raw = yaml.load(read_config_text(source), Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML/JSON: {exc}") from None
    if raw is None:
        raise ConfigError("config is empty")
    return parse_config(raw)
