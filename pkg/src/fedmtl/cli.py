"""Command-line entry point: run, sweep, accountant, verify, report."""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import accountant, plots
from .artifacts import ArtifactError, LoadedRun, load_run, run_dir_name, write_csv, write_run
from .config import ConfigError, RunConfig, canonical_json, load_config
from .mechanism import sigma_from_epsilon
from .objectives import (
    DataError,
    InfeasibleProblem,
    ProbeRegion,
    estimate_constants,
    generate_synthetic,
    layout_of,
    load_csv,
)
from .params import GlobalParam, LayoutError
from .simulator import run, sweep
from .theory import run_verification

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_VERIFY = 0, 2, 3, 4


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def build_problem(cfg: RunConfig):
    """Tasks plus whatever constants are known or needed for the default step size."""
    if cfg.synthetic is not None:
        tasks, consts = generate_synthetic(cfg.synthetic, cfg.effective_problem_seed)
    else:
        tasks = load_csv(cfg.csv.paths, cfg.csv.schema)
        consts = None
    layout = layout_of(tasks)
    if cfg.layout is not None and cfg.layout != layout:
        raise ConfigError(f"layout: config says {cfg.layout.to_dict()} but the tasks give {layout.to_dict()}")
    if cfg.simulation.step_size is None:
        center = consts.initial if consts is not None else GlobalParam.zeros(layout)
        est = estimate_constants(
            tasks, ProbeRegion(center, cfg.constants.probe_radius), cfg.constants.probe_samples, cfg.seed
        )
        if est.L <= 0 or not math.isfinite(est.lam):
            raise ConfigError("simulation.step_size: cannot derive 1/(lambda L) for these tasks; set it explicitly")
        if consts is None:
            consts = est
        else:
            consts = consts.replace(lam=est.lam, B=est.B, lam_sample_max=est.lam_sample_max)
    return tasks, consts


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    tasks, consts = build_problem(cfg)
    metrics = run(cfg.simulation, tasks, consts, workers=args.workers, config_hash=cfg.hash())
    art = write_run(cfg, metrics, args.output_root)
    print(f"run directory: {art.directory}")
    print(f"records: {len(metrics.records)}  final loss: {metrics.final_loss:.10g}")
    if metrics.diverged:
        _err(f"divergence: {metrics.divergence_message}")
        return EXIT_DIVERGED
    return EXIT_OK


def _markdown_table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    out = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    out += ["| " + " | ".join(str(c) for c in r) + " |" for r in rows]
    return "\n".join(out) + "\n"


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if cfg.sweep is None:
        raise ConfigError("sweep: config has no 'sweep' block")
    tasks, consts = build_problem(cfg)
    runs, summary = sweep(cfg.sweep.grid, cfg.simulation, tasks, cfg.sweep.repeats, consts, workers=args.workers)
    root = Path(args.output_root) if args.output_root else cfg.output_dir()
    run_rows = []
    for r in runs:
        sub = replace(cfg, simulation=r.config, seed=r.config.seed, problem_seed=cfg.effective_problem_seed, sweep=None)
        directory = ""
        if r.metrics is not None:
            directory = str(write_run(sub, r.metrics, root).directory)
        run_rows.append({"index": r.index, "repeat": r.repeat, "seed": r.config.seed, "directory": directory, "error": r.error})
    keys = list(cfg.sweep.grid)
    sweep_dir = root / run_dir_name(f"{cfg.experiment}_sweep", cfg.hash(), cfg.seed)
    sweep_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for s in summary:
        row = {"index": s.index, **{k: s.point[k] for k in keys}}
        row.update(repeats=cfg.sweep.repeats, n_ok=s.n_ok, mean_final_loss=f"{s.mean_final_loss:.17g}", std_final_loss=f"{s.std_final_loss:.17g}")
        rows.append(row)
    write_csv(sweep_dir / "summary.csv", ["index", *keys, "repeats", "n_ok", "mean_final_loss", "std_final_loss"], rows)
    write_csv(sweep_dir / "runs.csv", ["index", "repeat", "seed", "directory", "error"], run_rows)
    (sweep_dir / "config.json").write_text(cfg.canonical())
    table = _markdown_table(
        [*keys, "mean final loss", "std"],
        [[*(s.point[k] for k in keys), f"{s.mean_final_loss:.6g}", f"{s.std_final_loss:.3g}"] for s in summary],
    )
    (sweep_dir / "summary.md").write_text(table)
    print(table, end="")
    print(f"sweep directory: {sweep_dir}")
    failures = [r for r in run_rows if r["error"]]
    if failures:
        _err(f"{len(failures)} run(s) failed or diverged; see runs.csv")
    return EXIT_OK


def cmd_accountant(args) -> int:
    if args.sigma is not None and args.eps is not None:
        raise ConfigError("conflicting flags: give either --sigma or --eps/--delta, not both")
    if args.p is not None and (args.k is not None or args.m is not None):
        raise ConfigError("conflicting flags: give either --p or --k/--m, not both")
    if args.eps is not None:
        sigma = sigma_from_epsilon(args.eps, args.delta)
        print(f"sigma = {sigma:.6g}  (eps={args.eps:g}, delta={args.delta:g})")
    elif args.sigma is not None:
        sigma = args.sigma
    else:
        raise ConfigError("need --sigma or --eps/--delta")
    if sigma == 0:
        raise ConfigError("no finite budget: sigma = 0 releases gradients without noise")
    if sigma < 0:
        raise ConfigError("sigma must be >= 0")
    if args.p is not None:
        p = args.p
    elif args.k is not None and args.m is not None:
        if not 1 <= args.k <= args.m:
            raise ConfigError("need 1 <= K <= M")
        p = args.k / args.m
    elif args.k is not None or args.m is not None:
        raise ConfigError("--k and --m must be given together")
    else:
        p = None
    if p is None or args.t is None:
        if args.eps is None:
            raise ConfigError("need a sampling rate (--p or --k/--m) and --t to compose a budget")
        return EXIT_OK
    budget = accountant.compose_clt(p, args.t, sigma, args.mu_formula)
    print(f"p = {p:.6g}")
    print(f"mu = {budget.mu:.6g}  (formula: {args.mu_formula}, T={args.t}, sigma={sigma:.6g})")
    print("eps,delta")
    for e, d in accountant.delta_table(budget, args.epsilons):
        print(f"{e:g},{d:.6g}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if budget.finite:
            curve = budget.curve()
            accountant.emit_curve(curve, out / "tradeoff.csv")
            accountant.emit_curve(curve, out / "tradeoff.svg", label=f"G_mu, mu={budget.mu:.4g}")
        step = accountant.subsample(accountant.gaussian_tradeoff(1.0 / sigma), p)
        accountant.emit_curve(step, out / "step_tradeoff.csv")
        accountant.emit_curve(step, out / "step_tradeoff.svg", label=f"one step, p={p:.4g}")
        print(f"curves written to {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    plan = cfg.verify_plan()
    report = run_verification(plan, workers=args.workers)
    root = Path(args.output_root) if args.output_root else cfg.output_dir()
    d = root / run_dir_name(f"{cfg.experiment}_verify", cfg.hash(), cfg.seed)
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.json").write_text(cfg.canonical())
    (d / "report.json").write_text(canonical_json(report.to_dict()))
    rows = [(n, f"{b:.6g}", f"{o:.6g}", f"{m:.6g}", st) for n, b, o, m, st in report.summary_rows()]
    table = _markdown_table(["check", "bound", "observed", "margin", "result"], rows)
    notes = "".join(f"- {n}\n" for n in report.notes)
    (d / "summary.md").write_text(table + "\n" + notes)
    print(table, end="")
    print(notes, end="")
    print(f"report: {d / 'report.json'}")
    print("verification " + ("passed" if report.passed else "FAILED"))
    return EXIT_OK if report.passed else EXIT_VERIFY


def _pivot_table(loaded: Sequence[LoadedRun]) -> str:
    methods, sigmas, cells = [], [], {}
    for r in loaded:
        sim = r.config["simulation"]
        m, s = sim["method"], sim["dp"]["sigma"]
        if m not in methods:
            methods.append(m)
        if s not in sigmas:
            sigmas.append(s)
        cells.setdefault((m, s), []).append(float(r.summary["final_loss"]) if r.summary["final_loss"] != "null" else math.nan)
    rows = []
    for m in methods:
        row = [m]
        for s in sigmas:
            vals = cells.get((m, s))
            row.append(f"{sum(vals) / len(vals):.6g}" if vals else "")
        rows.append(row)
    return _markdown_table(["method", *(f"sigma={s:g}" for s in sigmas)], rows)


def cmd_report(args) -> int:
    loaded, problems = [], []
    for d in args.artifacts:
        try:
            loaded.append(load_run(d))
        except ArtifactError as exc:
            problems.append(str(exc))
    if problems:
        for p in problems:
            _err(p)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    series = []
    for r in loaded:
        steps = [rec["step"] for rec in r.records if rec["loss"] is not None]
        loss = [rec["loss"] for rec in r.records if rec["loss"] is not None]
        series.append(plots.Series(r.label, steps, loss))
    svg = plots.line_plot(series, title="Loss at the virtual average", xlabel="step", ylabel="loss", logy=args.log)
    (out / "loss.svg").write_text(svg)
    per_run = _markdown_table(
        ["run", "method", "sigma", "steps", "final loss", "final grad norm sq", "mu"],
        [
            [
                r.directory.name,
                r.config["simulation"]["method"],
                f"{r.config['simulation']['dp']['sigma']:g}",
                r.summary["steps_completed"],
                r.summary["final_loss"],
                r.summary["final_grad_norm_sq"],
                r.summary["final_mu"],
            ]
            for r in loaded
        ],
    )
    md = "## Final loss by method and noise level\n\n" + _pivot_table(loaded) + "\n## Runs\n\n" + per_run
    (out / "results.md").write_text(md)
    print(md, end="")
    print(f"report written to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fedmtl", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("config", help="config file (YAML/JSON) or preset:NAME")
        p.add_argument("--output-root", default=None, help="overrides the config / environment output root")
        p.add_argument("--workers", type=int, default=1, help="threads for per-client work")

    with_config(sub.add_parser("run", help="run one simulation and write a run directory"))
    with_config(sub.add_parser("sweep", help="run the config's sweep grid"))
    with_config(sub.add_parser("verify", help="check the convergence bounds on a theory-mode config"))

    acc = sub.add_parser("accountant", help="privacy calibration and Gaussian-DP accounting")
    acc.add_argument("--eps", type=float)
    acc.add_argument("--delta", type=float, default=1e-5)
    acc.add_argument("--sigma", type=float)
    acc.add_argument("--k", type=int)
    acc.add_argument("--m", type=int)
    acc.add_argument("--p", type=float)
    acc.add_argument("--t", type=int, help="number of noisy steps")
    acc.add_argument("--mu-formula", choices=accountant.MU_FORMULAS, default="clt")
    acc.add_argument("--epsilons", type=float, nargs="+", default=[0.5, 1.0, 2.0, 4.0, 8.0])
    acc.add_argument("--out", help="directory for trade-off curve files")

    rep = sub.add_parser("report", help="compare run directories")
    rep.add_argument("artifacts", nargs="+")
    rep.add_argument("--out", default="report")
    rep.add_argument("--log", action="store_true", help="log-scale loss axis")
    return ap


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "accountant": cmd_accountant, "verify": cmd_verify, "report": cmd_report}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "workers", 1) < 1:
        _err("--workers must be >= 1")
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DataError, LayoutError, InfeasibleProblem) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    except OSError as exc:
        _err(f"I/O error: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
