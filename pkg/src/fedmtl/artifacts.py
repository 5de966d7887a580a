"""Run directories: embedded config, per-step metrics and summaries."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .config import FORMAT_VERSION, RunConfig, canonical_json
from .simulator import RunMetrics, StepRecord

SUMMARY_FIELDS = (
    "format_version",
    "experiment",
    "method",
    "seed",
    "sigma",
    "steps_completed",
    "final_loss",
    "final_grad_norm_sq",
    "final_drift",
    "final_mu",
    "diverged",
    "skipped_rounds",
    "config_hash",
)


class ArtifactError(ValueError):
    pass


def fmt_real(v) -> str:
    """JSON token for a metric value: 17 significant digits, null when absent or non-finite."""
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    v = float(v)
    if not math.isfinite(v):
        return "null"
    return f"{v:.17g}"


def metrics_jsonl(metrics: RunMetrics) -> str:
    lines = []
    for rec in metrics.records:
        parts = [f'"format_version": {FORMAT_VERSION}']
        parts += [f'"{name}": {fmt_real(getattr(rec, name))}' for name in StepRecord.FIELDS]
        lines.append("{" + ", ".join(parts) + "}")
    return "\n".join(lines) + ("\n" if lines else "")


def run_dir_name(experiment: str, config_hash: str, seed: int) -> str:
    return f"{experiment}_{config_hash[:12]}_s{seed}"


@dataclass(frozen=True)
class RunArtifact:
    directory: Path
    config_hash: str

    @property
    def config_path(self) -> Path:
        return self.directory / "config.json"

    @property
    def metrics_path(self) -> Path:
        return self.directory / "metrics.jsonl"

    @property
    def summary_path(self) -> Path:
        return self.directory / "summary.csv"

    @property
    def timing_path(self) -> Path:
        return self.directory / "timing.json"


def summary_row(cfg: RunConfig, metrics: RunMetrics) -> dict:
    last = metrics.records[-1] if metrics.records else None
    return {
        "format_version": FORMAT_VERSION,
        "experiment": cfg.experiment,
        "method": cfg.simulation.method,
        "seed": cfg.seed,
        "sigma": fmt_real(cfg.simulation.dp.sigma),
        "steps_completed": metrics.steps_completed,
        "final_loss": fmt_real(metrics.final_loss),
        "final_grad_norm_sq": fmt_real(last.grad_norm_sq if last else metrics.initial_grad_norm_sq),
        "final_drift": fmt_real(last.drift if last else 0.0),
        "final_mu": fmt_real(last.mu if last else None),
        "diverged": str(metrics.diverged).lower(),
        "skipped_rounds": len(metrics.skipped_rounds),
        "config_hash": cfg.hash(),
    }


def write_csv(path: Path, fieldnames, rows) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fieldnames), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    path.write_text(buf.getvalue())


def write_run(cfg: RunConfig, metrics: RunMetrics, root: Path | None = None) -> RunArtifact:
    root = Path(root) if root is not None else cfg.output_dir()
    h = cfg.hash()
    d = root / run_dir_name(cfg.experiment, h, cfg.seed)
    d.mkdir(parents=True, exist_ok=True)
    art = RunArtifact(d, h)
    art.config_path.write_text(cfg.canonical())
    art.metrics_path.write_text(metrics_jsonl(metrics))
    write_csv(art.summary_path, SUMMARY_FIELDS, [summary_row(cfg, metrics)])
    timing = {
        "format_version": FORMAT_VERSION,
        "wall_time_s": metrics.wall_time,
        "diverged": metrics.diverged,
        "divergence_message": metrics.divergence_message,
    }
    art.timing_path.write_text(json.dumps(timing, indent=2) + "\n")
    return art


@dataclass
class LoadedRun:
    directory: Path
    config: dict
    records: list[dict]
    summary: dict

    @property
    def label(self) -> str:
        sim = self.config["simulation"]
        sigma = sim["dp"]["sigma"]
        if sim["method"] in ("DPFedAvg", "DPFedMTL"):
            return f"{sim['method']} sigma={sigma:g}"
        return sim["method"]


def load_run(directory: str | Path) -> LoadedRun:
    d = Path(directory)
    try:
        config = json.loads((d / "config.json").read_text())
        records = [json.loads(line) for line in (d / "metrics.jsonl").read_text().splitlines() if line.strip()]
        with (d / "summary.csv").open(newline="") as fh:
            rows = list(csv.DictReader(fh))
    except (OSError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"{d}: missing or corrupt artifact ({exc})") from None
    if len(rows) != 1:
        raise ArtifactError(f"{d}: summary.csv must hold exactly one row")
    if config.get("format_version") != FORMAT_VERSION:
        raise ArtifactError(f"{d}: unsupported format_version {config.get('format_version')!r}")
    return LoadedRun(d, config, records, rows[0])
