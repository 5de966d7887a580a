import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from fedmtl.cli import main
from fedmtl.config import load_config

SMALL_VERIFY = {
    "experiment": "v",
    "seed": 1,
    "tasks": {"synthetic": {"kind": "quadratic", "num_clients": 3}},
    "simulation": {"method": "DPFedMTL", "num_clients": 3, "clients_per_round": 1, "steps": 200,
                   "sync_interval": 2, "sampling": "poisson", "aggregation": "all", "theory_mode": True,
                   "dp": {"sigma": 0.5}},
    "verify": {"replicas": 2, "checkpoints": [10, 200], "probe_samples": 30,
               "decay_checkpoints": 2, "decay_samples": 200},
}


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data))
    return str(path)


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def run_dir_from(out):
    line = next(line for line in out.splitlines() if line.startswith("run directory:"))
    return Path(line.split(":", 1)[1].strip())


class TestRun:
    def test_minimal_preset(self, tmp_path, capsys):
        code, out, _ = run_cli(capsys, "run", "preset:minimal_run", "--output-root", str(tmp_path))
        assert code == 0
        d = run_dir_from(out)
        lines = (d / "metrics.jsonl").read_text().splitlines()
        assert len(lines) == 10
        assert all(json.loads(line)["format_version"] == 1 for line in lines)
        assert json.loads((d / "config.json").read_text()) == json.loads(load_config("preset:minimal_run").canonical())
        with (d / "summary.csv").open() as fh:
            assert len(list(csv.DictReader(fh))) == 1
        assert (d / "timing.json").exists()

    def test_rerun_is_identical(self, tmp_path, capsys):
        _, out_a, _ = run_cli(capsys, "run", "preset:minimal_run", "--output-root", str(tmp_path / "a"))
        _, out_b, _ = run_cli(capsys, "run", "preset:minimal_run", "--output-root", str(tmp_path / "b"), "--workers", "3")
        a, b = run_dir_from(out_a), run_dir_from(out_b)
        assert a.name == b.name
        for f in ("metrics.jsonl", "summary.csv", "config.json"):
            assert (a / f).read_bytes() == (b / f).read_bytes()

    def test_k_above_m_exits_2(self, tmp_path, capsys):
        raw = yaml.safe_load(open(Path(__file__).parents[1] / "src/fedmtl/presets/minimal_run.yaml"))
        raw["simulation"]["clients_per_round"] = 9
        code, _, err = run_cli(capsys, "run", write_yaml(tmp_path / "c.yaml", raw))
        assert code == 2
        assert "clients_per_round" in err

    def test_missing_file_exits_2(self, tmp_path, capsys):
        code, _, err = run_cli(capsys, "run", str(tmp_path / "none.yaml"))
        assert code == 2 and "cannot read" in err

    def test_bad_workers(self, capsys):
        assert run_cli(capsys, "run", "preset:minimal_run", "--workers", "0")[0] == 2

    def test_module_entry_point(self, tmp_path):
        res = subprocess.run(
            [sys.executable, "-m", "fedmtl", "run", "preset:minimal_run", "--output-root", str(tmp_path)],
            capture_output=True, text=True,
        )
        assert res.returncode == 0, res.stderr


class TestAccountant:
    def test_composes_and_writes_curves(self, tmp_path, capsys):
        code, out, _ = run_cli(capsys, "accountant", "--sigma", "9.69", "--k", "3", "--m", "174", "--t", "1000",
                               "--out", str(tmp_path))
        assert code == 0
        assert "mu = 0.0564" in out
        assert "eps,delta" in out
        for f in ("tradeoff.csv", "tradeoff.svg", "step_tradeoff.csv", "step_tradeoff.svg"):
            assert (tmp_path / f).stat().st_size > 0

    def test_sigma_from_epsilon(self, capsys):
        code, out, _ = run_cli(capsys, "accountant", "--eps", "8", "--delta", "1e-5")
        assert code == 0 and "sigma = 0.6" in out

    def test_zero_sigma(self, capsys):
        code, _, err = run_cli(capsys, "accountant", "--sigma", "0", "--p", "0.1", "--t", "10")
        assert code == 2 and "no finite budget" in err

    @pytest.mark.parametrize(
        "argv",
        [["--sigma", "1", "--eps", "1"], ["--sigma", "1", "--p", "0.1", "--k", "1", "--t", "5"], ["--sigma", "1", "--k", "2"]],
    )
    def test_conflicting_flags(self, capsys, argv):
        code, _, err = run_cli(capsys, "accountant", *argv)
        assert code == 2 and err.startswith("error:")


class TestSweep:
    def test_grid(self, tmp_path, capsys):
        raw = yaml.safe_load(load_config("preset:minimal_run").canonical())
        raw["sweep"] = {"grid": {"method": ["FedMTL", "DPFedMTL", "DPFedAvg"], "sigma": [0.0, 0.65, 2.0, 5.0]}}
        code, out, _ = run_cli(capsys, "sweep", write_yaml(tmp_path / "s.yaml", raw), "--output-root", str(tmp_path))
        assert code == 0
        sweep_dir = Path(out.strip().splitlines()[-1].split(":", 1)[1].strip())
        with (sweep_dir / "summary.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 12
        assert {r["method"] for r in rows} == {"FedMTL", "DPFedMTL", "DPFedAvg"}
        assert (sweep_dir / "summary.md").read_text().startswith("|")


class TestVerify:
    def test_non_theory_config_rejected(self, capsys):
        code, _, err = run_cli(capsys, "verify", "preset:minimal_run")
        assert code == 2 and "theory_mode" in err

    def test_small_pass_and_falsified(self, tmp_path, capsys):
        code, out, _ = run_cli(capsys, "verify", write_yaml(tmp_path / "v.yaml", SMALL_VERIFY), "--output-root", str(tmp_path))
        assert code == 0 and "verification passed" in out
        bad = json.loads(json.dumps(SMALL_VERIFY))
        bad["verify"]["fstar_shift"] = -1e12
        code, out, _ = run_cli(capsys, "verify", write_yaml(tmp_path / "b.yaml", bad), "--output-root", str(tmp_path))
        assert code == 4 and "FAILED" in out


@pytest.fixture(scope="module")
def three_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    base = yaml.safe_load(load_config("preset:minimal_run").canonical())
    for method, sigma in (("DPFedMTL", 0.65), ("FedMTL", 0.0), ("DPFedAvg", 2.0)):
        raw = json.loads(json.dumps(base))
        raw["simulation"]["method"] = method
        raw["simulation"]["dp"]["sigma"] = sigma
        p = root / f"{method}.yaml"
        p.write_text(yaml.safe_dump(raw))
        assert main(["run", str(p), "--output-root", str(root / "out")]) == 0
    dirs = sorted((root / "out").iterdir())
    return dirs


class TestReport:
    def test_byte_identical(self, three_runs, tmp_path, capsys):
        args = [str(d) for d in three_runs]
        assert run_cli(capsys, "report", *args, "--out", str(tmp_path / "a"))[0] == 0
        assert run_cli(capsys, "report", *args, "--out", str(tmp_path / "b"))[0] == 0
        for f in ("loss.svg", "results.md"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_legend_follows_argument_order(self, three_runs, tmp_path, capsys):
        labels = []
        for order in (three_runs, three_runs[::-1]):
            out = tmp_path / str(len(labels))
            run_cli(capsys, "report", *map(str, order), "--out", str(out))
            svg = (out / "loss.svg").read_text()
            wanted = (">DPFedMTL sigma=0.65<", ">FedMTL<", ">DPFedAvg sigma=2<")
            labels.append(sorted(wanted, key=svg.index))
        assert labels[0] == labels[1][::-1]

    def test_missing_and_corrupt_listed(self, three_runs, tmp_path, capsys):
        corrupt = tmp_path / "corrupt"
        corrupt.mkdir()
        (corrupt / "config.json").write_text("{not json")
        code, _, err = run_cli(capsys, "report", str(three_runs[0]), str(tmp_path / "missing"), str(corrupt),
                               "--out", str(tmp_path / "r"))
        assert code == 2
        assert "missing" in err and "corrupt" in err
