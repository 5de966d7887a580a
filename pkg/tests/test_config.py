import hashlib
import json

import pytest
import yaml

from fedmtl.config import (
    OUTPUT_ENV,
    canonical_json,
    load_config,
    parse_config,
    preset_names,
)
from fedmtl.simulator import ConfigError

MINIMAL = {
    "experiment": "t",
    "seed": 3,
    "tasks": {"synthetic": {"kind": "quadratic", "num_clients": 4}},
    "simulation": {"num_clients": 4, "clients_per_round": 2, "steps": 5, "step_size": 0.01},
}


def with_(base, path, value):
    out = json.loads(json.dumps(base))
    node = out
    keys = path.split(".")
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value
    return out


class TestRoundTrip:
    def test_fixed_point(self):
        cfg = parse_config(MINIMAL)
        again = parse_config(json.loads(cfg.canonical()))
        assert again == cfg
        assert again.canonical() == cfg.canonical()

    @pytest.mark.parametrize("name", preset_names())
    def test_presets_round_trip(self, name):
        cfg = load_config(f"preset:{name}")
        assert parse_config(json.loads(cfg.canonical())).canonical() == cfg.canonical()

    def test_hash_is_digest_of_canonical_json(self):
        cfg = parse_config(MINIMAL)
        assert cfg.hash() == hashlib.sha256(cfg.canonical().encode()).hexdigest()
        assert parse_config(with_(MINIMAL, "seed", 4)).hash() != cfg.hash()

    def test_key_order_does_not_matter(self):
        reordered = dict(reversed(list(MINIMAL.items())))
        assert parse_config(reordered).hash() == parse_config(MINIMAL).hash()

    def test_canonical_json_rejects_nan(self):
        with pytest.raises(ValueError):
            canonical_json({"x": float("nan")})

    def test_yaml_exponent_without_dot(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump(MINIMAL) + "accountant:\n  delta: 1e-5\n")
        assert load_config(p).accountant.delta == 1e-5

    def test_problem_seed_separate_from_master_seed(self):
        cfg = parse_config(with_(MINIMAL, "tasks.synthetic.seed", 99))
        assert cfg.effective_problem_seed == 99 and cfg.seed == 3
        assert parse_config(MINIMAL).effective_problem_seed == 3


class TestValidation:
    @pytest.mark.parametrize(
        "path,where",
        [("bogus", "config"), ("simulation.bogus", "simulation"), ("tasks.synthetic.bogus", "tasks.synthetic"),
         ("simulation.dp.bogus", "simulation.dp"), ("verify.bogus", "verify"), ("accountant.bogus", "accountant")],
    )
    def test_unknown_keys(self, path, where):
        with pytest.raises(ConfigError, match=rf"^{where}: unknown key\(s\) 'bogus'"):
            parse_config(with_(MINIMAL, path, 1))

    def test_simulation_seed_forbidden(self):
        with pytest.raises(ConfigError, match="master seed"):
            parse_config(with_(MINIMAL, "simulation.seed", 1))

    def test_client_count_mismatch(self):
        with pytest.raises(ConfigError, match="disagrees"):
            parse_config(with_(MINIMAL, "tasks.synthetic.num_clients", 5))

    def test_k_above_m(self):
        with pytest.raises(ConfigError, match="simulation"):
            parse_config(with_(MINIMAL, "simulation.clients_per_round", 9))

    def test_empty_sweep_grid(self):
        with pytest.raises(ConfigError, match="sweep.grid"):
            parse_config(with_(MINIMAL, "sweep", {"grid": {}}))
        with pytest.raises(ConfigError, match="sweep.grid"):
            parse_config(with_(MINIMAL, "sweep", {"grid": {"sigma": []}}))

    def test_sweep_over_unknown_field(self):
        with pytest.raises(ConfigError, match="cannot sweep"):
            parse_config(with_(MINIMAL, "sweep", {"grid": {"colour": [1]}}))

    def test_bad_format_version(self):
        with pytest.raises(ConfigError, match="format_version"):
            parse_config(with_(MINIMAL, "format_version", 2))

    def test_bad_experiment_name(self):
        with pytest.raises(ConfigError, match="experiment"):
            parse_config(with_(MINIMAL, "experiment", "a/b"))

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="unknown preset"):
            load_config("preset:nope")

    def test_empty_file(self, tmp_path):
        p = tmp_path / "e.yaml"
        p.write_text("")
        with pytest.raises(ConfigError, match="empty"):
            load_config(p)

    def test_csv_needs_one_file_per_client(self):
        raw = with_(MINIMAL, "tasks", {"csv": {"paths": ["a.csv"]}})
        with pytest.raises(ConfigError, match="num_clients"):
            parse_config(raw)

    def test_verify_needs_theory_mode(self):
        with pytest.raises(ConfigError, match="theory_mode"):
            parse_config(MINIMAL).verify_plan()


class TestOutputRoot:
    def test_env_var(self, monkeypatch, tmp_path):
        monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
        assert parse_config(MINIMAL).output_dir() == tmp_path

    def test_config_overrides_env(self, monkeypatch, tmp_path):
        monkeypatch.setenv(OUTPUT_ENV, "/elsewhere")
        cfg = parse_config(with_(MINIMAL, "output", {"root": str(tmp_path)}))
        assert cfg.output_dir() == tmp_path

    def test_default(self, monkeypatch):
        monkeypatch.delenv(OUTPUT_ENV, raising=False)
        assert str(parse_config(MINIMAL).output_dir()) == "runs"
