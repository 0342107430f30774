import json
import os

import numpy as np
import pytest

from syncsde.cli import OUTPUT_ENV, main, run_experiment, write_csv
from syncsde.config import ConfigErrors, ExperimentConfig, config_from_dict, load_config, parse_config

from conftest import CONFIGS

SMALL_CONJUGACY = """
experiment = "conjugacy-check"
seeds = [0, 1, 2]
window = [0.0, 1.0]

[grid]
t_min = -1.0
t_max = 1.0
h = 1e-3
"""


def write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestParse:
    def test_minimal_defaults(self):
        cfg = parse_config('experiment = "pairwise-sync"')
        assert cfg.seeds == [0]
        assert cfg.system.N == 4 and cfg.system.coeffs == [[0.5]]
        t = cfg.tolerances
        assert (t.envelope_slack, t.envelope_fraction, t.max_decay_rate) == (0.05, 0.9, -0.9)
        assert (t.conjugacy_rel, t.flagged_budget) == (1e-2, 0.2)

    def test_nus_not_ascending(self):
        with pytest.raises(ConfigErrors) as e:
            parse_config('experiment = "nu-sweep"\nnus = [10.0, 1.0]')
        assert ("nus", "nus not ascending") in e.value.problems

    def test_two_components_rejected(self):
        with pytest.raises(ConfigErrors) as e:
            parse_config('experiment = "nu-sweep"\n[system]\nN = 2')
        assert any(p == "system.N" for p, _ in e.value.problems)

    def test_all_problems_reported(self):
        text = 'experiment = "nu-sweep"\nseeds = []\nbogus = 1\n[tolerances]\nenvelope_slak = 0.1\n[system]\nN = "4"'
        with pytest.raises(ConfigErrors) as e:
            parse_config(text)
        paths = dict(e.value.problems)
        assert paths["bogus"] == "unknown key"
        assert paths["tolerances.envelope_slak"] == "unknown key"
        assert "seeds" in paths and "system.N" in paths

    def test_unknown_experiment_and_bad_toml(self):
        with pytest.raises(ConfigErrors):
            parse_config('experiment = "other"')
        with pytest.raises(ConfigErrors) as e:
            parse_config("experiment = ")
        assert e.value.problems[0][0] == "<toml>"

    def test_non_utf8(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_bytes(b'experiment = "nu-sweep"\n# \xff\xfe\n')
        with pytest.raises(ConfigErrors):
            load_config(p)

    def test_shapes_and_initial_states(self):
        cfg = parse_config('experiment = "nu-sweep"\nx0 = "ramp"\n[system]\nN = 3\nlams = [1.0, 2.0]\n'
                           'forcing = [1.0, 0.5]')
        assert cfg.system.lam_values() == [1.0, 2.0, 1.0]
        assert cfg.system.forcing_values() == [1.0, 0.5, 1.0]
        np.testing.assert_array_equal(cfg.initial_state()[:, 0], [1.0, 2.0, 3.0])
        r = cfg.model_copy(update={"x0": "random"})
        np.testing.assert_array_equal(r.initial_state(4), r.initial_state(4))
        with pytest.raises(ConfigErrors):
            parse_config('experiment = "nu-sweep"\nx0 = [1.0, 2.0]')

    def test_hash_ignores_output_dir(self):
        a = parse_config('experiment = "nu-sweep"')
        b = parse_config('experiment = "nu-sweep"\noutput_dir = "elsewhere"')
        c = parse_config('experiment = "nu-sweep"\nseeds = [1]')
        assert a.config_hash() == b.config_hash() != c.config_hash()

    @pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.toml")))
    def test_shipped_configs_parse(self, path):
        assert isinstance(load_config(path), ExperimentConfig)


class TestRun:
    def test_byte_identical_reruns(self, tmp_path):
        cfg = parse_config(SMALL_CONJUGACY)
        run_experiment(cfg, tmp_path / "a")
        run_experiment(cfg, tmp_path / "b")
        for name in ("conjugacy.csv", "summary.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_workers_do_not_change_outputs(self, tmp_path):
        cfg = parse_config(SMALL_CONJUGACY)
        run_experiment(cfg, tmp_path / "a", workers=1)
        run_experiment(cfg, tmp_path / "b", workers=2)
        assert (tmp_path / "a" / "conjugacy.csv").read_bytes() == (tmp_path / "b" / "conjugacy.csv").read_bytes()

    def test_csv_header_and_summary(self, tmp_path):
        cfg = parse_config(SMALL_CONJUGACY)
        s = run_experiment(cfg, tmp_path)
        lines = (tmp_path / "conjugacy.csv").read_text().splitlines()
        assert lines[0] == f"# config_hash={cfg.config_hash()} experiment=conjugacy-check columns=seed,rel_sup_gap"
        assert lines[1] == "seed,rel_sup_gap" and len(lines) == 5
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["config_hash"] == cfg.config_hash() and summary["status"] == "pass"
        a = summary["assertions"][0]
        assert a["seeds"] == [0, 1, 2] and a["threshold"] == 0.95 and a["source"] == "conjugacy.csv"
        assert s.exit_code == 0

    def test_values_columns_expand(self, tmp_path):
        write_csv(tmp_path / "x.csv", "abc", "e", ("seed", "values..."), [(0, 1.5, 2.0), (1, 0.25, 3.0)])
        lines = (tmp_path / "x.csv").read_text().splitlines()
        assert lines[1] == "seed,v0,v1" and lines[2] == "0,1.5,2"


class TestMain:
    def test_pass(self, tmp_path, capsys):
        assert main(["run", str(write(tmp_path, SMALL_CONJUGACY)), "--out", str(tmp_path / "o")]) == 0
        assert "[PASS]" in capsys.readouterr().out

    def test_assertion_failure(self, tmp_path):
        text = SMALL_CONJUGACY + "\n[tolerances]\nconjugacy_rel = 1e-12\n"
        assert main(["run", str(write(tmp_path, text)), "--out", str(tmp_path / "o")]) == 1

    def test_inconclusive(self, tmp_path):
        # no negative times: the OU time T_omega cannot be estimated, every seed is flagged
        text = 'experiment = "pairwise-sync"\nseeds = [0, 1]\n[grid]\nt_min = 0.0\nt_max = 2.0\nh = 0.01\n'
        assert main(["run", str(write(tmp_path, text)), "--out", str(tmp_path / "o")]) == 2
        summary = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert summary["status"] == "inconclusive" and set(summary["flagged"]) == {"0", "1"}

    def test_config_errors(self, tmp_path, capsys):
        assert main(["run", str(write(tmp_path, 'experiment = "nu-sweep"\nnus = [2.0, 1.0]'))]) == 3
        assert "nus not ascending" in capsys.readouterr().err
        assert main(["run", str(tmp_path / "missing.toml")]) == 3
        assert main(["run", str(write(tmp_path, SMALL_CONJUGACY)), "--workers", "0"]) == 3
        assert main(["frobnicate"]) == 3

    def test_seeds_override_and_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
        assert main(["run", str(write(tmp_path, SMALL_CONJUGACY)), "--seeds-override", "5", "6"]) == 0
        summary = json.loads((tmp_path / "env" / "summary.json").read_text())
        assert summary["seeds"] == [5, 6]

    def test_spectral_check(self, tmp_path):
        assert main(["spectral-check", "--p-max", "10", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "spectral.csv").exists()

    def test_schema(self, capsys):
        assert main(["print-config-schema"]) == 0
        schema = json.loads(capsys.readouterr().out)
        assert "experiment" in schema["properties"]
