import json

import pytest

from mtem.cli import main
from mtem.config import ConfigError, bundled_configs, load_config, parse_config
from mtem.experiments import LADDER_COLUMNS

SMALL = """
[problem]
name = example2
h = sqrt-closed-form

[run]
schemes = MTEM, EM
levels = 3..5
reference = fine-grid:7
replicates = {replicates}
seed = 17

[checks]
samples = 2000
"""


def write(tmp_path, text, name="small.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def read_outputs(out):
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())}


def test_run_is_byte_identical_across_jobs(tmp_path):
    cfg = write(tmp_path, SMALL.format(replicates=600))
    assert main(["run", cfg, "--out-dir", str(tmp_path / "a"), "--jobs", "1"]) == 0
    assert main(["run", cfg, "--out-dir", str(tmp_path / "b"), "--jobs", "8"]) == 0
    a, b = read_outputs(tmp_path / "a"), read_outputs(tmp_path / "b")
    assert a == b
    assert set(a) == {"error_ladder.csv", "error_ladder_step_sup.csv", "divergence.csv",
                      "rate_fit_MTEM.json", "rate_fit_EM.json", "conditions.json"}
    header = a["error_ladder.csv"].decode().splitlines()[0]
    assert header == ",".join(LADDER_COLUMNS)
    assert len(a["error_ladder.csv"].decode().splitlines()) == 1 + 2 * 3
    fit = json.loads(a["rate_fit_MTEM.json"])
    assert fit["schema_version"] == 1 and fit["rows_used"] == 3
    assert set(fit["variants"]) == {"sup", "sup_step"}


def test_seed_override_changes_output(tmp_path):
    cfg = write(tmp_path, SMALL.format(replicates=100))
    main(["run", cfg, "--out-dir", str(tmp_path / "a")])
    main(["run", cfg, "--out-dir", str(tmp_path / "b"), "--seed", "18"])
    assert (tmp_path / "a" / "error_ladder.csv").read_bytes() != \
        (tmp_path / "b" / "error_ladder.csv").read_bytes()


def test_too_few_replicates_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, SMALL.format(replicates=50))
    assert main(["run", cfg, "--out-dir", str(tmp_path / "o")]) == 3
    assert "insufficient sample" in capsys.readouterr().err


@pytest.mark.parametrize("text", [
    SMALL.format(replicates=100).replace("example2", "example9"),
    SMALL.format(replicates=100).replace("3..5", "3..30"),
    SMALL.format(replicates=100).replace("3..5", "3..4"),
    SMALL.format(replicates=100).replace("MTEM, EM", "RK4"),
    SMALL.format(replicates=100) + "bogus = 1\n",
    SMALL.format(replicates=100).replace("fine-grid:7", "fine-grid:4"),
    SMALL.format(replicates=100).replace("name = example2", "name = example1"),
])
def test_config_errors_exit_code(tmp_path, text):
    assert main(["run", write(tmp_path, text), "--out-dir", str(tmp_path / "o")]) == 2


def test_missing_config_exit_code(tmp_path):
    assert main(["run", str(tmp_path / "nope.cfg")]) == 2


def test_parse_errors_are_config_errors():
    with pytest.raises(ConfigError):
        parse_config("[run]\nlevels = 1..4\n")
    with pytest.raises(ConfigError):
        parse_config("[problem]\nname = linear\n[run]\nlevels = 4\nreplicates = 100\n")


def test_bundled_configs_load():
    assert bundled_configs() == ["example1-stability.cfg", "example2-rate.cfg",
                                 "linear-oracle.cfg"]
    for name in bundled_configs():
        cfg = load_config(name)
        cfg.build()
    ex2 = load_config("example2-rate.cfg")
    assert (ex2.levels, ex2.replicates, ex2.reference_spec_level(), ex2.q) == ((6, 12), 10000, 15, 4)


def test_derive_constants(tmp_path, capsys):
    assert main(["derive-constants", "example2"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["K"]["K"] == pytest.approx(1.75713, abs=1e-5)
    assert main(["derive-constants", "example1", "--a", "2", "--out-dir", str(tmp_path)]) == 0
    saved = json.loads((tmp_path / "example1-constants.json").read_text())
    assert saved["a"] == 2 and saved["K_recipe"] == "a + C + 4"


def test_constants_file_round_trip(tmp_path):
    main(["derive-constants", "example1", "--a", "1", "--out-dir", str(tmp_path)])
    text = SMALL.format(replicates=100).replace("name = example2\nh = sqrt-closed-form",
                                                "name = example1\nconstants = example1-constants.json")
    cfg = load_config(write(tmp_path, text))
    assert cfg.build().cond.K == pytest.approx(1 + 1.1276 + 4, abs=1e-3)


def test_check_conditions(tmp_path, capsys):
    cfg = write(tmp_path, SMALL.format(replicates=100))
    assert main(["check-conditions", cfg]) == 0
    report = json.loads(capsys.readouterr().out)
    names = {m["name"] for m in report["margins"]}
    assert {"monotonicity", "khasminskii", "diffusion_growth"} <= names
    assert [lvl["level"] for lvl in report["levels"]] == [3, 4, 5]
    assert main(["check-conditions", cfg, "--out-dir", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "conditions.json").exists()
