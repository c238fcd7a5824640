import csv
import json
import subprocess
import sys

from compattack.cli import main
from conftest import FIXTURES


def test_attack_on_hospital_releases(tmp_path, capsys):
    population = tmp_path / "people.csv"
    population.write_text("id,zip,age,nationality\n1,13012,28,American\n2,13050,36,Indian\n")
    code = main(["attack", "--release", str(FIXTURES / "hospital_a.csv"), "--release", str(FIXTURES / "hospital_b.csv"),
                 "--schema", str(FIXTURES / "hospital.schema"), "--population", str(population), "--out", str(tmp_path)])
    assert code == 0
    doc = json.loads((tmp_path / "attack.json").read_text())
    alice = doc["outcomes"][0]
    assert alice["id"] == 1 and alice["intersection"] == ["AIDS"] and alice["posterior_ea"] == 1
    with open(tmp_path / "attack_summary.csv", newline="") as fh:
        rows = {(r["metric"], r["parameter"]): r["value"] for r in csv.DictReader(fh)}
    # the second patient falls in the all-Cancer group of the first release
    assert rows[("pvp", "C=1")] == "100.0"
    assert json.loads(capsys.readouterr().out)["located"] == 2


def test_anonymize_then_attack_json(tmp_path):
    out = tmp_path / "r"
    assert main(["anonymize", "--input", str(FIXTURES / "hospital_a_raw.csv"), "--schema",
                 str(FIXTURES / "hospital.schema"), "-k", "4", "--out", str(out)]) == 0
    release = json.loads((out / "release.json").read_text())
    assert [c["count"] for c in release["classes"]] == [4, 4, 4]
    assert (out / "release.csv").read_text().splitlines()[0] == "class,zip,age,nationality,condition"
    code = main(["attack", "--release", str(out / "release.json"), "--release", str(out / "release.json"),
                 "--population", str(FIXTURES / "hospital_a_raw.csv"), "--out", str(tmp_path / "a")])
    assert code == 0


def test_study_subcommand_and_config(tmp_path):
    config = tmp_path / "c.toml"
    config.write_text("synthetic_records = 120\noverlap = 40\nsubset_size = 60\nk = [3]\n")
    assert main(["breach", "--config", str(config), "--seed", "5", "--out", str(tmp_path / "o")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "o" / "breach.csv", newline="")))
    assert {r["seed"] for r in rows} == {"5"}


def test_exit_codes(tmp_path, capsys):
    config = tmp_path / "c.toml"
    config.write_text("synthetic_records = 120\noverlap = 40\nsubset_size = 60\nk = [3, 100]\n")
    assert main(["drop", "--config", str(config), "--out", str(tmp_path / "o")]) == 2
    config.write_text("k = []\n")
    assert main(["drop", "--config", str(config), "--out", str(tmp_path / "o")]) == 1
    assert main(["anonymize", "--out", str(tmp_path)]) == 1
    assert main(["anonymize", "--input", str(tmp_path / "missing.csv"), "--schema",
                 str(FIXTURES / "hospital.schema"), "--out", str(tmp_path)]) == 1
    assert "error:" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "compattack", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("breach", "drop", "entropy", "multi", "dp", "anonymize", "attack"):
        assert sub in proc.stdout
