import json

import jsonschema
import pytest

from qarm import cli
from qarm.dataset import load_transactions, save_transactions


@pytest.fixture
def ref_file(tmp_path, ref_db):
    path = tmp_path / "ref.txt"
    path.write_text(save_transactions(ref_db))
    return path


def run_json(argv, tmp_path, name="out.json"):
    out = tmp_path / name
    code = cli.main(list(argv) + ["--out", str(out)])
    return code, (json.loads(out.read_text()) if out.exists() else None)


def test_parse_mine_quantum():
    cfg = cli.parse_args(["mine-quantum", "--db", "d.txt", "--min-supp", "0.5", "--eps", "0.1", "--seed", "7"])
    assert cfg.command == "mine-quantum"
    assert cfg.db_path == "d.txt"
    assert cfg.mining.min_supp == 0.5 and cfg.mining.epsilon == 0.1
    assert cfg.seed == 7
    assert cfg.tomo.branch == "low-rank"


@pytest.mark.parametrize(
    "argv",
    [
        ["mine-quantum", "--db", "d.txt", "--min-supp", "1.5"],
        ["mine-classical", "--min-supp", "0.5"],
        ["mine-quantum", "--db", "d.txt"],
        ["mine-quantum", "--db", "d.txt", "--min-supp", "0.5", "--kappa", "4", "--eps-eff", "0.2"],
        ["scaling", "--sizes", "8"],
        ["scaling", "--sizes", "4", "4", "8"],
        ["mine-classical", "--db", "d.txt", "--min-supp", "0.5", "--bogus"],
        [],
    ],
)
def test_usage_errors_exit_2(argv, capsys):
    assert cli.main(argv) == 2
    assert "usage" in capsys.readouterr().err


def test_branch_resolves_conflict():
    cfg = cli.parse_args(
        ["mine-quantum", "--db", "d", "--min-supp", "0.5", "--kappa", "4", "--eps-eff", "0.2", "--branch", "full-rank"]
    )
    assert cfg.tomo.branch == "full-rank"


def test_seed_env_override(monkeypatch):
    argv = ["mine-classical", "--db", "d", "--min-supp", "0.5"]
    monkeypatch.delenv(cli.SEED_ENV, raising=False)
    assert cli.parse_args(argv).seed == cli.DEFAULT_SEED
    monkeypatch.setenv(cli.SEED_ENV, "99")
    assert cli.parse_args(argv).seed == 99
    assert cli.parse_args(argv + ["--seed", "3"]).seed == 3


def test_compare_reference_agrees(ref_file, tmp_path):
    code, rep = run_json(
        ["compare", "--db", str(ref_file), "--min-supp", "0.3", "--eps", "0.01", "--seed", "1"], tmp_path
    )
    assert code == 0
    for key in ("f1", "f2"):
        sets = {m: [x["items"] for x in rep[key][m]] for m in ("apriori", "sampling", "quantum")}
        assert sets["apriori"] == sets["sampling"] == sets["quantum"]
    assert [x["items"] for x in rep["f2"]["apriori"]] == [[0, 1], [0, 2]]
    assert set(rep["ledger"]) == {"apriori", "sampling", "quantum"}


def test_compare_mismatch_exits_1(ref_file, tmp_path):
    code, rep = run_json(
        ["compare", "--db", str(ref_file), "--min-supp", "0.5", "--sampling-shots", "1", "--f1-shots", "1", "--seed", "2"],
        tmp_path,
    )
    assert code == 1
    assert any(rep["baseline_diff"][m][k] for m in ("sampling", "quantum") for k in ("f1", "f2"))


def test_mine_classical_all_zero(tmp_path):
    path = tmp_path / "zero.txt"
    path.write_text("#items 3\n\n\n")
    code, rep = run_json(["mine-classical", "--db", str(path), "--min-supp", "0.5"], tmp_path)
    assert code == 0
    assert rep["f1"] == [] and rep["f2"] == [] and rep["rules"] == []
    assert set(rep) == {"config_echo", "f1", "f2", "rules", "ledger", "flags", "baseline_diff", "timings"}


def test_reports_are_byte_identical(ref_file, tmp_path):
    argv = ["mine-quantum", "--db", str(ref_file), "--min-supp", "0.5", "--seed", "5"]
    cli.main(argv + ["--out", str(tmp_path / "a.json")])
    cli.main(argv + ["--out", str(tmp_path / "b.json")])
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_float_precision(ref_file, tmp_path):
    code, rep = run_json(["mine-classical", "--db", str(ref_file), "--min-supp", "0.5"], tmp_path)
    conf = {(tuple(r["antecedent"]), tuple(r["consequent"])): r["confidence"] for r in rep["rules"]}
    assert conf[((0,), (1,))] == 0.666666666667
    assert rep["timings"] == {}


def test_timings_opt_in(ref_file, tmp_path):
    _, rep = run_json(["mine-classical", "--db", str(ref_file), "--min-supp", "0.5", "--timings"], tmp_path)
    assert rep["timings"]["total_s"] >= 0


def test_io_errors_exit_3(ref_file, tmp_path, capsys):
    assert cli.main(["mine-classical", "--db", str(tmp_path / "missing.txt"), "--min-supp", "0.5"]) == 3
    bad = tmp_path / "bad.txt"
    bad.write_text("#items 2\n3\n")
    assert cli.main(["mine-classical", "--db", str(bad), "--min-supp", "0.5"]) == 3
    out = tmp_path / "no" / "such" / "dir.json"
    assert cli.main(["mine-classical", "--db", str(ref_file), "--min-supp", "0.5", "--out", str(out)]) == 3
    assert "qarm: error" in capsys.readouterr().err


def test_generate_writes_loadable_db(tmp_path):
    out = tmp_path / "gen.txt"
    assert cli.main(["generate", "--n", "20", "--m", "5", "--a", "2", "--seed", "1", "--out", str(out)]) == 0
    db = load_transactions(out.read_text())
    assert db.shape == (20, 5)


def test_tomo_bench_and_scaling(tmp_path):
    code, rep = run_json(["tomo-bench", "--dim", "3", "--rank", "2", "--seed", "4"], tmp_path)
    assert code == 0 and rep["details"]["squared_error"] < 0.1
    code, rep = run_json(["scaling", "--sizes", "4", "8", "16", "--n", "32"], tmp_path, "s.json")
    assert code == 0
    assert set(rep["details"]["exponents"]) >= {"f1_prep_calls_vs_M", "f1_shots_vs_M"}


def test_schema_self_check(ref_file, tmp_path):
    schema = cli.load_schema()
    jsonschema.Draft202012Validator.check_schema(schema)
    for argv in (
        ["mine-classical", "--db", str(ref_file), "--min-supp", "0.5"],
        ["mine-quantum", "--db", str(ref_file), "--min-supp", "0.5"],
        ["compare", "--db", str(ref_file), "--min-supp", "0.5"],
    ):
        _, rep = run_json(argv, tmp_path)
        jsonschema.validate(rep, schema)
    broken = dict(rep)
    del broken["timings"]
    with pytest.raises(jsonschema.ValidationError):
        cli.validate_report(broken)
