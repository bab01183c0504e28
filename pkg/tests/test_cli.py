import json

import pytest

from maxmin import cli
from maxmin.adversaries import gen_permutation_matching
from maxmin.core import Instance, save_instance
from maxmin.fixtures import PASS_CHAIN_OWNERS, fixture_path


@pytest.fixture(autouse=True)
def no_env_seed(monkeypatch):
    monkeypatch.delenv(cli.SEED_ENV, raising=False)


def parse(argv):
    return cli.parse_config(cli.build_parser().parse_args(argv))


def write_config(tmp_path, obj):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(obj))
    return str(path)


def test_config_file_round_trip(tmp_path):
    path = write_config(tmp_path, {
        "algorithm": {"name": "pass_chain", "epsilon": 0.25},
        "source": {"name": "two_phase", "n": 2, "k": 1000},
    })
    cfg = parse(["run", "--config", path])
    assert cfg.algorithm.name == "pass_chain" and cfg.algorithm.epsilon == 0.25
    assert cfg.source.name == "two_phase" and cfg.source.k == 1000


def test_flags_override_file_and_env_overrides_flags(tmp_path, monkeypatch):
    path = write_config(tmp_path, {
        "algorithm": {"name": "pass_chain", "epsilon": 0.25},
        "source": {"name": "two_phase", "n": 2, "k": 10},
        "seed": 5,
    })
    cfg = parse(["run", "--config", path, "--epsilon", "0.5", "--k", "20", "--seed", "9"])
    assert cfg.algorithm.epsilon == 0.5 and cfg.source.k == 20 and cfg.seed == 9
    monkeypatch.setenv(cli.SEED_ENV, "77")
    assert parse(["run", "--config", path, "--seed", "9"]).seed == 77


@pytest.mark.parametrize(
    "argv,code",
    [
        (["run", "--algorithm", "magic", "--source", "two_phase"], cli.EXIT_CONFIG),
        (["run", "--algorithm", "round_robin", "--source", "nowhere"], cli.EXIT_CONFIG),
        (["run", "--algorithm", "pass_chain", "--epsilon", "1.5", "--source", "two_phase"], cli.EXIT_EPSILON),
        (["run", "--algorithm", "discounted", "--source", "two_phase"], cli.EXIT_EPSILON),
        (["run", "--algorithm", "round_robin", "--source", "deficiency", "--r", "0.4"], cli.EXIT_R_RANGE),
        (["run", "--algorithm", "greedy", "--source", "greedy_killer", "--epsilon", "0.3"], cli.EXIT_KILLER_EPSILON),
        (["run", "--algorithm", "greedy", "--phi", "cube", "--source", "two_phase"], cli.EXIT_CONFIG),
        (["run", "--algorithm", "round_robin", "--source", "two_phase", "--trials", "0"], cli.EXIT_CONFIG),
        (["run", "--config", "/nonexistent/cfg.json"], cli.EXIT_IO),
    ],
)
def test_config_errors_have_distinct_codes(argv, code, capsys):
    assert cli.main(argv) == code
    assert "error:" in capsys.readouterr().err


def test_exit_codes_are_distinct():
    codes = [cli.EXIT_OK, cli.EXIT_CONFIG, cli.EXIT_VERIFY, cli.EXIT_BUDGET,
             cli.EXIT_EPSILON, cli.EXIT_R_RANGE, cli.EXIT_KILLER_EPSILON, cli.EXIT_IO]
    assert len(set(codes)) == len(codes)


def test_run_reference_fixture_prints_owners(capsys, tmp_path):
    path = str(fixture_path("pass_chain_example.jsonl"))
    code = cli.main(["run", "--algorithm", "pass_chain", "--instance", path, "--out", str(tmp_path)])
    assert code == 0
    out = capsys.readouterr().out.split()
    assert tuple(int(a) for a in out) == PASS_CHAIN_OWNERS
    assert (tmp_path / "report.csv").exists() and (tmp_path / "summary.json").exists()


def test_replay_round_trip(tmp_path, capsys):
    path = tmp_path / "perm.jsonl"
    save_instance(gen_permutation_matching((1, 0, 2)), path)
    out = tmp_path / "o"
    assert cli.main(["run", "--algorithm", "random", "--instance", str(path), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["stats"]["mean_opt"] == 1.0 and summary["stats"]["all_opt_exact"]


def test_oracle_empty_instance(tmp_path, capsys):
    path = tmp_path / "empty.jsonl"
    save_instance(Instance(3), path)
    assert cli.main(["oracle", str(path)]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res == {"opt": 0.0, "witness": [], "nodes": 0, "exact": True}


def test_oracle_budget_downgrade(tmp_path, capsys):
    path = tmp_path / "big.jsonl"
    save_instance(Instance(3, tuple((0.5 + 0.01 * j, 0.7, 0.9 - 0.02 * j) for j in range(14))), path)
    assert cli.main(["oracle", str(path), "--oracle-budget", "10"]) == cli.EXIT_BUDGET
    assert json.loads(capsys.readouterr().out)["exact"] is False


def test_oracle_bad_file(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text("[1, 2]\n[1]\n")
    assert cli.main(["oracle", str(path)]) == cli.EXIT_CONFIG
    assert cli.main(["oracle", str(tmp_path / "missing.jsonl")]) == cli.EXIT_IO


def test_verify_fuzz_corpus(tmp_path, capsys):
    code = cli.main(["verify", "--trials", "12", "--workers", "1", "--out", str(tmp_path)])
    assert code == 0
    assert capsys.readouterr().out.count("PASS") == 3
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["agent_bound_failures"] == 0 and summary["balance_violations"] == 0


def test_sweep_and_iid(tmp_path, capsys):
    out = tmp_path / "s"
    assert cli.main(["sweep", "--algorithm", "greedy", "--source", "greedy_killer",
                     "--sizes", "10,20", "--out", str(out)]) == 0
    assert (out / "sweep.csv").read_text().startswith("size,")
    assert cli.main(["sweep", "--algorithm", "greedy", "--source", "two_phase", "--sizes", "3,2"]) == cli.EXIT_CONFIG
    assert cli.main(["sweep", "--algorithm", "greedy", "--source", "two_phase"]) == cli.EXIT_CONFIG
    capsys.readouterr()
    code = cli.main(["iid", "--algorithm", "round_robin", "--source", "constant", "--vector", "1,0.5",
                     "--m", "100", "--trials", "3", "--workers", "1"])
    assert code == 0
    assert json.loads(capsys.readouterr().out)["mean_alg_welfare"] == 25.0
    assert cli.main(["iid", "--algorithm", "round_robin", "--source", "two_phase", "--m", "4"]) == cli.EXIT_CONFIG


def test_run_is_idempotent(tmp_path):
    argv = ["run", "--algorithm", "random", "--source", "uniform", "--n", "2", "--m", "6",
            "--trials", "20", "--seed", "3", "--out", str(tmp_path)]
    assert cli.main(argv) == 0
    first = (tmp_path / "report.csv").read_bytes(), (tmp_path / "summary.json").read_bytes()
    assert cli.main(argv[:-2] + ["--workers", "2", "--out", str(tmp_path)]) == 0
    assert first == ((tmp_path / "report.csv").read_bytes(), (tmp_path / "summary.json").read_bytes())


def test_run_trace(tmp_path):
    assert cli.main(["run", "--algorithm", "pass_chain", "--epsilon", "0.5", "--source", "two_phase",
                     "--n", "2", "--k", "3", "--trace", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "trace.csv").read_text().splitlines()
    assert len(rows) == 1 + 6
