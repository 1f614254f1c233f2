import pathlib

import pytest

from qsor.cli import main, run_simulation
from qsor.onion import Protocol

DATA_DIR = pathlib.Path(__file__).parent / "data"


def test_keygen_writes_profile_sized_files(tmp_path, capsys):
    prefix = tmp_path / "key"
    assert main(["keygen", "kyber512", "--out", str(prefix), "--seed", "1"]) == 0
    assert (tmp_path / "key.pk").stat().st_size == 800
    assert (tmp_path / "key.sk").stat().st_size == 1632
    assert "Kyber512" in capsys.readouterr().out


def test_keygen_sike_sizes(tmp_path):
    prefix = tmp_path / "sike"
    assert main(["keygen", "sike-p503", "--out", str(prefix)]) == 0
    assert (tmp_path / "sike.pk").stat().st_size == 378
    assert (tmp_path / "sike.sk").stat().st_size == 434


def test_keygen_unknown_scheme_is_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["keygen", "unknown-name", "--out", str(tmp_path / "x")])
    assert excinfo.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_keygen_is_deterministic_under_seed(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["keygen", "ntru", "--out", str(a), "--seed", "99"])
    main(["keygen", "ntru", "--out", str(b), "--seed", "99"])
    assert (tmp_path / "a.sk").read_bytes() == (tmp_path / "b.sk").read_bytes()


def test_qsor_seed_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("QSOR_SEED", "123")
    a, b = tmp_path / "a", tmp_path / "b"
    main(["keygen", "rsa1024", "--out", str(a)])
    main(["keygen", "rsa1024", "--out", str(b)])
    assert (tmp_path / "a.pk").read_bytes() == (tmp_path / "b.pk").read_bytes()
    # an explicit --seed overrides the environment
    c = tmp_path / "c"
    main(["keygen", "rsa1024", "--out", str(c), "--seed", "124"])
    assert (tmp_path / "c.pk").read_bytes() != (tmp_path / "a.pk").read_bytes()


def test_simulate_qso_traces_three_unwraps(capsys):
    assert main(["simulate", "--protocol", "qso", "--scheme", "kyber512", "--seed", "5"]) == 0
    out = capsys.readouterr().out
    assert len([line for line in out.splitlines() if "unwrapped one layer" in line]) == 3
    assert "delivered" in out


def test_simulate_hso(capsys):
    code = main(["simulate", "--protocol", "hso", "--classical", "rsa2048",
                 "--pq", "ntru", "--seed", "6"])
    assert code == 0
    assert "delivered" in capsys.readouterr().out


def test_simulate_so(capsys):
    assert main(["simulate", "--protocol", "so", "--scheme", "rsa2048", "--seed", "8"]) == 0


def test_simulate_with_two_nodes_fails(capsys):
    assert main(["simulate", "--nodes", "2", "--seed", "5"]) == 1
    assert "insufficient relays" in capsys.readouterr().err


def test_simulate_rejects_scheme_flag_for_hso(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["simulate", "--protocol", "hso", "--scheme", "kyber512"])
    assert excinfo.value.code == 2


def test_bench_iterations_zero_is_usage_error(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["bench", "--iterations", "0"])
    assert excinfo.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_bench_table3_matches_golden(capsys):
    assert main(["bench", "--table", "3"]) == 0
    golden = (DATA_DIR / "table3_golden.md").read_text()
    assert capsys.readouterr().out == golden


def test_bench_table5_emits_rows(tmp_path, capsys):
    out_path = tmp_path / "report.md"
    code = main(["bench", "--table", "5", "--iterations", "2", "--warmup", "0",
                 "--seed", "1", "--out", str(out_path)])
    assert code == 0
    text = out_path.read_text()
    rows = [line for line in text.splitlines()
            if line.startswith("|") and "---" not in line and "label" not in line]
    assert len(rows) >= 9


def test_bench_unwritable_output_path_fails_cleanly(capsys):
    assert main(["bench", "--table", "3", "--out", "/nonexistent-dir/report.md"]) == 1
    assert "error:" in capsys.readouterr().err


def test_bench_with_registry_config(tmp_path, capsys):
    config = tmp_path / "extra.cfg"
    config.write_text("scheme Demo-KEM id=42 family=lattice pk=100 sk=100 ct=100\n")
    assert main(["bench", "--table", "3", "--registry", str(config)]) == 0
    assert "Demo-KEM" in capsys.readouterr().out


def test_run_simulation_over_tcp():
    result = run_simulation(Protocol.QSO, pq="Sike-p503", seed=11,
                            transport_kind="tcp", payload=b"tcp payload")
    assert result.delivered == b"tcp payload"
    assert len(result.path) == 3
