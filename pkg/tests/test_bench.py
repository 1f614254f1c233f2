import csv
import io

import pytest

from qsor.bench import (
    BenchConfig,
    bench_circuit,
    bench_kem,
    emit_report,
    format_size_table,
)
from qsor.kem import SchemeRegistry
from qsor.onion import Protocol, onion_size
from qsor.transport import packets_needed_paper_metric

REG = SchemeRegistry()

FAST = dict(iterations=3, warmup=1)


def test_config_validation():
    with pytest.raises(ValueError):
        BenchConfig(iterations=0)
    with pytest.raises(ValueError):
        BenchConfig(hops=0)
    with pytest.raises(ValueError):
        BenchConfig(payload_len=-1)


def test_bench_kem_has_one_live_row_per_scheme():
    report = bench_kem(BenchConfig(**FAST), registry=REG)
    assert [row.scheme for row in report.rows] == [p.name for p in REG.profiles()]
    for row in report.rows:
        assert row.keygen_ns > 0
        assert row.encapsulate_ns > 0
        assert row.decapsulate_ns > 0
    flagged = {row.scheme for row in report.rows if not row.in_paper}
    assert flagged == {"Frodo-640-AES", "Frodo-640-SHAKE"}


def test_cycles_are_derived_from_calibration():
    report = bench_kem(
        BenchConfig(schemes=("Kyber512",), cycles_per_second=2.4e9, **FAST),
        registry=REG,
    )
    row = report.rows[0]
    assert report.cycles(row.keygen_ns) == row.keygen_ns * 2.4e9 / 1e9
    uncalibrated = bench_kem(BenchConfig(schemes=("Kyber512",), **FAST), registry=REG)
    assert uncalibrated.cycles(row.keygen_ns) is None


def test_bench_circuit_rows_and_size_columns():
    config = BenchConfig(seed=1, **FAST)
    report = bench_circuit(config, registry=REG)
    labels = [row.label for row in report.rows]
    assert labels[0] == "Original"
    assert "Kyber512" in labels
    assert "Hybrid Kyber512" in labels
    assert len(labels) == 1 + 6 + 6  # SO + QSO + HSO over the default scheme set

    by_label = {row.label: row for row in report.rows}
    for row in report.rows:
        assert row.total_build_ns >= row.wrap_layers_ns
        assert row.packets_paper_metric == packets_needed_paper_metric(row.message_size_bytes)
        assert row.time_needed_s > 0

    # size column equals the analytic size for the same configuration
    addresses = [f"relay{i + 1}:{9001 + i}" for i in range(config.hops)]
    scheme_id = REG.get("Kyber512").scheme_id
    assert by_label["Kyber512"].message_size_bytes == onion_size(
        Protocol.QSO, scheme_id, config.payload_len, addresses, registry=REG
    )
    # hybrid strictly exceeds its post-quantum counterpart
    for name in ("Kyber512", "NewHope-512-CCA", "NTRU-HPS-2048-509", "Sike-p503"):
        assert by_label[f"Hybrid {name}"].message_size_bytes > by_label[name].message_size_bytes


def test_size_columns_are_deterministic_across_runs():
    first = bench_circuit(BenchConfig(seed=7, **FAST), registry=REG)
    second = bench_circuit(BenchConfig(seed=7, **FAST), registry=REG)
    sizes = lambda report: [
        (r.label, r.message_size_bytes, r.packets_paper_metric, r.packets_transport_metric)
        for r in report.rows
    ]
    assert sizes(first) == sizes(second)


def test_emit_csv_roundtrips_with_equal_field_counts():
    report = bench_circuit(BenchConfig(seed=2, **FAST), registry=REG)
    text = emit_report(report, "csv")
    parsed = list(csv.reader(io.StringIO(text)))
    header, *rows = parsed
    assert len(rows) == len(report.rows)
    assert all(len(row) == len(header) for row in parsed)
    assert "message_size_bytes" in header
    assert "clock" in header and "cycles_per_second" in header


def test_emit_markdown_has_header_and_one_line_per_row():
    report = bench_kem(BenchConfig(schemes=("Sike-p503", "RSA-1024"), **FAST), registry=REG)
    text = emit_report(report, "markdown")
    table_lines = [line for line in text.splitlines() if line.startswith("|")]
    assert len(table_lines) == 2 + len(report.rows)
    assert text.splitlines()[0].startswith("clock: thread_cpu")
    with pytest.raises(ValueError):
        emit_report(report, "yaml")


def test_size_table_matches_registry():
    text = format_size_table(REG, "markdown")
    lines = [line for line in text.splitlines() if line.startswith("|")]
    assert len(lines) == 2 + 8
    assert "| 5 | Kyber512 | lattice | 800 | 1632 | 736 |" in text
    csv_text = format_size_table(REG, "csv")
    rows = list(csv.DictReader(io.StringIO(csv_text)))
    assert rows[7]["scheme"] == "Sike-p503"
    assert rows[7]["ciphertext_bytes"] == "402"
