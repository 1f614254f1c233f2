"""Benchmark harness: KEM operation costs, circuit-build costs, sizes, packets.

Timing methodology: per-thread CPU time (``time.thread_time_ns``) averaged
over ``iterations`` runs after a short untimed warm-up, measured around the
pure operations only (no serialization or I/O inside the timed region).
Cycle counts are derived, not measured: ns x cycles_per_second / 1e9, and
only when a calibration value is supplied.  Absolute timing numbers are
hardware- and implementation-specific; size and packet columns are exact
pure functions of the configuration and reproduce across runs and machines.

Circuit rows label the classical RSA-2048 baseline "Original" and hybrid
rows "Hybrid <scheme>"; schemes absent from the published comparison (the
Frodo variants) carry in_paper=no.
"""

from __future__ import annotations

import csv
import io
import random
import time
from dataclasses import dataclass, field

from . import kem, onion, transport
from .kem import SchemeRegistry
from .onion import HopSpec, Protocol

CLOCK_NAME = "thread_cpu"

# Scheme sets of the published comparison tables.
PAPER_KEM_SCHEMES = (
    "RSA-1024", "RSA-2048", "Kyber512", "NewHope-512-CCA",
    "NTRU-HPS-2048-509", "Sike-p503",
)
PAPER_CIRCUIT_PQ_SCHEMES = (
    "Kyber512", "NewHope-512-CCA", "NTRU-HPS-2048-509", "Sike-p503",
)
DEFAULT_CIRCUIT_PQ_SCHEMES = PAPER_CIRCUIT_PQ_SCHEMES + (
    "Frodo-640-AES", "Frodo-640-SHAKE",
)


@dataclass
class BenchConfig:
    iterations: int = 1000
    warmup: int = 10
    schemes: tuple[str, ...] = ()  # empty = module defaults
    hops: int = 3
    payload_len: int = 64
    classical_scheme: str = "RSA-2048"
    cycles_per_second: float | None = None
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.warmup < 0:
            raise ValueError("warmup must be >= 0")
        if self.hops < 1:
            raise ValueError("hops must be >= 1")
        if self.payload_len < 0:
            raise ValueError("payload_len must be >= 0")


@dataclass
class KemBenchRow:
    scheme: str
    family: str
    keygen_ns: float
    encapsulate_ns: float
    decapsulate_ns: float
    in_paper: bool


@dataclass
class CircuitBenchRow:
    label: str
    protocol: str
    scheme: str
    wrap_layers_ns: float
    remove_one_layer_ns: float
    total_build_ns: float
    message_size_bytes: int
    packets_paper_metric: int
    packets_transport_metric: int
    time_needed_s: float
    in_paper: bool


@dataclass
class BenchReport:
    kind: str  # "kem" or "circuit"
    iterations: int
    clock: str = CLOCK_NAME
    cycles_per_second: float | None = None
    rows: list = field(default_factory=list)

    def cycles(self, ns: float) -> float | None:
        if self.cycles_per_second is None:
            return None
        return ns * self.cycles_per_second / 1e9


def _mean_ns(fn, iterations: int, warmup: int) -> tuple[float, float]:
    """(thread-CPU ns, wall ns) per call, averaged over the whole loop."""
    for _ in range(warmup):
        fn()
    wall0 = time.perf_counter_ns()
    cpu0 = time.thread_time_ns()
    for _ in range(iterations):
        fn()
    cpu = time.thread_time_ns() - cpu0
    wall = time.perf_counter_ns() - wall0
    return cpu / iterations, wall / iterations


def bench_kem(config: BenchConfig, *, registry: SchemeRegistry | None = None) -> BenchReport:
    """Mean keygen / encapsulate / decapsulate cost per scheme."""
    registry = kem._registry(registry)
    rng = random.Random(config.seed)
    names = config.schemes or tuple(p.name for p in registry.profiles())
    report = BenchReport("kem", config.iterations, cycles_per_second=config.cycles_per_second)
    for name in names:
        profile = registry.get(name)
        keygen_ns, _ = _mean_ns(
            lambda: kem.keygen(profile, rng, registry=registry),
            config.iterations, config.warmup,
        )
        pair = kem.keygen(profile, rng, registry=registry)
        encap_ns, _ = _mean_ns(
            lambda: kem.encapsulate(profile, pair.public_key, rng, registry=registry),
            config.iterations, config.warmup,
        )
        ct, _secret = kem.encapsulate(profile, pair.public_key, rng, registry=registry)
        decap_ns, _ = _mean_ns(
            lambda: kem.decapsulate(profile, pair.private_key, ct, registry=registry),
            config.iterations, config.warmup,
        )
        report.rows.append(
            KemBenchRow(
                scheme=profile.name,
                family=profile.family.value,
                keygen_ns=keygen_ns,
                encapsulate_ns=encap_ns,
                decapsulate_ns=decap_ns,
                in_paper=profile.name in PAPER_KEM_SCHEMES,
            )
        )
    return report


def _circuit_pq_schemes(config: BenchConfig, registry: SchemeRegistry) -> list[str]:
    if config.schemes:
        return [registry.get(s).name for s in config.schemes]
    return [registry.get(s).name for s in DEFAULT_CIRCUIT_PQ_SCHEMES]


def _hops_for(
    protocol: Protocol, scheme_name: str, config: BenchConfig,
    rng: random.Random, registry: SchemeRegistry,
):
    hops = []
    keys = []
    for i in range(config.hops):
        address = f"relay{i + 1}:{9001 + i}"
        if protocol is Protocol.HSO:
            hybrid = registry.hybrid(config.classical_scheme, scheme_name)
            ck = kem.keygen(hybrid.classical, rng, registry=registry)
            qk = kem.keygen(hybrid.post_quantum, rng, registry=registry)
            hops.append(HopSpec(address, hybrid, (ck.public_key, qk.public_key)))
            keys.append((ck, qk))
        else:
            scheme_id = registry.get(scheme_name).scheme_id
            pair = kem.keygen(scheme_id, rng, registry=registry)
            hops.append(HopSpec(address, scheme_id, pair.public_key))
            keys.append(pair)
    return hops, keys


def _measure_circuit_row(
    label: str, protocol: Protocol, scheme_name: str, in_paper: bool,
    config: BenchConfig, rng: random.Random, registry: SchemeRegistry,
) -> CircuitBenchRow:
    hops, keys = _hops_for(protocol, scheme_name, config, rng, registry)
    payload = rng.randbytes(config.payload_len)

    def do_wrap():
        return onion.wrap(payload, hops, protocol, rng, registry=registry)

    def do_total_build():
        data = do_wrap().data
        for node_keys in keys:
            _, data = onion.unwrap_layer(node_keys, data, registry=registry)

    wrap_ns, _ = _mean_ns(do_wrap, config.iterations, config.warmup)
    message = do_wrap()
    first_hop_keys = keys[0]
    remove_ns, _ = _mean_ns(
        lambda: onion.unwrap_layer(first_hop_keys, message.data, registry=registry),
        config.iterations, config.warmup,
    )
    total_ns, total_wall_ns = _mean_ns(do_total_build, config.iterations, config.warmup)

    size = onion.onion_size(
        protocol, [h.scheme for h in hops], config.payload_len,
        [h.address for h in hops], registry=registry,
    )
    return CircuitBenchRow(
        label=label,
        protocol=protocol.name,
        scheme=scheme_name,
        wrap_layers_ns=wrap_ns,
        remove_one_layer_ns=remove_ns,
        total_build_ns=total_ns,
        message_size_bytes=size,
        packets_paper_metric=transport.packets_needed_paper_metric(size),
        packets_transport_metric=transport.packets_needed_transport_metric(size),
        time_needed_s=total_wall_ns / 1e9,
        in_paper=in_paper,
    )


def bench_circuit(config: BenchConfig, *, registry: SchemeRegistry | None = None) -> BenchReport:
    """One row per protocol x scheme: build costs, message size, packet counts."""
    registry = kem._registry(registry)
    rng = random.Random(config.seed)
    classical = registry.get(config.classical_scheme)
    pq_names = _circuit_pq_schemes(config, registry)
    report = BenchReport("circuit", config.iterations, cycles_per_second=config.cycles_per_second)

    original_label = "Original" if classical.name == "RSA-2048" else f"Original ({classical.name})"
    report.rows.append(
        _measure_circuit_row(
            original_label, Protocol.SO, classical.name,
            classical.name == "RSA-2048", config, rng, registry,
        )
    )
    for name in pq_names:
        report.rows.append(
            _measure_circuit_row(
                name, Protocol.QSO, name,
                name in PAPER_CIRCUIT_PQ_SCHEMES, config, rng, registry,
            )
        )
    for name in pq_names:
        report.rows.append(
            _measure_circuit_row(
                f"Hybrid {name}", Protocol.HSO, name,
                name in PAPER_CIRCUIT_PQ_SCHEMES and classical.name == "RSA-2048",
                config, rng, registry,
            )
        )
    return report


# --- report rendering ---------------------------------------------------------

_KEM_COLUMNS = (
    "scheme", "family", "keygen_ns", "encapsulate_ns", "decapsulate_ns",
    "keygen_cycles", "encapsulate_cycles", "decapsulate_cycles",
    "iterations", "clock", "cycles_per_second", "in_paper",
)
_CIRCUIT_COLUMNS = (
    "label", "protocol", "scheme",
    "wrap_layers_ns", "remove_one_layer_ns", "total_build_ns",
    "wrap_layers_cycles", "remove_one_layer_cycles", "total_build_cycles",
    "message_size_bytes", "packets_paper_metric", "packets_transport_metric",
    "time_needed_s", "iterations", "clock", "cycles_per_second", "in_paper",
)
_SIZE_COLUMNS = (
    "scheme_id", "scheme", "family",
    "public_key_bytes", "private_key_bytes", "ciphertext_bytes",
)


def _fmt_ns(value: float) -> str:
    return f"{value:.1f}"


def _fmt_cycles(report: BenchReport, ns: float) -> str:
    cycles = report.cycles(ns)
    return "" if cycles is None else f"{cycles:.0f}"


def _report_cells(report: BenchReport) -> list[dict[str, str]]:
    meta = {
        "iterations": str(report.iterations),
        "clock": report.clock,
        "cycles_per_second": (
            "" if report.cycles_per_second is None else f"{report.cycles_per_second:.0f}"
        ),
    }
    out = []
    for row in report.rows:
        if report.kind == "kem":
            cells = {
                "scheme": row.scheme,
                "family": row.family,
                "keygen_ns": _fmt_ns(row.keygen_ns),
                "encapsulate_ns": _fmt_ns(row.encapsulate_ns),
                "decapsulate_ns": _fmt_ns(row.decapsulate_ns),
                "keygen_cycles": _fmt_cycles(report, row.keygen_ns),
                "encapsulate_cycles": _fmt_cycles(report, row.encapsulate_ns),
                "decapsulate_cycles": _fmt_cycles(report, row.decapsulate_ns),
            }
        else:
            cells = {
                "label": row.label,
                "protocol": row.protocol,
                "scheme": row.scheme,
                "wrap_layers_ns": _fmt_ns(row.wrap_layers_ns),
                "remove_one_layer_ns": _fmt_ns(row.remove_one_layer_ns),
                "total_build_ns": _fmt_ns(row.total_build_ns),
                "wrap_layers_cycles": _fmt_cycles(report, row.wrap_layers_ns),
                "remove_one_layer_cycles": _fmt_cycles(report, row.remove_one_layer_ns),
                "total_build_cycles": _fmt_cycles(report, row.total_build_ns),
                "message_size_bytes": str(row.message_size_bytes),
                "packets_paper_metric": str(row.packets_paper_metric),
                "packets_transport_metric": str(row.packets_transport_metric),
                "time_needed_s": f"{row.time_needed_s:.6f}",
            }
        cells.update(meta)
        cells["in_paper"] = "yes" if row.in_paper else "no"
        out.append(cells)
    return out


def _columns(report: BenchReport) -> tuple[str, ...]:
    return _KEM_COLUMNS if report.kind == "kem" else _CIRCUIT_COLUMNS


def _render_csv(columns, rows) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buffer.getvalue()


def _render_markdown(columns, rows, preamble: list[str]) -> str:
    lines = preamble + [""] if preamble else []
    lines.append("| " + " | ".join(columns) + " |")
    lines.append("|" + "|".join(" --- " for _ in columns) + "|")
    for row in rows:
        lines.append("| " + " | ".join(row[c] for c in columns) + " |")
    return "\n".join(lines) + "\n"


def emit_report(report: BenchReport, format: str = "markdown") -> str:
    """Render a report; column order is stable and identical on every row."""
    rows = _report_cells(report)
    columns = _columns(report)
    if format == "csv":
        return _render_csv(columns, rows)
    if format == "markdown":
        calibration = (
            f"{report.cycles_per_second:.0f} cycles/s"
            if report.cycles_per_second is not None
            else "not calibrated (cycle columns empty)"
        )
        preamble = [
            f"clock: {report.clock} (ns per operation, mean over "
            f"{report.iterations} iterations; time_needed_s is wall time)",
            f"cycles: derived as ns x cycles_per_second / 1e9; {calibration}",
        ]
        return _render_markdown(columns, rows, preamble)
    raise ValueError(f"unknown report format {format!r}")


def format_size_table(registry: SchemeRegistry | None = None, format: str = "markdown") -> str:
    """The scheme size registry as a table (the built-in rows match the
    published key/ciphertext sizes byte for byte)."""
    registry = kem._registry(registry)
    rows = [
        {
            "scheme_id": str(p.scheme_id),
            "scheme": p.name,
            "family": p.family.value,
            "public_key_bytes": str(p.public_key_size),
            "private_key_bytes": str(p.private_key_size),
            "ciphertext_bytes": str(p.ciphertext_size),
        }
        for p in registry.profiles()
    ]
    if format == "csv":
        return _render_csv(_SIZE_COLUMNS, rows)
    if format == "markdown":
        return _render_markdown(_SIZE_COLUMNS, rows, [])
    raise ValueError(f"unknown report format {format!r}")
