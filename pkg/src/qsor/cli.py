"""Command-line entry point: key generation, network simulation, benchmarks.

Every subcommand is scriptable: deterministic exit codes (0 success,
1 runtime failure, 2 usage error), machine-readable output via --format,
and a --seed flag (falling back to the QSOR_SEED environment variable)
that makes all non-timing outputs reproducible.
"""

from __future__ import annotations

import argparse
import os
import random
import sys
import time
from dataclasses import dataclass, field

from . import bench, kem, transport
from .directory import (
    DirectoryClient,
    DirectoryServer,
    KeyMode,
    MigrationPolicy,
    build_descriptor,
    select_path,
)
from .errors import DeliveryError, QsorError
from .kem import SchemeRegistry
from .onion import Protocol, wrap
from .transport import InProcNetwork, RelayNode, TcpEndpoint, send_message

_PROTOCOL_BY_NAME = {"so": Protocol.SO, "qso": Protocol.QSO, "hso": Protocol.HSO}


@dataclass
class SimulationResult:
    payload: bytes
    delivered: bytes
    path: list[str]
    message_size: int
    cells_sent: int
    trace: list[str] = field(default_factory=list)
    relays: list[RelayNode] = field(default_factory=list)
    client_address: str = ""


def _policy_for(protocol: Protocol, classical: str, pq: str) -> MigrationPolicy:
    if protocol is Protocol.SO:
        return MigrationPolicy(KeyMode.CLASSICAL, classical_scheme=classical)
    if protocol is Protocol.QSO:
        return MigrationPolicy(KeyMode.POST_QUANTUM, pq_scheme=pq)
    return MigrationPolicy(KeyMode.HYBRID, classical_scheme=classical, pq_scheme=pq)


def run_simulation(
    protocol: Protocol,
    *,
    classical: str = "RSA-2048",
    pq: str = "Kyber512",
    nodes: int = 6,
    hops: int = 3,
    payload: bytes = b"hello over onions",
    transport_kind: str = "inproc",
    seed: int | None = None,
    registry: SchemeRegistry | None = None,
    network: InProcNetwork | None = None,
    deadline: float = 10.0,
) -> SimulationResult:
    """Spin up a directory and relays, build a circuit, send, assert delivery.

    The full client workflow runs over the wire: relays publish descriptors
    to the directory, the client fetches a consensus, selects a path and
    sends the wrapped payload cell by cell.
    """
    registry = kem._registry(registry)
    rng = random.Random(seed)
    policy = _policy_for(protocol, classical, pq)

    if transport_kind == "inproc":
        if network is None:
            network = InProcNetwork()
        make_endpoint = network.endpoint
    elif transport_kind == "tcp":
        make_endpoint = lambda _name: TcpEndpoint("127.0.0.1:0")
    else:
        raise ValueError(f"unknown transport {transport_kind!r}")

    server = DirectoryServer(make_endpoint("dir"), registry=registry)
    server.start()
    relays: list[RelayNode] = []
    client = None
    try:
        for i in range(nodes):
            nickname = f"relay{i + 1}"
            keys = policy.generate_keys(rng, registry=registry)
            node = RelayNode(nickname, make_endpoint(nickname), keys, registry=registry)
            descriptor = build_descriptor(
                nickname, node.address, keys, registry=registry, published_at=i + 1
            )
            # publish over the wire before the relay starts consuming cells
            DirectoryClient(node.endpoint, server.address, registry=registry).publish(descriptor)
            node.start()
            relays.append(node)

        client = make_endpoint("client")
        consensus = DirectoryClient(client, server.address, registry=registry).fetch_consensus(1)
        path = select_path(consensus, hops, rng, policy=policy, registry=registry)

        message = wrap(payload, path, protocol, rng, registry=registry)
        circuit_id = rng.randrange(1, 1 << 32)
        cells_sent = send_message(client, path[0].address, circuit_id, message.data)

        by_address = {node.address: node for node in relays}
        exit_node = by_address[path[-1].address]
        limit = time.monotonic() + deadline
        while not exit_node.sink and time.monotonic() < limit:
            time.sleep(0.01)
        if not exit_node.sink:
            raise DeliveryError("payload never reached the exit sink")
        delivered = exit_node.sink[0]
        if delivered != payload:
            raise DeliveryError("exit sink payload differs from what was sent")

        result = SimulationResult(
            payload=payload,
            delivered=delivered,
            path=[hop.address for hop in path],
            message_size=len(message.data),
            cells_sent=cells_sent,
            relays=relays,
            client_address=getattr(client, "address", "client"),
        )
        result.trace.append(
            "path: " + " -> ".join(by_address[a].state.nickname for a in result.path)
        )
        result.trace.append(
            f"message: {result.message_size} bytes, "
            f"{transport.packets_needed_paper_metric(result.message_size)} packets "
            f"(paper metric), {cells_sent} cells on circuit {circuit_id}"
        )
        for i, address in enumerate(result.path):
            node = by_address[address]
            for entry in node.log:
                if entry.circuit_id != circuit_id:
                    continue
                if entry.event == "forward":
                    result.trace.append(
                        f"hop {i + 1} {node.state.nickname}: "
                        f"unwrapped one layer, forwarded to {entry.next_hop}"
                    )
                elif entry.event == "deliver":
                    result.trace.append(
                        f"hop {i + 1} {node.state.nickname}: "
                        f"unwrapped one layer, delivered {len(delivered)} bytes"
                    )
        return result
    finally:
        for node in relays:
            node.stop()
        server.stop()
        if client is not None:
            client.close()


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _nonnegative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qsor",
        description="Onion circuit creation over classical, post-quantum and "
                    "hybrid KEMs, plus a size/packet/timing benchmark harness.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="rng seed (default: QSOR_SEED env var, else random)")
    common.add_argument("--registry", metavar="FILE", default=None,
                        help="config file with extra scheme profiles")
    sub = parser.add_subparsers(dest="command", required=True)

    p_keygen = sub.add_parser("keygen", parents=[common],
                              help="generate a keypair with exact profile sizes")
    p_keygen.add_argument("scheme", help="scheme name, e.g. kyber512, rsa2048, sike-p503")
    p_keygen.add_argument("--out", default=None,
                          help="output path prefix (default: the scheme name)")

    p_sim = sub.add_parser("simulate", parents=[common],
                           help="run a directory + relays and send one payload")
    p_sim.add_argument("--protocol", choices=sorted(_PROTOCOL_BY_NAME), default="qso")
    p_sim.add_argument("--scheme", default=None,
                       help="single scheme for so/qso (classical or post-quantum)")
    p_sim.add_argument("--classical", default="rsa2048", help="classical scheme for hso")
    p_sim.add_argument("--pq", default="kyber512", help="post-quantum scheme for hso")
    p_sim.add_argument("--nodes", type=_positive_int, default=6)
    p_sim.add_argument("--hops", type=_positive_int, default=3)
    p_sim.add_argument("--payload", default="hello over onions")
    p_sim.add_argument("--transport", choices=["inproc", "tcp"], default="inproc")

    p_bench = sub.add_parser("bench", parents=[common], help="run the benchmark harness")
    p_bench.add_argument("--table", choices=["3", "4", "5"], default="5",
                         help="3: scheme size registry, 4: KEM op costs, "
                              "5: circuit build costs (default)")
    p_bench.add_argument("--iterations", type=_positive_int, default=1000)
    p_bench.add_argument("--warmup", type=_nonnegative_int, default=10)
    p_bench.add_argument("--schemes", default=None,
                         help="comma-separated scheme names (default: all registered)")
    p_bench.add_argument("--classical", default="rsa2048",
                         help="classical scheme for SO/HSO rows")
    p_bench.add_argument("--hops", type=_positive_int, default=3)
    p_bench.add_argument("--payload-len", type=_nonnegative_int, default=64)
    p_bench.add_argument("--cycles-per-second", type=float, default=None,
                         help="calibration for derived cycle columns")
    p_bench.add_argument("--format", choices=["markdown", "csv"], default="markdown")
    p_bench.add_argument("--out", default=None, help="write report here instead of stdout")
    return parser


def _load_registry(args) -> SchemeRegistry:
    registry = SchemeRegistry()
    if args.registry:
        registry.load_config(args.registry)
    return registry


def _resolve_seed(args) -> int | None:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("QSOR_SEED")
    return int(env) if env else None


def cmd_keygen(args, parser) -> int:
    registry = _load_registry(args)
    try:
        profile = registry.get(args.scheme)
    except QsorError as exc:
        parser.error(str(exc))
    seed = _resolve_seed(args)
    rng = random.Random(seed) if seed is not None else None
    pair = kem.keygen(profile, rng, registry=registry)
    prefix = args.out or profile.name.lower()
    for suffix, data in ((".pk", pair.public_key), (".sk", pair.private_key)):
        with open(prefix + suffix, "wb") as fh:
            fh.write(data)
    print(f"{profile.name}: wrote {prefix}.pk ({len(pair.public_key)} bytes) "
          f"and {prefix}.sk ({len(pair.private_key)} bytes)")
    return 0


def cmd_simulate(args, parser) -> int:
    registry = _load_registry(args)
    protocol = _PROTOCOL_BY_NAME[args.protocol]
    classical, pq = args.classical, args.pq
    if args.scheme is not None:
        if protocol is Protocol.SO:
            classical = args.scheme
        elif protocol is Protocol.QSO:
            pq = args.scheme
        else:
            parser.error("hso takes --classical and --pq, not --scheme")
    try:
        registry.get(classical)
        registry.get(pq)
    except QsorError as exc:
        parser.error(str(exc))
    try:
        result = run_simulation(
            protocol,
            classical=classical,
            pq=pq,
            nodes=args.nodes,
            hops=args.hops,
            payload=args.payload.encode("utf-8"),
            transport_kind=args.transport,
            seed=_resolve_seed(args),
            registry=registry,
        )
    except (QsorError, ValueError) as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return 1
    for line in result.trace:
        print(line)
    print(f"delivered {len(result.delivered)} bytes at exit {result.path[-1]}")
    return 0


def cmd_bench(args, parser) -> int:
    registry = _load_registry(args)
    if args.table == "3":
        text = bench.format_size_table(registry, args.format)
    else:
        schemes = tuple(s.strip() for s in args.schemes.split(",")) if args.schemes else ()
        try:
            config = bench.BenchConfig(
                iterations=args.iterations,
                warmup=args.warmup,
                schemes=schemes,
                hops=args.hops,
                payload_len=args.payload_len,
                classical_scheme=args.classical,
                cycles_per_second=args.cycles_per_second,
                seed=_resolve_seed(args),
            )
            if args.table == "4":
                report = bench.bench_kem(config, registry=registry)
            else:
                report = bench.bench_circuit(config, registry=registry)
        except QsorError as exc:
            parser.error(str(exc))
        text = bench.emit_report(report, args.format)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "keygen":
            return cmd_keygen(args, parser)
        if args.command == "simulate":
            return cmd_simulate(args, parser)
        return cmd_bench(args, parser)
    except (QsorError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
