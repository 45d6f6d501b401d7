"""aoi-bench: Age-of-Information workbench for MQTT over TCP, TLS and QUIC."""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import sys
import tempfile
from pathlib import Path
from typing import List, Optional

from . import aoi
from .broker import serve_broker
from .client import SimpleConfig, StreamConfig, simple_publish, stream_run, write_publish_log
from .harness import (
    SubscribeConfig,
    emit_report,
    ingest_energy_trace,
    load_grid,
    points_from_metrics,
    read_metrics_csv,
    run_grid,
    subscribe_collect,
)
from .netem import ImpairmentConfig, parse_hostport, run_proxy
from .pareto import pareto_front, write_front_csv
from .queue import QueuePolicy
from .transport import ListenConfig, TransportConfig, TransportKind, generate_lab_certificates

log = logging.getLogger("aoibench")


def _onoff(text: str) -> bool:
    t = text.lower()
    if t in ("on", "true", "1", "yes"):
        return True
    if t in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")


def _add_transport_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--transport", choices=[k.value for k in TransportKind], default="tcp")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--ca", type=Path, help="trust only this CA file")
    p.add_argument("--insecure", action="store_true", help="skip certificate verification")
    p.add_argument("--server-name", help="name to verify in the server certificate")
    p.add_argument("--nagle", type=_onoff, help="on/off (tcp, tls)")
    p.add_argument("--gso", type=_onoff, help="on/off UDP segmentation offload (quic)")
    p.add_argument("--connect-timeout-ms", type=int, default=10_000)


def _transport(args) -> TransportConfig:
    trust = "insecure" if args.insecure else ("trust-root" if args.ca else "verify")
    return TransportConfig(args.transport, args.host, args.port, nagle_enabled=args.nagle,
                           segmentation_offload=args.gso, tls_trust=trust, ca_file=args.ca,
                           server_name=args.server_name,
                           connect_timeout_ms=args.connect_timeout_ms)


async def _forever() -> None:
    await asyncio.Event().wait()


async def cmd_broker(args) -> int:
    cert, key = args.cert, args.key
    tmp = None
    if (args.tls is not None or args.quic is not None) and not (cert and key):
        tmp = tempfile.TemporaryDirectory(prefix="aoibench-broker-")
        lab = generate_lab_certificates(tmp.name)
        cert, key = lab.cert, lab.key
        print(f"lab CA written to {lab.ca_cert}", file=sys.stderr)
    listeners = []
    for kind, port in ((TransportKind.PLAIN, args.tcp), (TransportKind.SECURE, args.tls),
                       (TransportKind.QUIC, args.quic)):
        if port is not None:
            listeners.append(ListenConfig(kind, host=args.host, port=port, cert=cert, key=key))
    if not listeners:
        print("nothing to listen on: give --tcp, --tls and/or --quic", file=sys.stderr)
        return 2
    broker = await serve_broker(listeners)
    for kind, port in broker.ports.items():
        print(f"broker listening {kind.value} {args.host}:{port}", flush=True)
    try:
        await _forever()
    finally:
        await broker.close()
        if tmp is not None:
            tmp.cleanup()
    return 0


async def cmd_proxy(args) -> int:
    cfg = ImpairmentConfig(listen=parse_hostport(args.listen), upstream=parse_hostport(args.upstream),
                           one_way_delay_ms=args.delay_ms, rate_limit_bps=args.rate_bps,
                           mode=args.mode, burst_bytes=args.burst)
    proxy = await run_proxy(cfg)
    host, port = proxy.address
    print(f"proxy {cfg.mode.value} {host}:{port} -> {proxy.upstream_host}:{cfg.upstream[1]}",
          flush=True)
    try:
        await _forever()
    finally:
        await proxy.close()
    return 0


async def cmd_subscribe(args) -> int:
    cfg = SubscribeConfig(_transport(args), args.topic, idle_timeout_s=args.idle_timeout)
    got = await subscribe_collect(cfg)
    got.log.to_csv(args.out)
    print(f"{len(got.records)} records ({got.rejected} rejected) written to {args.out}")
    return 0


async def cmd_publish(args) -> int:
    cfg = SimpleConfig(_transport(args), args.topic, args.qos, args.payload)
    for _ in range(args.repeat):
        t = await simple_publish(cfg)
        print(f"connect_ms={t.connect_ms:.3f} publish_ms={t.publish_ms:.3f} total_ms={t.total_ms:.3f}")
    return 0


async def cmd_stream(args) -> int:
    cfg = StreamConfig(_transport(args), args.rate, args.window, topic=args.topic, qos=args.qos,
                       payload_size=args.payload, queue=QueuePolicy.parse(args.queue))
    res = await stream_run(cfg)
    if args.log:
        write_publish_log(args.log, res.records)
    summary = {
        "status": "failed" if res.failed else "ok",
        "error": res.error,
        "generated": res.generated,
        "sent": res.sent,
        "acked": res.acked,
        "dropped": res.dropped,
        "producer_block_ms": res.producer_block_ms,
        "generation_rate": res.generation_rate,
        "send_rate": res.send_rate,
        "writes": res.transport.writes,
        "segments": res.transport.segments,
    }
    print(json.dumps(summary, indent=2))
    return 1 if res.failed else 0


async def cmd_run(args) -> int:
    configs = load_grid(args.grid, output_dir=args.out)
    for c in configs:
        print(c.label, flush=True)
    if args.dry_run:
        return 0
    results = await run_grid(configs)
    paths = emit_report(results, args.out, args.format.split(","))
    for p in paths:
        print(f"wrote {p}")
    return 0 if all(r.status == "ok" for r in results) else 1


def cmd_analyze(args) -> int:
    log_ = aoi.TimestampLog.from_csv(args.log)
    dups = len(log_) - len(log_.deduplicated())
    s = aoi.summarize(log_.deduplicated())
    out = {
        "messages": s.messages,
        "duplicates": dups,
        "mean_aoi_ms": round(s.mean_ns / 1e6, 2),
        "median_aoi_ms": round(s.median_ns / 1e6, 2),
        "peak_aoi_ms": round(s.peak_ns / 1e6, 2),
        "min_aoi_ms": round(s.min_ns / 1e6, 2),
        "real_rate": s.real_rate,
    }
    print(json.dumps(out, indent=2))
    return 0


def cmd_pareto(args) -> int:
    pts = []
    for path in args.metrics:
        pts.extend(points_from_metrics(read_metrics_csv(path)))
    if not pts:
        print("no configuration carries both AoI and power", file=sys.stderr)
        return 1
    front = pareto_front(pts)
    write_front_csv(args.out, pts, front)
    for p in front:
        print(f"{p.label} aoi_ms={p.aoi:.2f} power_w={p.power:.4f}")
    return 0


def cmd_energy(args) -> int:
    window = tuple(args.window) if args.window else None
    e = ingest_energy_trace(args.trace, window)
    print(json.dumps({"energy_j": e.energy_j, "avg_power_w": e.avg_power_w,
                      "duration_s": e.duration_s}, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aoi-bench", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("broker", help="run the MQTT relay")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--tcp", type=int)
    p.add_argument("--tls", type=int)
    p.add_argument("--quic", type=int)
    p.add_argument("--cert", type=Path)
    p.add_argument("--key", type=Path)

    p = sub.add_parser("proxy", help="run the impairment proxy")
    p.add_argument("--listen", default="127.0.0.1:0")
    p.add_argument("--upstream", required=True)
    p.add_argument("--delay-ms", type=float, default=0.0)
    p.add_argument("--rate-bps", type=float)
    p.add_argument("--burst", type=int, default=1500)
    p.add_argument("--mode", choices=["stream", "datagram", "packet"], default="stream")

    p = sub.add_parser("subscribe", help="collect a timestamp log")
    _add_transport_args(p)
    p.add_argument("--topic", default="aoi/test")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--idle-timeout", type=float, default=10.0)

    p = sub.add_parser("publish", help="one-shot publish with phase timings")
    _add_transport_args(p)
    p.add_argument("--topic", default="aoi/test")
    p.add_argument("--qos", type=int, choices=[0, 1], default=1)
    p.add_argument("--payload", type=int, default=16)
    p.add_argument("--repeat", type=int, default=1)

    p = sub.add_parser("stream", help="pipelined periodic publisher")
    _add_transport_args(p)
    p.add_argument("--topic", default="aoi/test")
    p.add_argument("--qos", type=int, choices=[0, 1], default=1)
    p.add_argument("--payload", type=int, default=16)
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--window", type=float, required=True)
    p.add_argument("--queue", default="fifo-16")
    p.add_argument("--log", type=Path)

    p = sub.add_parser("run", help="run an experiment grid file")
    p.add_argument("grid", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--format", default="json,csv")
    p.add_argument("--dry-run", action="store_true", help="only list configuration labels")

    p = sub.add_parser("analyze", help="AoI metrics of a timestamp log CSV")
    p.add_argument("log", type=Path)

    p = sub.add_parser("pareto", help="Pareto front of metrics CSVs")
    p.add_argument("metrics", type=Path, nargs="+")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("energy", help="energy and average power of a trace")
    p.add_argument("trace", type=Path)
    p.add_argument("--window", type=float, nargs=2, metavar=("START_S", "END_S"))
    return ap


ASYNC = {"broker": cmd_broker, "proxy": cmd_proxy, "subscribe": cmd_subscribe,
         "publish": cmd_publish, "stream": cmd_stream, "run": cmd_run}
SYNC = {"analyze": cmd_analyze, "pareto": cmd_pareto, "energy": cmd_energy}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        if args.command in SYNC:
            return SYNC[args.command](args)
        return asyncio.run(ASYNC[args.command](args))
    except KeyboardInterrupt:
        return 130
    except (OSError, ValueError) as exc:
        print(f"aoi-bench {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
