"""One experiment: broker, impairment proxy, subscriber and stream publisher."""

from __future__ import annotations

import asyncio
import logging
import tempfile
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from ..aoi import AoiDataError, DegenerateDomain, TimestampLog, generation_rate, summarize
from ..broker import Broker, serve_broker
from ..client import PublishRecord, StreamConfig, StreamResult, stream_run, write_publish_log
from ..netem import ImpairmentConfig, Proxy, ProxyMode, packet_mode_available, run_proxy
from ..pareto import percentile
from ..queue import FifoBounded, QueuePolicy
from ..transport import (
    DEFAULT_SEND_BUFFER_LIMIT,
    LabCertificates,
    ListenConfig,
    TransportConfig,
    TransportKind,
    generate_lab_certificates,
)
from .energy import ingest_energy_trace
from .subscriber import SubscribeConfig, subscribe_collect

log = logging.getLogger(__name__)

MAX_ATTEMPTS = 3
METRICS = ("mean_aoi_ms", "median_aoi_ms", "peak_aoi_ms", "min_aoi_ms", "real_rate",
           "generation_rate", "send_rate", "generated", "sent", "received", "dropped",
           "producer_block_ms", "writes_per_message", "avg_power_w")


class RepetitionFailed(RuntimeError):
    pass


def _fmt_num(x: float) -> str:
    return f"{x:g}"


@dataclass
class ExperimentConfig:
    """A stream configuration plus its impairment and repetition count.

    ``proxy_mode`` is ``auto`` (packet mode when TUN devices are usable,
    otherwise stream or datagram by transport), ``none`` or a
    :class:`~aoibench.netem.ProxyMode` value.  Without any impairment no
    proxy is started.
    """

    transport: TransportKind = TransportKind.PLAIN
    nominal_rate: float = 1.0
    window: float = 60.0
    queue: QueuePolicy = field(default_factory=lambda: FifoBounded(16))
    qos: int = 1
    payload_size: int = 16
    topic: str = "aoi/test"
    nagle_enabled: Optional[bool] = None
    segmentation_offload: Optional[bool] = None
    send_buffer_limit: Optional[int] = DEFAULT_SEND_BUFFER_LIMIT
    delay_ms: float = 0.0
    rate_limit_bps: Optional[float] = None
    repetitions: int = 1
    output_dir: Optional[Path] = None
    proxy_mode: str = "auto"
    budget_s: Optional[float] = None
    energy_dir: Optional[Path] = None
    label: Optional[str] = None

    def __post_init__(self) -> None:
        self.transport = TransportKind(self.transport)
        if isinstance(self.queue, str):
            self.queue = QueuePolicy.parse(self.queue)
        if self.transport is TransportKind.QUIC:
            self.nagle_enabled = None
        else:
            self.segmentation_offload = None
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.budget_s is not None and self.repetitions * self.window > self.budget_s:
            raise ValueError(f"{self.repetitions} x {self.window} s exceeds the "
                             f"{self.budget_s} s budget")
        if self.proxy_mode not in ("auto", "none", *(m.value for m in ProxyMode)):
            raise ValueError(f"unknown proxy mode {self.proxy_mode!r}")
        if self.label is None:
            self.label = self.default_label()

    def default_label(self) -> str:
        parts = [self.transport.value]
        if self.nagle_enabled is False:
            parts.append("nodelay")
        if self.segmentation_offload:
            parts.append("gso")
        parts += [self.queue.label, f"r{_fmt_num(self.nominal_rate)}", f"w{_fmt_num(self.window)}",
                  f"q{self.qos}"]
        if self.payload_size != 16:
            parts.append(f"p{self.payload_size}")
        if self.send_buffer_limit != DEFAULT_SEND_BUFFER_LIMIT:
            parts.append(f"sb{self.send_buffer_limit}")
        if self.delay_ms:
            parts.append(f"d{_fmt_num(self.delay_ms)}")
        if self.rate_limit_bps:
            parts.append(f"bw{_fmt_num(self.rate_limit_bps)}")
        return "-".join(parts)

    @property
    def impaired(self) -> bool:
        return bool(self.delay_ms) or self.rate_limit_bps is not None

    def resolved_proxy_mode(self) -> Optional[ProxyMode]:
        if self.proxy_mode == "none" or not self.impaired:
            return None
        if self.proxy_mode != "auto":
            return ProxyMode(self.proxy_mode)
        if packet_mode_available():
            return ProxyMode.PACKET
        return ProxyMode.DATAGRAM if self.transport is TransportKind.QUIC else ProxyMode.STREAM

    def describe(self) -> Dict[str, object]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (TransportKind, QueuePolicy)):
                v = str(v.value if isinstance(v, TransportKind) else v.label)
            elif isinstance(v, Path):
                v = str(v)
            out[f.name] = v
        return out


@dataclass
class RunMetrics:
    mean_aoi_ms: float
    median_aoi_ms: float
    peak_aoi_ms: float
    min_aoi_ms: float
    real_rate: float
    generation_rate: Optional[float]
    send_rate: Optional[float]
    generated: int
    sent: int
    received: int
    dropped: int
    producer_block_ms: float
    writes_per_message: Optional[float]
    avg_power_w: Optional[float] = None


@dataclass
class Repetition:
    index: int
    attempts: int
    metrics: Optional[RunMetrics]
    log: Optional[TimestampLog] = None
    publish_log: List[PublishRecord] = field(default_factory=list)
    error: Optional[str] = None
    proxy_mode: Optional[str] = None
    proxy_dropped: int = 0

    @property
    def ok(self) -> bool:
        return self.metrics is not None


@dataclass(frozen=True)
class Aggregate:
    median: float
    p25: float
    p75: float


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    repetitions: List[Repetition]

    @property
    def label(self) -> str:
        return self.config.label

    @property
    def status(self) -> str:
        return "ok" if all(r.ok for r in self.repetitions) else "failed"

    @property
    def attempts(self) -> int:
        return sum(r.attempts for r in self.repetitions)

    def values(self, metric: str) -> List[float]:
        out = []
        for r in self.repetitions:
            if r.ok:
                v = getattr(r.metrics, metric)
                if v is not None:
                    out.append(float(v))
        return out

    @property
    def aggregate(self) -> Dict[str, Aggregate]:
        """Median and quartiles of each metric across successful repetitions."""
        agg = {}
        for m in METRICS:
            vals = self.values(m)
            if vals:
                agg[m] = Aggregate(percentile(vals, 50), percentile(vals, 25), percentile(vals, 75))
        return agg


def compute_metrics(sub_log: TimestampLog, stream: StreamResult,
                    avg_power_w: Optional[float] = None) -> RunMetrics:
    log_ = sub_log.deduplicated()
    s = summarize(log_)
    gens = [r.gen_ns for r in stream.records]
    return RunMetrics(
        mean_aoi_ms=s.mean_ns / 1e6,
        median_aoi_ms=s.median_ns / 1e6,
        peak_aoi_ms=s.peak_ns / 1e6,
        min_aoi_ms=s.min_ns / 1e6,
        real_rate=s.real_rate,
        generation_rate=generation_rate(gens) if len(gens) >= 2 else None,
        send_rate=stream.send_rate,
        generated=stream.generated,
        sent=stream.sent,
        received=len(log_),
        dropped=stream.dropped,
        producer_block_ms=stream.producer_block_ms,
        writes_per_message=stream.writes_per_message,
        avg_power_w=avg_power_w,
    )


class _Bench:
    """Broker and proxy wiring for one repetition."""

    def __init__(self, cfg: ExperimentConfig, certs: LabCertificates):
        self.cfg = cfg
        self.certs = certs
        self.broker: Optional[Broker] = None
        self.proxy: Optional[Proxy] = None
        self.mode = cfg.resolved_proxy_mode()

    async def __aenter__(self) -> "_Bench":
        cfg, certs = self.cfg, self.certs
        kinds = {TransportKind.PLAIN, cfg.transport}
        try:
            host = "127.0.0.1"
            if self.mode is ProxyMode.PACKET:
                self.proxy = await run_proxy(self._impairment(("127.0.0.1", 0)))
                host = self.proxy.upstream_host
            self.broker = await serve_broker([
                ListenConfig(k, host=host, cert=certs.cert, key=certs.key) for k in sorted(kinds)])
            if self.mode in (ProxyMode.STREAM, ProxyMode.DATAGRAM):
                self.proxy = await run_proxy(
                    self._impairment((host, self.broker.ports[cfg.transport])))
            self.broker_host = host
        except BaseException:
            await self.__aexit__()
            raise
        return self

    def _impairment(self, upstream) -> ImpairmentConfig:
        return ImpairmentConfig(upstream=upstream, one_way_delay_ms=self.cfg.delay_ms,
                                rate_limit_bps=self.cfg.rate_limit_bps, mode=self.mode)

    def publisher_transport(self) -> TransportConfig:
        cfg = self.cfg
        port = self.broker.ports[cfg.transport]
        host = self.broker_host
        if self.mode is ProxyMode.PACKET:
            host = self.proxy.address[0]
        elif self.proxy is not None:
            host, port = self.proxy.address
        return TransportConfig(cfg.transport, host, port, nagle_enabled=cfg.nagle_enabled,
                               segmentation_offload=cfg.segmentation_offload,
                               tls_trust="trust-root", ca_file=self.certs.ca_cert,
                               server_name="localhost", send_buffer_limit=cfg.send_buffer_limit)

    def subscriber_transport(self) -> TransportConfig:
        return TransportConfig(TransportKind.PLAIN, self.broker_host,
                               self.broker.ports[TransportKind.PLAIN], nagle_enabled=False)

    async def __aexit__(self, *exc) -> None:
        if self.broker is not None:
            await self.broker.close()
        if self.proxy is not None:
            await self.proxy.close()


async def run_repetition(cfg: ExperimentConfig, certs: LabCertificates,
                         index: int = 0) -> Repetition:
    """One attempt at one repetition; raises :class:`RepetitionFailed`."""
    async with _Bench(cfg, certs) as bench:
        stop, ready = asyncio.Event(), asyncio.Event()
        linger = max(0.5, 4 * cfg.delay_ms / 1000 + 0.5)
        sub = asyncio.create_task(subscribe_collect(
            SubscribeConfig(bench.subscriber_transport(), cfg.topic, linger_s=linger), stop, ready))
        try:
            await asyncio.wait_for(asyncio.shield(ready.wait()), 10)
        except asyncio.TimeoutError:
            sub.cancel()
            raise RepetitionFailed("subscriber did not become ready")
        stream = await stream_run(StreamConfig(
            bench.publisher_transport(), cfg.nominal_rate, cfg.window, topic=cfg.topic,
            qos=cfg.qos, payload_size=cfg.payload_size, queue=cfg.queue))
        stop.set()
        collected = await sub
        proxy_dropped = bench.proxy.dropped if bench.proxy else 0
    if stream.failed:
        raise RepetitionFailed(stream.error)
    sub_log = collected.log
    power = None
    if cfg.energy_dir is not None:
        trace = Path(cfg.energy_dir) / f"{cfg.label}_rep{index}.csv"
        if trace.exists():
            power = ingest_energy_trace(trace).avg_power_w
    try:
        metrics = compute_metrics(sub_log, stream, power)
    except (AoiDataError, DegenerateDomain, ValueError) as exc:
        raise RepetitionFailed(f"no usable AoI log: {exc}") from exc
    return Repetition(index, 1, metrics, sub_log, stream.records,
                      proxy_mode=bench.mode.value if bench.mode else None,
                      proxy_dropped=proxy_dropped)


async def run_experiment(cfg: ExperimentConfig, certs: Optional[LabCertificates] = None,
                         max_attempts: int = MAX_ATTEMPTS) -> ExperimentResult:
    """Run every repetition, retrying a failed one whole up to ``max_attempts``.

    A repetition that keeps failing is kept as a failed entry; it does not
    abort the experiment.
    """
    tmp = None
    if certs is None:
        tmp = tempfile.TemporaryDirectory(prefix="aoibench-certs-")
        certs = generate_lab_certificates(tmp.name)
    reps = []
    try:
        for i in range(cfg.repetitions):
            error = None
            for attempt in range(1, max_attempts + 1):
                try:
                    rep = await run_repetition(cfg, certs, i)
                except (RepetitionFailed, ConnectionError, OSError, asyncio.TimeoutError) as exc:
                    error = f"{type(exc).__name__}: {exc}"
                    log.warning("%s rep %d attempt %d failed: %s", cfg.label, i, attempt, error)
                    continue
                rep.attempts = attempt
                reps.append(rep)
                break
            else:
                reps.append(Repetition(i, max_attempts, None, error=error))
            if cfg.output_dir is not None and reps[-1].ok:
                save_repetition_logs(Path(cfg.output_dir), cfg.label, reps[-1])
    finally:
        if tmp is not None:
            tmp.cleanup()
    return ExperimentResult(cfg, reps)


def save_repetition_logs(out_dir: Path, label: str, rep: Repetition) -> None:
    d = out_dir / "logs" / label
    d.mkdir(parents=True, exist_ok=True)
    rep.log.to_csv(d / f"rep{rep.index}_sub.csv")
    write_publish_log(d / f"rep{rep.index}_pub.csv", rep.publish_log)


async def run_grid(configs: Sequence[ExperimentConfig]) -> List[ExperimentResult]:
    with tempfile.TemporaryDirectory(prefix="aoibench-certs-") as tmp:
        certs = generate_lab_certificates(tmp)
        return [await run_experiment(c, certs) for c in configs]
