import asyncio
import math
import statistics
import struct

import pytest
from hypothesis import given
from hypothesis import strategies as st

from aoibench.broker import serve_broker
from aoibench.client import (
    PublishRecord,
    SimpleConfig,
    StreamConfig,
    decode_payload,
    encode_payload,
    message_count,
    packet_id_for,
    publish_log_string,
    read_publish_log,
    simple_publish,
    stream_run,
    write_publish_log,
)
from aoibench.codec import ConnAck, PacketReader, encode_packet
from aoibench.netem import ImpairmentConfig, run_proxy
from aoibench.queue import DropHead, FifoBounded, PushOutcome
from aoibench.transport import ListenConfig, TransportConfig, TransportKind
from conftest import run


@pytest.mark.parametrize("seq, pid", [(0, 1), (65534, 65535), (65535, 1), (131070, 1), (70000, 4466)])
def test_packet_id_for(seq, pid):
    assert packet_id_for(seq) == pid


@given(st.integers(0, 10**12))
def test_packet_id_range(seq):
    assert 1 <= packet_id_for(seq) <= 65535
    assert packet_id_for(seq + 65535) == packet_id_for(seq)


def test_payload_layout_bit_exact():
    p = encode_payload(0x0102030405060708, 0x1112131415161718, 24)
    assert p == bytes(range(1, 9)) + bytes(range(0x11, 0x19)) + bytes(8)
    assert decode_payload(p) == (0x0102030405060708, 0x1112131415161718)
    with pytest.raises(ValueError):
        encode_payload(1, 1, 15)
    with pytest.raises(ValueError):
        decode_payload(b"short")


@pytest.mark.parametrize("rate, window, n", [(1, 5, 5), (0.1, 10, 1), (0.3, 10, 3), (3, 0.5, 2),
                                             (1000, 10, 10000), (7.5, 2, 15)])
def test_message_count(rate, window, n):
    assert message_count(rate, window) == n


def test_stream_config_validation():
    tc = TransportConfig("tcp", "127.0.0.1", 1)
    for bad in (dict(nominal_rate=0, window=1), dict(nominal_rate=1, window=0),
                dict(nominal_rate=1, window=1, qos=2), dict(nominal_rate=1, window=1, payload_size=8)):
        with pytest.raises(ValueError):
            StreamConfig(tc, **bad)
    cfg = StreamConfig(tc, nominal_rate=4, window=3)
    assert cfg.total_messages == 12
    assert cfg.period_ns == 250_000_000
    assert cfg.watchdog >= 5 * 3


def test_publish_log_roundtrip(tmp_path):
    recs = [PublishRecord(0, 10, PushOutcome.STORED, 20, 30),
            PublishRecord(1, 11, PushOutcome.REPLACED, None, None),
            PublishRecord(2, 12, PushOutcome.BLOCKED_THEN_STORED, 25, None)]
    path = tmp_path / "pub.csv"
    write_publish_log(path, recs)
    assert read_publish_log(path) == recs
    text = publish_log_string(recs)
    assert text.splitlines()[0] == "seq,gen_ns,send_ns,ack_ns,outcome"


async def _broker(certs):
    return await serve_broker([ListenConfig(k, cert=certs.cert, key=certs.key) for k in TransportKind])


def _tc(kind, port, certs, host="127.0.0.1", **kw):
    return TransportConfig(kind, host, port, tls_trust="trust-root", ca_file=certs.ca_cert,
                           server_name="localhost", **kw)


@pytest.mark.parametrize("kind", list(TransportKind))
@pytest.mark.parametrize("qos", [0, 1])
def test_simple_publish(kind, qos, certs):
    async def go():
        async with await _broker(certs) as b:
            return await simple_publish(SimpleConfig(_tc(kind, b.ports[TransportKind(kind)], certs), qos=qos))
    t = run(go())
    assert 0 < t.connect_ms <= t.total_ms
    assert 0 <= t.publish_ms <= t.total_ms


def test_simple_publish_times_out_without_puback():
    async def silent(reader, writer):
        r = PacketReader()
        while data := await reader.read(4096):
            for pkt in r.feed(data):
                if type(pkt).__name__ == "Connect":
                    writer.write(encode_packet(ConnAck(0)))
        writer.close()

    async def go():
        srv = await asyncio.start_server(silent, "127.0.0.1", 0)
        port = srv.sockets[0].getsockname()[1]
        try:
            cfg = SimpleConfig(TransportConfig("tcp", "127.0.0.1", port), qos=1, timeout_s=0.3)
            with pytest.raises(asyncio.TimeoutError):
                await simple_publish(cfg)
            # qos 0 needs no ack and completes
            cfg.qos = 0
            await simple_publish(cfg)
        finally:
            srv.close()
    run(go())


def test_tls_request_costs_more_than_plain(certs):
    async def go():
        async with await _broker(certs) as b:
            out = {}
            for kind in ("tcp", "tls"):
                cfg = SimpleConfig(_tc(kind, b.ports[TransportKind(kind)], certs))
                out[kind] = [(await simple_publish(cfg)).total_ms for _ in range(30)]
            return out
    t = run(go())
    assert statistics.mean(t["tls"]) > statistics.mean(t["tcp"])


@pytest.mark.parametrize("kind", list(TransportKind))
def test_underload_run(kind, certs):
    async def go():
        async with await _broker(certs) as b:
            cfg = StreamConfig(_tc(kind, b.ports[TransportKind(kind)], certs), nominal_rate=20,
                               window=1, queue=FifoBounded(16))
            return await stream_run(cfg)
    res = run(go())
    assert not res.failed, res.error
    assert res.generated == res.sent == res.acked == 20
    assert res.producer_block_ms == 0 and res.dropped == 0
    recs = res.records
    assert [r.seq for r in recs] == list(range(20))
    for r in recs:
        assert r.gen_ns <= r.send_ns <= r.ack_ns
    gaps = [b.gen_ns - a.gen_ns for a, b in zip(recs, recs[1:])]
    assert statistics.mean(gaps) == pytest.approx(50e6, rel=0.01)


def test_rate_one_five_records(certs):
    async def go():
        async with await _broker(certs) as b:
            cfg = StreamConfig(_tc("tcp", b.ports[TransportKind.PLAIN], certs), nominal_rate=1,
                               window=5, queue=FifoBounded(16))
            return await stream_run(cfg)
    res = run(go())
    assert len(res.records) == 5 and res.acked == 5
    assert res.producer_block_ms == 0


def test_qos0_run_has_no_acks(certs):
    async def go():
        async with await _broker(certs) as b:
            cfg = StreamConfig(_tc("tcp", b.ports[TransportKind.PLAIN], certs), nominal_rate=100,
                               window=0.2, qos=0)
            return await stream_run(cfg)
    res = run(go())
    assert not res.failed
    assert res.sent == 20 and res.acked == 0


async def _overload(certs, queue, rate=2000, window=1.0, bps=1_600_000, payload=200):
    # ~430 kB offered against ~200 kB/s, well beyond what proxy and kernel buffers hold
    async with await _broker(certs) as b:
        port = b.ports[TransportKind.PLAIN]
        async with await run_proxy(ImpairmentConfig(upstream=("127.0.0.1", port),
                                                    rate_limit_bps=bps, mode="stream")) as p:
            host, pport = p.address
            cfg = StreamConfig(_tc("tcp", pport, certs, host=host, send_buffer_limit=2048),
                               nominal_rate=rate, window=window, queue=queue,
                               payload_size=payload)
            return await stream_run(cfg)


def test_overload_fifo_one_pushes_back(certs):
    # ~500 kB offered in 1 s against 100 kB/s: the producer has to wait
    res = run(_overload(certs, FifoBounded(1), rate=1000, bps=800_000, payload=500))
    assert not res.failed, res.error
    assert res.generated == res.acked == 1000
    assert res.dropped == 0
    assert res.producer_block_ms > 0
    assert res.send_rate < 1000 * 0.9


def test_overload_drop_head_never_blocks(certs):
    res = run(_overload(certs, DropHead()))
    assert not res.failed, res.error
    assert res.generated == 2000
    assert res.dropped > 0
    assert res.producer_block_ms == 0
    assert res.generation_rate == pytest.approx(2000, rel=0.01)
    assert res.acked == res.sent == res.generated - res.dropped


def test_connection_loss_marks_run_failed(certs):
    async def go():
        b = await _broker(certs)
        port = b.ports[TransportKind.PLAIN]
        cfg = StreamConfig(_tc("tcp", port, certs), nominal_rate=50, window=2)
        task = asyncio.create_task(stream_run(cfg))
        await asyncio.sleep(0.5)
        await b.close()
        return await task
    res = run(go())
    assert res.failed and res.error
    assert 0 < len(res.records) < 100


def test_unreachable_broker_is_a_failed_result():
    import socket
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    res = run(stream_run(StreamConfig(TransportConfig("tcp", "127.0.0.1", port), 1, 1)))
    assert res.failed and res.records == []
