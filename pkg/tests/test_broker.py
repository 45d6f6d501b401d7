import asyncio

import pytest

from aoibench.broker import serve_broker
from aoibench.client import PacketChannel, mqtt_connect
from aoibench.codec import (
    ConnAck,
    Connect,
    PubAck,
    Publish,
    SubAck,
    Subscribe,
    encode_packet,
)
from aoibench.transport import ListenConfig, TransportConfig, TransportKind, connect
from conftest import run


async def start(certs):
    return await serve_broker([ListenConfig(k, cert=certs.cert, key=certs.key) for k in TransportKind])


async def client(broker, kind, certs, cid):
    kind = TransportKind(kind)
    trust = dict(tls_trust="trust-root", ca_file=certs.ca_cert) if kind is not TransportKind.PLAIN else {}
    conn = await connect(TransportConfig(kind, "127.0.0.1", broker.ports[kind],
                                         server_name="localhost", **trust))
    chan = await mqtt_connect(conn, cid, 5)
    return conn, chan


async def subscribe(conn, chan, topic, pid=1):
    await conn.send(encode_packet(Subscribe(pid, topic, 0)))
    ack = await chan.expect(SubAck, 5)
    assert ack.packet_id == pid and ack.granted_qos == 0


@pytest.mark.parametrize("pub_kind", list(TransportKind))
def test_forward_to_subscriber(pub_kind, certs):
    async def go():
        async with await start(certs) as b:
            sc, sch = await client(b, "tcp", certs, "sub")
            await subscribe(sc, sch, "t")
            assert b.subscribers("t") == 1
            pc, pch = await client(b, pub_kind, certs, "pub")
            await pc.send(encode_packet(Publish("t", b"x", qos=1, packet_id=42)))
            ack = await pch.expect(PubAck, 5)
            got = await sch.expect(Publish, 5)
            for c in (pc, sc):
                await c.close()
            return ack, got
    ack, got = run(go())
    assert ack.packet_id == 42
    assert (got.topic, got.payload, got.qos) == ("t", b"x", 0)


def test_publish_without_subscribers_is_acked(certs):
    async def go():
        async with await start(certs) as b:
            pc, pch = await client(b, "tcp", certs, "pub")
            await pc.send(encode_packet(Publish("nobody", b"x", qos=1, packet_id=7)))
            ack = await pch.expect(PubAck, 5)
            await pc.close()
            return ack.packet_id, b.stats.forwarded
    assert run(go()) == (7, 0)


def test_exact_topic_match_only(certs):
    async def go():
        async with await start(certs) as b:
            sc, sch = await client(b, "tcp", certs, "sub")
            await subscribe(sc, sch, "a/b")
            pc, pch = await client(b, "tcp", certs, "pub")
            for topic in ("a/b/c", "a", "a/b"):
                await pc.send(encode_packet(Publish(topic, topic.encode(), qos=0)))
            got = await sch.expect(Publish, 5)
            await pc.close()
            await sc.close()
            return got.payload
    assert run(go()) == b"a/b"


def test_order_preserved_and_acks_match(certs):
    async def go():
        async with await start(certs) as b:
            sc, sch = await client(b, "tcp", certs, "sub")
            await subscribe(sc, sch, "t")
            pc, pch = await client(b, "quic", certs, "pub")
            n = 500
            data = b"".join(encode_packet(Publish("t", i.to_bytes(4, "big"), qos=1, packet_id=i + 1))
                            for i in range(n))
            await pc.send(data)
            acks = [(await pch.expect(PubAck, 5)).packet_id for _ in range(n)]
            got = [int.from_bytes((await sch.expect(Publish, 5)).payload, "big") for _ in range(n)]
            await pc.close()
            await sc.close()
            return acks, got
    acks, got = run(go())
    assert acks == list(range(1, 501))
    assert got == list(range(500))


def test_malformed_first_packet_closes(certs):
    async def go():
        async with await start(certs) as b:
            conn = await connect(TransportConfig("tcp", "127.0.0.1", b.ports[TransportKind.PLAIN]))
            await conn.send(encode_packet(Publish("t", b"x")))
            assert await asyncio.wait_for(conn.recv(), 5) == b""
            await conn.close()
            conn = await connect(TransportConfig("tcp", "127.0.0.1", b.ports[TransportKind.PLAIN]))
            await conn.send(b"\xff\xff\xff\xff\xff")
            assert await asyncio.wait_for(conn.recv(), 5) == b""
            await conn.close()
            return b.stats.rejected
    assert run(go()) == 2


def test_subscriber_failure_does_not_affect_others(certs):
    async def go():
        async with await start(certs) as b:
            s1, c1 = await client(b, "tcp", certs, "s1")
            s2, c2 = await client(b, "tcp", certs, "s2")
            await subscribe(s1, c1, "t")
            await subscribe(s2, c2, "t")
            await s1.close()
            pc, _ = await client(b, "tcp", certs, "pub")
            for i in range(5):
                await pc.send(encode_packet(Publish("t", bytes([i]))))
            got = [(await c2.expect(Publish, 5)).payload for _ in range(5)]
            await pc.close()
            await s2.close()
            return got
    assert run(go()) == [bytes([i]) for i in range(5)]


def test_qos2_subscription_is_rejected():
    async def go():
        async with await serve_broker([ListenConfig("tcp")]) as b:
            conn, _ = await client(b, "tcp", None, "sub")
            # hand-built: the encoder refuses qos 2
            await conn.send(bytes([0x82, 6, 0, 3, 0, 1]) + b"t" + bytes([2]))
            assert await asyncio.wait_for(conn.recv(), 5) == b""
            await conn.close()
            return b.stats.rejected, b.subscribers("t")
    assert run(go()) == (1, 0)


def test_disconnect_deregisters(certs):
    async def go():
        async with await start(certs) as b:
            sc, sch = await client(b, "tcp", certs, "sub")
            await subscribe(sc, sch, "t", pid=4)
            assert b.subscribers("t") == 1
            await sc.close()
            for _ in range(100):
                if b.subscribers("t") == 0:
                    break
                await asyncio.sleep(0.01)
            return b.subscribers("t")
    assert run(go()) == 0


def test_connack_first(certs):
    async def go():
        async with await start(certs) as b:
            conn = await connect(TransportConfig("tcp", "127.0.0.1", b.ports[TransportKind.PLAIN]))
            chan = PacketChannel(conn)
            await conn.send(encode_packet(Connect("c")))
            ack = await chan.expect(ConnAck, 5)
            await conn.close()
            return ack.return_code
    assert run(go()) == 0
