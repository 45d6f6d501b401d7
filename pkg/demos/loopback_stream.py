"""Publish a short periodic stream through an in-process broker and a 20 ms
delay proxy, once per transport, and print the resulting AoI.

Run with ``python demos/loopback_stream.py``; takes about ten seconds.
"""

import asyncio
import tempfile

from aoibench.harness import ExperimentConfig, run_experiment
from aoibench.transport import generate_lab_certificates


async def main():
    with tempfile.TemporaryDirectory() as tmp:
        certs = generate_lab_certificates(tmp)
        for transport in ("tcp", "tls", "quic"):
            cfg = ExperimentConfig(transport=transport, nominal_rate=20, window=2, delay_ms=20)
            res = await run_experiment(cfg, certs)
            rep = res.repetitions[0]
            if not rep.ok:
                print(f"{res.label}: failed: {rep.error}")
                continue
            m = rep.metrics
            print(f"{res.label:40s} mean {m.mean_aoi_ms:7.2f} ms  median {m.median_aoi_ms:7.2f} ms  "
                  f"peak {m.peak_aoi_ms:7.2f} ms  received {m.received}")


if __name__ == "__main__":
    asyncio.run(main())
