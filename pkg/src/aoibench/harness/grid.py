"""Declarative experiment grids.

A grid file is line oriented.  ``key = v1, v2, ...`` lines define axes;
the Cartesian product of all axes, in file order, gives the experiments.
``exclude = key=value key=value`` removes every row matching all of the
listed pairs and ``include = key=value ...`` appends one extra row (unlisted
keys take the first value of their axis).  ``#`` starts a comment.

Keys: transport (tcp|tls|quic), queue (fifo-N|fifo-inf|drop), rate, window,
qos, payload, nagle (on|off), gso (on|off), delay_ms, rate_limit_bps (or
``none``), send_buffer (bytes or ``none``), repetitions,
proxy (auto|none|stream|datagram|packet), budget_s.
"""

from __future__ import annotations

import itertools
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .experiment import ExperimentConfig

_BOOL = {"on": True, "true": True, "yes": True, "1": True,
         "off": False, "false": False, "no": False, "0": False}


def _num(v: str) -> float:
    x = float(v)
    return int(x) if x.is_integer() else x


def _opt_num(v: str) -> Optional[float]:
    return None if v.lower() in ("none", "off", "") else _num(v)


def _opt_int(v: str) -> Optional[int]:
    return None if v.lower() in ("none", "off", "") else int(v)


def _flag(v: str) -> bool:
    try:
        return _BOOL[v.lower()]
    except KeyError:
        raise ValueError(f"expected on/off, got {v!r}") from None


# grid key -> (ExperimentConfig field, parser)
KEYS = {
    "transport": ("transport", str.lower),
    "queue": ("queue", str.lower),
    "rate": ("nominal_rate", _num),
    "window": ("window", _num),
    "qos": ("qos", int),
    "payload": ("payload_size", int),
    "nagle": ("nagle_enabled", _flag),
    "gso": ("segmentation_offload", _flag),
    "delay_ms": ("delay_ms", _num),
    "rate_limit_bps": ("rate_limit_bps", _opt_num),
    "send_buffer": ("send_buffer_limit", _opt_int),
    "repetitions": ("repetitions", int),
    "proxy": ("proxy_mode", str.lower),
    "budget_s": ("budget_s", _num),
}


class GridError(ValueError):
    pass


def _pairs(text: str, lineno: int) -> Dict[str, str]:
    out = {}
    for tok in text.split():
        k, sep, v = tok.partition("=")
        if not sep or k not in KEYS:
            raise GridError(f"line {lineno}: bad selector {tok!r}")
        out[k] = v
    if not out:
        raise GridError(f"line {lineno}: empty selector")
    return out


def parse_grid(text: str) -> Tuple[Dict[str, List[str]], List[Dict[str, str]], List[Dict[str, str]]]:
    axes: Dict[str, List[str]] = {}
    includes, excludes = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip().lower(), value.strip()
        if not sep:
            raise GridError(f"line {lineno}: expected key = value")
        if key == "include":
            includes.append(_pairs(value, lineno))
        elif key == "exclude":
            excludes.append(_pairs(value, lineno))
        elif key in KEYS:
            if key in axes:
                raise GridError(f"line {lineno}: {key} given twice")
            vals = [v.strip() for v in value.split(",") if v.strip()]
            if not vals:
                raise GridError(f"line {lineno}: {key} has no values")
            axes[key] = vals
        else:
            raise GridError(f"line {lineno}: unknown key {key!r}")
    return axes, includes, excludes


def _matches(row: Dict[str, str], sel: Dict[str, str]) -> bool:
    return all(k in row and row[k].lower() == v.lower() for k, v in sel.items())


def _config(row: Dict[str, str], output_dir) -> ExperimentConfig:
    kwargs = {}
    for k, v in row.items():
        name, conv = KEYS[k]
        kwargs[name] = conv(v)
    return ExperimentConfig(output_dir=output_dir, **kwargs)


def expand_grid(text: str, output_dir=None) -> List[ExperimentConfig]:
    """Configurations of a grid file, with duplicate labels collapsed.

    Rows that only differ in a switch that does not apply (Nagle on QUIC,
    offload on TCP) produce the same label and are kept once.
    """
    axes, includes, excludes = parse_grid(text)
    keys = list(axes)
    rows = [dict(zip(keys, combo)) for combo in itertools.product(*axes.values())] if keys else []
    rows = [r for r in rows if not any(_matches(r, e) for e in excludes)]
    for inc in includes:
        row = {k: v[0] for k, v in axes.items()}
        row.update(inc)
        rows.append(row)
    out, seen = [], set()
    for row in rows:
        try:
            cfg = _config(row, output_dir)
        except ValueError as exc:
            raise GridError(f"invalid row {row}: {exc}") from exc
        if cfg.label not in seen:
            seen.add(cfg.label)
            out.append(cfg)
    return out


def load_grid(path, output_dir=None) -> List[ExperimentConfig]:
    return expand_grid(Path(path).read_text(encoding="utf-8"), output_dir)
