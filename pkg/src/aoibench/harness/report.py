"""Deterministic JSON/CSV reports for experiment results."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from ..pareto import Band, ParetoPoint, write_front_csv
from .experiment import METRICS, ExperimentResult, save_repetition_logs

REPORT_JSON = "report.json"
METRICS_CSV = "metrics.csv"
FRONT_CSV = "front.csv"
METRICS_CSV_HEADER = ["label", "status", "attempts"] + [
    f"{m}{suffix}" for m in METRICS for suffix in ("", "_p25", "_p75")]


def _num(v):
    if v is None:
        return None
    return v if isinstance(v, int) else float(v)


def result_to_dict(res: ExperimentResult) -> Dict[str, object]:
    agg = res.aggregate
    return {
        "status": res.status,
        "attempts": res.attempts,
        "config": res.config.describe(),
        "aggregate": {m: {"median": a.median, "p25": a.p25, "p75": a.p75}
                      for m, a in agg.items()},
        "repetitions": [
            {
                "index": r.index,
                "status": "ok" if r.ok else "failed",
                "attempts": r.attempts,
                "error": r.error,
                "proxy_mode": r.proxy_mode,
                "proxy_dropped": r.proxy_dropped,
                "metrics": None if r.metrics is None else {
                    m: _num(getattr(r.metrics, m)) for m in METRICS},
            }
            for r in res.repetitions
        ],
    }


def report_json(results: Sequence[ExperimentResult]) -> str:
    body = {res.label: result_to_dict(res) for res in results}
    return json.dumps(body, indent=2, allow_nan=False) + "\n"


def _cell(v: Optional[float]) -> str:
    return "" if v is None else repr(float(v))


def metrics_rows(results: Sequence[ExperimentResult]) -> List[List[str]]:
    rows = []
    for res in results:
        agg = res.aggregate
        row = [res.label, res.status, str(res.attempts)]
        for m in METRICS:
            a = agg.get(m)
            row += ["", "", ""] if a is None else [_cell(a.median), _cell(a.p25), _cell(a.p75)]
        rows.append(row)
    return rows


def pareto_points(results: Sequence[ExperimentResult]) -> List[ParetoPoint]:
    """Points of successful results that carry both median AoI and power."""
    pts = []
    for res in results:
        agg = res.aggregate
        a, p = agg.get("median_aoi_ms"), agg.get("avg_power_w")
        if res.status != "ok" or a is None or p is None:
            continue
        pts.append(ParetoPoint(res.label, a.median, p.median, Band(a.p25, a.p75, p.p25, p.p75)))
    return pts


def emit_report(results: Sequence[ExperimentResult], out_dir,
                formats: Sequence[str] = ("json", "csv")) -> List[Path]:
    """Write ``report.json`` and/or ``metrics.csv`` (plus ``front.csv`` when
    any configuration has power data) and the raw logs under ``logs/``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for f in formats:
        if f not in ("json", "csv"):
            raise ValueError(f"unknown report format {f!r}")
    if "json" in formats:
        p = out / REPORT_JSON
        p.write_text(report_json(results), encoding="utf-8")
        written.append(p)
    if "csv" in formats:
        p = out / METRICS_CSV
        with open(p, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRICS_CSV_HEADER)
            w.writerows(metrics_rows(results))
        written.append(p)
        pts = pareto_points(results)
        if pts:
            p = out / FRONT_CSV
            write_front_csv(p, pts)
            written.append(p)
    for res in results:
        for rep in res.repetitions:
            if rep.ok and rep.log is not None:
                save_repetition_logs(out, res.label, rep)
    return written


def read_metrics_csv(path) -> List[Dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != METRICS_CSV_HEADER:
            raise ValueError(f"unexpected metrics CSV header in {path}")
        return list(reader)


def points_from_metrics(rows: Sequence[Dict[str, str]]) -> List[ParetoPoint]:
    pts = []
    for r in rows:
        if r["status"] != "ok" or not r["median_aoi_ms"] or not r["avg_power_w"]:
            continue
        band = Band(float(r["median_aoi_ms_p25"]), float(r["median_aoi_ms_p75"]),
                    float(r["avg_power_w_p25"]), float(r["avg_power_w_p75"]))
        pts.append(ParetoPoint(r["label"], float(r["median_aoi_ms"]), float(r["avg_power_w"]), band))
    return pts
