"""Metrics output: a ``key=value`` report plus CSV series for plotting.

Nothing here depends on wall time, so identical runs give identical files.
"""

from __future__ import annotations

import csv
from collections import Counter
from pathlib import Path

from music.analytics.io import format_timestamp
from music.sim.fleet import FleetReport

REPORT_FILE = "report.txt"


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def report_lines(rep: FleetReport) -> list[str]:
    sc = rep.scenario
    out: list[tuple[str, object]] = [
        ("scenario", sc.name),
        ("seed", sc.seed),
        ("policy", sc.policy),
        ("start", format_timestamp(sc.start)),
        ("duration_s", float(sc.duration_s)),
        ("tick_s", float(sc.tick_s)),
        ("nodes", len(rep.nodes)),
        ("ticks", rep.ticks),
        ("policy_errors", rep.policy_errors),
    ]
    for name in sorted(sc.sensor_table):
        out.append((f"record_bytes.{name}", sc.sensor_table[name].bytes_per_sample))

    totals: Counter = Counter()
    for n in rep.nodes:
        p = f"node.{n.imei}"
        tx = sum(n.bytes_tx.values())
        vals = {
            "bytes_tx": tx,
            "bytes_rx": n.bytes_rx,
            "data_bytes": n.data_bytes,
            "keepalive_bytes": n.bytes_tx.get("keepalive", 0),
            "samples_generated": n.samples_generated,
            "samples_delivered": n.samples_delivered,
            "samples_buffered": n.samples_buffered,
            "samples_received": n.samples_received,
            "sessions_completed": n.sessions_completed,
            "long_sessions": n.long_sessions,
            "ignored_starts": n.ignored_starts,
            "connects": n.connects,
        }
        for kind, count in n.messages.items():
            vals[f"messages.{kind}"] = count
        for kind, count in n.commands_rx.items():
            vals[f"commands_rx.{kind}"] = count
        for key in sorted(vals):
            out.append((f"{p}.{key}", vals[key]))
            totals[key] += vals[key]
        out.append((f"{p}.battery_end", float(n.battery_end)))
        out.append((f"{p}.died_at", "none" if n.died_at is None else format_timestamp(n.died_at)))
    for key in sorted(totals):
        out.append((f"total.{key}", totals[key]))
    out.append(("total.data_mb", totals["data_bytes"] / 1e6))

    by_type = Counter(c[2] for c in rep.commands)
    for kind in sorted(by_type):
        out.append((f"commands.{kind}", by_type[kind]))
    out.append(("commands.total", len(rep.commands)))
    out.append(("commands.suppressed", rep.suppressed))
    out.append(("transport.up_bytes", rep.transport_up_bytes))
    out.append(("transport.down_bytes", rep.transport_down_bytes))
    if rep.active:
        per_tick = Counter(row[0] for row in rep.active if row[2])
        ticks = sorted({row[0] for row in rep.active})
        out.append(("active.max_concurrent", max((per_tick[t] for t in ticks), default=0)))
        out.append(("active.min_concurrent", min((per_tick[t] for t in ticks), default=0)))
    if rep.loocv:
        out.append(("loocv.last_rmse", rep.loocv[-1][1]))
    if rep.hotspot_flags:
        flagged = sorted({seg for _, seg, f in rep.hotspot_flags if f})
        out.append(("hotspot.windows", len({w for w, _, _ in rep.hotspot_flags})))
        out.append(("hotspot.flagged_segments", ",".join(flagged) or "none"))
    return [f"{k}={_fmt(v)}" for k, v in out]


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_metrics(rep: FleetReport, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = out / REPORT_FILE
    report.write_text("\n".join(report_lines(rep)) + "\n", encoding="utf-8")
    _write_csv(out / "active_timeline.csv",
               ["time", "imei", "active", "latitude", "longitude", "battery", "session"],
               ((format_timestamp(t), i, int(a), f"{lat:.7f}", f"{lon:.7f}", b, s)
                for t, i, a, lat, lon, b, s in rep.active))
    _write_csv(out / "commands.csv", ["time", "imei", "command", "detail"],
               ((format_timestamp(t), i, c, d) for t, i, c, d in rep.commands))
    _write_csv(out / "loocv.csv", ["time", "loocv_rmse"],
               ((format_timestamp(t), f"{v:.6f}") for t, v in rep.loocv))
    _write_csv(out / "hotspot_flags.csv", ["window_start", "segment_id", "flag"],
               ((format_timestamp(w), s, int(f)) for w, s, f in rep.hotspot_flags))
    _write_csv(out / "nodes.csv",
               ["imei", "bytes_tx", "bytes_rx", "data_bytes", "samples_generated", "samples_delivered",
                "samples_buffered", "battery_end"],
               ((n.imei, sum(n.bytes_tx.values()), n.bytes_rx, n.data_bytes, n.samples_generated,
                 n.samples_delivered, n.samples_buffered, f"{n.battery_end:.6f}") for n in rep.nodes))
    return report


def read_report(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line and "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out
