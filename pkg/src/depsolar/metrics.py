"""Per-step metrics log and its CSV / JSON serialisations."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


class MetricsIOError(OSError):
    pass


@dataclass
class MetricsLog:
    records: list[dict[str, Any]] = field(default_factory=list)
    summary: dict[str, Any] = field(default_factory=dict)
    events: list[dict[str, Any]] = field(default_factory=list)
    columns: list[str] = field(default_factory=list)

    def column(self, name: str) -> list:
        return [r[name] for r in self.records]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        return repr(v)
    return str(v)


def _parse(s: str):
    if s == "":
        return None
    if s == "true":
        return True
    if s == "false":
        return False
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def records_to_csv(columns: list[str], records: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(columns)
    for r in records:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def csv_to_records(text: str) -> tuple[list[str], list[dict]]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        return [], []
    header = rows[0]
    return header, [dict(zip(header, (_parse(v) for v in row))) for row in rows[1:]]


def _events_path(path: Path) -> Path:
    return path.with_name(path.stem + ".events" + path.suffix)


def _summary_path(path: Path) -> Path:
    return path.with_name(path.stem + ".summary.json")


def _clean(obj):
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_clean(v) for v in obj]
    return obj


def export_metrics(log: MetricsLog, path, fmt: str = "csv") -> Path:
    """Write ``log`` to ``path``.

    CSV writes the per-step table to ``path`` plus ``<stem>.summary.json``
    and ``<stem>.events.csv`` next to it. JSON writes one object with
    ``records`` and ``summary``, and the events to ``<stem>.events.json``.
    """
    path = Path(path)
    columns = log.columns or (list(log.records[0]) if log.records else [])
    try:
        if fmt == "csv":
            path.write_bytes(records_to_csv(columns, log.records).encode("utf-8"))
            _summary_path(path).write_text(json.dumps(_clean(log.summary), indent=2, sort_keys=True))
            ev_cols = list(log.events[0]) if log.events else ["t", "node", "plant", "kind", "epoch", "detail"]
            _events_path(path).write_bytes(records_to_csv(ev_cols, log.events).encode("utf-8"))
        elif fmt == "json":
            doc = {"records": _clean(log.records), "summary": _clean(log.summary)}
            path.write_text(json.dumps(doc, indent=1))
            _events_path(path).write_text(json.dumps(_clean(log.events), indent=1))
        else:
            raise ValueError(f"unknown format {fmt!r}")
    except OSError as exc:
        raise MetricsIOError(f"cannot write metrics to {path}: {exc}") from exc
    return path


def import_metrics(path) -> MetricsLog:
    path = Path(path)
    try:
        if path.suffix == ".json":
            doc = json.loads(path.read_text())
            records = doc["records"]
            ev = _events_path(path)
            events = json.loads(ev.read_text()) if ev.exists() else []
            return MetricsLog(records, doc["summary"], events, list(records[0]) if records else [])
        columns, records = csv_to_records(path.read_bytes().decode("utf-8"))
        sp, ev = _summary_path(path), _events_path(path)
        summary = json.loads(sp.read_text()) if sp.exists() else {}
        events = csv_to_records(ev.read_bytes().decode("utf-8"))[1] if ev.exists() else []
        return MetricsLog(records, summary, events, columns)
    except OSError as exc:
        raise MetricsIOError(f"cannot read metrics from {path}: {exc}") from exc
