"""File formats: detection streams (JSON lines / CSV), truth sidecars, traces and tracks."""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Iterable

from .kinematics import Detection, Platform

CSV_COLUMNS = ("t", "r", "rdot", "theta", "px", "py", "pz", "pvx", "pvy", "is_miss")


class StreamFormatError(ValueError):
    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.lineno = lineno


def dumps_json(obj) -> str:
    """Canonical JSON (sorted keys, repr floats) so reruns are byte-identical."""
    return json.dumps(obj, sort_keys=True, allow_nan=False)


def detections_to_jsonl(dets: Iterable[Detection]) -> str:
    return "".join(dumps_json(d.to_dict()) + "\n" for d in dets)


def detections_to_csv(dets: Iterable[Detection]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for d in dets:
        p = d.platform
        vals = ["", "", ""] if d.is_miss else [repr(d.r), repr(d.rdot), repr(d.theta)]
        w.writerow([d.t, *vals, repr(p.x), repr(p.y), repr(p.z), repr(p.vx), repr(p.vy), int(d.is_miss)])
    return buf.getvalue()


def parse_detections_jsonl(text: str, path="<stream>") -> list[Detection]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(Detection.from_dict(json.loads(line)))
        except (ValueError, KeyError, TypeError) as exc:
            raise StreamFormatError(path, lineno, str(exc) or type(exc).__name__) from exc
    return out


def parse_detections_csv(text: str, path="<stream>") -> list[Detection]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise StreamFormatError(path, 1, f"expected header {','.join(CSV_COLUMNS)}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            if len(row) != len(CSV_COLUMNS):
                raise ValueError(f"expected {len(CSV_COLUMNS)} fields, got {len(row)}")
            t, r, rdot, theta, px, py, pz, pvx, pvy, miss = row
            plat = Platform(float(px), float(py), float(pz), float(pvx), float(pvy))
            if int(miss):
                out.append(Detection.miss(plat, int(t)))
            else:
                out.append(Detection(float(r), float(rdot), float(theta), plat, int(t)))
        except ValueError as exc:
            raise StreamFormatError(path, lineno, str(exc)) from exc
    return out


def read_detections(path) -> list[Detection]:
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".csv":
        return parse_detections_csv(text, path)
    return parse_detections_jsonl(text, path)


def write_detections(path, dets) -> None:
    path = Path(path)
    text = detections_to_csv(dets) if path.suffix.lower() == ".csv" else detections_to_jsonl(dets)
    path.write_text(text)


def track_to_jsonl(records: Iterable[dict]) -> str:
    def clean(v):
        if isinstance(v, float) and not math.isfinite(v):
            return None
        return v
    return "".join(dumps_json({k: clean(v) for k, v in r.items()}) + "\n" for r in records)
