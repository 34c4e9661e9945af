import json
import math

import pytest

from syntrack.io import (
    CSV_COLUMNS,
    StreamFormatError,
    detections_to_csv,
    detections_to_jsonl,
    dumps_json,
    parse_detections_csv,
    parse_detections_jsonl,
    read_detections,
    track_to_jsonl,
    write_detections,
)
from syntrack.kinematics import Detection, Platform
from syntrack.simulator import ScenarioConfig, simulate


@pytest.fixture(scope="module")
def dets():
    sc = simulate(ScenarioConfig(grammar="R_cl", seed=3, p_detect=0.8))
    assert any(d.is_miss for d in sc.detections)
    return sc.detections


def test_jsonl_round_trip(dets):
    assert parse_detections_jsonl(detections_to_jsonl(dets)) == dets


def test_csv_round_trip(dets):
    text = detections_to_csv(dets)
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    assert parse_detections_csv(text) == dets


@pytest.mark.parametrize("suffix", [".jsonl", ".csv"])
def test_file_round_trip(tmp_path, dets, suffix):
    path = tmp_path / f"d{suffix}"
    write_detections(path, dets)
    assert read_detections(path) == dets


def test_jsonl_error_names_the_line():
    good = detections_to_jsonl([Detection(100.0, 1.0, 0.5, Platform(0, 0, 0), 0)])
    with pytest.raises(StreamFormatError, match=r"s\.jsonl:3:") as err:
        parse_detections_jsonl(good + "\n" + "{not json}\n", "s.jsonl")
    assert err.value.lineno == 3


def test_csv_errors_name_the_line():
    with pytest.raises(StreamFormatError, match=":1:"):
        parse_detections_csv("a,b\n")
    header = ",".join(CSV_COLUMNS)
    with pytest.raises(StreamFormatError, match=":3:"):
        parse_detections_csv(f"{header}\n0,1,0,0,0,0,0,0,0,0\n1,x,0,0,0,0,0,0,0,0\n")
    with pytest.raises(StreamFormatError, match="fields"):
        parse_detections_csv(f"{header}\n0,1,0\n")
    # negative range fails detection validation
    with pytest.raises(StreamFormatError, match=":2:"):
        parse_detections_csv(f"{header}\n0,-1,0,0,0,0,0,0,0,0\n")


def test_canonical_json():
    assert dumps_json({"b": 1, "a": 0.1}) == '{"a": 0.1, "b": 1}'
    with pytest.raises(ValueError):
        dumps_json({"x": math.inf})


def test_track_jsonl_drops_non_finite():
    text = track_to_jsonl([{"t": 1, "n_eff": math.nan}])
    assert json.loads(text) == {"t": 1, "n_eff": None}
