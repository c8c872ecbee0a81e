import json
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from tiltlab.experiments import ExperimentResult
from tiltlab.report import emit_report, svg_lines


def results():
    return [
        ExperimentResult("tail exponent", np.bool_(True), {"slope": np.float64(1.5), "stderr": math.nan},
                         {"survival": [{"level": 1.0, "prob": 0.5}, {"level": 2.0, "prob": 0.1}]},
                         {"survival": {"empirical": ([1.0, 2.0], [0.5, 0.1])}}),
        ExperimentResult("profile", False, {"variation": 0.2},
                         {"profile": [{"site": 1, "median": 3.0}]},
                         {"profile": {"X1": ([1, 2, 3], [3.0, 3.5, 3.0])}}),
    ]


def test_file_names_carry_hash_and_seed(tmp_path):
    paths = emit_report(results(), tmp_path, "abcdef0123456789", 7)
    assert paths and all("abcdef012345-s7" in p.name for p in paths)
    assert {p.suffix for p in paths} == {".csv", ".json", ".svg"}
    assert not list(tmp_path.glob("*.tmp"))


def test_csv_only_has_no_svg(tmp_path):
    paths = emit_report(results(), tmp_path, "h" * 12, 0, formats=("csv",))
    assert {p.suffix for p in paths} == {".csv"}
    assert not list(tmp_path.glob("*.svg"))


def test_deterministic_bytes(tmp_path):
    a = emit_report(results(), tmp_path / "a", "h" * 12, 1)
    b = emit_report(results(), tmp_path / "b", "h" * 12, 1)
    assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]


def test_json_summary_is_strict_json(tmp_path):
    (p,) = emit_report(results(), tmp_path, "h" * 12, 0, formats=("json",))
    body = json.loads(p.read_text())
    assert body["passed"] is False
    assert body["results"][0]["metrics"]["stderr"] is None
    assert body["results"][0]["passed"] is True


def test_missing_results_error(tmp_path):
    with pytest.raises(ValueError):
        emit_report([], tmp_path, "h" * 12, 0)


def test_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        emit_report(results(), tmp_path, "h" * 12, 0, formats=("png",))


def test_unwritable_directory(tmp_path):
    blocker = tmp_path / "f"
    blocker.write_text("")
    with pytest.raises(OSError):
        emit_report(results(), blocker / "sub", "h" * 12, 0)


def test_svg_is_well_formed():
    svg = svg_lines("a < b & c", {"one": ([0, 1, 2], [1.0, 0.1, 0.01]), "empty": ([], [])}, logy=True)
    root = ET.fromstring(svg)
    assert root.tag.endswith("svg")
    assert any(el.tag.endswith("polyline") for el in root.iter())
