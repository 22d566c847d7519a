import json

import numpy as np

from spaceform_lab.report import colormap, loglog_svg, write_csv, write_json


def test_colormap_endpoints():
    assert colormap(np.array([0.0, 1.0, 2.0])) == ["#313695", "#a50026", "#a50026"]


def test_write_json_converts_numpy_and_sorts(tmp_path):
    path = tmp_path / "x" / "r.json"
    write_json(path, {"b": np.float64(1.5), "a": np.arange(2), "c": np.bool_(True)})
    text = path.read_text()
    assert json.loads(text) == {"a": [0, 1], "b": 1.5, "c": True}
    assert text.index('"a"') < text.index('"b"')


def test_write_csv(tmp_path):
    path = tmp_path / "t.csv"
    write_csv(path, ["a", "b"], [[1, 2]])
    assert path.read_text().splitlines() == ["a,b", "1,2"]


def test_loglog_svg_has_one_line_per_series():
    svg = loglog_svg([0.1, 0.05], {"e1": [1e-2, 2.5e-3], "e2": [1e-1, 5e-2]}, title="t")
    assert svg.count("<polyline") == 2
