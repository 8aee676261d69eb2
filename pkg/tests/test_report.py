import json
import math

import numpy as np
import pytest

from sddelab.report import BoundReport, combine, dumps_json, fmt, write_csv


def test_verdicts():
    r = BoundReport("x", {}, [], [0.1, -1e-13, 0.5], tolerance=1e-12)
    assert r.passed and r.violations == 0 and r.worst_margin == -1e-13
    r = BoundReport("y", {}, [], [0.1, -0.2])
    assert not r.passed and r.violations == 1
    assert r.summary().startswith("FAIL y:")
    assert not BoundReport("empty", {}, [], []).passed


def test_combine_folds_tolerances():
    a = BoundReport("a", {"k": 1}, [1], [-1e-11], tolerance=1e-10)
    b = BoundReport("b", {}, [2], [0.3])
    c = combine("ab", [a, b])
    assert c.passed and c.extra["parts"] == {"a": True, "b": True}


def test_json_is_clean_and_sorted():
    obj = {"b": np.float64(1.5), "a": np.arange(3), "c": float("nan"), "d": np.bool_(True)}
    s = dumps_json(obj)
    assert json.loads(s) == {"a": [0, 1, 2], "b": 1.5, "c": "nan", "d": True}
    assert s.index('"a"') < s.index('"b"') and s.endswith("\n")


def test_fmt_round_trips():
    for v in (0.1, 1 / 3, -2.5e-300, math.pi * 1e17):
        assert float(fmt(v)) == v
    assert fmt(np.int64(7)) == "7" and fmt(float("inf")) == "inf"


def test_csv_line_endings(tmp_path):
    f = tmp_path / "a.csv"
    write_csv(f, ["x", "y"], [(0.1, 2), (1 / 3, "s")])
    assert f.read_bytes() == b"x,y\n0.10000000000000001,2\n0.33333333333333331,s\n"
