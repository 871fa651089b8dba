import csv
import json
from pathlib import Path

import jsonschema
import pytest

from microchar import bench

SCHEMA = json.loads((Path(__file__).parent / "golden" / "bench.schema.json").read_text())


def test_mmss():
    assert bench.mmss(921) == "15:21" and bench.mmss(64) == "1:04" and bench.mmss(0.4) == "0:00"


def test_psilm_only(tmp_path):
    reps = bench.bench(3, "psilm", seed=1, out_dir=tmp_path)
    (r,) = reps
    assert r.n == 3 and len(r.per_image_s) == 3
    assert r.total_s == pytest.approx(sum(r.per_image_s))
    data = json.loads((tmp_path / "bench.json").read_text())
    jsonschema.validate(data, SCHEMA)
    rows = list(csv.DictReader(open(tmp_path / "bench.csv")))
    assert [row["image"] for row in rows] == ["0", "1", "2", "load", "total"]


def test_both_methods(checkpoint_dir, tmp_path):
    reps = bench.bench(2, "both", checkpoint_dir=checkpoint_dir, out_dir=tmp_path)
    assert [r.method for r in reps] == ["psilm", "ml_pipeline"]
    ml = reps[1]
    assert ml.total_s == pytest.approx(ml.load_s + sum(ml.per_image_s))
    assert set(ml.stages_s) == {"load", "classify", "segment", "regress"}
    jsonschema.validate(json.loads((tmp_path / "bench.json").read_text()), SCHEMA)


def test_bad_arguments():
    with pytest.raises(ValueError):
        bench.bench(0, "psilm")
    with pytest.raises(ValueError):
        bench.bench(1, "gpu")
