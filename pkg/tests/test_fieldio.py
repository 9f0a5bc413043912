import json

import numpy as np

from qhjb.fieldio import read_field_csv, write_ensemble_csv, write_field_csv, write_field_manifest
from qhjb.lattice import ComplexField, Grid, ScalarField, VectorField


def test_round_trip_is_bit_exact(tmp_path):
    g = Grid.square(8, 1.0)
    rng = np.random.default_rng(1)
    fields = [ScalarField(g, rng.normal(size=(8, 8))),
              ComplexField(g, rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))),
              VectorField(g, rng.normal(size=(2, 8, 8)))]
    for i, f in enumerate(fields):
        p = tmp_path / f"f{i}.csv"
        write_field_csv(p, f)
        back = read_field_csv(p, g)
        assert type(back) is type(f)
        assert np.array_equal(back.values, f.values)


def test_manifest_and_ensemble(tmp_path):
    g = Grid.line(8, 1.0)
    write_field_manifest(tmp_path / "m.json", g, "rho", 3, {"t": 0.5})
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["timeIndex"] == 3 and doc["grid"]["points"] == [8]
    write_ensemble_csv(tmp_path / "e.csv", np.arange(3.0))
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "particleIndex,x" and len(lines) == 4
