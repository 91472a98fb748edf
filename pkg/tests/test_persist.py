import csv
import json

import numpy as np
import pytest

from seqjde.bellman import evaluate_policy
from seqjde.persist import (
    ArtifactError,
    export_regions_csv,
    load_artifact,
    save_artifact,
)


@pytest.fixture()
def artifact_path(small_design, tmp_path):
    path = tmp_path / "design.json"
    save_artifact(small_design, path)
    return path


def test_round_trip_bitwise(small_design, artifact_path):
    loaded = load_artifact(artifact_path)
    for name in ("rho", "d", "g", "dstar0", "dstar1"):
        np.testing.assert_array_equal(
            getattr(loaded.cost_tables, name), getattr(small_design.cost_tables, name)
        )
    for name in ("e0", "e1", "m0", "m1", "v0", "v1", "z0", "z1"):
        np.testing.assert_array_equal(
            getattr(loaded.dm, name), getattr(small_design.dm, name)
        )
    np.testing.assert_array_equal(
        loaded.regions.labels, small_design.regions.labels
    )
    assert loaded.dual_objective == small_design.dual_objective
    assert loaded.coefficients == small_design.coefficients
    assert loaded.constraints == small_design.constraints
    assert loaded.op is None and loaded.fm is None
    # policy evaluation reproduces bitwise at off-grid points
    rng = np.random.default_rng(4)
    for _ in range(50):
        n = int(rng.integers(0, loaded.dm.horizon + 1))
        t = float(rng.uniform(-9.0, 9.0))
        a = evaluate_policy(small_design.cost_tables, small_design.dm, n, t)
        b = evaluate_policy(loaded.cost_tables, loaded.dm, n, t)
        assert a == b


def test_save_is_deterministic(small_design, tmp_path):
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_artifact(small_design, p1)
    save_artifact(small_design, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_version_mismatch(artifact_path):
    doc = json.loads(artifact_path.read_text())
    doc["version"] = 999
    artifact_path.write_text(json.dumps(doc))
    with pytest.raises(ArtifactError, match="version"):
        load_artifact(artifact_path)


def test_truncated_table(artifact_path):
    doc = json.loads(artifact_path.read_text())
    doc["tables"]["rho"]["data"] = doc["tables"]["rho"]["data"][:-5]
    artifact_path.write_text(json.dumps(doc))
    with pytest.raises(ArtifactError, match="rho"):
        load_artifact(artifact_path)


def test_bad_shape(artifact_path):
    doc = json.loads(artifact_path.read_text())
    doc["tables"]["v1"]["shape"] = [1, len(doc["tables"]["v1"]["data"])]
    artifact_path.write_text(json.dumps(doc))
    with pytest.raises(ArtifactError, match="v1"):
        load_artifact(artifact_path)


def test_regions_csv(small_design, tmp_path):
    path = tmp_path / "regions.csv"
    export_regions_csv(small_design, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    n_t = small_design.spec.t_axis.count
    horizon = small_design.spec.horizon
    assert len(rows) == n_t * (horizon + 1)
    t_grid = small_design.spec.t_axis.points()
    # truncation row never continues
    last = [r for r in rows if int(r["n"]) == horizon]
    assert all(r["label"] in ("S0", "S1") for r in last)
    # labels agree with the policy at the grid nodes
    name_of = {"continue": "C", 0: "S0", 1: "S1"}
    rng = np.random.default_rng(0)
    for r in (rows[i] for i in rng.integers(0, len(rows), 40)):
        n, ti = int(r["n"]), int(r["t_index"])
        assert float(r["t_value"]) == t_grid[ti]
        act = evaluate_policy(
            small_design.cost_tables, small_design.dm, n, float(t_grid[ti])
        )
        want = "C" if act.kind == "continue" else name_of[act.decision]
        assert r["label"] == want
