import csv

import numpy as np

from arsq.studies import case_study_landscape, case_study_toy


def test_toy_artifacts(tmp_path):
    verdicts = case_study_toy(tmp_path, seed=2)
    by = {v.method: v for v in verdicts}
    assert by["arsq"].is_optimal and not by["independent"].is_optimal
    for name in ("arsq_q.csv", "independent_q.csv"):
        lines = (tmp_path / name).read_text().splitlines()
        assert lines[0] == "a1,a2,q" and len(lines) == 5
    rows = list(csv.DictReader(open(tmp_path / "verdict.csv")))
    assert [r["is_optimal"] for r in rows] == ["true", "false"]


def test_landscape_artifacts_small_run(tmp_path):
    results = case_study_landscape(tmp_path, seeds=(0, 1), n_train=200, n_eval=100, steps=20, grid_resolution=5)
    assert len(results) == 6
    rows = list(csv.DictReader(open(tmp_path / "mae.csv")))
    assert [r["method"] for r in rows[:3]] == ["independent", "arsq_no_cf", "arsq"]
    assert all(np.isfinite(float(r["mae"])) for r in rows)
    for name in ("ground_truth.csv", "independent_q.csv", "arsq_no_cf_q.csv", "arsq_q.csv"):
        assert len((tmp_path / name).read_text().splitlines()) == 26


def test_landscape_divergence_is_reported_not_fatal(tmp_path):
    results = case_study_landscape(tmp_path, seeds=(0,), n_train=50, n_eval=20, steps=3, lr=1e300,
                                   grid_resolution=3)
    assert len(results) == 3
    assert any(np.isnan(r.mae) for r in results)
