import csv
import json

import numpy as np
import pytest

from ergm_bilevel.baselines import McmcMleConfig, MzConfig
from ergm_bilevel.bilevel import OuterConfig
from ergm_bilevel.graph_stats import ConfigError
from ergm_bilevel.montecarlo import (
    McDesign,
    from_dict,
    initial_theta,
    replication_seeds,
    run_design,
    run_replication,
    summarize,
    sweep_eta,
    sweep_regularization,
    write_manifest,
    write_mc_outputs,
)
from ergm_bilevel.sampler import SamplerConfig


def tiny(**kw):
    base = dict(n=8, R=3, seed=5,
                sampler=SamplerConfig(burn_in=400, thinning=10),
                vrbea=OuterConfig(T=30),
                mz=MzConfig(outer_max_iter=5),
                mcmc_mle=McmcMleConfig(burn_in=200, thinning=10, M=100, max_iter=2))
    base.update(kw)
    return McDesign(**base)


def test_summarize_two_point_example():
    row = summarize([[-2.0], [0.0]], [-1.0])[0]
    assert row["bias"] == 0.0
    assert row["mean"] == -1.0
    assert row["MAD"] == 1.0
    assert row["se"] == pytest.approx(np.sqrt(2))
    assert row["sign_recovery_pct"] == 50.0


def test_summarize_keeps_outliers_in_full_moments():
    x = [[0.9], [1.1], [1500.0]]
    row = summarize(x, [1.0])[0]
    assert row["outlier_count"] == 1
    assert row["mean"] == pytest.approx(1502 / 3)
    assert row["trimmed_mean"] == pytest.approx(1.0)
    assert row["trimmed_bias"] == pytest.approx(0.0, abs=1e-12)


def test_summarize_single_estimate():
    row = summarize([[0.5, -0.2]], [1.0, -1.0])[1]
    assert row["se"] == 0.0
    assert row["bias"] == pytest.approx(0.8)
    with pytest.raises(ValueError):
        summarize([], [1.0])


def test_seeds_do_not_depend_on_R():
    a = run_replication(tiny(R=2, estimators=("mple",)), 1)
    b = run_replication(tiny(R=7, estimators=("mple",)), 1)
    assert a[0]["theta"] == b[0]["theta"]
    assert replication_seeds(5, 1) != replication_seeds(5, 2)
    assert replication_seeds(5, 1) != replication_seeds(6, 1)


def test_perturbed_start_is_within_box():
    d = tiny(init_mode="perturbed", perturb_c=0.3)
    for r in range(5):
        th = initial_theta(d, replication_seeds(d.seed, r))
        assert np.all(np.abs(th - np.array(d.truth)) <= 0.3)
    assert np.array_equal(initial_theta(tiny(), replication_seeds(5, 0)), [-1.0, 1.0])


def test_run_design_is_deterministic():
    a = run_design(tiny())
    b = run_design(tiny())
    assert [r["theta"] for r in a.rows] == [r["theta"] for r in b.rows]
    assert {r["estimator"] for r in a.table} == {"vrbea", "mz", "mple", "mcmc_mle"}
    assert all(r["n_ok"] + r["failed_count"] == 3 for r in a.table)


def test_parallel_matches_serial():
    d = tiny(estimators=("vrbea", "mple"))
    def strip(rows):
        return [{k: v for k, v in r.items() if k != "runtime"} for r in rows]
    assert strip(run_design(d, jobs=2).rows) == strip(run_design(d, jobs=1).rows)


def test_outputs_round_trip(tmp_path):
    summary = run_design(tiny(estimators=("vrbea", "mple")))
    files = write_mc_outputs(summary, tmp_path)
    write_manifest(tmp_path, "mc", summary.design.to_dict(), files)
    with open(tmp_path / "replications.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6
    for row, rec in zip(rows, summary.rows):
        assert float(row["theta_1"]) == rec["theta"][0]
        assert float(row["theta_2"]) == rec["theta"][1]
    assert "runtime" not in rows[0]
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert sorted(files) == manifest["files"]
    assert from_dict(McDesign, manifest["config"]) == summary.design


def test_single_point_sweeps():
    eps = sweep_regularization(tiny(R=2), [0.5])
    assert [r["parameter"] for r in eps] == ["edges", "triangles"]
    assert all(r["epsilon"] == 0.5 and r["n_ok"] == 2 for r in eps)
    eta = sweep_eta(tiny(R=2), [0.2])
    assert np.isfinite(eta[0]["mean_terminal_F"])
    with pytest.raises(ConfigError):
        sweep_eta(tiny(), [])


def test_config_rejection():
    with pytest.raises(ConfigError):
        McDesign(R=0)
    with pytest.raises(ConfigError):
        McDesign(estimators=("mle",))
    with pytest.raises(ConfigError):
        McDesign(truth=(1.0,))
    with pytest.raises(ConfigError):
        from_dict(McDesign, {"n": 10, "colour": "red"})
    with pytest.raises(ConfigError):
        from_dict(McDesign, {"vrbea": {"lower": {"K": 5, "bogus": 1}}})
    assert from_dict(McDesign, {"vrbea": {"lower": {"K": 5}}}).vrbea.lower.K == 5
