import json
import logging

import numpy as np
import pytest

from kcn import kcn_models as km
from kcn.dataset import Dataset
from kcn.errors import EmptyDataset, GenerationFailed, InvalidInput, SchemaError
from kcn.experiments import (BenchmarkConfig, GlobalGcnConfig, LoadReport, Schema, global_gcn_baseline,
                             k_sweep, knn_average_baseline, load_csv, run_benchmark, split_half, synth_gp)
from kcn.experiments.baselines import union_knn_graph
from kcn.experiments.benchmark import gaussian_nll, squared_error_stats
from kcn.kriging import local_kriging_predict_many
from kcn.variogram import VariogramModel, empirical_semivariogram, fit_from_data

from conftest import brute_knn


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_three_rows(tmp_path):
    p = write(tmp_path, "x,y,label\n0,0,1\n1,0,2\n0,1,3\n")
    ds = load_csv(p, Schema())
    assert len(ds) == 3 and ds.d == 0
    np.testing.assert_array_equal(ds.labels, [1, 2, 3])
    np.testing.assert_array_equal(ds.locations[1], [1, 0])


def test_load_categorical(tmp_path):
    p = write(tmp_path, "lon,lat,count,kind,elev\n0,0,1,b,5\n1,0,2,a,6\n0,1,3,c,7\n1,1,0,a,8\n")
    schema = Schema(("lon", "lat"), "count", ("elev",), ("kind",))
    report = LoadReport()
    ds = load_csv(p, schema, report)
    assert ds.d == 4
    assert ds.feature_names == ["elev", "kind=a", "kind=b", "kind=c"]
    np.testing.assert_array_equal(ds.features[:, 1:], [[0, 1, 0], [1, 0, 0], [0, 0, 1], [1, 0, 0]])
    assert report.indicator_columns == ["kind=a", "kind=b", "kind=c"]


def test_load_drops_na(tmp_path, caplog):
    rows = [f"{i},{i},{'NA' if i in (2, 7) else i}" for i in range(10)]
    p = write(tmp_path, "x,y,label\n" + "\n".join(rows) + "\n")
    report = LoadReport()
    with caplog.at_level(logging.INFO, logger="kcn.experiments.data"):
        ds = load_csv(p, Schema(), report)
    assert len(ds) == 8
    assert (report.n_read, report.n_dropped) == (10, 2)
    assert "dropped 2" in caplog.text
    assert not np.isnan(ds.labels).any()


def test_load_errors(tmp_path):
    with pytest.raises(SchemaError):
        load_csv(write(tmp_path, "x,z,label\n0,0,1\n"), Schema())
    with pytest.raises(SchemaError):
        load_csv(write(tmp_path, "x,y,label\n0,0,abc\n"), Schema())
    with pytest.raises(EmptyDataset):
        load_csv(write(tmp_path, "x,y,label\n0,0,\n"), Schema())
    with pytest.raises(SchemaError):
        Schema(loc_cols=("x",))


@pytest.mark.parametrize("n,sizes", [(10, (5, 5)), (11, (6, 5))])
def test_split_half(n, sizes, rng):
    ds = Dataset(rng.uniform(size=(n, 2)), None, np.arange(n, dtype=float))
    a, b = split_half(ds, 4)
    assert (len(a), len(b)) == sizes
    assert sorted(np.concatenate([a.labels, b.labels]).tolist()) == list(range(n))
    c, _ = split_half(ds, 4)
    np.testing.assert_array_equal(a.labels, c.labels)
    with pytest.raises(InvalidInput):
        split_half(ds.subset([0]))


def test_synth_white_noise():
    ds = synth_gp(2000, VariogramModel("exponential", 1.0, 0.0, 0.1), seed=3)
    assert 0.9 <= ds.labels.var() <= 1.1
    assert ds.locations.min() >= 0 and ds.locations.max() <= 1


@pytest.mark.parametrize("seed", range(5))
def test_synth_tracks_variogram(seed):
    vg = VariogramModel("exponential", 0.1, 1.0, 0.05)
    ds = synth_gp(1500, vg, seed=seed)
    emp = empirical_semivariogram(ds.locations, ds.labels, num_bins=20, max_lag=0.2)
    mid = (emp.bin_centers > 0.025) & (emp.bin_centers < 0.1)
    assert mid.sum() >= 5
    rel = np.abs(emp.semivariances[mid] / vg(emp.bin_centers[mid]) - 1)
    assert rel.max() < 0.15


def test_synth_trend_and_counts():
    vg = VariogramModel("gaussian", 0.05, 0.5, 0.2)
    ds = synth_gp(400, vg, trend_coeffs=[3.0, -2.0], d=2, seed=0)
    beta, *_ = np.linalg.lstsq(ds.features, ds.labels, rcond=None)
    np.testing.assert_allclose(beta, [3.0, -2.0], atol=0.15)
    counts = synth_gp(1000, VariogramModel("exponential", 0.1, 1.0, 0.2), zero_inflate=0.11, seed=2).labels
    assert np.all(counts == np.round(counts)) and counts.min() >= 0
    assert 0.05 < np.mean(counts > 0) < 0.11


def test_synth_errors(monkeypatch):
    vg = VariogramModel("exponential", 0.1, 1.0, 0.2)
    with pytest.raises(InvalidInput):
        synth_gp(3001, vg)
    with pytest.raises(InvalidInput):
        synth_gp(10, vg, trend_coeffs=[1.0], d=2)
    with pytest.raises(InvalidInput):
        synth_gp(10, vg, zero_inflate=1.5)
    import kcn.experiments.data as data
    monkeypatch.setattr(data, "semivariance_matrix", lambda vg, s: np.full((len(s), len(s)), 5.0))
    with pytest.raises(GenerationFailed):
        synth_gp(10, vg)


def test_synth_deterministic():
    vg = VariogramModel("spherical", 0.1, 1.0, 0.3)
    assert synth_gp(100, vg, seed=5).digest() == synth_gp(100, vg, seed=5).digest()
    assert synth_gp(100, vg, seed=5).digest() != synth_gp(100, vg, seed=6).digest()


def test_knn_average(rng):
    ds = Dataset(rng.uniform(size=(30, 2)), None, rng.normal(size=30))
    q = np.array([0.3, 0.7])
    j = brute_knn(ds.locations, q, 1)[0][0]
    assert knn_average_baseline(ds, q, 1) == ds.labels[j]
    idx, _ = brute_knn(ds.locations, q, 7)
    assert knn_average_baseline(ds, q, 7) == pytest.approx(ds.labels[idx].mean(), rel=1e-14)
    flat = Dataset(ds.locations, None, np.full(30, 2.5))
    assert knn_average_baseline(flat, q, 9) == pytest.approx(2.5)


def test_union_graph_against_brute_force(rng):
    pts = rng.uniform(size=(30, 2))
    for k in (1, 3, 6):
        g = union_knn_graph(pts, k).toarray()
        nbrs = [set(brute_knn(pts, pts[i], k, exclude=i)[0].tolist()) for i in range(30)]
        want = np.array([[float(i != j and (j in nbrs[i] or i in nbrs[j])) for j in range(30)]
                         for i in range(30)])
        np.testing.assert_array_equal(g, want)
    with pytest.raises(InvalidInput):
        union_knn_graph(pts, 0)


def gp_split(seed=0, n=400):
    ds = synth_gp(n, VariogramModel("exponential", 0.1, 1.0, 0.2), seed=seed)
    return split_half(ds, seed)


def test_global_gcn_worse_than_kcn():
    train, test = gp_split(0)
    gcn = global_gcn_baseline(train, test, 5, GlobalGcnConfig(epochs=200))
    model = km.train(train, km.KcnConfig(k=10, phi=0.03, normalize_adjacency=True, dropout=0.0, epochs=100))
    kcn = km.predict_many(model, train, test.locations, test.features)
    assert gcn.shape == (len(test),)
    assert squared_error_stats(kcn, test.labels)[0] < squared_error_stats(gcn, test.labels)[0]


def test_benchmark_constant_labels(rng):
    ds = Dataset(rng.uniform(size=(40, 2)), None, np.full(40, 7.0))
    train, test = split_half(ds, 0)
    rep = run_benchmark(train, test, BenchmarkConfig(methods=("mean", "knn_average"),
                                                     kcn=km.KcnConfig(k=5)))
    assert rep["knn_average"].mse == 0.0
    assert rep["mean"].mse == 0.0


def test_benchmark_records_failures(rng):
    train, test = gp_split(1, 60)
    rep = run_benchmark(train, test, BenchmarkConfig(methods=("knn_average", "kcn"), knn_k=5,
                                                     kcn=km.KcnConfig(k=40)))
    assert rep["knn_average"].ok
    assert not rep["kcn"].ok and "InvalidInput" in rep["kcn"].error
    with pytest.raises(Exception):
        rep.results["nope"]
    bad = run_benchmark(train, test, BenchmarkConfig(methods=("bogus",)))
    assert not bad["bogus"].ok


def small_config(**kw):
    kcn = km.KcnConfig(k=5, phi=0.05, normalize_adjacency=True, epochs=8)
    return BenchmarkConfig(methods=("mean", "knn_average", "local_kriging", "kcn", "kcn_zip"),
                           kcn=kcn, kriging_k=20, **kw)


def test_benchmark_reproducible_and_written(tmp_path):
    vg = VariogramModel("exponential", 0.1, 1.0, 0.2)
    train, test = split_half(synth_gp(120, vg, zero_inflate=0.5, seed=3), 3)
    cfg = small_config(gaussian_nll=True, sweep_ks=(1, 3), grid=({"dropout": 0.0}, {"dropout": 0.25}))
    a = run_benchmark(train, test, cfg, seed=2)
    b = run_benchmark(train, test, cfg, seed=2)
    assert a.rows() == b.rows()
    assert a.sweep == b.sweep and len(a.sweep) == 4
    assert all(r.ok for r in a.results.values())
    assert a["kcn_zip"].nll is not None and a["kcn"].nll is not None
    assert a.metadata["seed"] == 2 and a.metadata["train_hash"] == train.digest()
    a.write(tmp_path)
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines[0] == "method,mse,mse_stderr,nll,nll_stderr,config_hash"
    assert len(lines) == 6
    meta = json.loads((tmp_path / "metrics.json").read_text())
    assert meta["metadata"]["config_hash"] == a.metadata["config_hash"]
    log = (tmp_path / "train_log.csv").read_text().splitlines()
    assert log[0] == "method,epoch,train_loss,val_loss" and len(log) > 2
    assert (tmp_path / "sweep.csv").exists()


def test_benchmark_seed_changes_hash():
    train, test = gp_split(2, 80)
    cfg = BenchmarkConfig(methods=("knn_average",), kcn=km.KcnConfig(k=3))
    assert (run_benchmark(train, test, cfg, seed=1).metadata["config_hash"]
            != run_benchmark(train, test, cfg, seed=2).metadata["config_hash"])


def test_k_sweep_includes_feedforward():
    train, test = gp_split(0, 160)
    rows = k_sweep(train, test, km.KcnConfig(k=5, epochs=3), [0, 2])
    by = {(r["method"], r["k"]): r["mse"] for r in rows}
    assert np.isfinite(by[("kcn", 0)]) and np.isfinite(by[("kcn", 2)])
    assert np.isnan(by[("knn_average", 0)])


def test_gaussian_nll_value():
    v = gaussian_nll(np.array([0.0]), np.array([1.0]), 2.0)
    assert v[0] == pytest.approx(0.5 * np.log(4 * np.pi) + 0.25)


def test_universal_beats_ordinary_with_trend():
    vg = VariogramModel("exponential", 0.05, 0.5, 0.1)
    ds = synth_gp(600, vg, trend_coeffs=[2.0, -1.5], d=2, seed=4).with_coordinate_features()
    train, test = split_half(ds, 4)
    fit = fit_from_data(train.locations, train.labels - train.features[:, :2] @ [2.0, -1.5])
    uk = local_kriging_predict_many(train, test.locations, test.features, 30, fit)
    plain = Dataset(train.locations, None, train.labels)
    ok = local_kriging_predict_many(plain, test.locations, np.zeros((len(test), 0)), 30, fit)
    assert np.mean((uk - test.labels) ** 2) < np.mean((ok - test.labels) ** 2)
