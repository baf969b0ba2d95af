import csv
import json

import numpy as np
import pytest

from kcn import kcn_models as km
from kcn.errors import SingularSystem, TrainingFailed
from kcn.kriging import KrigingWarning
from kcn.experiments import cli


@pytest.fixture
def field(tmp_path):
    path = tmp_path / "field.csv"
    assert cli.main(["synth", "--n", "120", "--d", "1", "--beta", "0.5", "--seed", "3",
                     "--out", str(path)]) == 0
    return path


@pytest.fixture
def queries(tmp_path):
    path = tmp_path / "q.csv"
    path.write_text("x,y,x0\n0.2,0.3,0.1\n0.8,0.5,-1.0\n")
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_synth_csv(field):
    rows = read_rows(field)
    assert len(rows) == 120
    assert list(rows[0]) == ["x", "y", "x0", "label"]


def test_synth_from_config(tmp_path):
    conf = tmp_path / "c.toml"
    conf.write_text('[synth]\nn = 50\nkind = "spherical"\nzero_inflate = 0.5\nseed = 1\n')
    out = tmp_path / "s.csv"
    assert cli.main(["synth", "--config", str(conf), "--out", str(out)]) == 0
    labels = [float(r["label"]) for r in read_rows(out)]
    assert len(labels) == 50 and all(v == int(v) for v in labels)


def test_fit_variogram(field, tmp_path, capsys):
    out = tmp_path / "vg.json"
    assert cli.main(["fit-variogram", "--data", str(field), "--feature-cols", "x0",
                     "--out", str(out)]) == 0
    model = json.loads(capsys.readouterr().out)
    assert model["kind"] in ("spherical", "exponential", "gaussian")
    saved = json.loads(out.read_text())
    assert saved["model"] == model and len(saved["empirical"]["bin_centers"]) > 3


def test_krige(field, queries, tmp_path):
    vg = tmp_path / "vg.json"
    assert cli.main(["fit-variogram", "--data", str(field), "--feature-cols", "x0", "--out", str(vg)]) == 0
    out = tmp_path / "k.csv"
    assert cli.main(["krige", "--train", str(field), "--query", str(queries), "--feature-cols", "x0",
                     "--variogram", str(vg), "--k", "20", "--out", str(out)]) == 0
    rows = read_rows(out)
    assert len(rows) == 2 and np.isfinite(float(rows[0]["prediction"]))
    out2 = tmp_path / "k2.csv"
    assert cli.main(["krige", "--train", str(field), "--query", str(queries), "--feature-cols", "x0",
                     "--k", "20", "--out", str(out2)]) == 0


def test_train_and_predict(field, queries, tmp_path, capsys):
    ckpt, log = tmp_path / "m.json", tmp_path / "log.csv"
    assert cli.main(["train-kcn", "--data", str(field), "--feature-cols", "x0", "--k", "5",
                     "--epochs", "4", "--hidden-sizes", "6,3", "--normalize-adjacency",
                     "--out", str(ckpt), "--log", str(log)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert 1 <= summary["best_epoch"] <= 4
    model = km.TrainedModel.load(ckpt)
    assert model.config.hidden_sizes == (6, 3) and model.config.normalize_adjacency
    assert len(read_rows(log)) == len(model.log)
    out = tmp_path / "p.csv"
    assert cli.main(["predict", "--model", str(ckpt), "--train", str(field), "--feature-cols", "x0",
                     "--query", str(queries), "--out", str(out)]) == 0
    assert len(read_rows(out)) == 2


def test_config_and_flag_override(field, tmp_path):
    conf = tmp_path / "c.toml"
    conf.write_text('[data]\nfeature_cols = ["x0"]\n[kcn]\nk = 4\nepochs = 3\nbackbone = "sage"\n')
    ckpt = tmp_path / "m.json"
    assert cli.main(["train-kcn", "--config", str(conf), "--data", str(field), "--k", "6",
                     "--out", str(ckpt)]) == 0
    cfg = km.TrainedModel.load(ckpt).config
    assert (cfg.k, cfg.backbone, cfg.epochs) == (6, "sage", 3)


def test_benchmark(field, tmp_path, capsys):
    conf = tmp_path / "b.toml"
    conf.write_text('[data]\nfeature_cols = ["x0"]\n[kcn]\nk = 5\nepochs = 3\n'
                    '[benchmark]\nkriging_k = 20\n')
    out = tmp_path / "run"
    assert cli.main(["benchmark", "--config", str(conf), "--data", str(field),
                     "--methods", "mean,knn_average,local_kriging,kcn", "--out-dir", str(out)]) == 0
    rows = read_rows(out / "metrics.csv")
    assert [r["method"] for r in rows] == ["mean", "knn_average", "local_kriging", "kcn"]
    assert len({r["config_hash"] for r in rows}) == 1
    assert (out / "metrics.json").exists() and (out / "train_log.csv").exists()
    assert "knn_average" in capsys.readouterr().out


def test_sweep_k(field, tmp_path):
    out = tmp_path / "sweep.csv"
    assert cli.main(["sweep-k", "--data", str(field), "--ks", "0,3", "--epochs", "2",
                     "--out", str(out)]) == 0
    rows = read_rows(out)
    assert [(r["method"], r["k"]) for r in rows] == [("kcn", "0"), ("knn_average", "0"),
                                                     ("kcn", "3"), ("knn_average", "3")]


def test_exit_schema(field, tmp_path, capsys):
    assert cli.main(["fit-variogram", "--data", str(field), "--label-col", "missing"]) == 2
    assert "missing" in capsys.readouterr().err
    assert cli.main(["fit-variogram", "--data", str(tmp_path / "none.csv")]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text("[kcn\n")
    assert cli.main(["train-kcn", "--config", str(bad), "--data", str(field), "--out", "x"]) == 2
    bad.write_text("[kcn]\nwings = 2\n")
    assert cli.main(["train-kcn", "--config", str(bad), "--data", str(field), "--out", "x"]) == 2
    junk = tmp_path / "junk.json"
    junk.write_text("{}")
    assert cli.main(["predict", "--model", str(junk), "--train", str(field), "--query", str(field),
                     "--out", str(tmp_path / "o.csv")]) == 2


def test_exit_training(field, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise TrainingFailed("diverged", [])

    monkeypatch.setattr(km, "train", boom)
    assert cli.main(["train-kcn", "--data", str(field), "--out", str(tmp_path / "m.json")]) == 3


def test_rank_deficient_trend_falls_back(tmp_path):
    # a constant feature duplicates the intercept column
    train = tmp_path / "flat.csv"
    train.write_text("x,y,c,label\n0,0,1,1\n0,1,1,2\n1,1,1,3\n1,0,1,0\n")
    vg = tmp_path / "vg.json"
    vg.write_text(json.dumps({"kind": "exponential", "nugget": 0.1, "psill": 1.0, "range": 0.5}))
    q = tmp_path / "q.csv"
    q.write_text("x,y,c\n0.5,0.5,1\n")
    with pytest.warns(KrigingWarning):
        assert cli.main(["krige", "--train", str(train), "--query", str(q), "--variogram", str(vg),
                         "--feature-cols", "c", "--k", "4", "--out", str(tmp_path / "o.csv")]) == 0
    assert float(read_rows(tmp_path / "o.csv")[0]["prediction"]) == pytest.approx(1.5)


def test_exit_numerical(field, queries, tmp_path, monkeypatch):
    def singular(*a, **k):
        raise SingularSystem("rcond=0")

    monkeypatch.setattr(cli, "local_kriging_predict_many", singular)
    assert cli.main(["krige", "--train", str(field), "--query", str(queries), "--feature-cols", "x0",
                     "--out", str(tmp_path / "o.csv")]) == 4


def test_requires_verb():
    with pytest.raises(SystemExit):
        cli.main([])
