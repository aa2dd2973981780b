import csv
import os

import numpy as np
import pytest

from qclmixnet import autodiff as ad
from qclmixnet.cli import main
from qclmixnet.data import load_csv, stratified_split
from qclmixnet.model import model_forward
from qclmixnet.training import checkpoint_scaler, load_checkpoint

DATA = os.path.join(os.path.dirname(__file__), "..", "data")
ECOLI = os.path.join(DATA, "ecoli.csv")
GLASS = os.path.join(DATA, "glass.csv")


def read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert main(["train", "--data", ECOLI, "--set", "epochs=2", "--out", str(out)]) == 0
    return out


def test_train_writes_outputs(trained):
    for name in ("config.txt", "checkpoint.ckpt", "history.csv", "lambdas.csv", "run.csv"):
        assert (trained / name).exists(), name
    assert len(read(trained / "history.csv")) == 2
    run = read(trained / "run.csv")[0]
    assert run["variant"] == "full" and run["seed"] == "42"
    lam = read(trained / "lambdas.csv")
    assert lam and all(0.5 <= float(r["min"]) <= float(r["max"]) <= 1.0 for r in lam)
    assert "epochs = 2" in (trained / "config.txt").read_text()


def test_no_mixup_has_empty_lambda_log(tmp_path):
    assert main(["train", "--data", ECOLI, "--ablate", "no-mixup", "--set", "epochs=1", "--out", str(tmp_path)]) == 0
    assert read(tmp_path / "lambdas.csv") == []


def test_unknown_ablation_exits_one(capsys):
    assert main(["train", "--data", ECOLI, "--ablate", "no-bn"]) == 1
    err = capsys.readouterr().err
    for v in ("no-quantum", "no-mixup", "no-attention"):
        assert v in err


def test_usage_and_data_exit_codes(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["nonsense"])
    assert exc.value.code == 1
    assert main(["train", "--data", str(tmp_path / "nope.csv")]) == 2
    assert main(["train", "--data", ECOLI, "--set", "nope=1"]) == 1
    assert main(["train", "--data", ECOLI, "--set", "epochs=two"]) == 1
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b,c\n1,x,y\n")
    assert main(["train", "--data", str(bad)]) == 2


def test_evaluate_reproduces_reported_metrics(trained, tmp_path, capsys):
    out = tmp_path / "ev"
    assert main(["evaluate", "--data", ECOLI, "--checkpoint", str(trained / "checkpoint.ckpt"), "--out", str(out)]) == 0
    got = read(out / "metrics.csv")[0]
    run = read(trained / "run.csv")[0]
    for m in ("accuracy", "maP", "maR", "maF1"):
        assert float(got[m]) == pytest.approx(float(run[m]), abs=1e-6)
    assert int(got["n"]) == stratified_split(load_csv(ECOLI).y, 0.2, 42).test.size


def test_evaluate_rejects_wrong_feature_count(trained):
    assert main(["evaluate", "--data", GLASS, "--checkpoint", str(trained / "checkpoint.ckpt")]) == 2


def test_export_embeddings_match_forward(trained, tmp_path):
    path = tmp_path / "emb.csv"
    ckpt = str(trained / "checkpoint.ckpt")
    assert main(["export-embeddings", "--data", ECOLI, "--checkpoint", ckpt, "--out", str(path)]) == 0
    rows = read(path)
    assert len(rows) == 336
    assert list(rows[0]) == [f"e{i}" for i in range(8)] + ["label", "pred"]
    params = load_checkpoint(ckpt)
    ds = load_csv(ECOLI)
    emb = model_forward(ad.Tensor(checkpoint_scaler(params).transform(ds.X)), params, "eval").embedding.data
    got = np.array([[float(r[f"e{i}"]) for i in range(8)] for r in rows])
    assert np.max(np.abs(got - emb)) <= 1e-15
    assert {r["label"] for r in rows} == {"imU", "other"}


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("# file layer\nepochs = 3\nbatch_size = 32\n")
    out = tmp_path / "o"
    argv = ["train", "--data", ECOLI, "--config", str(cfg), "--set", "epochs=1", "--seed", "7", "--out", str(out)]
    assert main(argv) == 0
    text = (out / "config.txt").read_text()
    assert "epochs = 1" in text and "batch_size = 32" in text and "seed = 7" in text
    assert len(read(out / "history.csv")) == 1


def test_bench_runs_grid_and_resumes(tmp_path, capsys):
    manifest = tmp_path / "m.csv"
    manifest.write_text(f"name,path,label_column\necoli,{ECOLI},class\nglass,{GLASS},type\n")
    argv = ["bench", "--manifest", str(manifest), "--seeds", "1", "--set", "epochs=1", "--out", str(tmp_path / "b")]
    assert main(argv) == 0
    runs = read(tmp_path / "b" / "runs.csv")
    assert len(runs) == 8 and all(r["status"] == "ok" for r in runs)
    assert len(read(tmp_path / "b" / "results.csv")) == 32
    assert os.path.exists(tmp_path / "b" / "checkpoints" / "glass-no-mixup-1.ckpt")
    assert main(argv) == 0
    assert len(read(tmp_path / "b" / "runs.csv")) == 8
    assert "ran 0 run(s)" in capsys.readouterr().out


def test_stats_on_mean_ranks(tmp_path, capsys):
    ranks = tmp_path / "r.csv"
    ranks.write_text("model,rank\na,1.0\nb,2.25\nc,2.75\n")
    assert main(["stats", "--mean-ranks", str(ranks)]) == 1
    assert main(["stats", "--mean-ranks", str(ranks), "--n-measures", "4", "--out", str(tmp_path / "s")]) == 0
    row = read(tmp_path / "s" / "stats.csv")[0]
    want = 12 * 4 / (3 * 4) * (1 + 2.25**2 + 2.75**2) - 3 * 4 * 4
    assert float(row["chi2"]) == pytest.approx(want, abs=1e-9)
    assert (row["df1"], row["df2"]) == ("2", "6")


def test_stats_on_results_identical_models_fail_to_reject(tmp_path, capsys):
    res = tmp_path / "res.csv"
    lines = ["dataset,model,metric,value"]
    for d, v in (("a", 0.9), ("b", 0.7), ("c", 0.8)):
        for model in ("x", "y"):
            lines.append(f"{d},{model},maF1,{v}")
    res.write_text("\n".join(lines) + "\n")
    assert main(["stats", "--results", str(res)]) == 0
    out = capsys.readouterr().out
    assert "Fail to reject" in out and "Reject\n" not in out.replace("Fail to reject", "")


def test_gradcheck_single_op(capsys):
    assert main(["gradcheck", "--op", "supcon", "--instances", "3"]) == 0
    assert "PASS" in capsys.readouterr().out
    assert main(["gradcheck", "--op", "no-such-op"]) == 1
