import json

import numpy as np
import pytest

from chebmixer import spectral
from chebmixer.cli import ConfigError, default_config, main, parse_config_text
from chebmixer.data_io import Dataset, load_dataset, save_dataset

FAST = ["--set", "K=2", "--set", "d=8", "--set", "d_s=8", "--set", "d_c=8", "--set", "max_epochs=5"]


def _lines(capsys):
    return [json.loads(x) for x in capsys.readouterr().out.splitlines() if x.strip()]


@pytest.fixture
def synth(tmp_path, capsys):
    out = tmp_path / "synth"
    assert main(["gen-synth", "--nodes", "60", "--p-in", "0.2", "--p-out", "0.02", "--seed", "3", "--out", str(out)]) == 0
    info = _lines(capsys)[0]
    assert info["nodes"] == 60 and info["classes"] == 2
    return out


def _train(synth, out, *extra):
    return main(["train", "--data", str(synth), "--out", str(out), "--seed", "1", *FAST, *extra])


def test_train_writes_artifacts(synth, tmp_path, capsys):
    out = tmp_path / "run"
    assert _train(synth, out) == 0
    printed = _lines(capsys)[0]
    assert set(printed) == {"test_acc", "val_acc", "best_epoch"}
    rows = [json.loads(x) for x in (out / "metrics.jsonl").read_text().splitlines()]
    assert rows[0]["schema"] == 1 and [r["epoch"] for r in rows] == [1, 2, 3, 4, 5]
    assert all("epoch_seconds" not in r for r in rows)
    timing = [json.loads(x) for x in (out / "timing.jsonl").read_text().splitlines()]
    assert len(timing) == 5 and all(t["epoch_seconds"] >= 0 for t in timing)
    result = json.loads((out / "result.json").read_text())
    assert result["test_acc"] == printed["test_acc"] and result["epochs_run"] == 5
    assert result["config"]["K"] == 2 and result["seed"] == 1
    assert (out / "best.ckpt").is_file()


def test_train_is_byte_deterministic(synth, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _train(synth, a) == 0 and _train(synth, b) == 0
    for name in ("metrics.jsonl", "best.ckpt"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_eval_reproduces_result(synth, tmp_path, capsys):
    out = tmp_path / "run"
    assert _train(synth, out) == 0
    capsys.readouterr()
    assert main(["eval", "--data", str(synth), "--model", str(out / "best.ckpt")]) == 0
    got = _lines(capsys)[0]
    result = json.loads((out / "result.json").read_text())
    for key in ("train_acc", "val_acc", "test_acc"):
        assert got[key] == result[key]
    assert got["seed"] == 1


def test_eval_missing_checkpoint(synth, tmp_path, capsys):
    assert main(["eval", "--data", str(synth), "--model", str(tmp_path / "nope.ckpt")]) == 1
    assert "not found" in capsys.readouterr().err


def test_eval_class_mismatch(synth, tmp_path, capsys):
    out = tmp_path / "run"
    assert _train(synth, out) == 0
    ds = load_dataset(synth)
    three = Dataset(ds.graph, ds.features, np.arange(ds.n) % 3, 3, "three")
    save_dataset(three, tmp_path / "three")
    assert main(["eval", "--data", str(tmp_path / "three"), "--model", str(out / "best.ckpt")]) == 1
    assert "w_out" in capsys.readouterr().err


def test_unknown_config_key_exits_2(synth, tmp_path, capsys):
    assert _train(synth, tmp_path / "run", "--set", "dropout=0.5") == 2
    assert "dropout" in capsys.readouterr().err


def test_bad_config_value_exits_2(synth, tmp_path, capsys):
    assert _train(synth, tmp_path / "run", "--set", "aggregator=attention") == 2
    assert _train(synth, tmp_path / "run", "--set", "lr=fast") == 2


def test_missing_data_exits_2(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path)]) == 2
    assert "data" in capsys.readouterr().err


def test_missing_dataset_dir_exits_1(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 1


def test_config_file_and_precedence(synth, tmp_path, capsys):
    conf = tmp_path / "run.conf"
    conf.write_text("# small run\nK = 2\nd = 8\nd_s = 8  # token width\nd_c = 8\nmax_epochs = 3\nseed = 9\n\n")
    out = tmp_path / "run"
    assert main(["train", "--config", str(conf), "--set", "max_epochs=2", "--data", str(synth), "--out", str(out)]) == 0
    result = json.loads((out / "result.json").read_text())
    assert result["epochs_run"] == 2 and result["seed"] == 9 and result["config"]["d_s"] == 8


def test_parse_config_text():
    cfg = parse_config_text("lr = 0.01\n# comment\nmixer_bias = false\n", default_config())
    assert cfg["lr"] == 0.01 and cfg["mixer_bias"] is False and cfg["K"] == 7
    with pytest.raises(ConfigError, match="unknown config key 'heads'"):
        parse_config_text("heads = 4\n", default_config())
    with pytest.raises(ConfigError, match="line 1"):
        parse_config_text("no equals sign\n", default_config())


def test_verify_passes(capsys):
    assert main(["verify"]) == 0
    rows = _lines(capsys)
    assert {r["suite"] for r in rows} == {"spectral", "aggregator", "laplacian", "gradients"}
    assert all(r["passed"] for r in rows)


def test_verify_single_suite(capsys):
    assert main(["verify", "--suite", "aggregator"]) == 0
    assert [r["suite"] for r in _lines(capsys)] == ["aggregator"]


def test_verify_catches_a_broken_build(monkeypatch, capsys):
    real = spectral.cheb_hop_extract

    def off_by_a_bit(L_hat, X, K):
        out = real(L_hat, X, K)
        out.data[:, -1] *= 1.0 + 1e-6
        return out

    monkeypatch.setattr(spectral, "cheb_hop_extract", off_by_a_bit)
    assert main(["verify", "--suite", "spectral"]) == 1
    assert not _lines(capsys)[0]["passed"]


def test_extract_path_graph(tmp_path, p3, capsys):
    save_dataset(Dataset(p3, np.array([[1.0], [0.0], [0.0]]), np.zeros(3, int), 1, "p3"), tmp_path / "p3")
    assert main(["extract", "--data", str(tmp_path / "p3"), "--k", "2", "--lambda-max", "fixed"]) == 0
    got = _lines(capsys)[0]
    assert got["shape"] == [3, 3, 1] and got["lambda_max"] == 2.0
    vals = np.array(got["values"])[:, :, 0]
    np.testing.assert_allclose(vals[:, 0], [1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(vals[:, 1], [0, -np.sqrt(0.5), 0], atol=1e-15)
    np.testing.assert_allclose(vals[:, 2], [0, 0, 1], atol=1e-15)


def test_extract_to_tsv(tmp_path, synth, capsys):
    dest = tmp_path / "hops.tsv"
    assert main(["extract", "--data", str(synth), "--k", "3", "--out", str(dest)]) == 0
    lines = dest.read_text().splitlines()
    assert lines[0] == "#shape\t60\t4\t8" and len(lines) == 1 + 60 * 4
    assert "values" not in _lines(capsys)[0]


def test_extract_rejects_negative_order(synth, capsys):
    assert main(["extract", "--data", str(synth), "--k", "-1"]) == 2


def test_bench(synth, capsys):
    assert main(["bench", "--data", str(synth), "--epochs", "3", *FAST]) == 0
    got = _lines(capsys)[0]
    assert got["epochs"] == 3 and got["nodes"] == 60 and got["operator_nnz"] > 0


def test_gen_synth_errors(tmp_path, capsys):
    args = ["gen-synth", "--nodes", "10", "--p-in", "0.1", "--p-out", "0.5", "--seed", "0", "--out", str(tmp_path)]
    assert main(args) == 2


def test_gen_synth_is_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        main(["gen-synth", "--nodes", "30", "--p-in", "0.3", "--p-out", "0.05", "--seed", "4", "--out", str(tmp_path / name)])
    for f in ("graph.tsv", "features.tsv", "labels.tsv", "meta.tsv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_convert_cora(tmp_path, capsys):
    src = tmp_path / "raw"
    src.mkdir()
    (src / "cora.content").write_text("10\t1\t0\tA\n20\t0\t1\tB\n30\t1\t1\tA\n")
    (src / "cora.cites").write_text("10\t20\n30\t20\n")
    assert main(["convert-cora", "--source", str(src), "--out", str(tmp_path / "cora")]) == 0
    ds = load_dataset(tmp_path / "cora")
    assert ds.n == 3 and ds.graph.n_edges == 2 and ds.class_count == 2


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "0.1.0" in capsys.readouterr().out
