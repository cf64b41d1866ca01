import json

import pytest

from spdconv.cli import main
from spdconv.graph import parse_graph
from spdconv.training import read_metrics


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_rewrite_resnet18_report(capsys, tmp_path):
    code, out, _ = run(capsys, "rewrite", "--graph", "resnet18", "-o", str(tmp_path / "r.graph"),
                       "--report", str(tmp_path / "r.json"))
    assert code == 0
    rep = json.loads(out)
    assert len(rep["replaced_convs"]) == 4 and len(rep["replaced_pools"]) == 1
    assert json.loads((tmp_path / "r.json").read_text()) == rep
    g = parse_graph((tmp_path / "r.graph").read_text())
    assert sum(n.op == "spd" for n in g.nodes) == 5


def test_rewrite_yolo_notes(capsys):
    code, out, _ = run(capsys, "rewrite", "--graph", "yolov5-skeleton-l")
    rep = json.loads(out)
    assert code == 0 and len(rep["replaced_convs"]) == 7 and rep["notes"]


def test_inspect_table_and_json(capsys):
    code, out, _ = run(capsys, "inspect", "--graph", "resnet18-spd", "--input", "3x64x64")
    assert code == 0 and "total parameters:" in out
    code, out, _ = run(capsys, "inspect", "--graph", "resnet18-spd", "--input", "3x64x64", "--json")
    rows = {r["node"]: r for r in json.loads(out)}
    assert rows["conv5_2b_bn"]["shape"] == [512, 4, 4]


def test_gradcheck_passes(capsys):
    code, out, _ = run(capsys, "gradcheck", "--seeds", "1")
    assert code == 0 and "FAIL" not in out and "PASS spd_conv_block" in out


def test_gradcheck_failure_exit_code(capsys):
    code, out, _ = run(capsys, "gradcheck", "--seeds", "1", "--tol", "0")
    assert code == 4 and "FAIL" in out


@pytest.mark.parametrize("argv, code", [
    (["inspect", "--graph", "no-such-graph"], 2),
    (["inspect", "--graph", "resnet18", "--input", "3x64"], 2),
    (["inspect", "--config", "/nonexistent/run.json"], 2),
    (["train", "--graph", "resnet18", "--data-dir", "/nonexistent/cifar", "--epochs", "1", "--warmup-epochs", "0"], 3),
])
def test_exit_codes(capsys, argv, code):
    assert run(capsys, *argv)[0] == code


def write_config(tmp_path, **over):
    cfg = {
        "model": {"arch": "resnet18-spd", "num_classes": 2, "width_multiplier": 0.125},
        "input": [3, 16, 16],
        "data": {"source": "synthetic", "kind": "separable", "n": 40, "n_test": 20, "classes": 2, "seed": 0},
        "train": {"epochs": 3, "warmup_epochs": 1, "batch_size": 16, "lr_peak": 0.05},
        "out_dir": str(tmp_path / "run"),
    }
    cfg.update(over)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    return path


def test_bad_config_rejected(capsys, tmp_path):
    code, _, err = run(capsys, "train", "--config", str(write_config(tmp_path, colour="red")))
    assert code == 2 and "colour" in err
    code, _, err = run(capsys, "train", "--config", str(write_config(tmp_path, train={"epochs": 2, "warmup_epochs": 2})))
    assert code == 2 and "warmup" in err


def test_train_then_eval_round_trip(capsys, tmp_path):
    cfg = write_config(tmp_path)
    code, out, _ = run(capsys, "train", "--config", str(cfg), "--epochs", "2", "--quiet")
    assert code == 0
    res = json.loads(out)
    run_dir = tmp_path / "run"
    assert res["epochs"] == 2  # flag overrides the file
    assert {p.name for p in run_dir.iterdir()} == {"checkpoint.spdc", "metrics.csv", "config.json", "model.graph"}
    assert json.loads((run_dir / "config.json").read_text())["train"]["epochs"] == 2

    code, out, _ = run(capsys, "eval", "--config", str(cfg), "--checkpoint", str(run_dir / "checkpoint.spdc"))
    assert code == 0 and out.startswith("top1 ")
    rows = read_metrics(run_dir / "metrics.csv", drop_wall=True)
    assert len(rows) == 4 and rows[-1][0] == "eval"
    assert float(rows[-1][4]) == pytest.approx(float(out.split()[1]), abs=1e-4)

    code, _, err = run(capsys, "eval", "--config", str(cfg), "--graph", "resnet18", "--input", "3x16x16",
                       "--checkpoint", str(run_dir / "checkpoint.spdc"))
    assert code == 2 and "mismatch" in err
