"""End-to-end command-line behavior and exit codes."""

import json

import numpy as np
import pytest
import yaml

from lesionseg.cli import main
from lesionseg.io import read_grid, write_grid
from synthetic import make_cases

SIZE = 48


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    cases = make_cases(2, depth=4, seed=0)
    for case in cases:
        write_grid(root / f"{case.case_id}_t1.grid", case.image)
        write_grid(root / f"{case.case_id}_label.grid",
                   case.label.astype(np.float32))
    manifest = root / "cases.txt"
    manifest.write_text("".join(c.case_id + "\n" for c in cases))
    return root, manifest, cases


def _config(tmp_path, store=None, manifest=None, root=None, **train_over):
    doc = {
        "data": {},
        "arch": {"variant": "dunet", "fusion_stages": [2], "use_se": False,
                 "base_filters": 8, "dropout_rate": 0.0, "input_size": SIZE},
        "loss": {"name": "eml"},
        "train": {"learning_rate": 0.05, "epochs": 1, "batch_size": 4,
                  "seed": 0, **train_over},
    }
    if store:
        doc["data"]["store"] = str(store)
    if manifest:
        doc["data"]["manifest"] = str(manifest)
        doc["data"]["root"] = str(root)
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(doc))
    return path


def test_prepare_and_idempotence(dataset, tmp_path):
    root, manifest, cases = dataset
    out1 = tmp_path / "store1"
    out2 = tmp_path / "store2"
    for out in (out1, out2):
        code = main(["prepare", "--manifest", str(manifest), "--root", str(root),
                     "--out", str(out), "--size", str(SIZE)])
        assert code == 0
    assert (out1 / "index.json").read_bytes() == (out2 / "index.json").read_bytes()
    for f in sorted(out1.glob("*.npy")):
        assert f.read_bytes() == (out2 / f.name).read_bytes()
    index = json.loads((out1 / "index.json").read_text())
    assert sum(e["depth"] for e in index["cases"]) == sum(c.depth for c in cases)


def test_prepare_empty_manifest(dataset, tmp_path):
    root, _, _ = dataset
    empty = tmp_path / "empty.txt"
    empty.write_text("\n")
    out = tmp_path / "never"
    code = main(["prepare", "--manifest", str(empty), "--root", str(root),
                 "--out", str(out)])
    assert code == 1
    assert not out.exists()


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    root, manifest, _ = dataset
    tmp = tmp_path_factory.mktemp("run")
    store = tmp / "store"
    assert main(["prepare", "--manifest", str(manifest), "--root", str(root),
                 "--out", str(store), "--size", str(SIZE)]) == 0
    cfg = _config(tmp, store=store)
    out = tmp / "train_out"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    return out


def test_train_outputs_and_manifest_defaults(trained):
    assert (trained / "checkpoint.npz").exists()
    manifest = json.loads((trained / "manifest.json").read_text())
    # mixing-loss defaults are materialized into the manifest
    assert manifest["loss"]["alpha"] == 1.1
    assert manifest["loss"]["gamma"] == 0.48
    assert manifest["loss"]["delta"] == 1.0
    assert manifest["spec_hash"]
    assert manifest["parameters"]["total"] > 0


def test_train_rejects_unknown_key(dataset, tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text(yaml.safe_dump({"train": {"learning_rat": 1e-3}}))
    code = main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 1
    assert "learning_rat" in capsys.readouterr().err


def test_eval_command(dataset, trained, tmp_path):
    root, manifest, _ = dataset
    out = tmp_path / "eval_out"
    code = main(["eval", "--checkpoint", str(trained / "checkpoint.npz"),
                 "--manifest", str(manifest), "--root", str(root),
                 "--out", str(out)])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert set(report["per_case"]) == {"case000", "case001"}
    table = (out / "table.tsv").read_text().splitlines()
    assert table[0].split("\t")[0] == "Method"
    assert table[1].split("\t")[0] == "add-2"


def test_predict_command(dataset, trained, tmp_path):
    root, _, cases = dataset
    out_path = tmp_path / "mask.grid"
    code = main(["predict", "--checkpoint", str(trained / "checkpoint.npz"),
                 "--image", str(root / "case000_t1.grid"),
                 "--out", str(out_path)])
    assert code == 0
    mask = read_grid(out_path)
    assert mask.shape == cases[0].image.shape
    assert set(np.unique(mask)) <= {0.0, 1.0}


def test_resume_flag(dataset, trained, tmp_path):
    tmp = trained.parent
    cfg = _config(tmp, store=tmp / "store", epochs=2)
    out = tmp_path / "resumed"
    code = main(["train", "--config", str(cfg), "--out", str(out),
                 "--resume", str(trained / "checkpoint.npz")])
    assert code == 0
    hist = (out / "history.tsv").read_text().strip().splitlines()
    assert len(hist) == 3   # header + epochs 1..2


def test_count_params_exact_rows(capsys):
    assert main(["count-params", "--arch", "se-add-23"]) == 0
    out = capsys.readouterr().out
    assert "8,640,163" in out
    assert main(["count-params", "--arch", "add-23"]) == 0
    assert "8,635,043" in capsys.readouterr().out
    assert main(["count-params"]) == 1   # neither --arch nor --all


def test_plot_commands(trained, dataset, tmp_path):
    root, manifest, _ = dataset
    curves = tmp_path / "curves.png"
    assert main(["plot", "--history", str(trained / "history.tsv"),
                 "--out", str(curves)]) == 0
    assert curves.stat().st_size > 0

    eval_out = tmp_path / "ev"
    main(["eval", "--checkpoint", str(trained / "checkpoint.npz"),
          "--manifest", str(manifest), "--root", str(root),
          "--out", str(eval_out)])
    box = tmp_path / "box.png"
    assert main(["plot", "--report", str(eval_out / "report.json"),
                 "--out", str(box)]) == 0
    assert box.stat().st_size > 0
    assert main(["plot", "--out", str(tmp_path / "x.png")]) == 1


def test_split_command(dataset, capsys):
    _, manifest, _ = dataset
    assert main(["split", "--manifest", str(manifest), "--ratio", "0.5",
                 "--seed", "3"]) == 0
    out = capsys.readouterr().out
    assert "train (1)" in out and "val   (1)" in out


def test_missing_inputs_are_user_errors(tmp_path):
    assert main(["train", "--config", str(tmp_path / "none.yaml"),
                 "--out", str(tmp_path / "o")]) == 1
    assert main(["eval", "--checkpoint", str(tmp_path / "none.npz"),
                 "--manifest", str(tmp_path / "m"), "--root", str(tmp_path),
                 "--out", str(tmp_path / "e")]) == 1
