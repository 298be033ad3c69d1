import csv
import json

import pytest
import yaml

from hsfuse.cli import CLRA_DEPTHS, ablation_cells, main, tree_digest
from hsfuse.config import ExperimentConfig
from hsfuse.distill import preset

TINY = {
    "data": {"height": 16, "width": 16, "bands": 60, "n_train": 2, "n_val": 1, "n_test": 2},
    "network": {"teacher": {"width": 4, "stacks": [1, 1, 1, 1], "g_c": 2, "h_a": 2},
                "student": {"width": 4, "stacks": [1, 1, 1, 1], "g_c": 2, "h_a": 2}},
    "train": {"epochs": 2, "batch_size": 1, "lr": 0.001},
    "eval": {"snrs": [25, 35]},
}


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.yaml"
    cfg.write_text(yaml.safe_dump(TINY))
    assert main(["synth", "--config", str(cfg), "--out", str(root / "data")]) == 0
    assert main(["train", "--config", str(cfg), "--data", str(root / "data"), "--out", str(root / "run")]) == 0
    return root, cfg


def test_synth_counts_and_meta(work):
    root, _ = work
    data = root / "data"
    assert [len(list((data / s).iterdir())) for s in ("train", "val", "test")] == [2, 1, 2]
    meta = json.loads((data / "train" / "train_0000" / "meta.json").read_text())
    assert meta["shape_truth"] == [16, 16, 60] and meta["shape_lr"] == [4, 4, 60]
    assert meta["shape_msi"] == [16, 16, 4]


def test_synth_is_reproducible(work, tmp_path):
    root, cfg = work
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "again"), "--workers", "2"]) == 0
    assert tree_digest(tmp_path / "again") == tree_digest(root / "data")


def test_synth_seed_changes_data(work, tmp_path):
    root, cfg = work
    assert main(["synth", "--config", str(cfg), "--seed", "3", "--out", str(tmp_path / "s3")]) == 0
    assert tree_digest(tmp_path / "s3") != tree_digest(root / "data")


def test_bands6_variant(tmp_path):
    d = {**TINY, "data": {**TINY["data"], "msi_variant": "bands6"}}
    (tmp_path / "c.yaml").write_text(yaml.safe_dump(d))
    assert main(["synth", "--config", str(tmp_path / "c.yaml"), "--out", str(tmp_path / "d")]) == 0
    meta = json.loads((tmp_path / "d" / "test" / "test_0000" / "meta.json").read_text())
    assert meta["shape_msi"][2] == 6 and meta["msi_variant"] == "bands6"


def test_train_outputs(work):
    root, _ = work
    run = root / "run"
    assert (run / "final" / "checkpoint.json").is_file() and (run / "best" / "checkpoint.json").is_file()
    hist = _rows(run / "history.csv")
    assert [int(r["epoch"]) for r in hist] == [1, 2]
    assert yaml.safe_load((run / "config.yaml").read_text())["train"]["epochs"] == 2


def test_resume_continues_history(work, tmp_path):
    root, cfg = work
    data = str(root / "data")
    run = tmp_path / "r"
    assert main(["train", "--config", str(cfg), "--data", data, "--out", str(run), "--epochs", "2"]) == 0
    first = _rows(run / "history.csv")
    assert main(["train", "--data", data, "--out", str(run), "--epochs", "3", "--resume", str(run / "final")]) == 0
    resumed = _rows(run / "history.csv")
    assert [int(r["epoch"]) for r in resumed] == [1, 2, 3]
    assert resumed[:2] == first
    assert json.loads((run / "train_config.json").read_text())["epochs"] == 3


def test_eval_outputs(work, tmp_path):
    root, cfg = work
    before = tree_digest(root / "run")
    out = tmp_path / "e"
    assert main(["eval", "--config", str(cfg), "--checkpoint", str(root / "run" / "final"),
                 "--data", str(root / "data"), "--out", str(out)]) == 0
    rows = _rows(out / "eval.csv")
    assert len(rows) == 2 and {r["sample_id"] for r in rows} == {"test_0000", "test_0001"}
    summary = json.loads((out / "summary.json").read_text())
    assert summary["which"] == "student" and summary["parameters"] > 0
    assert tree_digest(root / "run") == before


def test_robustness_layout(work, tmp_path):
    root, cfg = work
    out = tmp_path / "rb"
    assert main(["robustness", "--config", str(cfg), "--checkpoint", str(root / "run" / "final"),
                 "--data", str(root / "data"), "--out", str(out), "--snrs", "25,30,40"]) == 0
    with open(out / "robustness.csv", newline="") as fh:
        table = list(csv.reader(fh))
    assert table[0] == ["metric", "25", "30", "40", "clean", "average"]
    assert [r[0] for r in table[1:]] == ["psnr_db", "sam_deg", "rmse"]
    assert (out / "psnr_vs_snr.png").stat().st_size > 0 and (out / "sam_vs_snr.png").is_file()


def test_export_and_inspect(work, tmp_path, capsys):
    root, cfg = work
    out = tmp_path / "x"
    assert main(["export-weights", "--checkpoint", str(root / "run" / "final"), "--out", str(out)]) == 0
    assert (out / "student.json").is_file() and (out / "student.bin").is_file()
    assert json.loads((out / "network.json").read_text())["width"] == 4
    capsys.readouterr()
    assert main(["inspect", str(root / "data")]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["kind"] == "dataset" and info["counts"] == {"train": 2, "val": 1, "test": 2}
    assert main(["inspect", str(root / "run" / "final")]) == 0
    assert json.loads(capsys.readouterr().out)["epoch"] == 2


def test_ablate_rows(work, tmp_path):
    root, cfg = work
    out = tmp_path / "ab"
    assert main(["ablate", "--config", str(cfg), "--data", str(root / "data"), "--study", "csa_onoff",
                 "--out", str(out)]) == 0
    rows = _rows(out / "ablation.csv")
    # 2 cells x 2 roles x (2 SNRs + clean)
    assert len(rows) == 12
    assert {r["cell"] for r in rows} == {"csa", "naive_ensemble"}
    assert {r["snr_db"] for r in rows} == {"25.0", "35.0", "clean"}


def test_ablation_cells():
    base = preset("teacher_student")
    loss = ablation_cells("loss_weights", base)
    assert [n for n, _ in loss] == ["naive", "lambda1=0.5", "lambda2=0.5", "lambda3=0.5", "lambda4=0.5", "proposed"]
    naive = loss[0][1].loss
    assert (naive.lambda1, naive.lambda2, naive.lambda3, naive.lambda4) == (0.0, 0.0, 0.0, 0.1)
    assert loss[2][1].loss.lambda2 == 0.5 and loss[2][1].loss.lambda1 == 0.1
    depth = ablation_cells("clra_depth", base)
    assert [c.student_cfg.stacks for _, c in depth] == list(CLRA_DEPTHS)
    assert all(c.teacher_cfg == base.teacher_cfg for _, c in depth)
    onoff = dict(ablation_cells("csa_onoff", base))
    assert not onoff["naive_ensemble"].teacher_cfg.use_csa and onoff["csa"].student_cfg.use_csa


def test_exit_codes(work, tmp_path):
    root, cfg = work
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"data": {"heigth": 3}}))
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["synth", "--config", str(cfg), "--out", str(root / "data")]) == 2  # not empty, no --force
    assert main(["ablate", "--config", str(cfg), "--data", str(root / "data"), "--study", "bogus",
                 "--out", str(tmp_path / "a")]) == 2
    assert main(["eval", "--checkpoint", str(tmp_path / "none"), "--data", str(root / "data"),
                 "--out", str(tmp_path / "e")]) == 3
    assert main(["inspect", str(tmp_path)]) == 3
    assert main(["synth", "--config", str(tmp_path / "missing.yaml"), "--out", str(tmp_path / "m")]) == 2


def test_divergence_exit_code(work, tmp_path):
    root, _ = work
    d = {**TINY, "train": {**TINY["train"], "lr": 1e30}}
    (tmp_path / "div.yaml").write_text(yaml.safe_dump(d))
    code = main(["train", "--config", str(tmp_path / "div.yaml"), "--data", str(root / "data"),
                 "--out", str(tmp_path / "dv")])
    assert code == 4


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig.from_dict(TINY)
    cfg.write(tmp_path / "c.yaml")
    again = ExperimentConfig.load(tmp_path / "c.yaml")
    assert again.train_config() == cfg.train_config()
    assert again.data == cfg.data
