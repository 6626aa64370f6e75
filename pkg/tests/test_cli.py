import hashlib
import json
import os

import numpy as np
import pytest

from hgsurv.cli import main
from hgsurv.model import init_params, load_checkpoint, substream


def run(*argv):
    return main(list(argv))


def dir_digest(path):
    h = hashlib.sha256()
    for root, _, files in sorted(os.walk(path)):
        for name in sorted(files):
            h.update(name.encode())
            with open(os.path.join(root, name), "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()


def manifest_without_timing(path):
    with open(path) as fh:
        m = json.load(fh)
    m.pop("timing_sec", None)
    return json.dumps(m, sort_keys=True)


GEN = ["--n", "16", "--patches", "6", "--d", "8", "--w-groups", "2", "--signal", "2.0", "--folds", "3"]
TRAIN = ["--epochs", "2", "--lr", "2e-3", "--lambda", "3", "--beta-frac", "0.4", "--seed", "5"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    ws = tmp_path_factory.mktemp("cli")
    cohort = ws / "cohort"
    assert run("generate", "--out", str(cohort), "--seed", "3", *GEN) == 0
    train_out = ws / "train"
    assert run("train", "--cohort", str(cohort), "--out", str(train_out), *TRAIN) == 0
    return ws


class TestGenerate:
    def test_rerun_identical_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run("generate", "--out", str(a), "--seed", "7", *GEN) == 0
        assert run("generate", "--out", str(b), "--seed", "7", *GEN) == 0
        assert dir_digest(a) == dir_digest(b)

    def test_different_seed_differs(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run("generate", "--out", str(a), "--seed", "7", *GEN) == 0
        assert run("generate", "--out", str(b), "--seed", "8", *GEN) == 0
        assert dir_digest(a) != dir_digest(b)

    def test_full_censor_rate_is_validation_error(self, tmp_path):
        assert run("generate", "--out", str(tmp_path / "x"), "--censor-rate", "1.0") == 1

    def test_unknown_flag_is_validation_error(self, tmp_path):
        assert run("generate", "--out", str(tmp_path / "x"), "--bogus", "1") == 1


class TestTrain:
    def test_manifest_shape(self, workspace):
        with open(workspace / "train" / "manifest.json") as fh:
            m = json.load(fh)
        assert m["command"] == "train"
        assert m["n_folds"] == 3
        assert len(m["folds"]) == 3
        assert set(m["folds"][0]) == {"fold", "n_train", "n_val", "c_index", "final_loss"}
        assert m["config"]["lam"] == 3
        assert "timing_sec" in m

    def test_artifacts_exist(self, workspace):
        for fold in range(3):
            assert (workspace / "train" / f"fold_{fold}.npz").exists()
            assert (workspace / "train" / f"fold_{fold}.bank.txt").exists()

    def test_lr_zero_checkpoint_equals_init(self, workspace, tmp_path):
        out = tmp_path / "zero"
        assert run("train", "--cohort", str(workspace / "cohort"), "--out", str(out),
                   "--epochs", "1", "--lr", "0", "--lambda", "3", "--beta-frac", "0.4",
                   "--seed", "5") == 0
        params, cfg, meta = load_checkpoint(out / "fold_0.npz")
        fresh = init_params(8, 4, meta["gene_raw_lens"], cfg, substream(5, "init", 0))
        for name, arr in params.arrays().items():
            np.testing.assert_array_equal(arr, fresh.arrays()[name])

    def test_missing_cohort_dir(self, tmp_path):
        assert run("train", "--cohort", str(tmp_path / "nope"), "--out", str(tmp_path / "o")) == 1

    def test_folds_flag_overrides(self, workspace, tmp_path):
        out = tmp_path / "f2"
        assert run("train", "--cohort", str(workspace / "cohort"), "--out", str(out),
                   "--folds", "2", *TRAIN) == 0
        with open(out / "manifest.json") as fh:
            assert len(json.load(fh)["folds"]) == 2

    def test_rerun_manifest_identical_minus_timing(self, workspace, tmp_path):
        out = tmp_path / "again"
        assert run("train", "--cohort", str(workspace / "cohort"), "--out", str(out), *TRAIN) == 0
        assert manifest_without_timing(out / "manifest.json") == manifest_without_timing(
            workspace / "train" / "manifest.json"
        )

    def test_config_file_precedence(self, workspace, tmp_path):
        # flags beat the config file, the config file beats defaults
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({"epochs": 1, "lam": 5, "lr": 1e-3}))
        out = tmp_path / "cfgd"
        assert run("train", "--cohort", str(workspace / "cohort"), "--out", str(out),
                   "--config", str(cfg_file), "--lambda", "3", "--seed", "5") == 0
        with open(out / "manifest.json") as fh:
            resolved = json.load(fh)["config"]
        assert resolved["lam"] == 3  # flag wins
        assert resolved["epochs"] == 1 and resolved["lr"] == 1e-3  # config file wins
        assert resolved["weight_decay"] == 1e-5  # default preserved

    def test_malformed_config_file(self, workspace, tmp_path):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text("{not json")
        assert run("train", "--cohort", str(workspace / "cohort"),
                   "--out", str(tmp_path / "o"), "--config", str(cfg_file)) == 1


class TestEval:
    def test_missing_none_reproduces_training_c_index_bit_exact(self, workspace, tmp_path):
        out = tmp_path / "eval"
        assert run("eval", "--cohort", str(workspace / "cohort"), "--ckpt-dir",
                   str(workspace / "train"), "--out", str(out), "--missing", "none") == 0
        with open(out / "eval_manifest.json") as fh:
            ev = json.load(fh)
        with open(workspace / "train" / "manifest.json") as fh:
            tr = json.load(fh)
        for fe, ft in zip(ev["folds"], tr["folds"]):
            assert fe["c_index"] == ft["c_index"]

    def test_missing_gene_runs(self, workspace, tmp_path):
        out = tmp_path / "evalg"
        assert run("eval", "--cohort", str(workspace / "cohort"), "--ckpt-dir",
                   str(workspace / "train"), "--out", str(out), "--missing", "gene") == 0
        with open(out / "eval_manifest.json") as fh:
            assert json.load(fh)["missing"] == "gene"

    def test_km_export_and_logrank(self, workspace, tmp_path):
        out = tmp_path / "evalkm"
        km = tmp_path / "km.csv"
        assert run("eval", "--cohort", str(workspace / "cohort"), "--ckpt-dir",
                   str(workspace / "train"), "--out", str(out), "--km-out", str(km)) == 0
        lines = km.read_text().splitlines()
        assert lines[0] == "group,time,survival,at_risk"
        groups = {l.split(",")[0] for l in lines[1:]}
        assert groups <= {"high", "low"} and "high" in groups
        with open(out / "eval_manifest.json") as fh:
            m = json.load(fh)
        assert 0.0 <= m["logrank_p"] <= 1.0

    def test_heatmap_export(self, workspace, tmp_path):
        out = tmp_path / "evalhm"
        hm = tmp_path / "hm.csv"
        assert run("eval", "--cohort", str(workspace / "cohort"), "--ckpt-dir",
                   str(workspace / "train"), "--out", str(out), "--heatmap-out", str(hm),
                   "--heatmap-patient", "P003") == 0
        lines = hm.read_text().splitlines()
        assert lines[0] == "gene,x,y,weight"
        weights = {}
        for line in lines[1:]:
            gene, _, _, w = line.split(",")
            weights.setdefault(gene, 0.0)
            weights[gene] += float(w)
        for total in weights.values():
            assert total == pytest.approx(1.0, abs=1e-9)

    def test_eval_rerun_manifest_identical(self, workspace, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        args = ["eval", "--cohort", str(workspace / "cohort"), "--ckpt-dir",
                str(workspace / "train"), "--missing", "path"]
        assert run(*args, "--out", str(a)) == 0
        assert run(*args, "--out", str(b)) == 0
        assert manifest_without_timing(a / "eval_manifest.json") == manifest_without_timing(
            b / "eval_manifest.json"
        )

    def test_corrupt_checkpoint_is_runtime_error(self, workspace, tmp_path):
        import shutil

        broken = tmp_path / "broken"
        shutil.copytree(workspace / "train", broken)
        (broken / "fold_0.npz").write_bytes(b"garbage")
        assert run("eval", "--cohort", str(workspace / "cohort"), "--ckpt-dir", str(broken),
                   "--out", str(tmp_path / "o")) == 2

    def test_checkpoint_dim_mismatch_rejected(self, workspace, tmp_path):
        other = tmp_path / "cohort16"
        assert run("generate", "--out", str(other), "--seed", "3", "--n", "16", "--patches",
                   "6", "--d", "16", "--w-groups", "2", "--folds", "3") == 0
        assert run("eval", "--cohort", str(other), "--ckpt-dir", str(workspace / "train"),
                   "--out", str(tmp_path / "o")) == 1


@pytest.fixture(scope="module")
def grid(workspace, tmp_path_factory):
    out = tmp_path_factory.mktemp("ablate")
    code = run("ablate", "--cohort", str(workspace / "cohort"), "--out", str(out),
               "--epochs", "1", "--lr", "1e-3", "--beta-frac", "0.4", "--seed", "5",
               "--folds", "2")
    assert code == 0
    with open(out / "ablation.json") as fh:
        return json.load(fh)


class TestAblate:
    def test_27_cells(self, grid):
        assert len(grid["cells"]) == 27

    def test_config_echo_matches_cells(self, grid):
        seen = set()
        for cell in grid["cells"]:
            key = (cell["lambda"], cell["edge_mode"], cell["fusion"])
            assert key not in seen
            seen.add(key)
            assert cell["lambda"] in (5, 9, 25)
            assert len(cell["folds"]) == 2
        assert len(seen) == 27


def test_help_exits_zero():
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
