"""Command-line surface: flags, exit codes, determinism, file outputs."""

import json
import os

import numpy as np
import pytest

from pansurv import bags
from pansurv import synthetic as sg
from pansurv.cli import main

SPEC = {
    "cancers": ["BLCA", "BRCA"],
    "baselines": [-2.0, -1.5],
    "cases_per_cancer": 12,
    "patch_range": [4, 7],
    "group_sizes": {g: 5 for g in sg.GENOMIC_GROUPS},
    "d_patch": 8,
}

CONFIG = {
    "d_model": 16,
    "n_experts": 2,
    "n_heads": 2,
    "epochs": 1,
    "accum_steps": 8,
    "lr": 1e-3,
    "folds": 2,
    "sinkhorn_max_iter": 25,
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec_path = root / "spec.json"
    spec_path.write_text(json.dumps(SPEC))
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(CONFIG))
    assert main(["synth", "--spec", str(spec_path), "--seed", "7",
                 "--out", str(root / "cohort")]) == 0
    assert main(["train", "--data", str(root / "cohort" / "cohort.jsonl"),
                 "--config", str(cfg_path), "--folds", "2", "--seed", "3",
                 "--out", str(root / "run")]) == 0
    return root


class TestSynth:
    def test_outputs_exist(self, workdir):
        assert (workdir / "cohort" / "cohort.jsonl").exists()
        assert (workdir / "cohort" / "truth.json").exists()

    def test_same_invocation_identical_files(self, workdir, tmp_path):
        spec_path = workdir / "spec.json"
        for sub in ("a", "b"):
            assert main(["synth", "--spec", str(spec_path), "--seed", "7",
                         "--out", str(tmp_path / sub)]) == 0
        assert (tmp_path / "a" / "cohort.jsonl").read_bytes() == \
            (tmp_path / "b" / "cohort.jsonl").read_bytes()
        assert (tmp_path / "a" / "truth.json").read_bytes() == \
            (tmp_path / "b" / "truth.json").read_bytes()

    def test_missing_spec_path_exit_2(self, tmp_path, capsys):
        code = main(["synth", "--spec", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "out")])
        assert code == 2
        assert "nope.json" in capsys.readouterr().err

    def test_invalid_spec_exit_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({**SPEC, "censoring_rate": 1.5}))
        assert main(["synth", "--spec", str(bad), "--out", str(tmp_path / "o")]) == 2

    def test_set_override_and_env_seed(self, tmp_path, monkeypatch):
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps(SPEC))
        monkeypatch.setenv("UMPS_SEED", "99")
        assert main(["synth", "--spec", str(spec_path),
                     "--set", "cases_per_cancer=10",
                     "--out", str(tmp_path / "env")]) == 0
        records = bags.read_cohort(str(tmp_path / "env" / "cohort.jsonl"))
        assert len(records) == 20
        truth = json.loads((tmp_path / "env" / "truth.json").read_text())
        assert truth["spec"]["seed"] == 99
        assert truth["spec"]["cases_per_cancer"] == 10

    def test_binary_patch_sidecars(self, tmp_path):
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps({**SPEC, "cases_per_cancer": 10}))
        assert main(["synth", "--spec", str(spec_path), "--seed", "1",
                     "--binary-patches", "--out", str(tmp_path / "bin")]) == 0
        sidecars = list((tmp_path / "bin").glob("*.patches.bin"))
        assert len(sidecars) == 20
        records = bags.read_cohort(str(tmp_path / "bin" / "cohort.jsonl"))
        assert records[0].wsi.patch_count >= 4


class TestTrain:
    def test_fold_artifacts(self, workdir):
        run = workdir / "run"
        assert (run / "fold_0.ckpt").exists() and (run / "fold_1.ckpt").exists()
        assert (run / "fold_0.metrics.json").exists()
        assert (run / "fold_1.metrics.json").exists()
        metrics = json.loads((run / "metrics.json").read_text())
        assert "mean_fold_overall_cindex" in metrics
        assert len(metrics["fold_details"]) == 2

    def test_repeat_same_seed_identical_metrics(self, workdir, tmp_path):
        for sub in ("r1", "r2"):
            assert main(["train", "--data", str(workdir / "cohort" / "cohort.jsonl"),
                         "--config", str(workdir / "config.json"), "--folds", "2",
                         "--seed", "3", "--out", str(tmp_path / sub)]) == 0
        assert (tmp_path / "r1" / "metrics.json").read_bytes() == \
            (tmp_path / "r2" / "metrics.json").read_bytes()
        assert (tmp_path / "r1" / "fold_0.ckpt").read_bytes() == \
            (tmp_path / "r2" / "fold_0.ckpt").read_bytes()

    def test_missing_data_exit_2(self, workdir, tmp_path):
        assert main(["train", "--data", str(tmp_path / "missing.jsonl"),
                     "--out", str(tmp_path / "x")]) == 2

    def test_bad_config_field_exit_2(self, workdir, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({**CONFIG, "bogus": 1}))
        assert main(["train", "--data", str(workdir / "cohort" / "cohort.jsonl"),
                     "--config", str(bad), "--out", str(tmp_path / "x")]) == 2


class TestEval:
    def test_metrics_schema(self, workdir, tmp_path):
        out = tmp_path / "metrics.json"
        assert main(["eval", "--data", str(workdir / "cohort" / "cohort.jsonl"),
                     "--checkpoint", str(workdir / "run" / "fold_0.ckpt"),
                     "--out", str(out)]) == 0
        metrics = json.loads(out.read_text())
        assert {"per_cancer_cindex", "overall_mean_cindex", "logrank_p",
                "fold_details", "warnings"} <= set(metrics)
        assert set(metrics["per_cancer_cindex"]) == {"BLCA", "BRCA"}


class TestExplain:
    def test_top_k_structure(self, workdir, tmp_path):
        out = tmp_path / "genes.json"
        cams = tmp_path / "cams.json"
        assert main(["explain", "--data", str(workdir / "cohort" / "cohort.jsonl"),
                     "--checkpoint", str(workdir / "run" / "fold_0.ckpt"),
                     "--top-k", "3", "--out", str(out), "--cams", str(cams)]) == 0
        payload = json.loads(out.read_text())
        assert payload["k"] == 3
        assert set(payload["top_genes"]) == {"BLCA", "BRCA"}
        for cancer in payload["top_genes"].values():
            for grp in bags.GENOMIC_GROUPS:
                assert len(cancer[grp]) == 3
        rows = json.loads(cams.read_text())
        assert {"patient_id", "modality", "group", "index", "score"} <= set(rows[0])


class TestKm:
    def test_from_checkpoint(self, workdir, tmp_path):
        out = tmp_path / "km"
        assert main(["km", "--data", str(workdir / "cohort" / "cohort.jsonl"),
                     "--checkpoint", str(workdir / "run" / "fold_0.ckpt"),
                     "--out", str(out)]) == 0
        assert (out / "km.csv").exists() and (out / "km.svg").exists()
        header = (out / "km.csv").read_text().splitlines()[0]
        assert header == "time,survival_low,survival_high"

    def test_equal_risks_p_near_one(self, workdir, tmp_path):
        # duplicated cohort halves + equal risks: the stable median split
        # puts one copy in each group, so the groups are identical
        records = bags.read_cohort(str(workdir / "cohort" / "cohort.jsonl"))
        doubled = []
        for tag in ("a", "b"):
            for rec in records:
                import copy as _copy
                c = _copy.deepcopy(rec)
                c.id = f"{tag}_{rec.id}"
                doubled.append(c)
        data = tmp_path / "doubled.jsonl"
        bags.write_cohort(str(data), doubled)
        risks = {rec.id: 1.0 for rec in doubled}
        risks_path = tmp_path / "risks.json"
        risks_path.write_text(json.dumps(risks))
        out = tmp_path / "km"
        assert main(["km", "--data", str(data), "--risks", str(risks_path),
                     "--out", str(out)]) == 0
        svg = (out / "km.svg").read_text()
        assert "logrank p = 1" in svg

    def test_requires_exactly_one_source(self, workdir, tmp_path):
        assert main(["km", "--data", str(workdir / "cohort" / "cohort.jsonl"),
                     "--out", str(tmp_path / "km2")]) == 2


class TestSweep:
    def test_expert_sweep_table(self, workdir, tmp_path):
        out = tmp_path / "sweep"
        assert main(["sweep", "--data", str(workdir / "cohort" / "cohort.jsonl"),
                     "--config", str(workdir / "config.json"), "--folds", "2",
                     "--seed", "3", "--experts", "1,2", "--out", str(out)]) == 0
        table = json.loads((out / "sweep.json").read_text())["experts"]
        assert set(table) == {"1", "2"}
        assert (out / "experts_1" / "metrics.json").exists()
        assert (out / "experts_2" / "fold_1.ckpt").exists()

    def test_bad_experts_list_exit_2(self, workdir, tmp_path):
        assert main(["sweep", "--data", str(workdir / "cohort" / "cohort.jsonl"),
                     "--experts", "a,b", "--out", str(tmp_path / "s")]) == 2
