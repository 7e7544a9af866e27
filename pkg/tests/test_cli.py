import json
import math

import numpy as np
import pytest

from minnorm.cli import main
from minnorm.harness import import_traces, median_perturbation, per_sample_values


@pytest.fixture()
def blob_files(tmp_path):
    out = tmp_path / "blobs"
    assert main(["gendata", "--kind", "gaussian_blobs", "--n", "16", "--d", "2",
                 "--seed", "7", "--out", str(out)]) == 0
    return out / "model.json", out / "data.csv"


def run_attack(tmp_path, blob_files, name, extra=()):
    model, data = blob_files
    out = tmp_path / name
    rc = main(
        ["attack", "--model", str(model), "--data", str(data), "--norm", "l2",
         "--steps", "40", "--out", str(out), *extra]
    )
    return rc, out


class TestGendata:
    def test_writes_files_and_manifest(self, tmp_path, blob_files):
        model, data = blob_files
        assert model.exists() and data.exists()
        manifest = json.loads((data.parent / "data.csv.manifest.json").read_text())
        assert manifest["seed"] == 7
        assert manifest["tool_version"]


class TestAttack:
    def test_finds_adversarials_and_writes_traces(self, tmp_path, blob_files, capsys):
        rc, out = run_attack(tmp_path, blob_files, "t.jsonl")
        assert rc == 0
        results = import_traces(out)
        # separable blobs guarantee an adversarial exists for every sample
        assert all(math.isfinite(v) for v in per_sample_values(results))
        assert (tmp_path / "t.jsonl.manifest.json").exists()

    def test_repeated_run_is_byte_identical(self, tmp_path, blob_files):
        # same command twice: equal manifests, byte-identical traces
        rc, out = run_attack(tmp_path, blob_files, "a.jsonl", ("--seed", "3"))
        assert rc == 0
        first = out.read_bytes()
        manifest_first = (tmp_path / "a.jsonl.manifest.json").read_bytes()
        rc, out = run_attack(tmp_path, blob_files, "a.jsonl", ("--seed", "3"))
        assert rc == 0
        assert out.read_bytes() == first
        assert (tmp_path / "a.jsonl.manifest.json").read_bytes() == manifest_first

    def test_adversarial_init(self, tmp_path, blob_files):
        rc, out = run_attack(tmp_path, blob_files, "adv.jsonl", ("--init", "adversarial"))
        assert rc == 0
        results = import_traces(out)
        assert all(math.isfinite(v) for v in per_sample_values(results))

    def test_targeted_attack(self, tmp_path, blob_files):
        rc, out = run_attack(tmp_path, blob_files, "targeted.jsonl", ("--target", "2"))
        assert rc == 0
        values = per_sample_values(import_traces(out))
        # class-2 samples already satisfy the goal (value 0); class-1
        # samples cross into class 2 with a finite perturbation
        assert all(math.isfinite(v) for v in values)
        assert any(v == 0.0 for v in values) and any(v > 0.0 for v in values)

    def test_target_out_of_range_exits_2(self, tmp_path, blob_files):
        rc, _ = run_attack(tmp_path, blob_files, "x.jsonl", ("--target", "9"))
        assert rc == 2

    def test_unknown_norm_exits_2(self, tmp_path, blob_files):
        model, data = blob_files
        rc = main(["attack", "--model", str(model), "--data", str(data),
                   "--norm", "l3", "--out", str(tmp_path / "x.jsonl")])
        assert rc == 2

    def test_missing_model_exits_2(self, tmp_path, blob_files):
        _, data = blob_files
        rc = main(["attack", "--model", str(tmp_path / "nope.json"), "--data", str(data),
                   "--norm", "l2", "--out", str(tmp_path / "x.jsonl")])
        assert rc == 2

    def test_per_sample_failures_still_exit_0(self, tmp_path, blob_files):
        # constant-logit model: zero gradient everywhere, every attack fails
        import json as _json

        model_path = tmp_path / "flat.json"
        model_path.write_text(_json.dumps({
            "input_dim": 2, "num_classes": 2,
            "layers": [{"w": [[0.0, 0.0], [0.0, 0.0]], "b": [1.0, 0.0], "act": "identity"}],
        }))
        _, data = blob_files
        out = tmp_path / "fail.jsonl"
        rc = main(["attack", "--model", str(model_path), "--data", str(data),
                   "--norm", "l2", "--steps", "10", "--out", str(out)])
        assert rc == 0
        # class-2 samples are already misclassified (value 0); class-1
        # samples can never be evaded and fail with value infinity
        values = per_sample_values(import_traces(out))
        assert all(v == 0.0 or math.isinf(v) for v in values)
        assert any(math.isinf(v) for v in values)

    def test_env_seed_fallback(self, tmp_path, blob_files, monkeypatch):
        monkeypatch.setenv("MINNORM_SEED", "3")
        _, a = run_attack(tmp_path, blob_files, "env.jsonl")
        monkeypatch.delenv("MINNORM_SEED")
        _, b = run_attack(tmp_path, blob_files, "flag.jsonl", ("--seed", "3"))
        assert a.read_bytes() == b.read_bytes()


class TestSweep:
    def test_paper_grid_l2_has_12_configs(self, tmp_path, blob_files):
        model, data = blob_files
        out = tmp_path / "sweep"
        rc = main(["sweep", "--attack", "fmn", "--model", str(model), "--data", str(data),
                   "--norm", "l2", "--paper-grid", "--budget", "30", "--out", str(out)])
        assert rc == 0
        manifest = json.loads((out / "traces.jsonl.manifest.json").read_text())
        assert len(manifest["config"]) == 12
        alphas = {c["alpha0"] for c in manifest["config"]}
        gammas = {c["gamma0"] for c in manifest["config"]}
        inits = {c["init"] for c in manifest["config"]}
        assert alphas == {1.0, 5.0, 10.0}
        assert gammas == {0.05, 0.3}
        assert inits == {"input", "adversarial"}
        report = (out / "report.csv").read_text().splitlines()
        assert report[0] == "attack,norm,tuning,Q,median,convergence_q,ms_per_query"
        assert report[1].startswith("fmn,l2,sample,30,")

    def test_paper_grid_linf_alphas(self, tmp_path, blob_files):
        model, data = blob_files
        out = tmp_path / "sweeplinf"
        rc = main(["sweep", "--attack", "fmn", "--model", str(model), "--data", str(data),
                   "--norm", "linf", "--paper-grid", "--budget", "20", "--out", str(out)])
        assert rc == 0
        manifest = json.loads((out / "traces.jsonl.manifest.json").read_text())
        assert {c["alpha0"] for c in manifest["config"]} == {10.0, 100.0, 1000.0}

    def test_sample_vs_dataset_tuning_dominance(self, tmp_path, blob_files):
        model, data = blob_files
        grid = tmp_path / "grid.json"
        grid.write_text(json.dumps([
            {"steps": 40, "alpha0": 1.0, "gamma0": 0.05},
            {"steps": 40, "alpha0": 5.0, "gamma0": 0.3},
        ]))
        medians = {}
        for tuning in ("sample", "dataset"):
            out = tmp_path / f"sw_{tuning}"
            rc = main(["sweep", "--attack", "fmn", "--model", str(model), "--data", str(data),
                       "--norm", "l2", "--grid", str(grid), "--tuning", tuning,
                       "--budget", "40", "--out", str(out)])
            assert rc == 0
            results = import_traces(out / "traces.jsonl", tuning=tuning, budget=40)
            medians[tuning] = median_perturbation(results)
        assert medians["sample"] <= medians["dataset"]

    def test_ddn_and_pgd_sweeps(self, tmp_path, blob_files):
        model, data = blob_files
        out1 = tmp_path / "ddn"
        rc = main(["sweep", "--attack", "ddn", "--model", str(model), "--data", str(data),
                   "--norm", "l2", "--paper-grid", "--budget", "25", "--out", str(out1)])
        assert rc == 0
        manifest = json.loads((out1 / "traces.jsonl.manifest.json").read_text())
        assert len(manifest["config"]) == 10
        out2 = tmp_path / "pgd"
        rc = main(["sweep", "--attack", "pgd", "--model", str(model), "--data", str(data),
                   "--norm", "l2", "--paper-grid", "--eps", "0.3", "--budget", "25",
                   "--out", str(out2)])
        assert rc == 0
        manifest = json.loads((out2 / "traces.jsonl.manifest.json").read_text())
        assert len(manifest["config"]) == 6

    def test_missing_grid_exits_2(self, tmp_path, blob_files):
        model, data = blob_files
        rc = main(["sweep", "--attack", "fmn", "--model", str(model), "--data", str(data),
                   "--norm", "l2", "--out", str(tmp_path / "s")])
        assert rc == 2

    def test_empty_grid_exits_2(self, tmp_path, blob_files):
        model, data = blob_files
        grid = tmp_path / "empty.json"
        grid.write_text("[]")
        rc = main(["sweep", "--attack", "fmn", "--model", str(model), "--data", str(data),
                   "--norm", "l2", "--grid", str(grid), "--out", str(tmp_path / "s")])
        assert rc == 2

    def test_jobs_parallel_identical(self, tmp_path, blob_files):
        model, data = blob_files
        grid = tmp_path / "grid.json"
        grid.write_text(json.dumps([{"steps": 20, "alpha0": 1.0}]))
        outs = []
        for jobs, name in (("1", "j1"), ("2", "j2")):
            out = tmp_path / name
            rc = main(["sweep", "--attack", "fmn", "--model", str(model), "--data", str(data),
                       "--norm", "l2", "--grid", str(grid), "--budget", "20",
                       "--jobs", jobs, "--out", str(out)])
            assert rc == 0
            outs.append(
                (out / "traces.jsonl").read_bytes() + (out / "report.csv").read_bytes()
            )
        assert outs[0] == outs[1]


class TestDerivedOutputs:
    def test_qd_and_report_rerun_identical(self, tmp_path, blob_files):
        _, traces = run_attack(tmp_path, blob_files, "t.jsonl")
        qd1, qd2 = tmp_path / "qd1.csv", tmp_path / "qd2.csv"
        assert main(["qd", "--traces", str(traces), "--out", str(qd1)]) == 0
        assert main(["qd", "--traces", str(traces), "--out", str(qd2)]) == 0
        assert qd1.read_bytes() == qd2.read_bytes()
        assert qd1.read_text().splitlines()[0] == "q,median_norm"
        rep1, rep2 = tmp_path / "r1.csv", tmp_path / "r2.csv"
        assert main(["report", "--traces", str(traces), "--out", str(rep1)]) == 0
        assert main(["report", "--traces", str(traces), "--out", str(rep2)]) == 0
        assert rep1.read_bytes() == rep2.read_bytes()
        header, row = rep1.read_text().splitlines()
        assert "convergence_q" in header
        assert row.split(",")[5] != ""

    def test_missing_traces_exit_2(self, tmp_path):
        assert main(["qd", "--traces", str(tmp_path / "no.jsonl"),
                     "--out", str(tmp_path / "q.csv")]) == 2
        assert main(["report", "--traces", str(tmp_path / "no.jsonl"),
                     "--out", str(tmp_path / "r.csv")]) == 2


class TestDemo2d:
    def test_trajectory_properties(self, tmp_path):
        out = tmp_path / "demo.csv"
        assert main(["demo2d", "--steps", "250", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "k,x1,x2,loss,eps,best_norm"
        rows = [line.split(",") for line in lines[1:]]
        assert len(rows) == 250
        losses = [float(r[3]) for r in rows]
        assert any(v < 0 for v in losses) and any(v > 0 for v in losses)
        bests = [math.inf if r[5] == "inf" else float(r[5]) for r in rows]
        finite = [b for b in bests if math.isfinite(b)]
        assert finite and all(b2 <= b1 for b1, b2 in zip(finite, finite[1:]))
        eps_final, best_final = float(rows[-1][4]), bests[-1]
        assert abs(eps_final - best_final) / best_final < 0.05

    def test_seeded_and_deterministic(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["demo2d", "--seed", "5", "--out", str(a)]) == 0
        assert main(["demo2d", "--seed", "5", "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()


class TestVerify:
    def test_quick_passes_within_budget(self, capsys):
        import time

        t0 = time.perf_counter()
        assert main(["verify", "--quick"]) == 0
        assert time.perf_counter() - t0 < 10.0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out

    def test_injected_wrong_dual_fails_distance_estimate(self, capsys):
        assert main(["verify", "--quick", "--inject-wrong-dual"]) == 1
        out = capsys.readouterr().out
        assert any("FAIL" in line and "distance-estimate" in line for line in out.splitlines())
