import json

import pytest

from madrs_assess.cli import main
from madrs_assess.synth import SynthSpec, generate_corpus
from madrs_assess.transcript import write_corpus

from conftest import make_transcript


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["synth", "--corpus", "c.jsonl", "--patients", "2", "--visits", "1", "--seed", "3"]) == 0
    return tmp_path


def test_full_pipeline(work, capsys):
    assert main(["segment", "--corpus", "c.jsonl"]) == 0
    summary = json.loads((work / "out/segments/summary.json").read_text())
    assert summary["mean_mapped_fraction"] == 1.0
    assert main(["assess", "--corpus", "c.jsonl", "--runs", "5"]) == 0
    runs = work / "out/runs/mock-oracle__all__segmented.jsonl"
    assert len(runs.read_text().splitlines()) == 100
    assert main(["evaluate", "--corpus", "c.jsonl", "--runs", "5"]) == 0
    metrics = json.loads((work / "out/reports/mock-oracle__all__segmented/metrics.json").read_text())
    assert all(m["summary"]["mae"]["mean"] == 0 for m in metrics.values())
    assert main(["analyze-errors", "--corpus", "c.jsonl", "--alpha", "1"]) in (0, 1)
    assert (work / "out/reports/mock-oracle__all__segmented/error_model.txt").exists()


def test_segment_refuses_overwrite(work):
    assert main(["segment", "--corpus", "c.jsonl"]) == 0
    assert main(["segment", "--corpus", "c.jsonl"]) == 2
    assert main(["segment", "--corpus", "c.jsonl", "--force"]) == 0


def test_assess_without_segments_names_segment(work, capsys):
    assert main(["assess", "--corpus", "c.jsonl"]) == 2
    assert "madrs-assess segment" in capsys.readouterr().err


def test_clinician_free_interview_reported(work):
    corpus = list(generate_corpus(SynthSpec(2, 1, seed=3))) + [make_transcript("PP", iid="silent", pid="zz")]
    write_corpus(corpus, "mixed.jsonl")
    assert main(["segment", "--corpus", "mixed.jsonl"]) == 1
    summary = json.loads((work / "out/segments/summary.json").read_text())
    assert summary["interviews"]["silent"]["error"].startswith("NoClinicianSpeech")
    assert main(["assess", "--corpus", "mixed.jsonl", "--runs", "1"]) == 1


def test_unlabeled_corpus_missing_ground_truth(work, capsys):
    corpus = [make_transcript("CPCP", iid="u", pid="u")]
    write_corpus(corpus, "u.jsonl")
    assert main(["assess", "--corpus", "u.jsonl", "--scope", "full", "--runs", "1"]) == 0
    assert main(["evaluate", "--corpus", "u.jsonl", "--scope", "full", "--runs", "1"]) == 2
    assert "MissingGroundTruth" in capsys.readouterr().err


def test_config_file_and_overrides(work):
    (work / "cfg.json").write_text(json.dumps({"corpus": "c.jsonl", "scope": "full", "runs": 1, "variant": "none"}))
    assert main(["assess", "--config", "cfg.json"]) == 0
    assert (work / "out/runs/mock-oracle__none__full.jsonl").exists()
    assert main(["assess", "--config", "cfg.json", "--variant", "all"]) == 0
    assert (work / "out/runs/mock-oracle__all__full.jsonl").exists()
    (work / "bad.json").write_text(json.dumps({"nonsense": 1}))
    assert main(["assess", "--config", "bad.json"]) == 2


@pytest.mark.parametrize("argv", [
    ["assess", "--corpus", "c.jsonl", "--runs", "0"],
    ["assess", "--corpus", "c.jsonl", "--backend", "ftp://x"],
    ["assess", "--corpus", "missing.jsonl", "--scope", "full"],
    ["evaluate", "--corpus", "c.jsonl"],
])
def test_config_errors_exit_2(work, argv):
    assert main(argv) == 2


def test_compare_csv(work):
    main(["segment", "--corpus", "c.jsonl"])
    main(["assess", "--corpus", "c.jsonl", "--runs", "2"])
    main(["assess", "--corpus", "c.jsonl", "--runs", "2", "--scope", "full"])
    full, seg = "out/runs/mock-oracle__all__full.jsonl", "out/runs/mock-oracle__all__segmented.jsonl"
    assert main(["evaluate", "--corpus", "c.jsonl", "--runset", seg, "--runset", full, "--compare", full, seg]) == 0
    lines = (work / "out/reports/scope_comparison.csv").read_text().splitlines()
    assert len(lines) == 11
    assert (work / "out/reports/comparison_mae.txt").exists()
    assert main(["evaluate", "--corpus", "c.jsonl", "--compare", seg, full]) == 2


def test_rerun_byte_identical(work):
    def run(out):
        main(["segment", "--corpus", "c.jsonl", "--out", out, "--seed", "5"])
        main(["assess", "--corpus", "c.jsonl", "--out", out, "--runs", "2", "--mock-noise", "0.3", "--seed", "5"])
        main(["evaluate", "--corpus", "c.jsonl", "--out", out, "--runs", "2", "--mock-noise", "0.3", "--seed", "5"])
        return {p.relative_to(work / out): p.read_bytes() for p in sorted((work / out).rglob("*")) if p.is_file()
                and not p.name.endswith(".lock")}
    a, b = run("o1"), run("o2")
    assert a.keys() == b.keys()
    diff = [k for k in a if a[k] != b[k]]
    # manifests record the output directory; everything else must match exactly
    assert all(k.name.endswith("manifest.json") or k.name == "summary.json" for k in diff)
